"""Command-line front end: ``train``, ``compare`` and ``scan``.

Each verb reads one JSON run config::

    {
      "name": "acc_gauge",
      "env": {"id": "acc", "alpha": {"kind": "linear", "kappa": 1.0}},
      "variant": "gauge",
      "training": {"epochs": 100, "seed": 7},
      "evaluation": {"variants": [{"variant": "gauge", "run": "acc_gauge"}, "mpc"]},
      "scan": {"n_samples": 2000}
    }

and writes into ``<out>/<name>/``. Every section is optional; missing
fields take their defaults. Exit status is 0 on success, 2 on a config
error and 1 on any other error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cbf import feasibility_scan, sample_domain, scan_to_json
from .envs import ENV_IDS, aircraft_distance
from .mpc import MpcConfig, MpcController
from .policy import TRAINABLE, Policy, Variant, env_from_spec, load_policy, make_policy
from .sim import RolloutConfig, rollout, safety_metrics
from .train import TrainConfig, train

log = logging.getLogger("safecbf")


class ConfigError(ValueError):
    """Invalid run config; ``errors`` holds one ``field: message`` per problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


# config -----------------------------------------------------------------------
@dataclass(frozen=True)
class EvalEntry:
    variant: Variant
    run: str | None = None
    checkpoint: str | None = None


@dataclass(frozen=True)
class EvalConfig:
    variants: tuple[EvalEntry, ...] = ()
    n_initial_states: int = 5
    include_reference: bool = True
    seed: int = 0
    dt: float = 0.01
    horizon: float | None = None
    integrator: str = "rk4"
    safety_tol: float = 1e-3
    mpc: dict = field(default_factory=dict)
    workers: int = 1


@dataclass(frozen=True)
class ScanConfig:
    n_samples: int = 2000
    seed: int = 0
    lo: tuple[float, ...] | None = None
    hi: tuple[float, ...] | None = None


@dataclass(frozen=True)
class RunConfig:
    name: str
    env: dict
    variant: Variant
    training: TrainConfig
    evaluation: EvalConfig
    scan: ScanConfig
    base_dir: Path = Path(".")

    def to_dict(self) -> dict:
        ev = dataclasses.asdict(self.evaluation)
        ev["variants"] = [
            {k: (v.value if isinstance(v, Variant) else v) for k, v in dataclasses.asdict(e).items() if v is not None}
            for e in self.evaluation.variants
        ]
        sc = {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self.scan).items()}
        domain = {"lo": sc.pop("lo"), "hi": sc.pop("hi")}
        if domain["lo"] is not None:
            sc["domain"] = domain
        return {
            "name": self.name,
            "env": self.env,
            "variant": self.variant.value,
            "training": self.training.to_dict(),
            "evaluation": ev,
            "scan": sc,
        }


_TOP = {"name", "env", "variant", "training", "evaluation", "scan"}


def _check_keys(section: dict, allowed, prefix: str, errs: list) -> None:
    for k in section:
        if k not in allowed:
            errs.append(f"{prefix}{k}: unknown field")


def _section(raw: dict, key: str, errs: list) -> dict:
    val = raw.get(key, {})
    if not isinstance(val, dict):
        errs.append(f"{key}: expected an object")
        return {}
    return val


def _number(d: dict, key: str, prefix: str, errs: list, kind=float, allow_none=False):
    if key not in d:
        return None
    v = d[key]
    if v is None and allow_none:
        return None
    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    if kind is int:
        ok = isinstance(v, int) and not isinstance(v, bool)
    if not ok:
        errs.append(f"{prefix}{key}: expected {'an integer' if kind is int else 'a number'}, got {v!r}")
        return None
    return kind(v)


def _env_section(raw: dict, errs: list) -> dict:
    env = raw.get("env", {"id": "acc"})
    if isinstance(env, str):
        env = {"id": env}
    if not isinstance(env, dict):
        errs.append("env: expected an object or an id string")
        return {"id": "acc"}
    _check_keys(env, {"id", "alpha"}, "env.", errs)
    out = {"id": env.get("id", "acc")}
    if out["id"] not in ENV_IDS:
        errs.append(f"env.id: unknown environment {out['id']!r} (choose from {', '.join(ENV_IDS)})")
    alpha = env.get("alpha")
    if alpha is not None:
        if not isinstance(alpha, dict):
            errs.append("env.alpha: expected an object")
        else:
            _check_keys(alpha, {"kind", "kappa"}, "env.alpha.", errs)
            kind = alpha.get("kind", "linear")
            kappa = _number(alpha, "kappa", "env.alpha.", errs)
            kappa = 1.0 if kappa is None else kappa
            if kind not in ("linear", "cubic"):
                errs.append(f"env.alpha.kind: expected 'linear' or 'cubic', got {kind!r}")
            elif not kappa > 0:
                errs.append("env.alpha.kappa: must be > 0")
            else:
                out["alpha"] = {"kind": kind, "kappa": kappa}
    return out


def _variant(v, where: str, errs: list) -> Variant | None:
    try:
        return Variant(v)
    except ValueError:
        errs.append(f"{where}: unknown variant {v!r} (choose from {', '.join(x.value for x in Variant)})")
        return None


def _training(raw: dict, errs: list) -> TrainConfig:
    sec = _section(raw, "training", errs)
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    _check_keys(sec, names, "training.", errs)
    kw = {}
    ints = {"epochs", "batch_size", "n_train_states", "seed"}
    for k in names & set(sec):
        if k == "hidden":
            h = sec[k]
            if not (isinstance(h, list) and all(isinstance(w, int) and not isinstance(w, bool) and w > 0 for w in h)):
                errs.append(f"training.hidden: expected a list of positive integers, got {h!r}")
            else:
                kw[k] = tuple(h)
            continue
        v = _number(sec, k, "training.", errs, int if k in ints else float, allow_none=k in ("horizon", "grad_clip"))
        if v is not None or (k in ("horizon", "grad_clip") and sec[k] is None):
            kw[k] = v
    try:
        return TrainConfig(**kw)
    except ValueError as e:
        for m in str(e).split(";"):
            key, _, rest = m.strip().partition(" ")
            errs.append(f"training.{key}: {rest}")
        return TrainConfig()


def _evaluation(raw: dict, errs: list) -> EvalConfig:
    sec = _section(raw, "evaluation", errs)
    names = {f.name for f in dataclasses.fields(EvalConfig)}
    _check_keys(sec, names, "evaluation.", errs)
    entries = []
    for i, item in enumerate(sec.get("variants", [])):
        where = f"evaluation.variants[{i}]"
        if isinstance(item, str):
            item = {"variant": item}
        if not isinstance(item, dict) or "variant" not in item:
            errs.append(f"{where}: expected a variant name or an object with 'variant'")
            continue
        _check_keys(item, {"variant", "run", "checkpoint"}, where + ".", errs)
        v = _variant(item["variant"], where + ".variant", errs)
        if v is None:
            continue
        needs_ckpt = v not in (Variant.MPC, Variant.INTERIOR)
        if needs_ckpt and not (item.get("run") or item.get("checkpoint")):
            errs.append(f"{where}: variant {v.value} needs a 'run' or 'checkpoint'")
        entries.append(EvalEntry(v, item.get("run"), item.get("checkpoint")))
    kw = {"variants": tuple(entries)}
    for k, kind in (("n_initial_states", int), ("seed", int), ("workers", int), ("dt", float), ("safety_tol", float)):
        v = _number(sec, k, "evaluation.", errs, kind)
        if v is not None:
            kw[k] = v
    if "horizon" in sec:
        kw["horizon"] = _number(sec, "horizon", "evaluation.", errs, allow_none=True)
    for k in ("include_reference",):
        if k in sec:
            if not isinstance(sec[k], bool):
                errs.append(f"evaluation.{k}: expected true or false")
            else:
                kw[k] = sec[k]
    if "integrator" in sec:
        if sec["integrator"] not in ("rk4", "euler"):
            errs.append(f"evaluation.integrator: expected 'rk4' or 'euler', got {sec['integrator']!r}")
        else:
            kw["integrator"] = sec["integrator"]
    if "mpc" in sec:
        mpc = sec["mpc"]
        mnames = {f.name for f in dataclasses.fields(MpcConfig)}
        if not isinstance(mpc, dict):
            errs.append("evaluation.mpc: expected an object")
        else:
            _check_keys(mpc, mnames, "evaluation.mpc.", errs)
            try:
                MpcConfig(**{k: v for k, v in mpc.items() if k in mnames})
                kw["mpc"] = dict(mpc)
            except (TypeError, ValueError) as e:
                errs.append(f"evaluation.mpc: {e}")
    ev = EvalConfig(**kw)
    if ev.n_initial_states < 0:
        errs.append("evaluation.n_initial_states: must be >= 0")
    if ev.workers < 1:
        errs.append("evaluation.workers: must be >= 1")
    if not ev.dt > 0:
        errs.append("evaluation.dt: must be > 0")
    if ev.horizon is not None and not ev.horizon > 0:
        errs.append("evaluation.horizon: must be > 0")
    if ev.safety_tol < 0:
        errs.append("evaluation.safety_tol: must be >= 0")
    return ev


def _scan(raw: dict, errs: list) -> ScanConfig:
    sec = _section(raw, "scan", errs)
    _check_keys(sec, {"n_samples", "seed", "domain"}, "scan.", errs)
    kw = {}
    for k in ("n_samples", "seed"):
        v = _number(sec, k, "scan.", errs, int)
        if v is not None:
            kw[k] = v
    if kw.get("n_samples", 0) < 0:
        errs.append("scan.n_samples: must be >= 0")
    dom = sec.get("domain")
    if dom is not None:
        if not isinstance(dom, dict) or set(dom) != {"lo", "hi"}:
            errs.append("scan.domain: expected an object with 'lo' and 'hi'")
        else:
            try:
                lo = tuple(float(a) for a in dom["lo"])
                hi = tuple(float(a) for a in dom["hi"])
            except (TypeError, ValueError):
                errs.append("scan.domain: 'lo' and 'hi' must be lists of numbers")
            else:
                if len(lo) != len(hi):
                    errs.append("scan.domain: 'lo' and 'hi' differ in length")
                kw["lo"], kw["hi"] = lo, hi
    return ScanConfig(**kw)


def parse_config(raw: dict, seed: int | None = None, base_dir=".") -> RunConfig:
    """Validate a config dict; raises :class:`ConfigError` listing every bad field."""
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    errs: list[str] = []
    _check_keys(raw, _TOP, "", errs)
    env = _env_section(raw, errs)
    variant = _variant(raw.get("variant", "gauge"), "variant", errs) or Variant.GAUGE
    tr = _training(raw, errs)
    ev = _evaluation(raw, errs)
    sc = _scan(raw, errs)
    if sc.lo is not None and env["id"] in ENV_IDS:
        n = env_from_spec(env).system.n
        if len(sc.lo) != n:
            errs.append(f"scan.domain: expected {n} bounds for {env['id']}, got {len(sc.lo)}")
    name = raw.get("name", f"{env['id']}_{variant.value}")
    if not isinstance(name, str) or not name or "/" in name or name in (".", ".."):
        errs.append(f"name: expected a plain directory name, got {name!r}")
    if errs:
        raise ConfigError(errs)
    if seed is not None:
        tr = dataclasses.replace(tr, seed=seed)
        ev = dataclasses.replace(ev, seed=seed)
        sc = dataclasses.replace(sc, seed=seed)
    return RunConfig(name, env, variant, tr, ev, sc, Path(base_dir))


def load_config(path, seed: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError([f"<file>: no such config {str(path)!r}"]) from None
    except json.JSONDecodeError as e:
        raise ConfigError([f"<file>: not valid JSON ({e})"]) from None
    return parse_config(raw, seed, path.parent)


def _run_dir(cfg: RunConfig, out) -> Path:
    d = Path(out) / cfg.name
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return d


# verbs ------------------------------------------------------------------------
def cmd_train(cfg: RunConfig, out="runs") -> Path:
    """Train the configured variant; writes ``checkpoint.bin`` and ``loss.csv``."""
    if cfg.variant not in TRAINABLE:
        raise ConfigError([f"variant: {cfg.variant.value} is not trainable"])
    d = _run_dir(cfg, out)
    env = env_from_spec(cfg.env)
    tc = cfg.training
    pol = make_policy(cfg.variant, env, hidden=tc.hidden, seed=tc.seed)

    def progress(epoch, L, dt):
        if epoch % 10 == 0 or epoch == tc.epochs - 1:
            log.info("epoch %d loss %.6g (%.2fs)", epoch, L, dt)

    res = train(pol, tc, checkpoint_path=d / "checkpoint.bin", log=progress)
    if tc.epochs == 0:
        res.policy.save(d / "checkpoint.bin", epoch=0, epoch_time=0.0)
    # timings stay out of loss.csv so identical configs give identical files
    with open(d / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for k, L in enumerate(res.losses):
            w.writerow([k, repr(float(L))])
    return d


def _resolve_checkpoint(entry: EvalEntry, cfg: RunConfig, out) -> Path | None:
    if entry.variant in (Variant.MPC, Variant.INTERIOR):
        return None
    if entry.checkpoint is not None:
        p = Path(entry.checkpoint)
        p = p if p.is_absolute() else cfg.base_dir / p
    else:
        p = Path(out) / entry.run / "checkpoint.bin"
    if not p.is_file():
        raise FileNotFoundError(f"missing checkpoint for {entry.variant.value}: {p}")
    return p


def _build_policy(env_spec: dict, variant: Variant, ckpt, mpc_kw: dict) -> Policy:
    env = env_from_spec(env_spec)
    if variant is Variant.MPC:
        mcfg = MpcConfig(**{"horizon": env.mpc_horizon, **mpc_kw})
        return Policy(variant, env, mpc=MpcController(env.system, env.cost, mcfg))
    if variant is Variant.INTERIOR:
        return Policy(variant, env)
    pol = load_policy(ckpt, variant)
    if pol.env.id != env.id:
        raise ValueError(f"checkpoint {ckpt} was trained on {pol.env.id}, not {env.id}")
    return pol


def _evaluate(job: dict) -> dict:
    """One rollout; a module-level function so it can run in a worker process."""
    pol = _build_policy(job["env"], Variant(job["variant"]), job["checkpoint"], job["mpc"])
    env = pol.env
    rc = RolloutConfig(job["dt"], job["horizon"], job["integrator"])
    tr = rollout(pol, env.system, np.array(job["x0"]), rc, env.cost)
    rep = safety_metrics(tr, tol=job["tol"])
    row = {
        "variant": job["variant"],
        "k": job["k"],
        "origin": job["origin"],
        "safe": rep.safe,
        "min_h": rep.min_h,
        "min_distance": float(np.min(aircraft_distance(tr.states))) if env.id == "aircraft" else None,
        "total_cost": tr.total_cost,
        "n_fallback": rep.n_fallback,
        "epoch_time": pol.meta.get("epoch_time"),
        "median_solve_time": tr.median_solve_time,
        "x0": tr.states[0].tolist(),
        "xT": tr.states[-1].tolist(),
    }
    return {"row": row, "traj": tr}


def initial_states(env, ev: EvalConfig) -> list[tuple[str, np.ndarray]]:
    """The reference state (optional) followed by ``K`` seeded admissible samples."""
    states = [("reference", env.reference_state)] if ev.include_reference else []
    if ev.n_initial_states:
        rng = np.random.default_rng(ev.seed)
        states += [("sampled", x) for x in env.sample_initial(rng, ev.n_initial_states)]
    return states


COMPARE_COLUMNS = ["variant", "k", "origin", "safe", "min_h", "min_distance", "total_cost", "n_fallback", "epoch_time", "median_solve_time"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def cmd_compare(cfg: RunConfig, out="runs") -> dict:
    """Roll out every variant from every initial state and tabulate the results."""
    ev = cfg.evaluation
    if not ev.variants:
        raise ConfigError(["evaluation.variants: nothing to compare"])
    ckpts = [_resolve_checkpoint(e, cfg, out) for e in ev.variants]
    env = env_from_spec(cfg.env)
    horizon = env.eval_horizon if ev.horizon is None else ev.horizon
    jobs = []
    for e, ck in zip(ev.variants, ckpts):
        for k, (origin, x0) in enumerate(initial_states(env, ev)):
            jobs.append({
                "env": cfg.env, "variant": e.variant.value, "checkpoint": None if ck is None else str(ck),
                "mpc": ev.mpc, "k": k, "origin": origin, "x0": np.asarray(x0).tolist(),
                "dt": ev.dt, "horizon": horizon, "integrator": ev.integrator, "tol": ev.safety_tol,
            })
    if ev.workers > 1:
        with ProcessPoolExecutor(ev.workers) as pool:
            results = list(pool.map(_evaluate, jobs))
    else:
        results = [_evaluate(j) for j in jobs]

    # all writes happen here, in job order
    d = _run_dir(cfg, out)
    rows = [r["row"] for r in results]
    n_x = env.system.n
    with open(d / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARE_COLUMNS + [f"x0_{i}" for i in range(n_x)] + [f"xT_{i}" for i in range(n_x)])
        for r in rows:
            w.writerow([_fmt(r[c]) for c in COMPARE_COLUMNS] + [_fmt(v) for v in r["x0"] + r["xT"]])
    for r in results:
        r["traj"].to_csv(d / f"traj_{r['row']['variant']}_{r['row']['k']}.csv")
    summary = []
    for e in ev.variants:
        mine = [r for r in results if r["row"]["variant"] == e.variant.value]
        solve = np.concatenate([r["traj"].solve_times for r in mine])
        summary.append({
            "variant": e.variant.value,
            "safe": all(r["row"]["safe"] for r in mine),
            "mean_total_cost": float(np.mean([r["row"]["total_cost"] for r in mine])),
            "epoch_time": mine[0]["row"]["epoch_time"],
            "median_solve_time": float(np.median(solve)),
        })
    table = {"env": env.id, "horizon": horizon, "dt": ev.dt, "summary": summary, "rows": rows}
    (d / "compare.json").write_text(json.dumps(table, indent=2) + "\n")
    return table


def cmd_scan(cfg: RunConfig, out="runs") -> dict:
    """Feasibility scan of the configured environment; writes ``scan.json``."""
    sys_ = env_from_spec(cfg.env).system
    sc = cfg.scan
    rng = np.random.default_rng(sc.seed)
    if sc.lo is None:
        samples = sample_domain(sys_, sc.n_samples, rng)
    else:
        lo, hi = np.array(sc.lo), np.array(sc.hi)
        # a box with lo > hi anywhere holds no states
        samples = np.zeros((0, sys_.n)) if np.any(lo > hi) else rng.uniform(lo, hi, size=(sc.n_samples, sys_.n))
    report = feasibility_scan(sys_, samples)
    d = _run_dir(cfg, out)
    (d / "scan.json").write_text(scan_to_json(report) + "\n")
    return report


# entry point ------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safecbf", description="Train and compare CBF-constrained neural controllers.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, help_ in (("train", "train one policy variant"), ("compare", "closed-loop comparison of variants"), ("scan", "safe-control-set feasibility scan")):
        s = sub.add_parser(verb, help=help_)
        s.add_argument("--config", required=True, help="JSON run config")
        s.add_argument("--seed", type=int, default=None, help="override every seed in the config")
        s.add_argument("--out", default="runs", help="root directory for run outputs (default: runs)")
        s.add_argument("-q", "--quiet", action="store_true", help="only report errors")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.seed)
        if args.verb == "train":
            d = cmd_train(cfg, args.out)
            print(d / "checkpoint.bin")
        elif args.verb == "compare":
            table = cmd_compare(cfg, args.out)
            for s in table["summary"]:
                print(f"{s['variant']:>9}  safe={s['safe']!s:5}  cost={s['mean_total_cost']:.4g}  solve={s['median_solve_time'] * 1e3:.3f}ms")
        else:
            rep = cmd_scan(cfg, args.out)
            print(f"{rep['n_in_safe_set']} safe states scanned, infeasible fraction {rep['infeasible_fraction']:.4g}")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - the CLI reports every failure as an exit code
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())


__all__ = [
    "ConfigError",
    "EvalConfig",
    "RunConfig",
    "ScanConfig",
    "cmd_compare",
    "cmd_scan",
    "cmd_train",
    "initial_states",
    "load_config",
    "main",
    "parse_config",
]
