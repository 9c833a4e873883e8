"""Pathwise policy optimization through Euler rollouts."""

from __future__ import annotations

import copy
import time
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import AdamState, Tape, adam_step, ops
from .policy import Policy
from .sim import NonFinite, integrate_step


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    ``horizon=None`` takes the environment's training horizon. One epoch
    is a pass over ``n_train_states`` fixed initial states in minibatches
    of ``batch_size``.
    """

    epochs: int = 200
    batch_size: int = 64
    n_train_states: int = 512
    horizon: float | None = None
    dt: float = 0.1
    lr: float = 1e-2
    lr_decay: float = 0.99
    grad_clip: float | None = 10.0
    seed: int = 0
    mu: float = 10.0
    hidden: tuple[int, ...] = (32, 32)

    def __post_init__(self):
        errs = []
        if self.epochs < 0:
            errs.append("epochs must be >= 0")
        if self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        if self.n_train_states < 1:
            errs.append("n_train_states must be >= 1")
        if not self.dt > 0:
            errs.append("dt must be > 0")
        if self.horizon is not None and not self.horizon > 0:
            errs.append("horizon must be > 0")
        if self.lr < 0:
            errs.append("lr must be >= 0")
        if self.mu < 0:
            errs.append("mu must be >= 0")
        if errs:
            raise ValueError("; ".join(errs))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def _horizon(policy: Policy, cfg: TrainConfig) -> float:
    T = policy.env.train_horizon if cfg.horizon is None else cfg.horizon
    if T > policy.env.eval_horizon:
        raise ValueError(f"training horizon {T} exceeds the evaluation horizon {policy.env.eval_horizon}")
    return T


def loss(policy: Policy, x0, cfg: TrainConfig, theta=None, detail: bool = False):
    """Batch mean of the time-averaged rollout cost plus the plain-network penalty.

    ``theta`` may be recorded, in which case the loss is recorded too.
    With ``detail`` a dict with the penalty, fallback count and the
    controls' membership violations is returned alongside.
    """
    sys = policy.sys
    x = np.asarray(x0, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("x0 must be a nonempty (batch, n) array")
    T = _horizon(policy, cfg)
    K = max(1, int(round(T / cfg.dt)))
    use_pen = policy.variant.value == "plain" and cfg.mu > 0
    run = 0.0
    pen = 0.0
    n_fallback = 0
    worst = 0.0
    for _ in range(K):
        u, flags = policy.controls(x, theta)
        n_fallback += int(np.sum(flags))
        if detail:
            from .cbf import cbf_rows

            F, g = cbf_rows(sys, ops.value(x))
            res = np.einsum("brm,bm->br", F, ops.value(u)) - g
            ok = ~np.asarray(flags, dtype=bool)
            if ok.any():
                worst = max(worst, float(res[ok].max()))
        run = run + policy.env.cost(x, u)
        try:
            x = integrate_step(sys, x, u, cfg.dt, "euler")
        except NonFinite as exc:
            raise NonFinite(f"rollout diverged: {exc}") from None
        if use_pen:
            pen = pen + ops.relu(-sys.h(x)) ** 2
    # (1/T) sum_k c_k dt with T = K dt
    out = ops.mean(run) / K
    if use_pen:
        out = out + cfg.mu * ops.mean(pen) / K
    if detail:
        return out, {"penalty": float(np.mean(ops.value(pen))) / K if use_pen else 0.0,
                     "fallback_steps": n_fallback, "max_row_violation": worst}
    return out


@dataclass
class TrainResult:
    policy: Policy
    losses: list[float]
    epoch_times: list[float]
    initial_states: np.ndarray
    config: TrainConfig

    @property
    def mean_epoch_time(self) -> float:
        return float(np.mean(self.epoch_times)) if self.epoch_times else 0.0


def train(policy: Policy, cfg: TrainConfig, x_train=None, checkpoint_path=None, log=None) -> TrainResult:
    """Adam on the rollout loss; returns a trained copy of ``policy``.

    The run is a deterministic function of ``cfg`` (and ``x_train`` when
    given). With ``checkpoint_path`` the current parameters are written
    after every epoch.
    """
    if not policy.trainable:
        raise ValueError(f"variant {policy.variant.value} is not trainable")
    policy = copy.copy(policy)
    policy.net = copy.deepcopy(policy.net)
    rng = np.random.default_rng(cfg.seed)
    T = _horizon(policy, cfg)
    if x_train is None:
        x_train = policy.env.sample_initial(rng, cfg.n_train_states, cfg.dt, T)
    x_train = np.asarray(x_train, dtype=float)
    theta = policy.net.mlp.theta.copy()
    opt = AdamState.zeros_like(theta, lr=cfg.lr)
    losses, times = [], []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(x_train))
        opt.lr = cfg.lr * cfg.lr_decay**epoch
        tot, n = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            batch = x_train[order[s:s + cfg.batch_size]]
            tape = Tape()
            th = tape.var(theta)
            L = loss(policy, batch, cfg, th)
            tape.backward(L)
            grad = th.grad if th.grad is not None else np.zeros_like(theta)
            if not np.all(np.isfinite(grad)) or not np.isfinite(L.value):
                raise NonFinite(f"non-finite loss or gradient in epoch {epoch}")
            if cfg.grad_clip is not None:
                gn = float(np.linalg.norm(grad))
                if gn > cfg.grad_clip:
                    grad = grad * (cfg.grad_clip / gn)
            theta = adam_step(opt, theta, grad) if cfg.lr > 0 else theta
            tot += float(L.value) * len(batch)
            n += len(batch)
        policy.net.mlp.theta = theta.copy()
        times.append(time.perf_counter() - t0)
        losses.append(tot / n)
        if checkpoint_path is not None:
            policy.save(checkpoint_path, epoch=epoch + 1, epoch_time=float(np.mean(times)))
        if log is not None:
            log(epoch, losses[-1], times[-1])
    policy.meta = dict(policy.meta, epoch_time=float(np.mean(times)) if times else 0.0, epochs=cfg.epochs)
    return TrainResult(policy, losses, times, x_train, cfg)
