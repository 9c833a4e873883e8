"""Integration, closed-loop rollouts, trajectory costs and safety metrics."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import ops
from .cbf import CbfSystem


class NonFinite(ArithmeticError):
    """The state or control left the finite floating-point range."""


@dataclass(frozen=True)
class RolloutConfig:
    dt: float = 0.01
    horizon: float = 20.0
    integrator: str = "rk4"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        k = self.horizon / self.dt
        if abs(k - round(k)) > 1e-6 * max(1.0, k):
            raise ValueError(f"horizon {self.horizon} is not a multiple of dt {self.dt}")
        if self.integrator not in ("euler", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


def integrate_step(sys: CbfSystem, x, u, dt: float, method: str = "rk4"):
    """One zero-order-hold step of ``xdot = f(x) + g(x) u``.

    Euler steps accept recorded values (used when training); RK4 is the
    evaluation integrator.
    """
    if method == "euler":
        out = x + dt * sys.xdot(x, u)
    elif method == "rk4":
        k1 = sys.xdot(x, u)
        k2 = sys.xdot(x + (0.5 * dt) * k1, u)
        k3 = sys.xdot(x + (0.5 * dt) * k2, u)
        k4 = sys.xdot(x + dt * k3, u)
        out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        raise ValueError(f"unknown integrator {method!r}")
    if not np.all(np.isfinite(ops.value(out))):
        raise NonFinite(f"state became non-finite after a {method} step")
    return out


@dataclass
class Trajectory:
    """Closed-loop samples at ``t_k = k dt``; states and barrier values have one extra entry."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    stage_costs: np.ndarray
    h_values: np.ndarray
    fallback: np.ndarray
    solve_times: np.ndarray
    dt: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        K = len(self.controls)
        if not (len(self.states) == len(self.h_values) == len(self.times) == K + 1):
            raise ValueError("states, times and h_values need one more entry than controls")
        if not (len(self.stage_costs) == len(self.fallback) == len(self.solve_times) == K):
            raise ValueError("per-step arrays must match the number of controls")

    @property
    def horizon(self) -> float:
        return len(self.controls) * self.dt

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.stage_costs) * self.dt)

    @property
    def average_cost(self) -> float:
        T = self.horizon
        return self.total_cost / T if T > 0 else 0.0

    @property
    def median_solve_time(self) -> float:
        return float(np.median(self.solve_times)) if len(self.solve_times) else 0.0

    def rows(self):
        n_u = self.controls.shape[1] if self.controls.ndim == 2 else 0
        for k, t in enumerate(self.times):
            last = k == len(self.controls)
            u = [np.nan] * n_u if last else list(self.controls[k])
            cost = np.nan if last else self.stage_costs[k]
            flag = 0 if last else int(self.fallback[k])
            yield [t, *self.states[k], *u, self.h_values[k], cost, flag]

    def header(self) -> list[str]:
        n_x = self.states.shape[1]
        n_u = self.controls.shape[1] if self.controls.ndim == 2 else 0
        return ["t"] + [f"x{i}" for i in range(n_x)] + [f"u{j}" for j in range(n_u)] + ["h", "cost", "fallback"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for row in self.rows():
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])

    def summary(self) -> dict:
        rep = safety_metrics(self)
        return {
            "horizon": self.horizon,
            "dt": self.dt,
            "total_cost": self.total_cost,
            "average_cost": self.average_cost,
            "median_solve_time": self.median_solve_time,
            "final_state": self.states[-1].tolist(),
            **rep.__dict__,
            **self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, default=float)


def _as_controller(policy) -> Callable:
    act = getattr(policy, "act", None)
    if act is not None:
        return act

    def wrapped(x):
        out = policy(x)
        if isinstance(out, tuple):
            return out
        return out, False

    return wrapped


def rollout(policy, sys: CbfSystem, x0, cfg: RolloutConfig, cost: Callable | None = None) -> Trajectory:
    """Simulate ``u_k = policy(x_k)`` held over each step.

    ``policy`` is a :class:`~safecbf.policy.Policy` or any callable
    returning ``u`` or ``(u, fallback)``. Costs default to zero.
    """
    x = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFinite("initial state is not finite")
    if hasattr(policy, "reset"):
        policy.reset()
    act = _as_controller(policy)
    K = cfg.steps
    xs = np.zeros((K + 1, x.size))
    us = np.zeros((K, sys.m))
    cs = np.zeros(K)
    flags = np.zeros(K, dtype=bool)
    ts = np.zeros(K)
    xs[0] = x
    for k in range(K):
        t0 = time.perf_counter()
        u, fb = act(x)
        ts[k] = time.perf_counter() - t0
        u = np.asarray(u, dtype=float).reshape(sys.m)
        if not np.all(np.isfinite(u)):
            raise NonFinite(f"non-finite control at step {k}")
        us[k] = u
        flags[k] = bool(fb)
        cs[k] = float(cost(x, u)) if cost is not None else 0.0
        x = integrate_step(sys, x, u, cfg.dt, cfg.integrator)
        xs[k + 1] = x
    h = np.asarray(sys.h(xs), dtype=float)
    return Trajectory(np.arange(K + 1) * cfg.dt, xs, us, cs, h, flags, ts, cfg.dt)


@dataclass(frozen=True)
class SafetyReport:
    min_h: float
    first_violation_index: int | None
    first_violation_time: float | None
    n_fallback: int
    safe: bool


def safety_metrics(traj: Trajectory, tol: float = 0.0) -> SafetyReport:
    """Minimum barrier value, first index with ``h < -tol`` and fallback count."""
    h = np.asarray(traj.h_values, dtype=float)
    bad = np.flatnonzero(h < -tol)
    first = int(bad[0]) if bad.size else None
    return SafetyReport(
        min_h=float(h.min()) if h.size else float("inf"),
        first_violation_index=first,
        first_violation_time=float(traj.times[first]) if first is not None else None,
        n_fallback=int(np.sum(traj.fallback)),
        safe=first is None,
    )
