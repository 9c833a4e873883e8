"""Benchmark systems: adaptive cruise control, two-aircraft avoidance, pendulum."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import ops
from .cbf import AlphaFn, CbfSystem, R_MIN, chebyshev_lp, cbf_rows
from .geometry import Polytope

LEAD_SPEED = 16.0
V_DESIRED = 30.0
SAFE_DISTANCE = 0.5


def _lead(x):
    return ops.value(x).shape[:-1]


def _const(mat, lead):
    return np.broadcast_to(np.asarray(mat, dtype=float), lead + np.shape(mat))


def _matrix(rows):
    """Stack a nested list of same-shaped entries into shape (..., r, c)."""
    return ops.stack([ops.stack(row, -1) for row in rows], -2)


@dataclass(frozen=True)
class QuadraticCost:
    """``sum_i q_i (x_i - xr_i)^2 + sum_j r_j (u_j - ur_j)^2``, batched."""

    q: np.ndarray
    x_ref: np.ndarray
    r: np.ndarray
    u_ref: np.ndarray

    def __call__(self, x, u):
        dx = x - self.x_ref
        du = u - self.u_ref
        return ops.sum_(self.q * dx * dx, -1) + ops.sum_(self.r * du * du, -1)


# adaptive cruise control -----------------------------------------------------
ACC_A = np.array([[0.0, 1.0, 0.0], [0.0, -0.1, 0.0], [0.0, -1.0, 0.0]])
ACC_B = np.array([[0.0], [2.5], [0.0]])


def acc_system(lead_drift: bool = True, alpha: AlphaFn | None = None) -> CbfSystem:
    """State ``(p_f, v_f, d)``, input ``u in [-1, 1]``, barrier ``d - 1.8 v_f``.

    With ``lead_drift`` the gap obeys ``d' = 16 - v_f`` (leading car at
    16 m/s); without it the drift matrix is used verbatim and ``d' = -v_f``.
    """
    drift = np.array([0.0, 0.0, LEAD_SPEED if lead_drift else 0.0])
    grad = np.array([0.0, -1.8, 1.0])

    def f(x):
        return x @ ACC_A.T + drift

    def g(x):
        return _const(ACC_B, _lead(x))

    def h(x):
        return x[..., 2] - 1.8 * x[..., 1]

    def grad_h(x):
        return _const(grad, _lead(x))

    return CbfSystem(
        n=3,
        m=1,
        f=f,
        g=g,
        h=h,
        grad_h=grad_h,
        U=Polytope.box([-1.0], [1.0]),
        alpha=alpha or AlphaFn.linear(1.0),
        domain_hint=(np.array([0.0, 10.0, 30.0]), np.array([0.0, 30.0, 150.0])),
        name="acc" if lead_drift else "acc-literal",
    )


ACC_COST = QuadraticCost(
    q=np.array([0.0, 0.01, 0.0]),
    x_ref=np.array([0.0, V_DESIRED, 0.0]),
    r=np.array([0.05]),
    u_ref=np.zeros(1),
)


def acc_cost(x, u):
    return ACC_COST(x, u)


# aircraft collision avoidance ------------------------------------------------
AIRCRAFT_U_NOM = np.array([0.1, 0.0, 0.1, 0.0])
AIRCRAFT_COST = QuadraticCost(
    q=np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
    x_ref=np.array([-5.0, 0.0, 0.0, 5.0, 0.0, 0.0]),
    r=np.full(4, 0.1),
    u_ref=AIRCRAFT_U_NOM,
)


def aircraft_cost(x, u):
    return AIRCRAFT_COST(x, u)


def aircraft_system(alpha: AlphaFn | None = None, safe_distance: float = SAFE_DISTANCE) -> CbfSystem:
    """Two unicycles ``(p_ax, p_ay, th_a, p_bx, p_by, th_b)`` driven by ``(v_a, w_a, v_b, w_b)``.

    Barrier ``|p_a - p_b|^2 - D_s^2``; its input gradient only involves the
    two speeds, and vanishes when both headings are perpendicular to the
    separation.
    """

    def f(x):
        return ops.value(x) * 0.0

    def g(x):
        lead = _lead(x)
        z = np.zeros(lead)
        one = np.ones(lead)
        ca, sa = ops.cos(x[..., 2]), ops.sin(x[..., 2])
        cb, sb = ops.cos(x[..., 5]), ops.sin(x[..., 5])
        return _matrix(
            [
                [ca, z, z, z],
                [sa, z, z, z],
                [z, one, z, z],
                [z, z, cb, z],
                [z, z, sb, z],
                [z, z, z, one],
            ]
        )

    def h(x):
        dx = x[..., 0] - x[..., 3]
        dy = x[..., 1] - x[..., 4]
        return dx * dx + dy * dy - safe_distance**2

    def grad_h(x):
        dx = 2.0 * (x[..., 0] - x[..., 3])
        dy = 2.0 * (x[..., 1] - x[..., 4])
        z = np.zeros(_lead(x))
        return ops.stack([dx, dy, z, -dx, -dy, z], -1)

    lo = np.array([0.1, -1.0, 0.1, -1.0])
    hi = np.array([1.0, 1.0, 1.0, 1.0])
    return CbfSystem(
        n=6,
        m=4,
        f=f,
        g=g,
        h=h,
        grad_h=grad_h,
        U=Polytope.box(lo, hi),
        alpha=alpha or AlphaFn.linear(1.0),
        domain_hint=(np.array([-1.5, -1.5, -np.pi, -1.5, -1.5, -np.pi]), np.array([1.5, 1.5, np.pi, 1.5, 1.5, np.pi])),
        name="aircraft",
    )


def aircraft_distance(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.hypot(x[..., 0] - x[..., 3], x[..., 1] - x[..., 4])


# inverted pendulum -----------------------------------------------------------
def pendulum_params(m=1.0, l=1.0, inertia=0.0, b=0.1, grav=9.8):
    den = inertia + m * l * l
    return -m * grav * l / den, b / den, m * l / den


def pendulum_system(alpha: AlphaFn | None = None, u_max: float = 15.0) -> CbfSystem:
    """Linearized pendulum ``(theta, theta_dot)`` kept in ``{theta_dot + 0.5 >= 0}``."""
    a0, a1, b0 = pendulum_params()
    A = np.array([[0.0, 1.0], [-a0, -a1]])
    B = np.array([[0.0], [b0]])
    grad = np.array([0.0, 1.0])

    def f(x):
        return x @ A.T

    def g(x):
        return _const(B, _lead(x))

    def h(x):
        return x[..., 1] + 0.5

    def grad_h(x):
        return _const(grad, _lead(x))

    return CbfSystem(
        n=2,
        m=1,
        f=f,
        g=g,
        h=h,
        grad_h=grad_h,
        U=Polytope.box([-u_max], [u_max]),
        alpha=alpha or AlphaFn.linear(1.0),
        domain_hint=(np.array([-0.3, -0.5]), np.array([0.3, 0.5])),
        name="pendulum",
    )


PENDULUM_COST = QuadraticCost(q=np.array([1.0, 0.1]), x_ref=np.zeros(2), r=np.array([0.01]), u_ref=np.zeros(1))


def pendulum_cost(x, u):
    return PENDULUM_COST(x, u)


# environment bundle ----------------------------------------------------------
@dataclass(frozen=True)
class Environment:
    """A system with its cost, network features and initial-state sampler."""

    id: str
    system: CbfSystem
    cost: QuadraticCost
    features: Callable
    feature_shift: np.ndarray
    feature_scale: np.ndarray
    propose: Callable  # (rng, n) -> candidate initial states
    train_horizon: float
    eval_horizon: float
    reference_state: np.ndarray
    mpc_horizon: int
    extra: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return int(self.feature_shift.size)

    def admissible(self, x, dt: float, horizon: float) -> bool:
        """Initial state in the safe set whose short interior-policy pilot stays feasible."""
        sys = self.system
        x = np.array(x, dtype=float)
        if float(sys.h(x)) < 0:
            return False
        for _ in range(int(round(horizon / dt)) + 1):
            F, g = cbf_rows(sys, x)
            u, R, res, _ = chebyshev_lp(F, g)
            if not res.ok or R <= R_MIN:
                return False
            x = x + dt * sys.xdot(x, u)
        return True

    def sample_initial(self, rng: np.random.Generator, n: int, dt: float = 0.1, horizon: float | None = None) -> np.ndarray:
        horizon = self.train_horizon if horizon is None else horizon
        out = []
        tries = 0
        while len(out) < n:
            tries += 1
            if tries > 1000 * max(n, 1):
                raise RuntimeError(f"could not sample {n} admissible states for {self.id}")
            for x in self.propose(rng, n):
                if self.admissible(x, dt, horizon):
                    out.append(x)
                    if len(out) == n:
                        break
        return np.array(out)


def _acc_features(x):
    return x[..., 1:]


def _acc_propose(rng, n):
    v = rng.uniform(10.0, 30.0, n)
    d = rng.uniform(30.0, 150.0, n)
    return np.stack([np.zeros(n), v, d], -1)


def _aircraft_features(x):
    return ops.stack(
        [
            x[..., 0],
            x[..., 1],
            ops.cos(x[..., 2]),
            ops.sin(x[..., 2]),
            x[..., 3],
            x[..., 4],
            ops.cos(x[..., 5]),
            ops.sin(x[..., 5]),
        ],
        -1,
    )


def _aircraft_propose(rng, n, box=1.5, min_sep=0.6):
    out = []
    while len(out) < n:
        pa = rng.uniform(-box, box, 2)
        pb = rng.uniform(-box, box, 2)
        if np.linalg.norm(pa - pb) <= min_sep:
            continue
        th = rng.uniform(-np.pi, np.pi, 2)
        out.append([pa[0], pa[1], th[0], pb[0], pb[1], th[1]])
    return np.array(out)


def _pendulum_propose(rng, n):
    return rng.uniform([-0.2, -0.3], [0.2, 0.3], size=(n, 2))


def make_env(env_id: str, **kw) -> Environment:
    if env_id in ("acc", "acc-literal"):
        lead = kw.pop("lead_drift", env_id == "acc")
        sys = acc_system(lead_drift=lead, **kw)
        return Environment(
            id=env_id,
            system=sys,
            cost=ACC_COST,
            features=_acc_features,
            feature_shift=np.array([20.0, 90.0]),
            feature_scale=np.array([10.0, 60.0]),
            propose=_acc_propose,
            train_horizon=1.0,
            eval_horizon=20.0,
            reference_state=np.array([0.0, 30.0, 100.0]),
            mpc_horizon=10,
        )
    if env_id == "aircraft":
        sys = aircraft_system(**kw)
        return Environment(
            id=env_id,
            system=sys,
            cost=AIRCRAFT_COST,
            features=_aircraft_features,
            feature_shift=np.zeros(8),
            feature_scale=np.array([3.0, 3.0, 1.0, 1.0, 3.0, 3.0, 1.0, 1.0]),
            propose=_aircraft_propose,
            train_horizon=2.0,
            eval_horizon=20.0,
            reference_state=np.array([0.5, 0.0, np.pi, -0.5, 0.0, 0.0]),
            mpc_horizon=20,
        )
    if env_id == "pendulum":
        sys = pendulum_system(**kw)
        return Environment(
            id=env_id,
            system=sys,
            cost=PENDULUM_COST,
            features=lambda x: x,
            feature_shift=np.zeros(2),
            feature_scale=np.array([0.3, 0.5]),
            propose=_pendulum_propose,
            train_horizon=1.0,
            eval_horizon=5.0,
            reference_state=np.array([0.1, 0.0]),
            mpc_horizon=10,
        )
    raise KeyError(f"unknown environment id {env_id!r} (expected acc, acc-literal, aircraft, pendulum)")


ENV_IDS = ("acc", "acc-literal", "aircraft", "pendulum")
