"""Control barrier function data and the pointwise safe control set.

``K(x) = {u in U : L_f h(x) + L_g h(x) u + alpha(h(x)) >= 0}`` is built
as a polytope whose first row is the barrier condition, followed by the
rows of ``U``. The system callables accept batched states (leading axes)
and also accept recorded autodiff values, so the same definitions drive
both evaluation and training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import ops
from .geometry import Polytope
from .solvers import LpProblem, QpProblem, SolveResult, Status, solve_lp, solve_lp_batch, solve_qp_projection

R_MIN = 1e-6
_ROW_TOL = 1e-12


class DegenerateInterior(RuntimeError):
    """The safe control set has no interior point with radius above ``R_MIN``."""


@dataclass(frozen=True)
class AlphaFn:
    """Extended class-K-infinity gain, ``kappa * h`` or ``kappa * h**3``."""

    kind: str = "linear"
    kappa: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "cubic"):
            raise ValueError(f"unknown alpha kind {self.kind!r}")
        if not self.kappa > 0:
            raise ValueError("alpha gain must be positive")

    def __call__(self, h):
        if self.kind == "linear":
            return self.kappa * h
        return self.kappa * h * h * h

    @classmethod
    def linear(cls, kappa: float = 1.0) -> "AlphaFn":
        return cls("linear", kappa)

    @classmethod
    def cubic(cls, kappa: float = 1.0) -> "AlphaFn":
        return cls("cubic", kappa)


@dataclass(frozen=True)
class CbfSystem:
    """Control-affine dynamics ``xdot = f(x) + g(x) u`` with barrier ``h``.

    ``f``: (..., n) -> (..., n); ``g``: (..., n) -> (..., n, m);
    ``h``: (..., n) -> (...); ``grad_h``: (..., n) -> (..., n).
    """

    n: int
    m: int
    f: Callable
    g: Callable
    h: Callable
    grad_h: Callable
    U: Polytope
    alpha: AlphaFn = field(default_factory=AlphaFn)
    domain_hint: tuple[np.ndarray, np.ndarray] | None = None
    name: str = ""

    def xdot(self, x, u):
        return self.f(x) + ops.sum_(self.g(x) * ops.expand_dims(u, -2), -1)


@dataclass(frozen=True)
class SafeControlSet:
    """``K(x)`` as a polytope over ``u`` plus the raw barrier row.

    ``cbf_row = (a, c)`` encodes ``a u <= c`` with ``a = -L_g h`` and
    ``c = L_f h + alpha(h)``. When ``a`` vanishes the row cannot be stored
    in a polytope; it is then dropped (vacuous, ``c >= 0``) or the set is
    empty (``c < 0``) and ``polytope`` is just ``U``.
    """

    polytope: Polytope
    cbf_row: tuple[np.ndarray, float]
    feasible: bool

    @property
    def F(self):
        return self.polytope.F

    @property
    def g(self):
        return self.polytope.g

    def contains(self, u, tol: float = 1e-8) -> bool:
        a, c = self.cbf_row
        u = np.asarray(u, dtype=float)
        return bool(a @ u <= c + tol) and self.polytope.contains(u, tol)


@dataclass(frozen=True)
class InteriorPoint:
    u: np.ndarray
    R: float
    lp: SolveResult | None = None


def lie_derivatives(sys: CbfSystem, x):
    """Return ``(L_f h(x), L_g h(x))``; batched over leading axes of ``x``."""
    dh = sys.grad_h(x)
    Lf = ops.sum_(dh * sys.f(x), -1)
    Lg = ops.sum_(ops.expand_dims(dh, -1) * sys.g(x), -2)
    return Lf, Lg


def cbf_rows(sys: CbfSystem, x):
    """Stacked ``(F, g)`` of ``K(x)``: barrier row first, then the rows of ``U``.

    Shapes ``(..., 1 + r_U, m)`` and ``(..., 1 + r_U)``; differentiable in ``x``.
    """
    Lf, Lg = lie_derivatives(sys, x)
    off = Lf + sys.alpha(sys.h(x))
    lead = ops.value(off).shape
    Fu = np.broadcast_to(sys.U.F, lead + sys.U.F.shape)
    gu = np.broadcast_to(sys.U.g, lead + sys.U.g.shape)
    F = ops.concat([ops.expand_dims(-Lg, -2), Fu], axis=-2)
    g = ops.concat([ops.expand_dims(off, -1), gu], axis=-1)
    return F, g


def is_feasible(F, g) -> bool:
    """Phase-one check that ``{u : F u <= g}`` is nonempty."""
    return solve_lp(LpProblem(np.zeros(F.shape[1]), F, g)).status is Status.OPTIMAL


def is_feasible_batch(F, g) -> np.ndarray:
    """:func:`is_feasible` for stacked rows ``F`` (B, r, m) and ``g`` (B, r)."""
    F = np.asarray(F, dtype=float)
    res = solve_lp_batch(np.zeros(F.shape[2]), F, g)
    return np.array([r.status is Status.OPTIMAL for r in res])


def safe_control_set(sys: CbfSystem, x) -> SafeControlSet:
    x = np.asarray(x, dtype=float)
    F, g = cbf_rows(sys, x)
    a, c = F[0].copy(), float(g[0])
    if np.linalg.norm(a) <= _ROW_TOL:
        return SafeControlSet(sys.U, (a, c), bool(c >= 0.0))
    P = Polytope(F, g)
    return SafeControlSet(P, (a, c), is_feasible(P.F, P.g))


def _radius_shift(norms, g):
    """Radius offset that makes ``(u, R) = (0, R0)`` feasible for the Chebyshev LP.

    With ``R`` free the point ``u = 0``, ``R0 = min_i g_i / |F_i|`` always
    satisfies ``F u + |F| R <= g``; solving for ``R - R0`` starts the simplex
    at a feasible origin, so no phase one is needed. The clip removes
    roundoff below zero on the row attaining the minimum.
    """
    live = norms > _ROW_TOL
    if live.all():
        R0 = (g / norms).min(axis=-1)
        return R0, np.maximum(g - norms * R0[..., None], 0.0)
    ratio = np.divide(g, norms, out=np.full(g.shape, np.inf), where=live)
    R0 = ratio.min(axis=-1)
    R0 = np.where(R0 < np.inf, R0, 0.0)
    # rows with F_i = 0 keep their offset: a negative one means K is empty
    return R0, np.where(live, np.maximum(g - norms * R0[..., None], 0.0), g)


def _radius_result(res: SolveResult, R0: float, m: int) -> SolveResult:
    if not res.ok:
        return res
    z = res.z.copy()
    z[m] += R0
    if z[m] < 0.0:
        # every inscribed "ball" has negative radius: the set is empty
        return SolveResult(Status.INFEASIBLE, np.full(m + 1, np.nan), [], np.inf, res.iterations)
    lam = None if res.multipliers is None else np.append(res.multipliers, 0.0)
    return SolveResult(Status.OPTIMAL, z, res.active_set, res.kkt_residual, res.iterations, lam, res.fixed_zero)


def chebyshev_lp(F, g) -> tuple[np.ndarray, float, SolveResult, np.ndarray]:
    """Largest inscribed ball of ``{u : F u <= g}``.

    Returns ``(center, radius, lp_result, lp_matrix)`` where ``lp_matrix``
    is the constraint matrix over ``(u, R)`` including the ``R >= 0`` row.
    The set is reported empty (status infeasible) when the best radius is
    negative.
    """
    F = np.asarray(F, dtype=float)
    g = np.asarray(g, dtype=float)
    r, m = F.shape
    A = np.zeros((r + 1, m + 1))
    A[:r, :m] = F
    A[:r, m] = np.linalg.norm(F, axis=1)
    A[r, m] = -1.0
    c = np.zeros(m + 1)
    c[m] = 1.0
    R0, b = _radius_shift(A[:r, m], g)
    res = _radius_result(solve_lp(LpProblem(c, A[:r], b)), float(R0), m)
    if not res.ok:
        return np.full(m, np.nan), -np.inf, res, A
    return res.z[:m].copy(), float(res.z[m]), res, A


def chebyshev_lp_batch(F, g):
    """:func:`chebyshev_lp` over a batch; returns a list of its 4-tuples."""
    F = np.asarray(F, dtype=float)
    g = np.asarray(g, dtype=float)
    B, r, m = F.shape
    A = np.zeros((B, r + 1, m + 1))
    A[:, :r, :m] = F
    A[:, :r, m] = np.linalg.norm(F, axis=2)
    A[:, r, m] = -1.0
    c = np.zeros(m + 1)
    c[m] = 1.0
    R0, b = _radius_shift(A[:, :r, m], g)
    out = []
    for q, res in enumerate(solve_lp_batch(c, A[:, :r], b)):
        res = _radius_result(res, float(R0[q]), m)
        if res.ok:
            out.append((res.z[:m].copy(), float(res.z[m]), res, A[q]))
        else:
            out.append((np.full(m, np.nan), -np.inf, res, A[q]))
    return out


def chebyshev_vjp(F, res: SolveResult, A, u_bar, R_bar=0.0):
    """Cotangents ``(F_bar, g_bar)`` of the Chebyshev center and radius."""
    from .solvers import lp_solution_vjp

    F = np.asarray(F, dtype=float)
    r, m = F.shape
    z_bar = np.append(np.asarray(u_bar, dtype=float), R_bar)
    A_bar, b_bar = lp_solution_vjp(A, None, res, z_bar)
    norms = A[:r, m]
    safe = np.where(norms > _ROW_TOL, norms, 1.0)
    F_bar = A_bar[:r, :m] + A_bar[:r, m:m + 1] * np.where(norms[:, None] > _ROW_TOL, F / safe[:, None], 0.0)
    return F_bar, b_bar[:r]


def chebyshev_vjp_batch(F, results, A, u_bar, R_bar=None):
    """:func:`chebyshev_vjp` for a batch, grouping samples that share an optimal basis."""
    F = np.asarray(F, dtype=float)
    A = np.asarray(A, dtype=float)
    B, r, m = F.shape
    u_bar = np.asarray(u_bar, dtype=float)
    z_bar = np.concatenate([u_bar, np.zeros((B, 1)) if R_bar is None else np.reshape(R_bar, (B, 1))], axis=1)
    A_bar = np.zeros_like(A)
    b_bar = np.zeros((B, r + 1))
    groups: dict[tuple, list[int]] = {}
    for q, res in enumerate(results):
        fixed = set(res.fixed_zero)
        free = tuple(j for j in range(m + 1) if j not in fixed)
        groups.setdefault((tuple(res.active_set), free), []).append(q)
    for (rows, free), idx in groups.items():
        if not rows or not free:
            continue
        rows, free, idx = list(rows), list(free), np.array(idx)
        M = A[idx][:, rows][:, :, free]
        zb = z_bar[idx][:, free]
        if len(rows) == len(free):
            w = np.linalg.solve(np.swapaxes(M, 1, 2), zb[:, :, None])[:, :, 0]
        else:
            w = np.stack([np.linalg.lstsq(Mq.T, zq, rcond=None)[0] for Mq, zq in zip(M, zb)])
        zf = np.stack([results[q].z[free] for q in idx])
        sub = A_bar[idx]
        sub[:, np.array(rows)[:, None], np.array(free)[None, :]] = -w[:, :, None] * zf[:, None, :]
        A_bar[idx] = sub
        bb = b_bar[idx]
        bb[:, rows] = w
        b_bar[idx] = bb
    norms = A[:, :r, m]
    unit = np.where(norms[:, :, None] > _ROW_TOL, F / np.where(norms > _ROW_TOL, norms, 1.0)[:, :, None], 0.0)
    F_bar = A_bar[:, :r, :m] + A_bar[:, :r, m:m + 1] * unit
    return F_bar, b_bar[:, :r]


def interior_policy(sys: CbfSystem, x, r_min: float = R_MIN) -> InteriorPoint:
    """Chebyshev center of ``K(x)``; raises :class:`DegenerateInterior` if ``R <= r_min``."""
    F, g = cbf_rows(sys, np.asarray(x, dtype=float))
    u, R, res, _ = chebyshev_lp(F, g)
    if not res.ok or R <= r_min:
        raise DegenerateInterior(f"Chebyshev radius {R:.3g} at x={np.asarray(x).tolist()}")
    return InteriorPoint(u, R, res)


def shifted_safe_set(sys: CbfSystem, x, r_min: float = R_MIN) -> tuple[Polytope, InteriorPoint]:
    """``K(x) - u_int`` (a C-set) together with the interior point ``u_int``."""
    ip = interior_policy(sys, x, r_min)
    F, g = cbf_rows(sys, np.asarray(x, dtype=float))
    keep = np.linalg.norm(F, axis=1) > _ROW_TOL
    return Polytope(F[keep], g[keep] - F[keep] @ ip.u), ip


@dataclass(frozen=True)
class FilterResult:
    """Filtered control; ``fallback`` marks a relaxed (empty-set) step.

    ``offsets`` are the row offsets actually projected onto and
    ``relax_lp`` the barrier-row maximization over ``U`` when relaxed.
    """

    u: np.ndarray
    fallback: bool
    qp: SolveResult
    offsets: np.ndarray | None = None
    relax_lp: SolveResult | None = None


def least_violation_rows(F, g):
    """Relax the barrier row (row 0) to the best value attainable over ``U``.

    Returns the relaxed offsets and the LP maximizing the barrier slack
    over ``U`` (its solution gives the offset's sensitivity).
    """
    lp = solve_lp(LpProblem(-F[0], F[1:], g[1:]))
    if not lp.ok:
        raise RuntimeError("input set U is empty or unbounded")
    best = float(F[0] @ lp.z)
    g2 = np.array(g, dtype=float)
    g2[0] = max(g2[0], best) + 1e-9
    return g2, lp


def filter_rows(F, g, u_ref, feasible: bool | None = None) -> FilterResult:
    """Project ``u_ref`` onto ``{F u <= g}``, relaxing the barrier row if empty."""
    if feasible is None:
        feasible = is_feasible(F, g)
    g = np.asarray(g, dtype=float)
    if feasible:
        sol = solve_qp_projection(QpProblem(u_ref, F, g))
        if sol.ok:
            return FilterResult(sol.z, False, sol, g)
    g_used, lp = least_violation_rows(F, g)
    sol = solve_qp_projection(QpProblem(u_ref, F, g_used))
    if not sol.ok:
        raise RuntimeError("least-violation QP is infeasible")
    return FilterResult(sol.z, True, sol, g_used, lp)


def safety_filter_detailed(sys: CbfSystem, x, u_ref) -> FilterResult:
    K = safe_control_set(sys, x)
    u_ref = np.asarray(u_ref, dtype=float)
    if np.linalg.norm(K.cbf_row[0]) <= _ROW_TOL:
        # barrier row does not involve u: either vacuous or hopeless
        sol = solve_qp_projection(QpProblem(u_ref, sys.U.F, sys.U.g))
        return FilterResult(sol.z, not K.feasible, sol, sys.U.g)
    return filter_rows(K.F, K.g, u_ref, K.feasible)


def safety_filter(sys: CbfSystem, x, u_ref) -> np.ndarray:
    """Minimally invasive projection of ``u_ref`` onto ``K(x)``."""
    return safety_filter_detailed(sys, x, u_ref).u


def sample_domain(sys: CbfSystem, n: int, rng: np.random.Generator) -> np.ndarray:
    if sys.domain_hint is None:
        raise ValueError(f"system {sys.name!r} has no domain hint")
    lo, hi = (np.asarray(a, dtype=float) for a in sys.domain_hint)
    return rng.uniform(lo, hi, size=(n, lo.size))


def feasibility_scan(sys: CbfSystem, samples, r_min: float = R_MIN) -> dict:
    """Count states in the safe set where ``K(x)`` is empty or has no usable interior."""
    samples = np.asarray(samples, dtype=float).reshape(-1, sys.n) if len(samples) else np.zeros((0, sys.n))
    n_safe = n_empty = n_degen = 0
    bad: list[list[float]] = []
    for x in samples:
        if float(sys.h(x)) < 0:
            continue
        n_safe += 1
        F, g = cbf_rows(sys, x)
        _, R, res, _ = chebyshev_lp(F, g)
        if not res.ok:
            n_empty += 1
            bad.append(x.tolist())
        elif R <= r_min:
            n_degen += 1
            bad.append(x.tolist())
    frac = (n_empty + n_degen) / n_safe if n_safe else 0.0
    return {
        "system": sys.name,
        "n_samples": int(len(samples)),
        "n_in_safe_set": n_safe,
        "n_empty": n_empty,
        "n_degenerate": n_degen,
        "infeasible_fraction": frac,
        "infeasible_states": bad,
    }


def scan_to_json(report: dict) -> str:
    return json.dumps(report, indent=2)
