"""Polytopes in halfspace form, C-set checks and the gauge map.

A polytope is stored as ``{w : F w <= g}`` with rows left unnormalized.
The gauge map sends the unit infinity-norm ball onto a polytopic C-set by
rescaling every point to the matching level set of the target's gauge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

MEMBERSHIP_TOL = 1e-9
CSET_TOL = 1e-9


class GeometryError(ValueError):
    pass


class NotCset(GeometryError):
    pass


class OutOfBall(GeometryError):
    pass


class NotMember(GeometryError):
    pass


@dataclass(frozen=True)
class Polytope:
    """Halfspace representation ``{w in R^m : F w <= g}``."""

    F: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        g = np.asarray(self.g, dtype=float).reshape(-1)
        if F.shape[0] != g.shape[0]:
            raise GeometryError(f"F has {F.shape[0]} rows but g has {g.shape[0]} entries")
        if np.any(np.all(F == 0.0, axis=1)):
            raise GeometryError("F has an all-zero row")
        F.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "g", g)

    @property
    def dim(self) -> int:
        return self.F.shape[1]

    @property
    def nrows(self) -> int:
        return self.F.shape[0]

    @classmethod
    def box(cls, lo, hi) -> "Polytope":
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        m = lo.size
        eye = np.eye(m)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @classmethod
    def unit_ball(cls, m: int) -> "Polytope":
        return cls.box(-np.ones(m), np.ones(m))

    def contains(self, w, tol: float = MEMBERSHIP_TOL) -> bool:
        return bool(np.all(self.F @ np.asarray(w, dtype=float) <= self.g + tol))

    def residual(self, w) -> float:
        """Largest row violation ``max_i (F_i w - g_i)`` (negative inside)."""
        return float(np.max(self.F @ np.asarray(w, dtype=float) - self.g))

    def shift(self, center) -> "Polytope":
        """The translated set ``P - center``."""
        return Polytope(self.F, self.g - self.F @ np.asarray(center, dtype=float))

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        from .solvers import LpProblem, Status, solve_lp

        lo = np.empty(self.dim)
        hi = np.empty(self.dim)
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = 1.0
            up = solve_lp(LpProblem(e, self.F, self.g))
            dn = solve_lp(LpProblem(-e, self.F, self.g))
            if up.status is not Status.OPTIMAL or dn.status is not Status.OPTIMAL:
                raise GeometryError("bounding box requires a bounded, nonempty polytope")
            hi[j] = up.z[j]
            lo[j] = dn.z[j]
        return lo, hi

    def to_json(self) -> str:
        return json.dumps({"F": self.F.tolist(), "g": self.g.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Polytope":
        data = json.loads(text)
        return cls(np.array(data["F"], dtype=float), np.array(data["g"], dtype=float))


@dataclass(frozen=True)
class CsetCertificate:
    is_cset: bool
    origin_margin: float
    bounded: bool


def check_cset(P: Polytope, tol: float = CSET_TOL) -> CsetCertificate:
    """Decide whether ``P`` is compact with the origin strictly inside.

    Boundedness is checked by maximizing each of ``+-e_j`` over ``P``.
    """
    from .solvers import LpProblem, Status, solve_lp

    margin = float(np.min(P.g))
    bounded = True
    for j in range(P.dim):
        for sgn in (1.0, -1.0):
            c = np.zeros(P.dim)
            c[j] = sgn
            res = solve_lp(LpProblem(c, P.F, P.g))
            if res.status is not Status.OPTIMAL:
                bounded = False
                break
        if not bounded:
            break
    return CsetCertificate(is_cset=bool(margin > tol and bounded), origin_margin=margin, bounded=bounded)


def _require_positive_offsets(P: Polytope, tol: float = CSET_TOL) -> None:
    # cheap necessary condition; the full LP check lives in check_cset
    if np.min(P.g) <= tol:
        raise NotCset(f"origin is not interior (min offset {np.min(P.g):.3g})")


def gauge_function(P: Polytope, v, tol: float = CSET_TOL, validate: bool = True) -> float:
    """Minkowski gauge of ``v`` w.r.t. ``P``: ``max(0, max_i F_i v / g_i)``."""
    if validate:
        _require_positive_offsets(P, tol)
    v = np.asarray(v, dtype=float)
    return max(0.0, float(np.max(P.F @ v / P.g)))


def gauge_map(P: Polytope, v, tol: float = MEMBERSHIP_TOL, validate: bool = True) -> np.ndarray:
    """Map ``v`` in the unit infinity ball to ``(|v|_inf / gauge_P(v)) v`` in ``P``."""
    v = np.asarray(v, dtype=float)
    if validate:
        _require_positive_offsets(P)
    norm = float(np.max(np.abs(v))) if v.size else 0.0
    if norm > 1.0 + tol:
        raise OutOfBall(f"|v|_inf = {norm:.6g} > 1")
    if norm == 0.0:
        return np.zeros_like(v)
    gam = gauge_function(P, v, validate=False)
    return (norm / gam) * v


def gauge_map_inverse(P: Polytope, w, tol: float = MEMBERSHIP_TOL, validate: bool = True) -> np.ndarray:
    """Inverse of :func:`gauge_map`: ``(gauge_P(w) / |w|_inf) w``."""
    w = np.asarray(w, dtype=float)
    if validate:
        _require_positive_offsets(P)
    if not P.contains(w, tol):
        raise NotMember(f"point violates P by {P.residual(w):.3g}")
    norm = float(np.max(np.abs(w))) if w.size else 0.0
    if norm == 0.0:
        return np.zeros_like(w)
    return (gauge_function(P, w, validate=False) / norm) * w


def _active_piece(F: np.ndarray, g: np.ndarray, v: np.ndarray):
    """Select the smooth piece of the gauge map containing ``v``.

    Returns ``(vhat, j, sign, i)`` where ``vhat`` is a representative point
    of the piece. Ties resolve to the lowest index; ``v = 0`` uses the piece
    around the ray ``+e_0``.
    """
    if not np.any(v):
        vhat = np.zeros_like(v)
        vhat[0] = 1.0
    else:
        vhat = v
    j = int(np.argmax(np.abs(vhat)))
    sign = 1.0 if vhat[j] >= 0 else -1.0
    i = int(np.argmax(F @ vhat / g))
    return vhat, j, sign, i


def gauge_map_jacobian(P: Polytope, v) -> np.ndarray:
    """Jacobian of the gauge map on the active piece at ``v``.

    The map is positively homogeneous of degree one, so the piece Jacobian
    is homogeneous of degree zero and well defined at ``v = 0`` as well.
    """
    v = np.asarray(v, dtype=float)
    _require_positive_offsets(P)
    return _piece_jacobian(P.F, P.g, v)


def _piece_jacobian(F, g, v):
    vhat, j, sign, i = _active_piece(F, g, v)
    s = sign * vhat[j]
    gam = F[i] @ vhat / g[i]
    m = v.size
    J = (s / gam) * np.eye(m)
    J[:, j] += sign * vhat / gam
    J -= np.outer(vhat, F[i]) * (s / (gam * gam * g[i]))
    return J


def gauge_map_jvp(P: Polytope, v, dv) -> np.ndarray:
    """Directional derivative of :func:`gauge_map` at ``v`` along ``dv``."""
    return gauge_map_jacobian(P, v) @ np.asarray(dv, dtype=float)


def gauge_map_vjp(F, g, v, cot):
    """Reverse-mode partials of ``G(v | {F w <= g})`` at ``v``.

    Returns ``(v_bar, F_bar, g_bar)`` for output cotangent ``cot``. The
    transpose product is formed directly from the piece Jacobian's
    rank-two structure.
    """
    F = np.asarray(F, dtype=float)
    g = np.asarray(g, dtype=float)
    v = np.asarray(v, dtype=float)
    cot = np.asarray(cot, dtype=float)
    vhat, j, sign, i = _active_piece(F, g, v)
    s = sign * vhat[j]
    gam = F[i] @ vhat / g[i]
    cv = float(cot @ vhat)
    v_bar = (s / gam) * cot - (s * cv / (gam * gam * g[i])) * F[i]
    v_bar[j] += sign * cv / gam
    F_bar = np.zeros_like(F)
    g_bar = np.zeros_like(g)
    if np.any(v):
        F_bar[i] = -(s / (gam * gam)) * cv * v / g[i]
        g_bar[i] = (s / gam) * cv / g[i]
    return v_bar, F_bar, g_bar
