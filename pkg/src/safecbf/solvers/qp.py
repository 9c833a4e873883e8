"""Euclidean projection onto a polytope by a dual active-set method.

The iteration starts at the unconstrained minimizer (the target itself)
and adds the most violated row at each outer step, dropping rows whose
multiplier would turn negative (Goldfarb-Idnani with identity Hessian).
It terminates with the exact active set, which the Jacobian routines
below rely on.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .common import DegenerateActiveSet, IterationLimit, SolveResult, Status

FEAS_TOL = 1e-8
KKT_TOL = 1e-7
STRICT_TOL = 1e-8
_DEP_TOL = 1e-12


class QpProblem:
    """Minimize ``||z - target||^2`` subject to ``A z <= b``."""

    __slots__ = ("target", "A", "b")

    def __init__(self, target, A, b):
        self.target = np.asarray(target, dtype=float).reshape(-1)
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.asarray(b, dtype=float).reshape(-1)
        if self.A.shape != (self.b.size, self.target.size):
            raise ValueError(
                f"inconsistent QP shapes: A {self.A.shape}, b {self.b.shape}, target {self.target.shape}"
            )


def _polish(t, A, b, W):
    """Exact projection of ``t`` onto the affine set ``A_W z = b_W``."""
    if not W:
        return t.copy(), np.zeros(0)
    N = A[W]
    lam = np.linalg.solve(N @ N.T, N @ t - b[W])
    return t - N.T @ lam, lam


def kkt_residual(p: QpProblem, z, W, lam) -> float:
    A, b = p.A, p.b
    stat = z - p.target
    if W:
        stat = stat + A[W].T @ lam
    res = float(np.linalg.norm(stat))
    res = max(res, float(np.max(A @ z - b, initial=0.0)))
    if W:
        res = max(res, float(-np.min(lam, initial=0.0)))
        res = max(res, float(np.max(np.abs(lam * (A[W] @ z - b[W])), initial=0.0)))
    return res


def solve_qp_projection(p: QpProblem, max_iter: int = 500) -> SolveResult:
    A, b, t = p.A, p.b, p.target
    z = t.copy()
    W: list[int] = []
    lam = np.zeros(0)
    it = 0
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    while True:
        viol = A @ z - b
        if W:
            viol[W] = -np.inf
        pidx = int(np.argmax(viol))
        if viol[pidx] <= FEAS_TOL * scale:
            break
        a_p = A[pidx]
        lam_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                raise IterationLimit(f"active-set QP did not converge in {max_iter} steps")
            if W:
                N = A[W].T
                r = np.linalg.lstsq(N, a_p, rcond=None)[0]
                d = a_p - N @ r
            else:
                r = np.zeros(0)
                d = a_p
            dd = float(d @ d)
            s_p = float(a_p @ z - b[pidx])
            t2 = s_p / dd if dd > _DEP_TOL * max(1.0, float(a_p @ a_p)) else np.inf
            t1, jdrop = np.inf, -1
            for k in np.flatnonzero(r > _DEP_TOL):
                q = lam[k] / r[k]
                if q < t1:
                    t1, jdrop = q, int(k)
            if not np.isfinite(t1) and not np.isfinite(t2):
                return SolveResult(Status.INFEASIBLE, np.full(t.size, np.nan), [], np.inf, it)
            step = min(t1, t2)
            if np.isfinite(t2):
                z = z - step * d
            lam = lam - step * r
            lam_p += step
            if step == t2:
                W.append(pidx)
                lam = np.append(lam, lam_p)
                break
            del W[jdrop]
            lam = np.delete(lam, jdrop)
    z, lam = _polish(t, A, b, W)
    order = np.argsort(W)
    Ws = [W[i] for i in order]
    lam = lam[order]
    res = SolveResult(Status.OPTIMAL, z, Ws, kkt_residual(p, z, Ws, lam), it)
    res.multipliers = lam
    return res


def solve_qp(H, c, A, b, max_iter: int = 2000) -> SolveResult:
    """Strictly convex QP ``min 0.5 z^T H z + c^T z  s.t.  A z <= b``.

    Reduced to a projection through the Cholesky factor ``H = L L^T`` with
    ``w = L^T z``.
    """
    L = np.linalg.cholesky(np.asarray(H, dtype=float))
    target = -scipy.linalg.solve_triangular(L, c, lower=True)
    # A z = A L^{-T} w
    AL = scipy.linalg.solve_triangular(L, np.asarray(A, dtype=float).T, lower=True).T
    res = solve_qp_projection(QpProblem(target, AL, b), max_iter=max_iter)
    if res.ok:
        res.z = scipy.linalg.solve_triangular(L.T, res.z, lower=False)
    return res


def _retained_rows(A, sol: SolveResult, strict_tol):
    rows = [i for i, l in zip(sol.active_set, sol.multipliers) if l > strict_tol]
    lam = np.array([l for l in sol.multipliers if l > strict_tol])
    if not rows:
        return rows, lam
    Aa = A[rows]
    _, R, piv = scipy.linalg.qr(Aa.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > 1e-10 * max(1.0, diag[0])))
    if rank < len(rows):
        keep = np.sort(piv[:rank])
        rows = [rows[k] for k in keep]
        lam = lam[keep]
        Aa = A[rows]
        if np.linalg.matrix_rank(Aa) < len(rows):
            raise DegenerateActiveSet("could not extract independent active rows")
    return rows, lam


def qp_projection_jacobian(p: QpProblem, sol: SolveResult, strict_tol: float = STRICT_TOL) -> np.ndarray:
    """Jacobian of the projection w.r.t. the target on the current active region."""
    if not sol.ok:
        raise ValueError("Jacobian requires an optimal solution")
    m = p.target.size
    rows, _ = _retained_rows(p.A, sol, strict_tol)
    if not rows:
        return np.eye(m)
    Aa = p.A[rows]
    return np.eye(m) - Aa.T @ np.linalg.solve(Aa @ Aa.T, Aa)


def qp_projection_vjp(p: QpProblem, sol: SolveResult, z_bar, strict_tol: float = STRICT_TOL):
    """Cotangents ``(target_bar, A_bar, b_bar)`` of the projection."""
    z_bar = np.asarray(z_bar, dtype=float)
    A_bar = np.zeros_like(p.A)
    b_bar = np.zeros(p.b.size)
    rows, lam = _retained_rows(p.A, sol, strict_tol)
    if not rows:
        return z_bar.copy(), A_bar, b_bar
    Aa = p.A[rows]
    q = np.linalg.solve(Aa @ Aa.T, Aa @ z_bar)
    pv = z_bar - Aa.T @ q
    b_bar[rows] = q
    A_bar[rows] = -(np.outer(lam, pv) + np.outer(q, sol.z))
    return pv, A_bar, b_bar
