"""Dense two-phase simplex for ``maximize c^T z  s.t.  A z <= b`` with free ``z``.

Free variables are split into positive and negative parts and every row
gets a slack. Rows with negative right-hand side also receive an
artificial variable that is driven out in phase one. Pivoting follows
Bland's rule throughout so the result is deterministic and cycle free.
"""

from __future__ import annotations

import numpy as np

from .common import IterationLimit, SolveResult, Status

PIVOT_TOL = 1e-11
FEAS_TOL = 1e-8


class LpProblem:
    """Maximize ``c^T z`` subject to ``A z <= b``."""

    __slots__ = ("c", "A", "b")

    def __init__(self, c, A, b):
        self.c = np.asarray(c, dtype=float).reshape(-1)
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.asarray(b, dtype=float).reshape(-1)
        if self.A.shape != (self.b.size, self.c.size):
            raise ValueError(
                f"inconsistent LP shapes: A {self.A.shape}, b {self.b.shape}, c {self.c.shape}"
            )


def _pivot(T, basis, row, col):
    T[row] /= T[row, col]
    colv = T[:, col].copy()
    colv[row] = 0.0
    T -= colv[:, None] * T[row]
    basis[row] = col


def _run(T, basis, ncols, max_iter, it0=0):
    """Simplex iterations on tableau ``T`` whose last row is the reduced cost.

    The objective row stores ``c_j - z_j``; we pivot while some entry is
    positive. Returns ``(status, iterations)``.
    """
    it = it0
    nrow = T.shape[0] - 1
    # views stay valid: the tableau is only updated in place
    obj = T[-1, :ncols]
    rhs = T[:nrow, -1]
    never = np.iinfo(basis.dtype).max
    while True:
        enter = obj > PIVOT_TOL
        col = int(enter.argmax())
        if not enter[col]:
            return Status.OPTIMAL, it
        if it >= max_iter:
            raise IterationLimit(f"simplex did not terminate in {max_iter} pivots")
        colv = T[:nrow, col]
        pos = colv > PIVOT_TOL
        if not pos.any():
            return Status.UNBOUNDED, it
        ratios = np.divide(rhs, colv, out=np.full(nrow, np.inf), where=pos)
        best = ratios.min()
        ties = ratios <= best + 1e-12 * max(1.0, abs(best))
        # Bland: among minimal ratios leave the smallest basic index
        row = int(np.where(ties, basis, never).argmin())
        _pivot(T, basis, row, col)
        it += 1


def solve_lp(p: LpProblem, max_iter: int = 5000) -> SolveResult:
    """Solve ``p`` exactly to a vertex with Bland's rule.

    ``active_set`` lists the rows whose slacks are nonbasic at the final
    basis, in increasing order; those rows determine ``z`` together with
    any free variable that ended nonbasic at zero (``fixed_zero``).
    """
    A, b, c = p.A, p.b, p.c
    r, n = A.shape
    neg = b < 0
    nart = int(neg.sum())
    # columns: z+ (n), z- (n), slacks (r), artificials (nart), rhs
    ncols = 2 * n + r + nart
    T = np.zeros((r + 1, ncols + 1))
    basis = 2 * n + np.arange(r)
    if nart:
        sgn = np.where(neg, -1.0, 1.0)
        T[:r, :n] = A * sgn[:, None]
        T[:r, n:2 * n] = -A * sgn[:, None]
        T[:r, 2 * n:2 * n + r] = np.diag(sgn)
        T[:r, -1] = b * sgn
    else:
        # the origin is feasible: slacks form the starting basis
        T[:r, :n] = A
        T[:r, n:2 * n] = -A
        T[:r, 2 * n:2 * n + r] = np.eye(r)
        T[:r, -1] = b
    art_rows = np.flatnonzero(neg)
    for k, i in enumerate(art_rows):
        T[i, 2 * n + r + k] = 1.0
        basis[i] = 2 * n + r + k

    iters = 0
    if nart:
        # phase one: maximize -sum(artificials)
        T[-1, :] = 0.0
        T[-1, 2 * n + r:ncols] = -1.0
        for i in art_rows:
            T[-1] += T[i]
        status, iters = _run(T, basis, ncols, max_iter)
        if T[-1, -1] > FEAS_TOL * max(1.0, np.abs(b).max()):
            return SolveResult(Status.INFEASIBLE, np.full(n, np.nan), [], np.inf, iters)
        # drive remaining zero-level artificials out of the basis
        for row in range(r):
            if basis[row] >= 2 * n + r:
                nz = np.flatnonzero(np.abs(T[row, :2 * n + r]) > PIVOT_TOL)
                if nz.size:
                    _pivot(T, basis, row, int(nz[0]))
        keep = np.ones(T.shape[1], dtype=bool)
        keep[2 * n + r:ncols] = False
        T = T[:, keep]
        ncols = 2 * n + r
        still = basis >= ncols
        if np.any(still):
            # redundant equality-like rows; drop them
            T = np.vstack([T[:-1][~still], T[-1:]])
            basis = basis[~still]

    # phase two objective row: c_j - z_j with current basis
    cfull = np.concatenate([c, -c, np.zeros(r)])
    T[-1, :] = 0.0
    T[-1, :ncols] = cfull
    for row, bj in enumerate(basis):
        if cfull[bj] != 0.0:
            T[-1] -= cfull[bj] * T[row]
    status, iters = _run(T, basis, ncols, max_iter, iters)
    if status is Status.UNBOUNDED:
        return SolveResult(Status.UNBOUNDED, np.full(n, np.nan), [], np.inf, iters)

    x = np.zeros(ncols)
    x[basis] = T[:-1, -1]
    z = x[:n] - x[n:2 * n]
    basic = set(int(j) for j in basis)
    active = [i for i in range(r) if (2 * n + i) not in basic]
    fixed_zero = [j for j in range(n) if j not in basic and (n + j) not in basic]
    # reduced costs of the slack columns are minus the row duals; row
    # sign flips cancel between the slack column and the dual
    duals = -T[-1, 2 * n:2 * n + r].copy()
    lam = np.maximum(duals, 0.0)
    kkt = float(np.linalg.norm(A.T @ lam - c) + max(0.0, -duals.min(initial=0.0)))
    res = SolveResult(Status.OPTIMAL, z, active, kkt, iters)
    res.multipliers = lam
    res.fixed_zero = fixed_zero
    return res


def lp_solution_vjp(A, b, res: SolveResult, z_bar):
    """Cotangents ``(A_bar, b_bar)`` of a vertex solution w.r.t. the data.

    The vertex is ``z = A_B^{-1} b_B`` on the rows of ``res.active_set``;
    free variables fixed at zero by the basis carry no sensitivity.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[1]
    rows = list(res.active_set)
    fixed = set(res.fixed_zero)
    free = [j for j in range(n) if j not in fixed]
    A_bar = np.zeros_like(A)
    b_bar = np.zeros(A.shape[0])
    if not rows or not free:
        return A_bar, b_bar
    M = A[rows][:, free]
    zb = np.asarray(z_bar, dtype=float)[free]
    if M.shape[0] == M.shape[1]:
        w = np.linalg.solve(M.T, zb)
    else:
        w = np.linalg.lstsq(M.T, zb, rcond=None)[0]
    b_bar[rows] = w
    A_bar[np.ix_(rows, free)] = -np.outer(w, res.z[free])
    return A_bar, b_bar


def solve_lp_batch(c, A, b, max_iter: int = 5000) -> list[SolveResult]:
    """Solve ``B`` same-shaped LPs in lockstep.

    Each problem follows exactly the pivot sequence of :func:`solve_lp`
    (the tableau updates are the same floating-point operations), so the
    results agree with the one-at-a-time solver. ``c`` is ``(n,)`` or
    ``(B, n)``, ``A`` is ``(B, r, n)`` and ``b`` is ``(B, r)``. Problems
    that need the rarely used redundant-row cleanup after phase one are
    handed to :func:`solve_lp`.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    B, r, n = A.shape
    c = np.broadcast_to(np.asarray(c, dtype=float), (B, n))
    if b.shape != (B, r):
        raise ValueError(f"inconsistent batch LP shapes: A {A.shape}, b {b.shape}")
    neg = b < 0
    nz = 2 * n + r  # structural + slack columns
    ncols = nz + r  # one artificial slot per row (all-zero unless b_i < 0)
    T = np.zeros((B, r + 1, ncols + 1))
    sgn = np.where(neg, -1.0, 1.0)
    T[:, :r, :n] = A * sgn[:, :, None]
    T[:, :r, n:2 * n] = -A * sgn[:, :, None]
    rr = np.arange(r)
    T[:, rr, 2 * n + rr] = sgn
    T[:, :r, -1] = b * sgn
    basis = np.broadcast_to(2 * n + rr, (B, r)).copy()
    bi, ri = np.nonzero(neg)
    T[bi, ri, nz + ri] = 1.0
    basis[bi, ri] = nz + ri
    iters = np.zeros(B, dtype=int)

    def run(idx, limit):
        """Lockstep Bland iterations on problems ``idx``; returns their status codes."""
        status = np.zeros(B, dtype=int)  # 0 running, 1 optimal, 2 unbounded
        live = np.array(idx, dtype=int)
        while live.size:
            obj = T[live, -1, :limit]
            posc = obj > PIVOT_TOL
            done = ~posc.any(axis=1)
            status[live[done]] = 1
            live = live[~done]
            if not live.size:
                break
            posc = posc[~done]
            if np.any(iters[live] >= max_iter):
                raise IterationLimit(f"simplex did not terminate in {max_iter} pivots")
            col = np.argmax(posc, axis=1)
            colv = T[live, :r, col]
            pos = colv > PIVOT_TOL
            unb = ~pos.any(axis=1)
            status[live[unb]] = 2
            keep = ~unb
            live, col, colv, pos = live[keep], col[keep], colv[keep], pos[keep]
            if not live.size:
                break
            rhs = T[live, :r, -1]
            ratios = np.full(colv.shape, np.inf)
            ratios[pos] = rhs[pos] / colv[pos]
            best = ratios.min(axis=1, keepdims=True)
            ties = ratios <= best + 1e-12 * np.maximum(1.0, np.abs(best))
            cand = np.where(ties, basis[live], np.iinfo(basis.dtype).max)
            row = np.argmin(cand, axis=1)
            k = np.arange(live.size)
            prow = T[live, row, :] / T[live, row, col][:, None]
            colfull = T[live, :, col].copy()  # (L, r+1)
            colfull[k, row] = 0.0
            sub = T[live]
            sub -= colfull[:, :, None] * prow[:, None, :]
            sub[k, row] = prow
            T[live] = sub
            basis[live, row] = col
            iters[live] += 1
        return status

    results: list[SolveResult | None] = [None] * B
    has_art = neg.any(axis=1)
    p1 = np.flatnonzero(has_art)
    delegate = np.zeros(B, dtype=bool)
    if p1.size:
        T[p1, -1, :] = 0.0
        T[bi, -1, nz + ri] = -1.0
        for i in range(r):
            m = neg[p1, i]
            if m.any():
                T[p1[m], -1] += T[p1[m], i]
        run(p1, ncols)
        for q in p1:
            if T[q, -1, -1] > FEAS_TOL * max(1.0, np.abs(b[q]).max()):
                results[q] = SolveResult(Status.INFEASIBLE, np.full(n, np.nan), [], np.inf, int(iters[q]))
            elif np.any(basis[q] >= nz):
                delegate[q] = True
    for q in np.flatnonzero(delegate):
        results[q] = solve_lp(LpProblem(c[q], A[q], b[q]), max_iter)
    p2 = np.array([q for q in range(B) if results[q] is None], dtype=int)
    if p2.size:
        cfull = np.concatenate([c, -c, np.zeros((B, r))], axis=1)
        T[p2, -1, :] = 0.0
        T[p2, -1, :nz] = cfull[p2]
        for row in range(r):
            coef = cfull[p2, basis[p2, row]]
            T[p2, -1] -= coef[:, None] * T[p2, row]
        status = run(p2, nz)
        for q in p2:
            if status[q] == 2:
                results[q] = SolveResult(Status.UNBOUNDED, np.full(n, np.nan), [], np.inf, int(iters[q]))
                continue
            x = np.zeros(ncols)
            x[basis[q]] = T[q, :-1, -1]
            z = x[:n] - x[n:2 * n]
            basic = set(int(j) for j in basis[q])
            active = [i for i in range(r) if (2 * n + i) not in basic]
            fixed_zero = [j for j in range(n) if j not in basic and (n + j) not in basic]
            duals = -T[q, -1, 2 * n:nz].copy()
            lam = np.maximum(duals, 0.0)
            kkt = float(np.linalg.norm(A[q].T @ lam - c[q]) + max(0.0, -duals.min(initial=0.0)))
            res = SolveResult(Status.OPTIMAL, z, active, kkt, int(iters[q]))
            res.multipliers = lam
            res.fixed_zero = fixed_zero
            results[q] = res
    return results
