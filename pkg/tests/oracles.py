"""Brute-force reference solvers used as independent test oracles."""

import itertools

import numpy as np


def random_lp(rng, n=None, r=None):
    """A bounded, feasible LP ``max c z s.t. A z <= b`` with n <= 4, r <= 12."""
    n = int(rng.integers(1, 5)) if n is None else n
    k = int(rng.integers(0, 12 - 2 * n + 1)) if r is None else r - 2 * n
    A = np.vstack([rng.normal(size=(k, n)), np.eye(n), -np.eye(n)])
    z0 = rng.uniform(-1.0, 1.0, n)
    b = A @ z0 + rng.uniform(0.0, 2.0, A.shape[0])
    # some rows may exclude the origin so phase one is exercised
    return rng.normal(size=n), A, b


def vertex_enumeration(c, A, b, tol=1e-9):
    """Best objective over all basic feasible solutions (None if none exist)."""
    r, n = A.shape
    best = None
    for rows in itertools.combinations(range(r), n):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        z = np.linalg.solve(M, b[list(rows)])
        if np.all(A @ z <= b + tol * max(1.0, np.abs(b).max())):
            val = float(c @ z)
            if best is None or val > best:
                best = val
    return best


def random_projection_qp(rng, m):
    """Projection of a random target onto a random nonempty polytope."""
    k = int(rng.integers(1, 2 * m + 3))
    A = rng.normal(size=(k, m))
    z0 = rng.uniform(-0.5, 0.5, m)
    b = A @ z0 + rng.uniform(0.0, 1.0, k)
    box = np.vstack([np.eye(m), -np.eye(m)])
    A = np.vstack([A, box])
    b = np.concatenate([b, np.full(2 * m, 1.5)])
    return rng.uniform(-3.0, 3.0, m), A, b


def grid_projection(target, A, b, lo=-1.5, hi=1.5, steps=None):
    """Nearest feasible grid point; returns (point, grid spacing)."""
    m = target.size
    steps = {1: 20001, 2: 601, 3: 121}[m] if steps is None else steps
    axis = np.linspace(lo, hi, steps)
    h = axis[1] - axis[0]
    grids = np.meshgrid(*([axis] * m), indexing="ij")
    pts = np.stack([gr.reshape(-1) for gr in grids], axis=1)
    ok = np.all(pts @ A.T <= b + 1e-12, axis=1)
    pts = pts[ok]
    d = np.sum((pts - target) ** 2, axis=1)
    return pts[np.argmin(d)], h
