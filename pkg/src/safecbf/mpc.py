"""Shooting MPC baseline with iterated linearization.

Each call condenses the Euler prediction around the current control
sequence, solves a convex QP in the sequence update and repeats a few
times. Constraints: the input polytope at every step, a box trust region,
the discrete barrier decrease ``h(x_{k+1}) >= h(x_k) - dt alpha(h(x_k))``
linearized along the prediction, and the exact continuous barrier row on
the first control so the emitted input lies in the safe control set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .cbf import CbfSystem, cbf_rows, safety_filter_detailed
from .envs import QuadraticCost
from .solvers import solve_qp

_ROW_TOL = 1e-12


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 10
    dt: float = 0.1
    max_iter: int = 3
    trust_radius: float | None = 1.0
    terminal_weight: float = 1.0
    tol: float = 1e-6
    use_cbf: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("MPC horizon must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.trust_radius is not None and not self.trust_radius > 0:
            raise ValueError("trust_radius must be positive")


def _alpha_slope(alpha, h):
    if alpha.kind == "linear":
        return np.full_like(h, alpha.kappa)
    return 3.0 * alpha.kappa * h * h


class MpcController:
    """Stateful MPC; keeps the shifted solution as the next warm start."""

    def __init__(self, sys: CbfSystem, cost: QuadraticCost, cfg: MpcConfig):
        self.sys = sys
        self.cost = cost
        self.cfg = cfg
        self._lo, self._hi = sys.U.bounding_box()
        self.reset()

    def reset(self) -> None:
        c = 0.5 * (self._lo + self._hi)
        self.useq = np.tile(c, (self.cfg.horizon, 1))
        self.last_u = c.copy()
        self.last_iterations = 0

    # prediction ---------------------------------------------------------
    def _predict(self, x0, useq):
        sys, dt = self.sys, self.cfg.dt
        xs = np.zeros((len(useq) + 1, sys.n))
        xs[0] = x0
        for k, u in enumerate(useq):
            xs[k + 1] = xs[k] + dt * sys.xdot(xs[k], u)
        return xs

    def _linearize(self, xs, useq):
        """Euler-step Jacobians ``A_k = d x_{k+1}/d x_k`` and ``B_k = d x_{k+1}/d u_k``."""
        sys, dt = self.sys, self.cfg.dt
        N, n = len(useq), sys.n
        tape = Tape()
        X = tape.var(xs[:-1])
        Uv = tape.var(useq)
        nxt = X + dt * sys.xdot(X, Uv)
        A = np.zeros((N, n, n))
        B = np.zeros((N, n, sys.m))
        for i in range(n):
            seed = np.zeros((N, n))
            seed[:, i] = 1.0
            tape.backward(nxt, seed)
            A[:, i, :] = X.grad if X.grad is not None else 0.0
            B[:, i, :] = Uv.grad if Uv.grad is not None else 0.0
        return A, B

    def _qp(self, x0, useq):
        sys, cfg, cost = self.sys, self.cfg, self.cost
        N, n, m = cfg.horizon, sys.n, sys.m
        dt = cfg.dt
        xs = self._predict(x0, useq)
        A, B = self._linearize(xs, useq)
        # S[k] maps the stacked update to the state perturbation at step k
        S = np.zeros((N + 1, n, N * m))
        for k in range(N):
            S[k + 1] = A[k] @ S[k]
            S[k + 1][:, k * m:(k + 1) * m] += B[k]
        q = np.asarray(cost.q, dtype=float)
        r = np.broadcast_to(np.asarray(cost.r, dtype=float), (m,))
        H = np.zeros((N * m, N * m))
        f = np.zeros(N * m)
        for k in range(1, N + 1):
            w = cfg.terminal_weight if k == N else 1.0
            SQ = S[k].T * (w * q)
            H += SQ @ S[k]
            f += SQ @ (xs[k] - cost.x_ref)
        R = np.tile(r, N)
        H += np.diag(R)
        f += R * (useq.reshape(-1) - np.tile(cost.u_ref, N))
        H = 2.0 * dt * H + 1e-10 * np.eye(N * m)
        f = 2.0 * dt * f

        rows, rhs = [], []
        FU, gU = sys.U.F, sys.U.g
        for k in range(N):
            blk = np.zeros((FU.shape[0], N * m))
            blk[:, k * m:(k + 1) * m] = FU
            rows.append(blk)
            rhs.append(gU - FU @ useq[k])
        if cfg.trust_radius is not None:
            I = np.eye(N * m)
            rows += [I, -I]
            rhs += [np.full(N * m, cfg.trust_radius)] * 2
        F0, g0 = cbf_rows(sys, x0)
        if np.linalg.norm(F0[0]) > _ROW_TOL:
            blk = np.zeros((1, N * m))
            blk[0, :m] = F0[0]
            rows.append(blk)
            rhs.append(np.array([g0[0] - F0[0] @ useq[0]]))
        if cfg.use_cbf:
            h = np.asarray(sys.h(xs), dtype=float)
            dh = np.asarray(sys.grad_h(xs), dtype=float)
            decay = 1.0 - dt * _alpha_slope(sys.alpha, h[:-1])
            psi = h[1:] - h[:-1] + dt * np.asarray(sys.alpha(h[:-1]), dtype=float)
            for k in range(N):
                G = dh[k + 1] @ S[k + 1] - decay[k] * (dh[k] @ S[k])
                if np.linalg.norm(G) > _ROW_TOL:
                    rows.append(-G[None, :])
                    rhs.append(np.array([psi[k]]))
        return H, f, np.vstack(rows), np.concatenate(rhs)

    def control(self, x) -> tuple[np.ndarray, bool]:
        """First control of the optimized sequence and a fallback flag."""
        x = np.asarray(x, dtype=float)
        useq = self.useq.copy()
        solved = False
        it = 0
        for it in range(self.cfg.max_iter):
            H, f, A, b = self._qp(x, useq)
            sol = solve_qp(H, f, A, b)
            if not sol.ok:
                break
            solved = True
            step = sol.z.reshape(useq.shape)
            useq = useq + step
            if np.max(np.abs(step)) < self.cfg.tol:
                break
        self.last_iterations = it + 1
        if not solved:
            res = safety_filter_detailed(self.sys, x, self.last_u)
            u, flag = res.u, True
            useq = np.tile(u, (self.cfg.horizon, 1))
        else:
            u, flag = useq[0].copy(), False
        self.last_u = u
        self.useq = np.vstack([useq[1:], useq[-1:]])
        return u, flag

    __call__ = control


def mpc_control(sys: CbfSystem, cost: QuadraticCost, x, cfg: MpcConfig) -> np.ndarray:
    """One cold-started MPC solve at ``x``."""
    return MpcController(sys, cost, cfg).control(x)[0]


def lqr_sequence(Ad, Bd, d, q, x_ref, r, u_ref, x0, N: int, terminal_weight: float = 1.0):
    """Finite-horizon LQR controls for ``x+ = Ad x + Bd u + d`` by a Riccati recursion.

    Minimizes ``sum_k [ (x_k-xr)^T Q (x_k-xr) + (u_k-ur)^T R (u_k-ur) ]``
    over ``k = 0..N-1`` plus the weighted terminal state term. Affine terms
    are handled by augmenting the state with a constant one.
    """
    n, m = Bd.shape
    Aa = np.zeros((n + 1, n + 1))
    Aa[:n, :n] = Ad
    Aa[:n, n] = d
    Aa[n, n] = 1.0
    Ba = np.vstack([Bd, np.zeros((1, m))])
    # (x - xr)^T Q (x - xr) as a quadratic form in (x, 1)
    Q = np.diag(q)
    Qa = np.zeros((n + 1, n + 1))
    Qa[:n, :n] = Q
    Qa[:n, n] = -Q @ x_ref
    Qa[n, :n] = -Q @ x_ref
    Qa[n, n] = x_ref @ Q @ x_ref
    R = np.diag(np.broadcast_to(r, (m,)))
    # (u - ur)^T R (u - ur) = u^T R u - 2 ur^T R u + const: cross term with the constant state
    Na = np.zeros((n + 1, m))
    Na[n] = -R @ u_ref
    P = terminal_weight * Qa
    gains = []
    for _ in range(N):
        M = R + Ba.T @ P @ Ba
        K = np.linalg.solve(M, Ba.T @ P @ Aa + Na.T)
        P = Qa + Aa.T @ P @ Aa - (Ba.T @ P @ Aa + Na.T).T @ K
        P = 0.5 * (P + P.T)
        gains.append(K)
    gains.reverse()
    xa = np.append(x0, 1.0)
    us = []
    for K in gains:
        u = -K @ xa
        us.append(u)
        xa = Aa @ xa + Ba @ u
    return np.array(us)
