"""Differentiable safety layers: the gauge-map layer and the projection layer.

Both take the network output together with the rows ``(F, g)`` of the
safe control set and return a control inside the set. Their pullbacks
cover all three inputs, so gradients also flow through the state
dependence of the set during backprop through a rollout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .cbf import (
    R_MIN,
    FilterResult,
    chebyshev_lp,
    chebyshev_lp_batch,
    chebyshev_vjp,
    chebyshev_vjp_batch,
    filter_rows,
    is_feasible,
    is_feasible_batch,
)
from .geometry import gauge_map_vjp
from .solvers import QpProblem, SolveResult, qp_projection_vjp

_ROW_TOL = 1e-12


def box_scale(v, lo, hi):
    """Affine map from ``(-1, 1)^m`` onto the box ``[lo, hi]``."""
    return lo + (v + 1.0) * (0.5 * (hi - lo))


@dataclass
class LayerStep:
    """Forward record of one sample, kept for the pullback."""

    u: np.ndarray
    fallback: bool
    center: np.ndarray | None = None
    radius: float = 0.0
    lp: SolveResult | None = None
    lp_matrix: np.ndarray | None = None
    mask: np.ndarray | None = None
    shifted: np.ndarray | None = None
    filt: FilterResult | None = None
    ref: np.ndarray | None = None


def _gauge(v, F, g):
    norm = float(np.max(np.abs(v)))
    if norm == 0.0:
        return np.zeros_like(v)
    gam = max(0.0, float(np.max(F @ v / g)))
    return (norm / gam) * v


def gauge_forward(v, F, g, lo, hi, r_min: float = R_MIN) -> LayerStep:
    """``G(v | K - c) + c`` with ``c`` the Chebyshev center of ``K = {F u <= g}``.

    If ``K`` has no interior point with radius above ``r_min`` the network
    output is mapped to the input box and projected onto ``K`` (or onto
    the least-violation relaxation when ``K`` is empty).
    """
    v = np.asarray(v, dtype=float)
    center, R, lp, A = chebyshev_lp(F, g)
    if not lp.ok or R <= r_min:
        ref = box_scale(v, lo, hi)
        filt = filter_rows(F, g, ref, feasible=lp.ok)
        return LayerStep(filt.u, True, filt=filt, ref=ref)
    # the LP matrix already holds the row norms in its radius column
    mask = A[:-1, -1] > _ROW_TOL
    shifted = g - F @ center
    u = _gauge(v, F[mask], shifted[mask]) + center
    return LayerStep(u, False, center, R, lp, A, mask, shifted)


def gauge_backward(step: LayerStep, v, F, g, cot, lo, hi):
    """Pullback of :func:`gauge_forward` to ``(v, F, g)``."""
    if step.filt is not None:
        return qp_backward(step, v, F, g, cot, lo, hi)
    v_bar, Fm_bar, sm_bar = gauge_map_vjp(F[step.mask], step.shifted[step.mask], v, cot)
    F_bar = np.zeros_like(F)
    s_bar = np.zeros(F.shape[0])
    F_bar[step.mask] = Fm_bar
    s_bar[step.mask] = sm_bar
    # shifted = g - F c ; output = G + c
    F_bar -= np.outer(s_bar, step.center)
    c_bar = cot - F.T @ s_bar
    Fc_bar, gc_bar = chebyshev_vjp(F, step.lp, step.lp_matrix, c_bar)
    return v_bar, F_bar + Fc_bar, s_bar + gc_bar


def qp_forward(v, F, g, lo, hi) -> LayerStep:
    ref = box_scale(np.asarray(v, dtype=float), lo, hi)
    filt = filter_rows(F, g, ref, is_feasible(F, g))
    return LayerStep(filt.u, filt.fallback, filt=filt, ref=ref)


def qp_backward(step: LayerStep, v, F, g, cot, lo, hi):
    filt = step.filt
    p = QpProblem(step.ref, F, filt.offsets)
    t_bar, F_bar, b_bar = qp_projection_vjp(p, filt.qp, cot)
    g_bar = b_bar.copy()
    if filt.relax_lp is not None:
        # relaxed barrier offset is F_0 . u* with u* the maximizer over U
        g_bar[0] = 0.0
        F_bar[0] += b_bar[0] * filt.relax_lp.z
    v_bar = t_bar * (0.5 * (hi - lo))
    return v_bar, F_bar, g_bar


def _stack_gauge(v, F, g, centers):
    """Vectorized gauge map pieces for rows ``(B, r, m)`` shifted to ``centers``."""
    mask = np.linalg.norm(F, axis=2) > _ROW_TOL
    off = g - np.einsum("brm,bm->br", F, centers)
    off_safe = np.where(mask, off, 1.0)
    return mask, off, off_safe


def _gauge_batch(v, F, g, centers):
    mask, off, off_safe = _stack_gauge(v, F, g, centers)
    ratio = np.where(mask, np.einsum("brm,bm->br", F, v) / off_safe, -np.inf)
    gam = np.maximum(ratio.max(axis=1), 0.0)
    norm = np.abs(v).max(axis=1)
    scale = np.where(norm > 0, norm / np.where(gam > 0, gam, 1.0), 0.0)
    return scale[:, None] * v + centers


def _gauge_vjp_batch(v, F, g, centers, cot):
    """Batched pullback of ``G(v | K - c) + c`` to ``(v, F, g, c)`` for fixed ``c``.

    Mirrors :func:`~safecbf.geometry.gauge_map_vjp` row by row; the center's
    own dependence on ``(F, g)`` is added by the caller.
    """
    B, r, m = F.shape
    k = np.arange(B)
    mask, off, off_safe = _stack_gauge(v, F, g, centers)
    zero = ~np.any(v != 0, axis=1)
    vhat = v.copy()
    vhat[zero] = 0.0
    vhat[zero, 0] = 1.0
    j = np.argmax(np.abs(vhat), axis=1)
    sign = np.where(vhat[k, j] >= 0, 1.0, -1.0)
    ratio = np.where(mask, np.einsum("brm,bm->br", F, vhat) / off_safe, -np.inf)
    i = np.argmax(ratio, axis=1)
    nrm = sign * vhat[k, j]
    gi = off_safe[k, i]
    Fi = F[k, i]
    gam = np.einsum("bm,bm->b", Fi, vhat) / gi
    cv = np.einsum("bm,bm->b", cot, vhat)
    v_bar = (nrm / gam)[:, None] * cot - (nrm * cv / (gam * gam * gi))[:, None] * Fi
    v_bar[k, j] += sign * cv / gam
    live = (~zero).astype(float)
    F_bar = np.zeros_like(F)
    s_bar = np.zeros((B, r))
    F_bar[k, i] = (live * -(nrm / (gam * gam)) * cv / gi)[:, None] * v
    s_bar[k, i] = live * (nrm / gam) * cv / gi
    # shifted offsets are g - F c ; the output adds c back
    F_bar -= s_bar[:, :, None] * centers[:, None, :]
    c_bar = cot - np.einsum("brm,br->bm", F, s_bar)
    return v_bar, F_bar, s_bar, c_bar


def gauge_layer(v, F, g, lo, hi, r_min: float = R_MIN):
    """Batched gauge layer; returns ``(u, fallback_flags)``.

    ``v``: (B, m) in the open unit box; ``F``: (B, r, m); ``g``: (B, r).
    The Chebyshev LPs of the batch are solved together and the gauge map
    is evaluated in closed form for the whole batch; samples without a
    usable interior take the projection fallback of :func:`gauge_forward`.
    """
    vv = np.asarray(ops.value(v), dtype=float)
    Fv = np.asarray(ops.value(F), dtype=float)
    gv = np.asarray(ops.value(g), dtype=float)
    B, r, m = Fv.shape
    cheb = chebyshev_lp_batch(Fv, gv)
    good = np.array([res.ok and R > r_min for _, R, res, _ in cheb], dtype=bool)
    out = np.zeros((B, m))
    steps: dict[int, LayerStep] = {}
    for q in np.flatnonzero(~good):
        ref = box_scale(vv[q], lo, hi)
        filt = filter_rows(Fv[q], gv[q], ref, feasible=cheb[q][2].ok)
        steps[q] = LayerStep(filt.u, True, filt=filt, ref=ref)
        out[q] = filt.u
    gi = np.flatnonzero(good)
    centers = np.array([cheb[q][0] for q in gi]).reshape(-1, m)
    if gi.size:
        out[gi] = _gauge_batch(vv[gi], Fv[gi], gv[gi], centers)

    def vjp(cot):
        cot = np.asarray(cot, dtype=float)
        v_bar = np.zeros_like(vv)
        F_bar = np.zeros_like(Fv)
        g_bar = np.zeros_like(gv)
        if gi.size:
            vb, Fb, sb, cb = _gauge_vjp_batch(vv[gi], Fv[gi], gv[gi], centers, cot[gi])
            v_bar[gi] = vb
            Fc, gc = chebyshev_vjp_batch(Fv[gi], [cheb[q][2] for q in gi], np.stack([cheb[q][3] for q in gi]), cb)
            F_bar[gi] = Fb + Fc
            g_bar[gi] = sb + gc
        for q, st in steps.items():
            v_bar[q], F_bar[q], g_bar[q] = qp_backward(st, vv[q], Fv[q], gv[q], cot[q], lo, hi)
        return v_bar, F_bar, g_bar

    return ops.custom([v, F, g], out, vjp), ~good


def qp_layer(v, F, g, lo, hi):
    """Batched projection layer on the box-scaled network output.

    Feasibility of the whole batch is decided together; each projection
    is then an independent active-set solve.
    """
    vv = np.asarray(ops.value(v), dtype=float)
    Fv = np.asarray(ops.value(F), dtype=float)
    gv = np.asarray(ops.value(g), dtype=float)
    feas = is_feasible_batch(Fv, gv)
    steps = []
    for q in range(vv.shape[0]):
        ref = box_scale(vv[q], lo, hi)
        filt = filter_rows(Fv[q], gv[q], ref, bool(feas[q]))
        steps.append(LayerStep(filt.u, filt.fallback, filt=filt, ref=ref))
    out = np.stack([st.u for st in steps])
    flags = np.array([st.fallback for st in steps])

    def vjp(cot):
        v_bar = np.zeros_like(vv)
        F_bar = np.zeros_like(Fv)
        g_bar = np.zeros_like(gv)
        for q, st in enumerate(steps):
            v_bar[q], F_bar[q], g_bar[q] = qp_backward(st, vv[q], Fv[q], gv[q], cot[q], lo, hi)
        return v_bar, F_bar, g_bar

    return ops.custom([v, F, g], out, vjp), flags
