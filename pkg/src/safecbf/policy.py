"""Controller variants behind one evaluation contract.

Every policy maps a state to ``(u, fallback)``. The network-based variants
also expose a batched, recordable forward pass used during training.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .autodiff import Mlp, load_checkpoint, ops, save_checkpoint
from .cbf import AlphaFn, CbfSystem, cbf_rows, safety_filter_detailed
from .envs import Environment, make_env
from .layers import box_scale, gauge_forward, gauge_layer, qp_forward, qp_layer


class Variant(str, Enum):
    PLAIN = "plain"
    FILTERED = "filtered"
    DIFFQP = "diffqp"
    GAUGE = "gauge"
    INTERIOR = "interior"
    MPC = "mpc"


TRAINABLE = (Variant.PLAIN, Variant.DIFFQP, Variant.GAUGE)


@dataclass
class FeatureNet:
    """An :class:`Mlp` applied to a fixed feature map of the state."""

    mlp: Mlp
    features: Callable = field(default=lambda x: x)

    def __call__(self, x, theta=None):
        return self.mlp.forward(self.features(x), theta)

    @property
    def theta(self):
        return self.mlp.theta


def input_box(sys: CbfSystem) -> tuple[np.ndarray, np.ndarray]:
    return sys.U.bounding_box()


def evaluate_plain(net, sys: CbfSystem, x) -> np.ndarray:
    lo, hi = input_box(sys)
    return box_scale(np.asarray(net(np.asarray(x, dtype=float)), dtype=float), lo, hi)


def evaluate_filtered(net, sys: CbfSystem, x) -> np.ndarray:
    return safety_filter_detailed(sys, x, evaluate_plain(net, sys, x)).u


def evaluate_diff_qp(net, sys: CbfSystem, x) -> np.ndarray:
    lo, hi = input_box(sys)
    F, g = cbf_rows(sys, np.asarray(x, dtype=float))
    return qp_forward(net(np.asarray(x, dtype=float)), F, g, lo, hi).u


def evaluate_gauge(net, sys: CbfSystem, x) -> np.ndarray:
    """Gauge-map the network output into the shifted safe set and add the center."""
    lo, hi = input_box(sys)
    F, g = cbf_rows(sys, np.asarray(x, dtype=float))
    return gauge_forward(net(np.asarray(x, dtype=float)), F, g, lo, hi).u


def evaluate_interior(sys: CbfSystem, x) -> np.ndarray:
    lo, hi = input_box(sys)
    F, g = cbf_rows(sys, np.asarray(x, dtype=float))
    return gauge_forward(np.zeros(sys.m), F, g, lo, hi).u


@dataclass
class Policy:
    """A controller variant bound to an environment.

    ``net`` is required for the network variants and ``mpc`` for the MPC
    variant (any object with ``control(x) -> (u, flag)`` and ``reset()``).
    """

    variant: Variant
    env: Environment
    net: FeatureNet | None = None
    mpc: object | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.variant = Variant(self.variant)
        needs_net = self.variant in (Variant.PLAIN, Variant.FILTERED, Variant.DIFFQP, Variant.GAUGE)
        if needs_net and self.net is None:
            raise ValueError(f"variant {self.variant.value} needs a network")
        if self.variant is Variant.MPC and self.mpc is None:
            raise ValueError("mpc variant needs a controller")
        self._box = input_box(self.env.system)

    @property
    def sys(self) -> CbfSystem:
        return self.env.system

    @property
    def trainable(self) -> bool:
        return self.variant in TRAINABLE

    def reset(self) -> None:
        if self.mpc is not None:
            self.mpc.reset()

    def act(self, x) -> tuple[np.ndarray, bool]:
        """Control at a single state and whether a fallback was used."""
        x = np.asarray(x, dtype=float)
        lo, hi = self._box
        v = self.variant
        if v is Variant.MPC:
            return self.mpc.control(x)
        if v is Variant.PLAIN:
            return box_scale(self.net(x), lo, hi), False
        if v is Variant.FILTERED:
            r = safety_filter_detailed(self.sys, x, box_scale(self.net(x), lo, hi))
            return r.u, r.fallback
        F, g = cbf_rows(self.sys, x)
        if v is Variant.DIFFQP:
            step = qp_forward(self.net(x), F, g, lo, hi)
        elif v is Variant.GAUGE:
            step = gauge_forward(self.net(x), F, g, lo, hi)
        else:
            step = gauge_forward(np.zeros(self.sys.m), F, g, lo, hi)
        return step.u, step.fallback

    __call__ = act

    def controls(self, x, theta=None):
        """Batched controls for states ``x`` of shape ``(B, n)``.

        With a recorded ``theta`` (and/or ``x``) the result is recorded as
        well, so a loss built on it can be differentiated. Returns
        ``(u, fallback_flags)``.
        """
        lo, hi = self._box
        B = ops.value(x).shape[0]
        v = self.variant
        if v is Variant.INTERIOR:
            F, g = cbf_rows(self.sys, x)
            return gauge_layer(np.zeros((B, self.sys.m)), F, g, lo, hi)
        if v is Variant.MPC:
            out = [self.mpc.control(xi) for xi in ops.value(x)]
            return np.array([u for u, _ in out]), np.array([f for _, f in out])
        raw = self.net(x, theta)
        if v in (Variant.PLAIN, Variant.FILTERED):
            # the filtered variant is trained as a plain network
            return box_scale(raw, lo, hi), np.zeros(B, dtype=bool)
        F, g = cbf_rows(self.sys, x)
        if v is Variant.DIFFQP:
            return qp_layer(raw, F, g, lo, hi)
        return gauge_layer(raw, F, g, lo, hi)

    # persistence ----------------------------------------------------------
    def with_variant(self, variant) -> "Policy":
        """Same network under another variant (e.g. a plain net evaluated with a filter)."""
        return Policy(Variant(variant), self.env, self.net, self.mpc, dict(self.meta))

    def save(self, path, **extra) -> None:
        if self.net is None:
            raise ValueError("only network policies have checkpoints")
        header = self.net.mlp.header(variant=self.variant.value, env=env_spec(self.env), **self.meta, **extra)
        save_checkpoint(path, header, self.net.theta)


def env_spec(env: Environment) -> dict:
    a = env.system.alpha
    return {"id": env.id, "alpha": {"kind": a.kind, "kappa": a.kappa}}


def env_from_spec(spec: dict) -> Environment:
    alpha = spec.get("alpha")
    kw = {}
    if alpha is not None:
        kw["alpha"] = AlphaFn(alpha["kind"], float(alpha["kappa"]))
    return make_env(spec["id"], **kw)


def network_for(env: Environment, hidden=(32, 32), seed: int = 0) -> FeatureNet:
    widths = (env.n_features, *hidden, env.system.m)
    mlp = Mlp.init(widths, seed, env.feature_shift, env.feature_scale)
    return FeatureNet(mlp, env.features)


def make_policy(variant, env: Environment, hidden=(32, 32), seed: int = 0, mpc=None) -> Policy:
    variant = Variant(variant)
    net = None
    if variant in (Variant.PLAIN, Variant.FILTERED, Variant.DIFFQP, Variant.GAUGE):
        net = network_for(env, hidden, seed)
    return Policy(variant, env, net, mpc)


def load_policy(path, variant=None) -> Policy:
    """Restore a checkpointed policy; ``variant`` overrides the stored tag."""
    header, theta = load_checkpoint(path)
    env = env_from_spec(header["env"])
    mlp = Mlp(tuple(header["widths"]), theta, np.array(header["in_shift"]), np.array(header["in_scale"]))
    reserved = {"widths", "in_shift", "in_scale", "variant", "env"}
    meta = {k: v for k, v in header.items() if k not in reserved}
    return Policy(Variant(variant or header["variant"]), env, FeatureNet(mlp, env.features), meta=meta)


__all__ = [
    "FeatureNet",
    "Policy",
    "TRAINABLE",
    "Variant",
    "env_from_spec",
    "env_spec",
    "evaluate_diff_qp",
    "evaluate_filtered",
    "evaluate_gauge",
    "evaluate_interior",
    "evaluate_plain",
    "input_box",
    "load_policy",
    "make_policy",
    "network_for",
]
