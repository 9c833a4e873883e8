"""Tape-based reverse-mode AD, the tanh MLP and Adam."""

from . import tape as ops
from .adam import AdamState, adam_step
from .mlp import DimensionMismatch, Mlp, load_checkpoint, save_checkpoint
from .tape import Tape, Var, custom, jacobian, value

__all__ = [
    "AdamState",
    "DimensionMismatch",
    "Mlp",
    "Tape",
    "Var",
    "adam_step",
    "custom",
    "jacobian",
    "load_checkpoint",
    "ops",
    "save_checkpoint",
    "value",
]
