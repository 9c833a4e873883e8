from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tape as ad


class DimensionMismatch(ValueError):
    pass


@dataclass
class Mlp:
    """Feedforward tanh network whose output lies in the open unit box.

    All weights and biases live in the flat vector ``theta``; layer ``k``
    stores ``W_k`` (out x in, row major) followed by ``b_k``. Inputs are
    normalized by the fixed ``in_shift`` / ``in_scale`` before the first
    layer.
    """

    widths: tuple[int, ...]
    theta: np.ndarray
    in_shift: np.ndarray = field(default=None)
    in_scale: np.ndarray = field(default=None)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.size != self.n_params(self.widths):
            raise DimensionMismatch(
                f"theta has {self.theta.size} entries, widths {self.widths} need {self.n_params(self.widths)}"
            )
        if self.in_shift is None:
            self.in_shift = np.zeros(self.widths[0])
        if self.in_scale is None:
            self.in_scale = np.ones(self.widths[0])
        self.in_shift = np.asarray(self.in_shift, dtype=float)
        self.in_scale = np.asarray(self.in_scale, dtype=float)

    @staticmethod
    def n_params(widths) -> int:
        return sum(widths[k + 1] * widths[k] + widths[k + 1] for k in range(len(widths) - 1))

    @classmethod
    def init(cls, widths, seed: int = 0, in_shift=None, in_scale=None) -> "Mlp":
        """Uniform initialization in ``+-1/sqrt(fan_in)`` from a seeded generator."""
        rng = np.random.default_rng(seed)
        parts = []
        for k in range(len(widths) - 1):
            bound = 1.0 / np.sqrt(widths[k])
            parts.append(rng.uniform(-bound, bound, size=widths[k + 1] * widths[k]))
            parts.append(rng.uniform(-bound, bound, size=widths[k + 1]))
        return cls(tuple(widths), np.concatenate(parts), in_shift, in_scale)

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def _layers(self, theta):
        off = 0
        for k in range(len(self.widths) - 1):
            nin, nout = self.widths[k], self.widths[k + 1]
            W = ad.reshape(theta[off:off + nin * nout], (nout, nin))
            off += nin * nout
            b = theta[off:off + nout]
            off += nout
            yield W, b

    def forward(self, x, theta=None):
        """Evaluate on ``x`` of shape ``(n_in,)`` or ``(batch, n_in)``.

        ``theta`` may be a recorded :class:`~safecbf.autodiff.tape.Var`; the
        result is then recorded too.
        """
        if theta is None:
            theta = self.theta
        xv = ad.value(x)
        if xv.shape[-1] != self.n_in:
            raise DimensionMismatch(f"expected input width {self.n_in}, got {xv.shape[-1]}")
        z = (x - self.in_shift) / self.in_scale
        for W, b in self._layers(theta):
            z = ad.tanh(z @ W.T + b)
        return z

    __call__ = forward

    def header(self, **extra) -> dict:
        return {
            "widths": list(self.widths),
            "in_shift": self.in_shift.tolist(),
            "in_scale": self.in_scale.tolist(),
            **extra,
        }

    def save(self, path, **extra) -> None:
        save_checkpoint(path, self.header(**extra), self.theta)

    @classmethod
    def load(cls, path) -> tuple["Mlp", dict]:
        header, theta = load_checkpoint(path)
        net = cls(tuple(header["widths"]), theta, np.array(header["in_shift"]), np.array(header["in_scale"]))
        return net, header


_MAGIC = b"SCBF"


def save_checkpoint(path, header: dict, theta: np.ndarray) -> None:
    """Write ``MAGIC | uint32 len | JSON header | float64 LE theta``."""
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(np.asarray(theta, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    (n,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + n].decode())
    theta = np.frombuffer(data[8 + n:], dtype="<f8").astype(float)
    return header, theta
