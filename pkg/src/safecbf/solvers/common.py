from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Status(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class SolverError(RuntimeError):
    pass


class IterationLimit(SolverError):
    pass


class DegenerateActiveSet(SolverError):
    pass


@dataclass
class SolveResult:
    status: Status
    z: np.ndarray
    active_set: list[int]
    kkt_residual: float
    iterations: int
    multipliers: np.ndarray | None = None
    fixed_zero: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL
