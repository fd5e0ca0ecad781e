"""Problem/solution containers for the diagonal-Hessian QP solver."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITER_LIMIT = "iter_limit"


@dataclass
class QpProblem:
    """min 1/2 x' diag(h) x + g' x  s.t.  A x <= b,  lo <= x <= hi."""

    h: np.ndarray
    g: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.h = np.ascontiguousarray(self.h, dtype=float)
        self.g = np.ascontiguousarray(self.g, dtype=float)
        A = np.ascontiguousarray(self.A, dtype=float)
        # reshape(-1, 0) is ambiguous for the degenerate zero-variable case
        self.A = A.reshape(-1, self.n) if self.n else np.zeros((0, 0))
        self.b = np.ascontiguousarray(self.b, dtype=float)
        self.lo = np.ascontiguousarray(self.lo, dtype=float)
        self.hi = np.ascontiguousarray(self.hi, dtype=float)

    @property
    def n(self) -> int:
        return len(self.h)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def validate(self) -> None:
        if np.any(self.h <= 0):
            raise ValueError("Hessian diagonal must be strictly positive")
        if np.any(self.lo > self.hi + 1e-12):
            raise ValueError("box bounds must satisfy lo <= hi")
        for name, arr, length in (("g", self.g, self.n), ("b", self.b, self.m),
                                  ("lo", self.lo, self.n), ("hi", self.hi, self.n)):
            if len(arr) != length:
                raise ValueError(f"{name} has wrong length")

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * np.dot(self.h * x, x) + np.dot(self.g, x))


@dataclass
class QpSolution:
    x: np.ndarray
    duals_rows: np.ndarray
    duals_lo: np.ndarray
    duals_hi: np.ndarray
    status: QpStatus
    kkt_residual: float = np.inf
    iterations: int = 0
    #: on INFEASIBLE: indices of rows (or "lo[i]>hi[i]" strings) proving it
    certificate: list = field(default_factory=list)
    used_fallback: bool = False

    @property
    def active_mask(self) -> np.ndarray:
        return (self.duals_rows > 1e-10)
