from .types import QpProblem, QpSolution, QpStatus
from .solver import BACKEND, WarmStart, default_max_iter, kkt_residual, solve

__all__ = [
    "QpProblem", "QpSolution", "QpStatus",
    "BACKEND", "WarmStart", "default_max_iter", "kkt_residual", "solve",
]
