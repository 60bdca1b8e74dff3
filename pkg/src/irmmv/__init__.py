"""Row-sparse MMV recovery by Hadamard-factorized gradient descent."""
from .errors import DivergenceError
from .problem_gen import ProblemInstance, make_instance
from .solver import FactorPair, RecoveryConfig, TrajectoryRecord, recover

__all__ = [
    "DivergenceError",
    "FactorPair",
    "ProblemInstance",
    "RecoveryConfig",
    "TrajectoryRecord",
    "make_instance",
    "recover",
]
__version__ = "0.1.0"
