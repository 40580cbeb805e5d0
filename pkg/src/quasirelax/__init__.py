"""quasirelax: numerical brackets for quasiconvex envelopes of extended-real
energy densities, 3d-to-2d membrane reduction, and thin-film limit probes."""

from . import energyexpr, envelope, gamma, integrand, matspace, oracle, reduction
from .errors import (
    BudgetExceededError,
    InternalCheckError,
    InvalidArgumentError,
    PreconditionError,
    QuasirelaxError,
)

__version__ = "0.1.0"

__all__ = [
    "energyexpr",
    "envelope",
    "gamma",
    "integrand",
    "matspace",
    "oracle",
    "reduction",
    "QuasirelaxError",
    "InvalidArgumentError",
    "BudgetExceededError",
    "PreconditionError",
    "InternalCheckError",
]
