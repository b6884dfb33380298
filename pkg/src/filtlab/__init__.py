"""Monte Carlo laboratory for Doob-Meyer decompositions under enlarged filtrations."""

from .errors import DomainError, InvalidArgument, NumericFailure
from .paths import (
    JumpLaw,
    JumpTimes,
    LevyModel,
    PathBundle,
    TimeGrid,
    geometric_beta,
    make_grid,
    sample_hitting_time_unit,
    simulate_brownian,
    simulate_poisson,
    simulate_sde_euler,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "InvalidArgument",
    "NumericFailure",
    "JumpLaw",
    "JumpTimes",
    "LevyModel",
    "PathBundle",
    "TimeGrid",
    "geometric_beta",
    "make_grid",
    "sample_hitting_time_unit",
    "simulate_brownian",
    "simulate_poisson",
    "simulate_sde_euler",
    "__version__",
]
