"""Randomly forced inviscid Burgers turbulence on the circle.

Variational (least-action) solver for the invariant solution, shock and
minimizer diagnostics, viscous limits, and a finite-volume cross-check.
"""

from .errors import CheckFailure, ConfigError, SolverError, StateError
from .forcing import (
    BrownianPath,
    ForcingSpec,
    Mode,
    eval_force,
    eval_potential,
    force_norm,
    mollify,
    preset_spec,
    sample_path,
    zero_spec,
)

__all__ = [
    "BrownianPath",
    "CheckFailure",
    "ConfigError",
    "ForcingSpec",
    "Mode",
    "SolverError",
    "StateError",
    "eval_force",
    "eval_potential",
    "force_norm",
    "mollify",
    "preset_spec",
    "sample_path",
    "zero_spec",
]

__version__ = "0.1.0"
