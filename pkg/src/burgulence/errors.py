"""Error taxonomy shared across the package.

CLI exit codes map: ConfigError -> 2, SolverError -> 3, CheckFailure -> 4.
Index and domain errors use the builtin IndexError / ValueError.
"""


class ConfigError(ValueError):
    """Bad configuration: invalid parameter, unknown preset, malformed file."""


class SolverError(RuntimeError):
    """A solver could not proceed (CFL exhaustion, search window too small)."""


class StateError(RuntimeError):
    """Required intermediate state is missing (e.g. value tables not kept)."""


class CheckFailure(RuntimeError):
    """A diagnostic check ran to completion and failed."""
