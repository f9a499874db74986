"""Exception hierarchy and the CLI exit codes it maps onto."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_HYPOTHESIS = 4


class StarwaveError(Exception):
    """Base class for every error raised by the starwave modules."""

    exit_code = EXIT_NUMERIC


class ConfigError(StarwaveError, ValueError):
    """Invalid user input: config files, overrides, grids, parameters."""

    exit_code = EXIT_CONFIG


class SchemaError(ConfigError):
    """Unknown, missing or mistyped config keys."""


class GridError(ConfigError):
    """A star grid that cannot be built."""


class NumericalError(StarwaveError, RuntimeError):
    """A numerical procedure failed or produced an unusable result."""

    exit_code = EXIT_NUMERIC


class SolverError(NumericalError):
    """Singular or failed linear solve."""


class ConvergenceError(NumericalError):
    """Newton, shooting or eigen iteration did not converge."""


class InstabilityError(NumericalError):
    """The mass-drift guard tripped during time stepping."""


class ConditionError(NumericalError, ValueError):
    """The profile existence condition fails for (F, alpha)."""


class GramError(NumericalError):
    """Singular root-space pairing matrix."""


class KirchhoffConditionError(NumericalError, ValueError):
    """Data that must satisfy the discrete Kirchhoff condition does not."""


class HypothesisCheckError(StarwaveError):
    """A hypothesis check failed and the run treats that as fatal."""

    exit_code = EXIT_HYPOTHESIS


def exit_code_for(exc):
    """Map any exception to a CLI exit code."""
    if isinstance(exc, StarwaveError):
        return exc.exit_code
    return EXIT_NUMERIC
