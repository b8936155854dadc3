"""Exception hierarchy shared by all modules.

Each error class carries the process exit code the CLI maps it to.
"""


class AnodissError(Exception):
    exit_code = 1


class DomainError(AnodissError, ValueError):
    """Input outside the mathematical domain of an operation."""

    exit_code = 2


class ConfigError(AnodissError):
    exit_code = 2


class SearchExhaustedError(AnodissError):
    exit_code = 3


class DegenerateTableError(AnodissError):
    """A subtractive recursion became non-positive before the requested level."""

    exit_code = 3


class NumericalError(AnodissError):
    """CFL violation, NaN blow-up or a refused time step."""

    exit_code = 3


class ResolutionError(NumericalError):
    pass


class GeometryError(AnodissError):
    """Pipes or rectangles of a construction would overlap."""

    exit_code = 4
