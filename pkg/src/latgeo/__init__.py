"""latgeo: lattice-geometry and torus-flow numerical workbench.

Subpackages are plain function libraries; everything is pure and
deterministic given explicit seeds.  See README.md for the CLI surface.
"""

__version__ = "0.1.0"


class LatgeoError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(LatgeoError):
    """Invalid or malformed run configuration (CLI exit code 2)."""


class NumericError(LatgeoError):
    """Numeric failure during a computation (CLI exit code 3)."""


class BudgetError(NumericError):
    """An enumeration exceeded its explicit candidate budget."""


class DegenerateInputError(NumericError):
    """Input lies on a measure-zero set the algorithms must reject."""


class StepSizeError(NumericError):
    """Trajectory step produced values too large for double precision."""
