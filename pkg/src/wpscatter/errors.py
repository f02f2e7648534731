"""Exception types raised across the package."""


class GridError(ValueError):
    """Invalid grid parameters or mismatched grids."""


class AliasingError(RuntimeError):
    """Spectral content too close to the band edge of the grid."""


class DegeneratePairError(ValueError):
    """Window pair with (numerically) vanishing overlap."""


class LatticeError(ValueError):
    """Lattice incompatible with the grid or with the requested evaluation."""


class CoverageError(RuntimeError):
    """Phase-space content escaped the lattice or the grid.

    ``escaped`` carries the measured relative amplitude (or mass) that was lost.
    """

    def __init__(self, message, escaped=float("nan")):
        super().__init__(message)
        self.escaped = escaped


class DecayValidationError(ValueError):
    """A potential evaluated to a non-finite value during validation."""


class RefinementError(RuntimeError):
    """Step-doubling error estimate above the requested tolerance."""

    def __init__(self, message, error=float("nan")):
        super().__init__(message)
        self.error = error


class PicardDivergenceError(RuntimeError):
    """Picard iteration did not reach the tolerance."""

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class QuadratureError(RuntimeError):
    """Quadrature error estimate above tolerance."""


class ConfigError(ValueError):
    """Experiment configuration failed validation.

    ``field`` is the dotted path of the offending entry, e.g. ``grid.N``.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
