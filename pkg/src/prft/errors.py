"""Exception types raised by the engine."""


class PRFTError(Exception):
    """Base class for all engine errors."""


class SpecificationError(PRFTError, ValueError):
    """Invalid system, state, grid or configuration."""


class IncommensurateError(SpecificationError):
    """Drive frequencies have no common period."""


class IntegrationError(PRFTError, ArithmeticError):
    """Propagator integration failed to converge.

    Attributes
    ----------
    defect : float
        Best agreement achieved between successive step halvings.
    """

    def __init__(self, message, defect=float("nan")):
        super().__init__(message)
        self.defect = defect


class QuadratureError(PRFTError, ArithmeticError):
    """Quadrature did not reach the requested tolerance."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class DegeneracyError(PRFTError):
    """Quasienergies are degenerate where a non-degenerate spectrum is needed."""


class AliasingError(PRFTError):
    """Counting grid too small for the distribution support."""


class LatticeError(PRFTError):
    """Shift or truncation exceeds the photon-number lattice window."""
