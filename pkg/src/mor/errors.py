"""Exception hierarchy shared by all mor modules."""


class MorError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MorError):
    """Invalid experiment or solver configuration."""


class SingularK(MorError):
    """K(s) is numerically singular at an evaluation point."""

    def __init__(self, point, message=""):
        self.point = point
        super().__init__(message or f"K(s) numerically singular at s={point}")


class IrregularPencil(MorError):
    """The pencil lambda*E - A is singular for every lambda."""


class UnstablePencil(MorError):
    """A stable pencil was required but (A, E) has eigenvalues with Re >= 0."""


class SingularE(MorError):
    """E must be nonsingular for this operation."""


class DegenerateBasis(MorError):
    """Subspace basis columns are numerically linearly dependent."""


class SingularPairing(MorError):
    """The pairing W^T V (or a projected K) is numerically singular."""


class DimensionMismatch(MorError):
    """Systems or operands have non-conforming dimensions."""


class NonDecaying(MorError):
    """Frequency-response tail does not decay; quadrature cannot terminate."""


class ZeroTransfer(MorError):
    """Transfer function vanishes where a relative quantity is required."""


class SolverStagnation(MorError):
    """An iterative solve failed to reach its tolerance."""

    def __init__(self, column, achieved, message=""):
        self.column = column
        self.achieved = achieved
        super().__init__(
            message
            or f"solver stagnated on column {column}: residual {achieved:.3e}"
        )


class SolverBreakdown(MorError):
    """BiCG pivot breakdown that restarts could not cure."""


class DegenerateSpaces(MorError):
    """Petrov-Galerkin trial/test spaces violate the nondegeneracy condition."""


class ToleranceViolated(MorError):
    """Recorded residuals exceed the tolerance a bound requires."""


class IncompatibleResiduals(MorError):
    """Residuals fail the Petrov-Galerkin compatibility conditions."""


class PerturbationTooLarge(MorError):
    """||F_2r|| * ||K^-1||_Hinf >= 1, the backward H2 bound is undefined."""


class MultiplePoles(MorError):
    """Reduced pencil has (numerically) multiple poles."""


class UnstableReduced(MorError):
    """Reduced model has a pole with nonnegative real part."""


class SingularReducedPencil(MorError):
    """Projected E_r is numerically singular."""


class NonIdentityE(MorError):
    """Operation requires E == I."""


class EmptySpectrum(MorError):
    """Shift strategy needs finite poles but the pencil has none."""


class RankDeficientBasis(MorError):
    """Computed interpolation basis lost full column rank."""
