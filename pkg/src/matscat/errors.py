"""Exception hierarchy shared by the solver modules."""


class ScatteringError(Exception):
    """Base class for numerical failures raised by the toolkit."""

    stage = "numerics"


class PotentialError(ValueError):
    """Invalid potential description (non-Hermitian, bad support, divergent moments)."""


class BoundaryError(ValueError):
    """Boundary matrix is not unitary."""


class ContinuationError(ScatteringError):
    """Wavenumber lies outside the strip in which the Jost solution is certified."""


class VolterraDivergence(ScatteringError):
    """Neumann iteration for the Volterra equation failed to converge.

    ``trace`` holds the successive max-norm updates.
    """

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class NearSingularError(ScatteringError):
    """A matrix that must be inverted is numerically singular."""


class WronskianError(ScatteringError):
    """A Wronskian that must be x-independent is not."""


class BoundStateError(ScatteringError):
    """Bound-state search or bound-state data extraction failed."""


class NoPoleError(BoundStateError):
    """The contour integral found no pole inside the circle."""


class ContourError(ScatteringError):
    """Contour geometry violates the analyticity constraints."""


class ReconstructionError(ScatteringError):
    """Marchenko kernel construction or solve failed."""


class StageError(ScatteringError):
    """Wraps a failure with the pipeline stage that produced it."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
