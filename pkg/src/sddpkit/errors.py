"""Exception types shared across the package."""


class SddpkitError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SddpkitError):
    """Vector/matrix shapes disagree with the stage they are used in."""


class TooManyPaths(SddpkitError):
    """Scenario enumeration would exceed the configured path/node budget."""


class MalformedFileError(SddpkitError):
    """A structured data file could not be parsed."""


class FormatVersionError(MalformedFileError):
    """A structured data file declares an unsupported format/version."""


class NumericalBreakdown(SddpkitError):
    """Basis factorization failed even after a refactorization retry."""


class EngineError(SddpkitError):
    """Hard failure inside the SDDP iteration loop."""


class InfeasibleSubproblemError(EngineError):
    """A stage subproblem was infeasible (relatively complete recourse violated)."""


class ResidualCheckError(EngineError):
    """A subproblem solution failed the post-solve feasibility residual check."""
