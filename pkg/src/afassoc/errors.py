"""Exception and warning classes raised across the package."""


class AfAssocError(Exception):
    """Base class for all package errors."""


class ValidationError(AfAssocError, ValueError):
    """Input data or an artifact failed a shape/content check."""


class MissingSample(ValidationError):
    pass


class NonNumericCell(ValidationError):
    pass


class MissingValue(ValidationError):
    pass


class KindViolation(ValidationError):
    pass


class TooManyPhenotypes(ValidationError):
    pass


class ArtifactMissing(ValidationError):
    """A stage input file produced by an earlier command does not exist."""


class RankDeficient(AfAssocError, ValueError):
    pass


class PreconditionError(AfAssocError, ValueError):
    pass


class DegenerateNull(AfAssocError, ValueError):
    """A pooled null distribution has zero spread for some weight mask."""


class DegenerateBootstrap(AfAssocError, RuntimeError):
    pass


class ResolutionWarning(UserWarning):
    """A significance threshold is finer than the permutation resolution 1/(B*p)."""
