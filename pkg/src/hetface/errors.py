"""Exception types raised across the package."""


class HetFaceError(Exception):
    """Base class for all errors raised by hetface."""


class DegenerateNorm(HetFaceError, ValueError):
    """A vector's L2 norm is too small to normalize."""


class DimMismatch(HetFaceError, ValueError):
    pass


class ShapeMismatch(HetFaceError, ValueError):
    pass


class NonFiniteValue(HetFaceError, ValueError):
    pass


class LabelOutOfRange(HetFaceError, ValueError):
    pass


class BatchTooSmall(HetFaceError, ValueError):
    pass


class TieAtKink(HetFaceError):
    """The batch sits on a hinge boundary or an argmax tie, so the
    finite-difference comparison is not meaningful."""


class StepOutOfRange(HetFaceError, ValueError):
    pass


class EmptyDataset(HetFaceError, ValueError):
    pass


class OddBatch(HetFaceError, ValueError):
    pass


class TooFewSubjects(HetFaceError, ValueError):
    pass


class EmptyScores(HetFaceError, ValueError):
    pass


class BadK(HetFaceError, ValueError):
    pass


class ConfigInvalid(HetFaceError, ValueError):
    pass


class IoFailure(HetFaceError, OSError):
    pass


class FormatVersionMismatch(HetFaceError, ValueError):
    pass


class ChecksumMismatch(HetFaceError, ValueError):
    pass
