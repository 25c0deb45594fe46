"""Exception types shared across the library."""


class CanonportError(Exception):
    """Base class for every error raised by this package."""


# data acquisition / parsing
class NetworkUnavailable(CanonportError):
    pass


class ChecksumMismatch(CanonportError):
    pass


class MalformedHeader(CanonportError):
    pass


class ColumnCountMismatch(CanonportError):
    pass


class IncompleteBlock(CanonportError):
    pass


# signals
class InsufficientHistory(CanonportError):
    pass


class DegenerateInput(CanonportError):
    pass


class AlignmentMismatch(CanonportError):
    pass


# linear algebra / moments
class ShapeMismatch(CanonportError):
    pass


class NotSymmetric(CanonportError):
    pass


class SingularAfterFloor(CanonportError):
    pass


class SvdFailure(CanonportError):
    pass


class InvalidK(CanonportError):
    pass


class DimensionTooLarge(CanonportError):
    pass


class DivisionDegenerate(CanonportError):
    pass


# analytics
class ZeroVariance(CanonportError):
    pass


class RankDeficientRegressors(CanonportError):
    pass


# backtest / experiments / CLI
class InsufficientData(CanonportError):
    pass


class InvalidSpec(CanonportError):
    pass


class ConfigInvalid(CanonportError):
    pass
