"""Exception and warning types shared across the package."""


class SipError(Exception):
    """Base class for all errors raised by sipcheck."""


class InvalidInput(SipError, ValueError):
    pass


class ShapeError(SipError, ValueError):
    pass


class InvalidRank(SipError, ValueError):
    pass


class AlignmentDegenerate(SipError, ArithmeticError):
    pass


class DegenerateGap(SipError, ArithmeticError):
    """Raised where a strictly positive eigengap is mandatory."""


class InvalidQuantile(SipError, ValueError):
    pass


class TooFewSamples(SipError, ValueError):
    pass


class InvalidRidge(SipError, ValueError):
    pass


class InvalidConfidence(SipError, ValueError):
    pass


class DegenerateMargins(SipError, ValueError):
    pass


class InfeasibleGap(SipError, ValueError):
    pass


class DegenerateLabels(SipError, ValueError):
    pass


class SingularScatter(SipError, ArithmeticError):
    pass


class InfiniteVariance(SipError, ValueError):
    pass


class InvalidSeries(SipError, ValueError):
    pass


class FormatError(SipError, ValueError):
    pass


class LabelError(SipError, ValueError):
    pass


class UsageError(SipError):
    pass


class ConfigError(SipError, ValueError):
    pass


class IoError(SipError, OSError):
    pass


class DegenerateGapWarning(UserWarning):
    """lambda_k == lambda_{k+1}: the top-k subspace is not identifiable."""
