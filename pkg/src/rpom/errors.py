"""Exception and warning types shared across the package."""


class RpomError(Exception):
    """Base class for every error raised by rpom."""


class NonFinite(RpomError, ValueError):
    pass


class NoConvergence(RpomError, RuntimeError):
    pass


class NotSPD(RpomError, ValueError):
    pass


class SingularSystem(RpomError, ValueError):
    pass


class ShapeMismatch(RpomError, ValueError):
    pass


class NonPositive(RpomError, ValueError):
    pass


class UnsupportedOrder(RpomError, ValueError):
    pass


class DomainMismatch(RpomError, ValueError):
    pass


class EmptySplit(RpomError, ValueError):
    pass


class EmptyData(RpomError, ValueError):
    pass


class EmptySeries(RpomError, ValueError):
    pass


class InsufficientRuns(RpomError, ValueError):
    pass


class PerplexityInfeasible(RpomError, ValueError):
    pass


class ConfigError(RpomError, ValueError):
    pass


class DataError(RpomError):
    pass


class TrainError(RpomError):
    """Training aborted; ``history`` holds the epochs completed so far."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class FormatError(RpomError, IOError):
    pass


class BadMagic(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class ChecksumMismatch(FormatError):
    pass


class RankDeficientWarning(UserWarning):
    pass


class ExtrapolationWarning(UserWarning):
    pass


class ConvergenceWarning(UserWarning):
    pass
