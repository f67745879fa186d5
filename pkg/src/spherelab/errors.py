"""Exception types raised across the package."""


class SpherelabError(Exception):
    """Base class for all library errors."""


class ZeroNorm(SpherelabError, ValueError):
    """An embedding whose norm is too small to define a direction."""


class InvalidTriplet(SpherelabError, ValueError):
    pass


class NoValidPairs(SpherelabError, ValueError):
    pass


class BadLabel(SpherelabError, ValueError):
    pass


class UnsupportedLoss(SpherelabError, ValueError):
    pass


class BadSchedule(SpherelabError, ValueError):
    pass


class ShapeMismatch(SpherelabError, ValueError):
    pass


class BadParams(SpherelabError, ValueError):
    pass


class Infeasible(SpherelabError, ValueError):
    pass


class BadK(SpherelabError, ValueError):
    pass


class DegenerateClustering(SpherelabError, RuntimeError):
    pass


class NonFinite(SpherelabError, FloatingPointError):
    pass


class ConfigError(SpherelabError, ValueError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class DivergenceDetected(SpherelabError, RuntimeError):
    """Training produced a non-finite loss or exploding norm.

    ``log`` holds the partial :class:`~spherelab.harness.runlog.RunLog`
    recorded up to the failure.
    """

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log
