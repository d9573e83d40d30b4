"""Exception hierarchy for the qbsde package."""


class QbsdeError(Exception):
    """Base class for all errors raised by qbsde."""


class DegenerateInterval(QbsdeError, ValueError):
    pass


class ZeroSteps(QbsdeError, ValueError):
    pass


class DimensionMismatch(QbsdeError, ValueError):
    pass


class CapTooSmall(QbsdeError, ValueError):
    pass


class UnknownGenerator(QbsdeError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class UnknownCatalogEntry(QbsdeError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class BadParameters(QbsdeError, ValueError):
    pass


class PicardDiverged(QbsdeError, ArithmeticError):
    pass


class LadderTooCoarse(QbsdeError, ValueError):
    pass


class ConfigurationError(QbsdeError, ValueError):
    """Raised when a probe is run on a generator that does not meet its hypotheses."""


class RankDeficientWarning(UserWarning):
    """Least-squares design matrix was rank deficient; a ridge penalty was applied."""
