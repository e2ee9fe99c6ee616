"""Exception hierarchy shared by every module of the lab."""


class LabError(Exception):
    """Base class for all errors raised by mslab."""


class GridTooSmall(LabError):
    """The grid does not cover the density's support; mass would be silently lost."""


class EmptyKernelSupport(LabError):
    """A kernel-weighted mean has a zero denominator."""


class ZeroDensity(LabError):
    """The density underflows the positivity floor where a ratio by f is needed."""


class InvalidTime(LabError):
    pass


class InvalidTimeOrder(LabError):
    pass


class InconsistentVariance(LabError):
    """A mixture is not on the self-similar family sigma^2 = 2 a^2 (-t)."""


class SpectralBlowUp(LabError):
    """Clustering-direction propagation amplified a retained mode past the threshold."""

    def __init__(self, message, growth=None, frequency=None):
        super().__init__(message)
        self.growth = growth
        self.frequency = frequency


class InvalidSupervision(LabError):
    """g1 + g2 went negative: the sink is too strong to yield a density."""


class TimeMisalignment(LabError):
    pass


class ParseError(LabError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DimensionMismatch(ParseError):
    pass


class ConfigError(LabError):
    pass


class ExperimentError(LabError):
    pass
