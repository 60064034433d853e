"""Exception hierarchy shared by every chmeval module."""


class ChmEvalError(Exception):
    """Base class for all toolkit errors."""


# raster I/O
class RasterError(ChmEvalError):
    pass


class MissingFile(RasterError, FileNotFoundError):
    pass


class MalformedRaster(RasterError):
    pass


class BandOutOfRange(RasterError, IndexError):
    pass


class HeightOutOfRange(RasterError, ValueError):
    pass


class RejectedEmptyRaster(RasterError, ValueError):
    pass


class IoFailure(RasterError, OSError):
    pass


class MisalignedPair(ChmEvalError, ValueError):
    """Truth and prediction rasters do not share a grid."""


# resampling
class ResampleError(ChmEvalError, ValueError):
    pass


class NonIntegerBlockFactor(ResampleError):
    pass


class EmptyInput(ResampleError):
    pass


# metrics
class MetricError(ChmEvalError, ValueError):
    pass


class EmptyPairs(MetricError):
    pass


class ZeroTruth(MetricError):
    pass


class DegenerateVariance(MetricError):
    pass


class TileTooSmall(MetricError):
    pass


class BadBinEdges(MetricError):
    pass


# aggregation / manifests
class AggregateError(ChmEvalError, ValueError):
    pass


class EmptyFractions(AggregateError):
    pass


class NoValidTiles(AggregateError):
    pass


class InvalidRecord(AggregateError):
    pass


class MissingColumns(AggregateError):
    pass


class ConfigMismatch(AggregateError):
    """Metric files produced under incompatible evaluation settings."""


# stitching
class StitchError(ChmEvalError):
    pass


class BadStride(StitchError, ValueError):
    pass


class ProviderFailure(StitchError, RuntimeError):
    pass


class SinkFailure(StitchError, OSError):
    pass


class ConfigError(ChmEvalError, ValueError):
    pass
