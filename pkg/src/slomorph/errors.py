"""Exception types raised across the package.

Conditions that the pipeline downgrades to warnings in robust mode are still
raised as exceptions at the operation level; the caller decides whether to
catch them.
"""


class SlomorphError(Exception):
    """Base class for all package errors."""


# container / file ingestion

class MalformedHeader(SlomorphError):
    """Version magic mismatch or impossible header fields."""


class TruncatedFile(SlomorphError):
    """Fewer payload bytes than the header declares."""


class NonPositiveScale(SlomorphError):
    """Header carries a zero or negative pixel scale."""


class UnsupportedFormat(SlomorphError):
    """Input file is not a supported single-image raster."""


class UnreadableFile(SlomorphError):
    """File exists but cannot be decoded."""


class MalformedRow(SlomorphError):
    """Sidecar row with the wrong column count."""


class DimensionMismatch(SlomorphError):
    """Mask and image aspect ratios differ."""


class InvalidLabelValue(SlomorphError):
    """Label raster contains a value outside {0, 1, 2, 3}."""


# geometry

class EmptyMask(SlomorphError):
    """Operation requires a non-empty mask."""


class DegenerateFit(SlomorphError):
    """Boundary collinear or the fitted conic is not an ellipse."""


# metrics

class TooFewScales(SlomorphError):
    """Box counting has fewer than two usable scales."""


class EmptySkeleton(SlomorphError):
    """No skeleton pixels inside the region of interest."""


class NoSegmentsInRoi(SlomorphError):
    """No vessel segment intersects the region of interest."""


class TooFewVessels(SlomorphError):
    """Fewer than two widths available for a Knudtson equivalent."""


# statistics

class ZeroVariance(SlomorphError):
    """A correlation requires non-zero variance in both series."""


class DegeneratePopulation(SlomorphError):
    """Between-eye standard deviation is zero."""


class DimMismatch(SlomorphError):
    """Paired rasters have different shapes."""


class SingleClass(SlomorphError):
    """AUC requires both classes present in the truth mask."""


# pipeline

class MissingRequiredKey(SlomorphError):
    """Config file lacks input_dir or output_dir."""


class EmptyInputDir(SlomorphError):
    """No processable file found in the input directory."""
