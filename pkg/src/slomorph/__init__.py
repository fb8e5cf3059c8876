"""slomorph: retinal vessel morphometry for en face SLO images.

Converts SLO images plus segmentation masks into vascular parameters
(fractal dimension, vessel density, global/local calibre, tortuosity
density, CRAE/CRVE/AVR) over whole-image and peripapillary zones, with
batch processing and agreement statistics.
"""

from .geometry import DiscGeometry, FoveaPoint, RoiMask, RoiName
from .ingest import (
    Laterality,
    Location,
    MetadataSource,
    PixelScale,
    SegmentationBundle,
    SloMetadata,
)
from .metrics import (
    BigVesselEquivalents,
    MetricName,
    MetricParams,
    MetricRecord,
    SegmentGraph,
    TortuosityResult,
    Units,
    VesselMap,
    VesselSegment,
)
from .pipeline import RunConfig, run_batch
from .stats import AgreementReport, PairedSeries
from .volfile import VolHeader

__version__ = "0.1.0"

__all__ = [
    "AgreementReport",
    "BigVesselEquivalents",
    "DiscGeometry",
    "FoveaPoint",
    "Laterality",
    "Location",
    "MetadataSource",
    "MetricName",
    "MetricParams",
    "MetricRecord",
    "PairedSeries",
    "PixelScale",
    "RoiMask",
    "RoiName",
    "RunConfig",
    "SegmentGraph",
    "SegmentationBundle",
    "SloMetadata",
    "TortuosityResult",
    "Units",
    "VesselMap",
    "VesselSegment",
    "VolHeader",
    "run_batch",
    "__version__",
]
