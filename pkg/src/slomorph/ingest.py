"""Input handling: SLO images, `.vol` containers, sidecar metadata and masks.

All loaders are read-only with respect to process state and return immutable
value objects, so results are safe to hand between threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import raster, volfile
from .errors import (
    DimensionMismatch,
    InvalidLabelValue,
    MalformedRow,
    UnreadableFile,
    UnsupportedFormat,
)
from .logs import ProcessLog, ensure_log

RASTER_EXTENSIONS = (".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg")
MASK_SUFFIXES = ("_binary", "_avod", "_fovea")
MIN_IMAGE_DIM = 32

LATERALITY_TOKENS = {
    "r": "Right", "right": "Right", "od": "Right",
    "l": "Left", "left": "Left", "os": "Left",
}
LOCATION_TOKENS = {"macula": "MaculaCentred", "disc": "DiscCentred"}


class Laterality(str, Enum):
    RIGHT = "Right"
    LEFT = "Left"
    UNKNOWN = "Unknown"


class Location(str, Enum):
    MACULA = "MaculaCentred"
    DISC = "DiscCentred"
    UNKNOWN = "Unknown"


class MetadataSource(str, Enum):
    VOL_HEADER = "VolHeader"
    SIDECAR = "SidecarFile"
    INFERRED = "Inferred"
    ABSENT = "Absent"


@dataclass(frozen=True)
class PixelScale:
    """Transversal sampling scale. When not known, physical-unit outputs must
    be reported in pixels and flagged as such."""

    microns_per_px_x: float = 0.0
    microns_per_px_y: float = 0.0
    known: bool = False

    def scalar(self) -> float:
        """Single scalar in microns/px (geometric mean for anisotropic input)."""
        return math.sqrt(self.microns_per_px_x * self.microns_per_px_y)


@dataclass(frozen=True)
class SloMetadata:
    laterality: Laterality = Laterality.UNKNOWN
    location: Location = Location.UNKNOWN
    scale: PixelScale = PixelScale()
    source: MetadataSource = MetadataSource.ABSENT


@dataclass
class SegmentationBundle:
    """The masks available for one SLO image; any of them may be missing.

    Invariant: every present mask has the image's dimensions, and after
    harmonization artery|vein is a subset of binary_vessel.
    """

    binary_vessel: np.ndarray | None = None
    artery: np.ndarray | None = None
    vein: np.ndarray | None = None
    optic_disc: np.ndarray | None = None
    fovea: np.ndarray | None = None
    corrected: bool = False


def parse_laterality(token: str, log: ProcessLog | None = None) -> Laterality:
    token = token.strip().lower()
    if not token:
        return Laterality.UNKNOWN
    if token in LATERALITY_TOKENS:
        return Laterality(LATERALITY_TOKENS[token])
    ensure_log(log).warn(f"unrecognised laterality token '{token}'")
    return Laterality.UNKNOWN


def parse_location(token: str, log: ProcessLog | None = None) -> Location:
    token = token.strip().lower()
    if not token:
        return Location.UNKNOWN
    if token in LOCATION_TOKENS:
        return Location(LOCATION_TOKENS[token])
    ensure_log(log).warn(f"unrecognised location token '{token}'")
    return Location.UNKNOWN


def metadata_from_header(header: volfile.VolHeader,
                         log: ProcessLog | None = None) -> SloMetadata:
    """Build metadata from a parsed `.vol` header (scale mm/px -> um/px)."""
    log = ensure_log(log)
    position = header.scan_position.strip().upper()
    if position not in ("OD", "OS"):
        log.warn(f"scan position '{header.scan_position}' is not OD/OS")
    laterality = parse_laterality(position, log)
    scale = PixelScale(header.scale_x_slo * 1000.0,
                       header.scale_y_slo * 1000.0, known=True)
    return SloMetadata(laterality=laterality, location=Location.UNKNOWN,
                       scale=scale, source=MetadataSource.VOL_HEADER)


def load_vol(path, log: ProcessLog | None = None) -> tuple[np.ndarray, SloMetadata]:
    """Load the SLO raster and metadata out of a `.vol` container."""
    log = ensure_log(log)
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFile(str(exc)) from exc
    header, image = volfile.parse_vol(data)
    return image, metadata_from_header(header, log)


def load_image(path, log: ProcessLog | None = None) -> tuple[np.ndarray, SloMetadata]:
    """Load a plain raster SLO image; pick up sidecar metadata if present.

    RGB inputs are converted to grayscale by luminance. When the directory's
    metadata.csv has no row for this file, metadata stays Unknown/Absent and
    the pixel scale is flagged not-known.
    """
    log = ensure_log(log)
    path = Path(path)
    if path.suffix.lower() == ".vol":
        return load_vol(path, log)
    if path.suffix.lower() not in RASTER_EXTENSIONS:
        raise UnsupportedFormat(f"unsupported input format '{path.suffix}'")
    try:
        with Image.open(path) as img:
            image = np.asarray(img.convert("L"), dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise UnreadableFile(f"cannot decode {path.name}: {exc}") from exc
    except OSError as exc:
        raise UnreadableFile(str(exc)) from exc
    if min(image.shape) < MIN_IMAGE_DIM:
        raise UnsupportedFormat(
            f"image {image.shape[1]}x{image.shape[0]} is below the "
            f"{MIN_IMAGE_DIM} px minimum"
        )

    metadata = SloMetadata()
    sidecar_path = path.parent / "metadata.csv"
    if sidecar_path.exists():
        table = load_sidecar(sidecar_path, log=log)
        if path.name in table:
            metadata = table[path.name]
    return image, metadata


def load_sidecar(path, robust: bool = True,
                 log: ProcessLog | None = None) -> dict[str, SloMetadata]:
    """Parse the metadata.csv sidecar into filename-keyed metadata.

    Expected header: filename, microns_per_px, laterality, location. Empty
    cells map to Unknown; rows with the wrong column count are skipped with a
    warning in robust mode and raise MalformedRow otherwise. Filenames that do
    not exist next to the sidecar are kept but warned about.
    """
    log = ensure_log(log)
    path = Path(path)
    table: dict[str, SloMetadata] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        return table

    start = 1 if rows and rows[0] and rows[0][0].strip().lower() == "filename" else 0
    for index, row in enumerate(rows[start:], start + 1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 4:
            message = f"{path.name} row {index}: expected 4 columns, got {len(row)}"
            if robust:
                log.warn(message + " (row skipped)")
                continue
            raise MalformedRow(message)
        filename, scale_text, lat_text, loc_text = (cell.strip() for cell in row)
        scale = PixelScale()
        if scale_text:
            try:
                microns = float(scale_text)
            except ValueError:
                log.warn(f"{path.name} row {index}: bad scale '{scale_text}'")
                microns = 0.0
            if microns > 0:
                scale = PixelScale(microns, microns, known=True)
        metadata = SloMetadata(
            laterality=parse_laterality(lat_text, log),
            location=parse_location(loc_text, log),
            scale=scale,
            source=MetadataSource.SIDECAR,
        )
        table[filename] = metadata
        if not (path.parent / filename).exists():
            log.warn(f"{path.name} lists '{filename}' which is not in the folder")
    return table


def _find_mask_file(directory: Path, stem: str, suffix: str) -> tuple[Path | None, bool]:
    """Locate `<stem><suffix>` preferring the `_corrected` variant."""
    for corrected in (True, False):
        name = f"{stem}{suffix}_corrected" if corrected else f"{stem}{suffix}"
        for ext in RASTER_EXTENSIONS:
            candidate = directory / (name + ext)
            if candidate.exists():
                return candidate, corrected
    return None, False


def _read_mask_raster(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise UnreadableFile(f"cannot decode mask {path.name}: {exc}") from exc


def _conform_dims(mask: np.ndarray, image_dims: tuple[int, int],
                  name: str, log: ProcessLog) -> np.ndarray:
    if mask.shape == tuple(image_dims):
        return mask
    src_ratio = mask.shape[1] / mask.shape[0]
    dst_ratio = image_dims[1] / image_dims[0]
    if abs(src_ratio - dst_ratio) > 1e-6:
        raise DimensionMismatch(
            f"{name}: mask {mask.shape} vs image {tuple(image_dims)} "
            "have different aspect ratios"
        )
    log.warn(f"{name}: resizing mask {mask.shape} -> {tuple(image_dims)}")
    return raster.resize(mask, image_dims, is_mask=True)


def load_masks(directory, stem: str, image_dims: tuple[int, int],
               log: ProcessLog | None = None) -> SegmentationBundle:
    """Load the segmentation bundle for one image stem.

    `<stem>_avod_corrected` style files take precedence over the plain
    variant; the bundle's corrected flag is set when any corrected file was
    used. Masks whose dimensions differ from the image are resized
    nearest-neighbour with a warning (same aspect ratio required). The AVOD
    label raster must only contain {0,1,2,3}.
    """
    log = ensure_log(log)
    directory = Path(directory)
    bundle = SegmentationBundle()

    binary_path, binary_corr = _find_mask_file(directory, stem, "_binary")
    if binary_path is not None:
        mask = _conform_dims(_read_mask_raster(binary_path), image_dims,
                             binary_path.name, log)
        bundle.binary_vessel = mask > 0
        bundle.corrected |= binary_corr

    avod_path, avod_corr = _find_mask_file(directory, stem, "_avod")
    if avod_path is not None:
        labels = _read_mask_raster(avod_path)
        bad = np.setdiff1d(np.unique(labels), [0, 1, 2, 3])
        if bad.size:
            raise InvalidLabelValue(
                f"{avod_path.name}: label values {bad.tolist()} outside {{0,1,2,3}}"
            )
        labels = _conform_dims(labels, image_dims, avod_path.name, log)
        bundle.artery = labels == 1
        bundle.vein = labels == 2
        bundle.optic_disc = labels == 3
        bundle.corrected |= avod_corr

    fovea_path, fovea_corr = _find_mask_file(directory, stem, "_fovea")
    if fovea_path is not None:
        mask = _conform_dims(_read_mask_raster(fovea_path), image_dims,
                             fovea_path.name, log)
        bundle.fovea = mask > 0
        bundle.corrected |= fovea_corr

    return bundle


def merge_metadata(primary: SloMetadata, secondary: SloMetadata,
                   log: ProcessLog | None = None) -> SloMetadata:
    """Fill Unknown/unknown fields of `primary` from `secondary`.

    On a laterality conflict the primary (.vol header) wins with a warning.
    """
    log = ensure_log(log)
    merged = primary
    if (primary.laterality is not Laterality.UNKNOWN
            and secondary.laterality is not Laterality.UNKNOWN
            and primary.laterality is not secondary.laterality):
        log.warn(
            f"laterality conflict: header says {primary.laterality.value}, "
            f"sidecar says {secondary.laterality.value}; keeping header"
        )
    if merged.laterality is Laterality.UNKNOWN:
        merged = replace(merged, laterality=secondary.laterality)
    if merged.location is Location.UNKNOWN:
        merged = replace(merged, location=secondary.location)
    if not merged.scale.known and secondary.scale.known:
        merged = replace(merged, scale=secondary.scale)
    return merged
