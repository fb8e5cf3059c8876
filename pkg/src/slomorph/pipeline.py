"""Batch orchestration: config parsing, per-file processing, output writing
(per-file results, collated table, overlays, process log), corrected-mask
precedence and robust error handling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from skimage import draw as skdraw

from . import geometry, ingest, metrics, raster, stats, vesselness
from .errors import EmptyInputDir, MissingRequiredKey, SlomorphError
from .geometry import DiscGeometry, FoveaPoint, RoiMask, RoiName
from .ingest import Laterality, Location, MetadataSource, SegmentationBundle, SloMetadata
from .logs import ProcessLog, ensure_log
from .metrics import MetricName, MetricParams, MetricRecord, VesselMap

WORKING_RESOLUTION = (768, 768)
INPUT_EXTENSIONS = ingest.RASTER_EXTENSIONS + (".vol",)

BOOL_KEYS = ("robust_run", "save_segmentations", "use_fallback_segmentation")
PATH_KEYS = ("input_dir", "output_dir", "mask_dir")


@dataclass
class RunConfig:
    input_dir: Path
    output_dir: Path
    mask_dir: Path | None = None  # defaults to input_dir
    robust_run: bool = True
    save_segmentations: bool = True
    use_fallback_segmentation: bool = False
    vesselness_params: vesselness.VesselnessParams = field(
        default_factory=vesselness.VesselnessParams)
    metric_params: MetricParams = field(default_factory=MetricParams)

    def masks_dir(self) -> Path:
        return self.mask_dir if self.mask_dir is not None else self.input_dir


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: '{text}'")


def parse_config(path, log: ProcessLog | None = None) -> RunConfig:
    """Read the key=value run configuration.

    One pair per line, '#' comments allowed. input_dir and output_dir are
    required; unknown keys only warn. Namespaced keys (vesselness.*,
    metrics.*) override the fallback-segmentation and measurement tunables.
    """
    log = ensure_log(log)
    values: dict[str, str] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            log.warn(f"ignoring config line without '=': '{raw.strip()}'")
            continue
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()

    for required in ("input_dir", "output_dir"):
        if required not in values or not values[required]:
            raise MissingRequiredKey(f"config is missing '{required}'")

    cfg = RunConfig(input_dir=Path(values.pop("input_dir")),
                    output_dir=Path(values.pop("output_dir")))
    vessel_kwargs: dict = {}
    metric_kwargs: dict = {}
    for key, value in values.items():
        if key == "mask_dir":
            cfg.mask_dir = Path(value)
        elif key in BOOL_KEYS:
            setattr(cfg, key, _parse_bool(value))
        elif key.startswith("vesselness."):
            name = key.split(".", 1)[1]
            if name == "scales":
                vessel_kwargs["scales_px"] = tuple(
                    float(v) for v in value.split(",") if v.strip())
            elif name in ("beta", "c", "prob_threshold"):
                vessel_kwargs[name] = float(value)
            else:
                log.warn(f"unknown config key '{key}'")
        elif key.startswith("metrics."):
            name = key.split(".", 1)[1]
            if name == "min_segment_px":
                metric_kwargs[name] = int(value)
            elif name in ("smooth_window", "subsample_px"):
                metric_kwargs[name] = int(value)
            elif name == "curvature_eps":
                metric_kwargs[name] = float(value)
            else:
                log.warn(f"unknown config key '{key}'")
        else:
            log.warn(f"unknown config key '{key}'")
    if vessel_kwargs:
        cfg.vesselness_params = vesselness.VesselnessParams(**vessel_kwargs)
    if metric_kwargs:
        cfg.metric_params = MetricParams(**metric_kwargs)
    return cfg


# --- result row schema ---------------------------------------------------

META_COLUMNS = ("filename", "laterality", "location", "scale_x", "scale_y",
                "fovea_x", "fovea_y", "disc_x", "disc_y", "disc_diameter")
FLAG_COLUMNS = ("corrected", "fallback")

ALL_ROIS = (RoiName.WHOLE, RoiName.ZONE_B, RoiName.ZONE_C)
ALL_MAPS = (VesselMap.ALL, VesselMap.ARTERY, VesselMap.VEIN)


def metric_column(vmap: VesselMap, roi: RoiName, metric: MetricName) -> str:
    return f"{vmap.value}_{roi.value}_{metric.value}"


def result_columns() -> list[str]:
    cells = metrics.expected_cells(list(ALL_ROIS), list(ALL_MAPS))
    return (list(META_COLUMNS)
            + [metric_column(*cell) for cell in cells]
            + list(FLAG_COLUMNS))


def _format_value(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return f"{value:.6g}"
    return str(value)


def empty_row(filename: str) -> dict:
    row = {column: "" for column in result_columns()}
    row["filename"] = filename
    row["corrected"] = False
    row["fallback"] = False
    return row


# --- per-file processing --------------------------------------------------

def _postprocess_bundle(bundle: SegmentationBundle, native_dims: tuple[int, int],
                        log: ProcessLog) -> SegmentationBundle:
    """Clean each vessel map at the working resolution, then return to the
    native resolution for measurement. Gap bridging runs per map."""
    working = WORKING_RESOLUTION
    at_native = tuple(native_dims) == working
    if not at_native:
        log.info(f"post-processing at working resolution {working}")

    def clean(mask):
        if mask is None:
            return None
        work = mask if at_native else raster.resize(mask, working, is_mask=True)
        work = raster.postprocess(work)
        return work if at_native else raster.resize(work, native_dims, is_mask=True)

    out = SegmentationBundle(
        binary_vessel=clean(bundle.binary_vessel),
        artery=clean(bundle.artery),
        vein=clean(bundle.vein),
        optic_disc=bundle.optic_disc,
        fovea=bundle.fovea,
        corrected=bundle.corrected,
    )
    # harmonize: the binary map covers everything the A/V maps claim
    union = None
    for mask in (out.binary_vessel, out.artery, out.vein):
        if mask is not None:
            union = mask.copy() if union is None else (union | mask)
    out.binary_vessel = union
    return out


def _derive_geometry(bundle: SegmentationBundle, dims: tuple[int, int],
                     log: ProcessLog):
    fovea = None
    if bundle.fovea is not None and bundle.fovea.any():
        try:
            fovea = geometry.fovea_centroid(bundle.fovea, log)
        except SlomorphError as exc:
            log.warn(f"fovea centroid failed: {exc}")
    disc = DiscGeometry(present=False)
    if bundle.optic_disc is not None:
        disc = geometry.fit_disc_ellipse(bundle.optic_disc, log)
    return fovea, disc


def _resolve_metadata(metadata: SloMetadata, fovea, disc, dims,
                      log: ProcessLog) -> SloMetadata:
    laterality = metadata.laterality
    location = metadata.location
    if laterality is Laterality.UNKNOWN:
        laterality = geometry.infer_laterality(fovea, disc, log)
        if laterality is not Laterality.UNKNOWN:
            log.info(f"laterality inferred: {laterality.value}")
    if location is Location.UNKNOWN:
        location = geometry.infer_location(fovea, disc, dims, log)
        if location is not Location.UNKNOWN:
            log.info(f"scan location inferred: {location.value}")
    source = metadata.source
    if source is MetadataSource.ABSENT and (
            laterality is not Laterality.UNKNOWN
            or location is not Location.UNKNOWN):
        source = MetadataSource.INFERRED
    return replace(metadata, laterality=laterality, location=location,
                   source=source)


def records_to_row(filename: str, metadata: SloMetadata, fovea, disc,
                   records: list[MetricRecord], corrected: bool,
                   fallback: bool) -> dict:
    row = empty_row(filename)
    row["laterality"] = metadata.laterality.value
    row["location"] = metadata.location.value
    if metadata.scale.known:
        row["scale_x"] = metadata.scale.microns_per_px_x
        row["scale_y"] = metadata.scale.microns_per_px_y
    if fovea is not None:
        row["fovea_x"] = fovea.x
        row["fovea_y"] = fovea.y
    if disc is not None and disc.present:
        row["disc_x"] = disc.centre_x
        row["disc_y"] = disc.centre_y
        row["disc_diameter"] = disc.diameter_D
    for record in records:
        if record.value is not None:
            row[metric_column(record.map, record.roi, record.metric)] = record.value
    row["corrected"] = corrected
    row["fallback"] = fallback
    return row


def process_one(path, cfg: RunConfig,
                sidecar: dict[str, SloMetadata] | None = None):
    """Run the measurement pipeline on a single input file.

    Returns (row dict, ProcessLog, records). Artifact writing is separate so
    the caller controls the output layout.
    """
    log = ProcessLog()
    path = Path(path)
    log.info(f"processing {path.name}")

    image, metadata = ingest.load_image(path, log)
    if sidecar and path.name in sidecar and metadata.source is MetadataSource.VOL_HEADER:
        metadata = ingest.merge_metadata(metadata, sidecar[path.name], log)
    elif sidecar and path.name in sidecar and metadata.source is MetadataSource.ABSENT:
        metadata = sidecar[path.name]
    dims = image.shape

    bundle = ingest.load_masks(cfg.masks_dir(), path.stem, dims, log)
    fallback = False
    if bundle.binary_vessel is None and bundle.artery is None and bundle.vein is None:
        if cfg.use_fallback_segmentation:
            work = (image if dims == WORKING_RESOLUTION
                    else raster.resize(image, WORKING_RESOLUTION))
            mask = vesselness.segment_fallback(work, cfg.vesselness_params, log)
            bundle.binary_vessel = (mask if dims == WORKING_RESOLUTION
                                    else raster.resize(mask, dims, is_mask=True))
            fallback = True
        else:
            log.warn("no masks found and fallback segmentation disabled")

    if fallback:
        # fallback output is already post-processed at the working resolution
        harmonized = bundle
    else:
        harmonized = _postprocess_bundle(bundle, dims, log)

    fovea, disc = _derive_geometry(harmonized, dims, log)
    metadata = _resolve_metadata(metadata, fovea, disc, dims, log)
    if metadata.laterality is Laterality.UNKNOWN:
        log.warn("laterality remains unknown")
    if metadata.location is Location.UNKNOWN:
        log.warn("scan location remains unknown")
    if not metadata.scale.known:
        log.warn("pixel scale unknown; measurements reported in pixels")

    rois = geometry.build_zones(disc, dims)
    if metadata.location is Location.DISC and not disc.present:
        log.warn("disc-centred image without a fitted disc; zones skipped")

    records = metrics.measure_all(harmonized, rois, metadata.scale,
                                  metadata.location, disc,
                                  cfg.metric_params, cfg.robust_run, log)
    row = records_to_row(path.name, metadata, fovea, disc, records,
                         harmonized.corrected, fallback)
    log.info(f"finished {path.name}: {sum(1 for r in records if r.value is not None)}"
             f"/{len(records)} metrics")
    return row, log, records, (image, harmonized, fovea, disc, rois)


# --- artifacts -------------------------------------------------------------

OVERLAY_COLOURS = {
    "artery": (255, 0, 0),
    "vein": (0, 64, 255),
    "binary_only": (255, 165, 0),
    "disc": (0, 255, 0),
    "fovea": (255, 255, 0),
    "zone": (0, 255, 255),
}


def _dashed_circle(canvas: np.ndarray, cy: float, cx: float, radius: float,
                   colour, dash_deg: float = 6.0) -> None:
    if radius <= 0:
        return
    height, width = canvas.shape[:2]
    n = max(64, int(2 * math.pi * radius))
    angles = np.linspace(0, 2 * math.pi, n, endpoint=False)
    keep = (np.degrees(angles) // dash_deg).astype(int) % 2 == 0
    ys = np.rint(cy + radius * np.sin(angles[keep])).astype(int)
    xs = np.rint(cx + radius * np.cos(angles[keep])).astype(int)
    inside = (ys >= 0) & (ys < height) & (xs >= 0) & (xs < width)
    canvas[ys[inside], xs[inside]] = colour


def render_overlay(image: np.ndarray, bundle: SegmentationBundle,
                   fovea: FoveaPoint | None = None,
                   disc: DiscGeometry | None = None,
                   rois: list[RoiMask] | None = None) -> np.ndarray:
    """Composite the segmentations onto the SLO: arteries red, veins blue,
    binary-only vessels orange, disc outline green, fovea crosshair yellow,
    zone boundaries dashed. Alpha 0.5 over the grayscale."""
    height, width = image.shape
    base = np.repeat(image[:, :, None], 3, axis=2).astype(float)
    colour = np.zeros_like(base)
    painted = np.zeros((height, width), dtype=bool)

    def paint(mask, name):
        if mask is None or not mask.any():
            return
        colour[mask] = OVERLAY_COLOURS[name]
        painted[mask] = True

    binary_only = None
    if bundle.binary_vessel is not None:
        binary_only = bundle.binary_vessel.copy()
        for other in (bundle.artery, bundle.vein):
            if other is not None:
                binary_only &= ~other
    paint(binary_only, "binary_only")
    paint(bundle.artery, "artery")
    paint(bundle.vein, "vein")

    if disc is not None and disc.present:
        rr, cc = skdraw.ellipse_perimeter(
            int(round(disc.centre_y)), int(round(disc.centre_x)),
            int(round(disc.minor_axis / 2)), int(round(disc.major_axis / 2)),
            orientation=math.radians(disc.orientation_deg), shape=(height, width))
        colour[rr, cc] = OVERLAY_COLOURS["disc"]
        painted[rr, cc] = True
        if rois is not None and len(rois) > 1:
            d = disc.diameter_D
            r = d / 2.0
            zone_canvas = np.zeros((height, width), dtype=bool)
            for radius in (r, r + 0.5 * d, r + 1.0 * d, r + 2.0 * d):
                _dashed_circle(zone_canvas, disc.centre_y, disc.centre_x,
                               radius, True)
            colour[zone_canvas] = OVERLAY_COLOURS["zone"]
            painted |= zone_canvas

    if fovea is not None:
        fy, fx = int(round(fovea.y)), int(round(fovea.x))
        arm = 8
        ys = np.clip(np.arange(fy - arm, fy + arm + 1), 0, height - 1)
        xs = np.clip(np.arange(fx - arm, fx + arm + 1), 0, width - 1)
        if 0 <= fx < width:
            colour[ys, fx] = OVERLAY_COLOURS["fovea"]
            painted[ys, fx] = True
        if 0 <= fy < height:
            colour[fy, xs] = OVERLAY_COLOURS["fovea"]
            painted[fy, xs] = True

    out = base.copy()
    out[painted] = 0.5 * base[painted] + 0.5 * colour[painted]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _save_mask_png(mask: np.ndarray | None, path: Path) -> None:
    if mask is None:
        return
    Image.fromarray((mask.astype(np.uint8)) * 255).save(path)


def _save_avod_png(bundle: SegmentationBundle, path: Path) -> None:
    if bundle.artery is None and bundle.vein is None and bundle.optic_disc is None:
        return
    shape = None
    for mask in (bundle.artery, bundle.vein, bundle.optic_disc):
        if mask is not None:
            shape = mask.shape
            break
    labels = np.zeros(shape, dtype=np.uint8)
    if bundle.artery is not None:
        labels[bundle.artery] = 1
    if bundle.vein is not None:
        labels[bundle.vein] = 2
    if bundle.optic_disc is not None:
        labels[bundle.optic_disc] = 3
    Image.fromarray(labels).save(path)


def write_artifacts(stem: str, row: dict, log: ProcessLog, artifacts,
                    records: list[MetricRecord], cfg: RunConfig) -> Path:
    """Write the per-file output folder and return the overlay path."""
    image, bundle, fovea, disc, rois = artifacts
    out_dir = cfg.output_dir / stem
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "results.csv", "w", encoding="utf-8") as fh:
        fh.write("map,roi,metric,value,units\n")
        for record in records:
            fh.write(f"{record.map.value},{record.roi.value},"
                     f"{record.metric.value},{_format_value(record.value)},"
                     f"{record.units.value}\n")

    with open(out_dir / "metadata.csv", "w", encoding="utf-8") as fh:
        keys = list(META_COLUMNS) + list(FLAG_COLUMNS)
        fh.write(",".join(keys) + "\n")
        fh.write(",".join(_format_value(row[k]) for k in keys) + "\n")

    if cfg.save_segmentations:
        _save_mask_png(bundle.binary_vessel, out_dir / f"{stem}_binary.png")
        _save_avod_png(bundle, out_dir / f"{stem}_avod.png")
        _save_mask_png(bundle.fovea, out_dir / f"{stem}_fovea.png")

    overlay = render_overlay(image, bundle, fovea, disc, rois)
    overlay_path = out_dir / "overlay.png"
    Image.fromarray(overlay).save(overlay_path)

    log.write(out_dir / "log.txt")
    return overlay_path


# --- batch -----------------------------------------------------------------

def _is_mask_file(path: Path) -> bool:
    stem = path.stem
    if stem.endswith("_corrected"):
        stem = stem[:-len("_corrected")]
    return stem.endswith(ingest.MASK_SUFFIXES)


def candidate_files(input_dir: Path) -> list[Path]:
    files = []
    for path in sorted(input_dir.iterdir()):
        if not path.is_file():
            continue
        if path.suffix.lower() not in INPUT_EXTENSIONS:
            continue
        if _is_mask_file(path):
            continue
        files.append(path)
    return files


def write_collated(rows: list[dict], path: Path) -> None:
    columns = result_columns()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_format_value(row[c]) for c in columns) + "\n")


def run_batch(cfg: RunConfig) -> tuple[Path, int]:
    """Process every candidate file in input_dir; returns the collated
    results path and the number of files skipped by robust mode.

    Row order is lexicographic by filename; result rows carry no wall-clock
    values, so two identical runs produce byte-identical collated files.
    """
    run_log = ProcessLog()
    files = candidate_files(cfg.input_dir)
    if not files:
        raise EmptyInputDir(f"no processable files in {cfg.input_dir}")
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    overlays_dir = cfg.output_dir / "segmentation_overlays"
    overlays_dir.mkdir(exist_ok=True)

    sidecar = None
    sidecar_path = cfg.input_dir / "metadata.csv"
    if sidecar_path.exists():
        sidecar = ingest.load_sidecar(sidecar_path, robust=cfg.robust_run,
                                      log=run_log)

    rows = []
    failures = 0
    for path in files:
        try:
            row, log, records, artifacts = process_one(path, cfg, sidecar)
            overlay_path = write_artifacts(path.stem, row, log, artifacts,
                                           records, cfg)
            (overlays_dir / f"{path.stem}.png").write_bytes(
                overlay_path.read_bytes())
        except Exception as exc:  # robust mode skips any failing file
            if not cfg.robust_run:
                raise
            failures += 1
            run_log.error(f"{path.name}: {type(exc).__name__}: {exc}")
            failure_dir = cfg.output_dir / path.stem
            failure_dir.mkdir(parents=True, exist_ok=True)
            failure_log = ProcessLog()
            failure_log.error(f"{path.name}: {type(exc).__name__}: {exc}")
            failure_log.write(failure_dir / "log.txt")
            rows.append(empty_row(path.name))
            continue
        rows.append(row)
        run_log.info(f"{path.name}: ok")
    write_collated(rows, cfg.output_dir / "collated_results.csv")
    run_log.info(f"processed {len(files)} file(s), {failures} failed")
    run_log.write(cfg.output_dir / "run_log.txt")
    return cfg.output_dir / "collated_results.csv", failures


# --- agreement between two collated runs ------------------------------------

def compare_results(path_a, path_b, pair_on: str = "filename",
                    log: ProcessLog | None = None) -> list[dict]:
    """Agreement report per metric between two collated results files.

    Rows are paired on `pair_on`; each metric column with at least two
    complete numeric pairs yields one report row: MAE, Pearson, Spearman,
    ICC(3,1), Bland-Altman mean and limits, and the mean eye-level noise
    (the pairing key acting as the eye identifier).
    """
    import csv

    log = ensure_log(log)

    def read(path):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
        return rows, reader.fieldnames or []

    rows_a, fields_a = read(path_a)
    rows_b, fields_b = read(path_b)
    if pair_on not in fields_a or pair_on not in fields_b:
        raise MissingRequiredKey(f"pairing column '{pair_on}' missing")
    by_key_b = {row[pair_on]: row for row in rows_b}
    shared_keys = [row[pair_on] for row in rows_a if row[pair_on] in by_key_b]
    if not shared_keys:
        raise EmptyInputDir("no shared rows to pair")

    metric_cols = [c for c in fields_a if c in fields_b
                   and c not in META_COLUMNS and c not in FLAG_COLUMNS]
    reports = []
    for column in metric_cols:
        pairs_a, pairs_b, eyes = [], [], []
        for row_a in rows_a:
            key = row_a[pair_on]
            if key not in by_key_b:
                continue
            va, vb = row_a.get(column, ""), by_key_b[key].get(column, "")
            if va == "" or vb == "":
                continue
            try:
                pairs_a.append(float(va))
                pairs_b.append(float(vb))
            except ValueError:
                continue
            eyes.append(key)
        if len(pairs_a) < 2:
            log.warn(f"{column}: fewer than two complete pairs; skipped")
            continue
        report = stats.agreement(stats.PairedSeries(pairs_a, pairs_b, eyes), log)
        mean_diff, loa_low, loa_high = report.bland_altman
        reports.append({
            "metric": column,
            "n": len(pairs_a),
            "mae": report.mae,
            "pearson": report.pearson,
            "spearman": report.spearman,
            "icc_3_1": report.icc_3_1,
            "ba_mean_diff": mean_diff,
            "ba_loa_low": loa_low,
            "ba_loa_high": loa_high,
            "lambda_mean_pct": (float(np.mean(report.lambda_per_eye))
                                if report.lambda_per_eye else None),
        })
    return reports


COMPARE_COLUMNS = ("metric", "n", "mae", "pearson", "spearman", "icc_3_1",
                   "ba_mean_diff", "ba_loa_low", "ba_loa_high",
                   "lambda_mean_pct")


def write_compare(reports: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(COMPARE_COLUMNS) + "\n")
        for report in reports:
            fh.write(",".join(_format_value(report[c]) for c in COMPARE_COLUMNS)
                     + "\n")
