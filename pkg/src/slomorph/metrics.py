"""Retinal vascular parameters over (vessel map, region of interest) pairs:
fractal dimension, vessel density, global/local calibre, tortuosity density
and the Knudtson big-vessel equivalents."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import raster
from .errors import (
    EmptyMask,
    EmptySkeleton,
    NoSegmentsInRoi,
    SlomorphError,
    TooFewScales,
    TooFewVessels,
)
from .geometry import DiscGeometry, RoiMask, RoiName, disc_interior_mask
from .ingest import Location, PixelScale, SegmentationBundle
from .logs import ProcessLog, ensure_log

BOX_SIZES = (2, 4, 8, 16, 32, 64, 128, 256)
KNUDTSON_ARTERY_C = 0.88
KNUDTSON_VEIN_C = 0.95


class VesselMap(str, Enum):
    ALL = "all_vessel"
    ARTERY = "artery"
    VEIN = "vein"


class MetricName(str, Enum):
    FRACTAL_DIMENSION = "fractal_dimension"
    VESSEL_DENSITY = "vessel_density"
    GLOBAL_CALIBRE = "global_calibre"
    LOCAL_CALIBRE = "local_calibre"
    TORTUOSITY_DENSITY = "tortuosity_density"
    CRAE = "crae"
    CRVE = "crve"
    AVR = "avr"


class Units(str, Enum):
    NONE = "dimensionless"
    PX = "px"
    UM = "um"


@dataclass
class VesselSegment:
    """One branch-to-branch vessel segment traced along the skeleton."""

    path: np.ndarray              # (N, 2) points, (x, y) order
    arc_length: float
    chord_length: float
    calibre_samples: np.ndarray   # inscribed-circle diameters, px
    mean_calibre: float


@dataclass
class SegmentGraph:
    nodes: list[tuple[int, int]]
    segments: list[VesselSegment]
    source_map: VesselMap


@dataclass(frozen=True)
class TortuosityResult:
    n_turns: int
    tau: float


@dataclass(frozen=True)
class BigVesselEquivalents:
    crae: float | None = None
    crve: float | None = None
    avr: float | None = None


@dataclass(frozen=True)
class MetricRecord:
    map: VesselMap
    roi: RoiName
    metric: MetricName
    value: float | None
    units: Units


@dataclass
class MetricParams:
    """Tunables documented at the 768 base resolution; lengths scale linearly."""

    min_segment_px: int = 10
    smooth_window: int = 5
    subsample_px: int = 2
    curvature_eps: float = 1e-6

    def scaled(self, dims: tuple[int, int]) -> "MetricParams":
        return MetricParams(
            min_segment_px=raster.scale_length(self.min_segment_px, dims),
            smooth_window=self.smooth_window,
            subsample_px=self.subsample_px,
            curvature_eps=self.curvature_eps,
        )


def vessel_density(mask: np.ndarray, roi: RoiMask,
                   log: ProcessLog | None = None) -> float:
    """Vessel pixels over all ROI pixels; 0 for an empty ROI (warned)."""
    roi_px = int(roi.mask.sum())
    if roi_px == 0:
        ensure_log(log).warn(f"roi {roi.name.value} is empty")
        return 0.0
    return float(np.logical_and(mask, roi.mask).sum()) / roi_px


def fractal_dimension(mask: np.ndarray, roi: RoiMask) -> float:
    """Box-counting (Minkowski-Bouligand) dimension of mask & roi.

    Slope of the least-squares line through (ln 1/e, ln N(e)) over box sizes
    e in {2,...,256}, the grid anchored at the ROI bounding-box origin.
    Saturated scales (N == 1) are excluded; fewer than two usable scales
    raises TooFewScales.
    """
    region = np.logical_and(mask, roi.mask)
    if not region.any():
        raise EmptyMask("mask & roi is empty")
    # anchor the grid at the counted region's bounding box so the estimate is
    # translation invariant
    rows = np.nonzero(region.any(axis=1))[0]
    cols = np.nonzero(region.any(axis=0))[0]
    window = region[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]

    sizes, counts = [], []
    for size in BOX_SIZES:
        row_edges = np.arange(0, window.shape[0], size)
        col_edges = np.arange(0, window.shape[1], size)
        boxed = np.add.reduceat(
            np.add.reduceat(window, row_edges, axis=0), col_edges, axis=1)
        n_boxes = int((boxed > 0).sum())
        if n_boxes > 1:
            sizes.append(size)
            counts.append(n_boxes)
    if len(sizes) < 2:
        raise TooFewScales("mask fits in one box at every size")
    slope = np.polyfit(np.log(1.0 / np.asarray(sizes, dtype=float)),
                       np.log(np.asarray(counts, dtype=float)), 1)[0]
    return float(slope)


def global_calibre(mask: np.ndarray, skeleton: np.ndarray, roi: RoiMask,
                   scale: PixelScale) -> float:
    """Vessel pixels over skeleton pixels inside the ROI, in microns when the
    scale is known and pixels otherwise."""
    skel_px = int(np.logical_and(skeleton, roi.mask).sum())
    if skel_px == 0:
        raise EmptySkeleton(f"no skeleton pixels in roi {roi.name.value}")
    value = float(np.logical_and(mask, roi.mask).sum()) / skel_px
    return value * scale.scalar() if scale.known else value


def _trace_neighbours(skel: np.ndarray, y: int, x: int):
    height, width = skel.shape
    out = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == dx == 0:
                continue
            yy, xx = y + dy, x + dx
            if 0 <= yy < height and 0 <= xx < width and skel[yy, xx]:
                out.append((yy, xx))
    return out


def _path_lengths(path_yx: list[tuple[int, int]]) -> tuple[float, float]:
    pts = np.asarray(path_yx, dtype=float)
    if len(pts) < 2:
        return 0.0, 0.0
    arc = float(np.hypot(*np.diff(pts, axis=0).T).sum())
    chord = float(math.hypot(*(pts[-1] - pts[0])))
    return arc, chord


def _make_segment(path_yx: list[tuple[int, int]], edt: np.ndarray) -> VesselSegment:
    arc, chord = _path_lengths(path_yx)
    pts = np.asarray(path_yx, dtype=int)
    # inscribed-circle diameter: EDT is centre-to-centre, the -1 accounts for
    # the half-pixel extents on both sides
    calibres = np.maximum(2.0 * edt[pts[:, 0], pts[:, 1]] - 1.0, 1.0)
    path_xy = pts[:, ::-1].astype(float)
    return VesselSegment(path=path_xy, arc_length=arc, chord_length=chord,
                         calibre_samples=calibres,
                         mean_calibre=float(calibres.mean()))


def decompose_segments(skeleton: np.ndarray, disc: DiscGeometry | None,
                       edt: np.ndarray,
                       min_segment_px: int = 10,
                       source_map: VesselMap = VesselMap.ALL) -> SegmentGraph:
    """Split the skeleton into branch-to-branch segments.

    Disc-interior skeleton pixels are deleted first (when a disc is present);
    nodes are pixels with >= 3 skeleton neighbours plus endpoints; segments
    shorter than min_segment_px are discarded; calibres are sampled from the
    vessel-mask distance transform along each path.
    """
    skel = np.asarray(skeleton, dtype=bool).copy()
    if disc is not None and disc.present:
        skel &= ~disc_interior_mask(disc, skel.shape)

    counts = raster._neighbour_counts(skel)
    node_mask = skel & (counts != 2)
    nodes = [tuple(p) for p in np.argwhere(node_mask)]
    node_set = set(nodes)
    visited = np.zeros_like(skel)

    segments: list[VesselSegment] = []

    def walk(start, first):
        """Trace from node `start` through degree-2 pixel `first` until the
        next node (or a dead end / loop closure)."""
        path = [start, first]
        visited[first] = True
        prev, cur = start, first
        while True:
            if cur in node_set:
                break
            nxt = None
            for cand in _trace_neighbours(skel, *cur):
                if cand != prev and (cand in node_set or not visited[cand]):
                    nxt = cand
                    break
            if nxt is None:
                break
            path.append(nxt)
            if nxt in node_set:
                break
            visited[nxt] = True
            prev, cur = cur, nxt
        return path

    for node in nodes:
        for nb in _trace_neighbours(skel, *node):
            if nb in node_set:
                if node < nb:  # adjacent nodes: a two-pixel stub
                    segments.append(_make_segment([node, nb], edt))
                continue
            if not visited[nb]:
                segments.append(_make_segment(walk(node, nb), edt))

    # pure cycles have no nodes at all; trace each remaining loop once
    remaining = np.argwhere(skel & ~visited & ~node_mask)
    for y, x in remaining:
        if visited[y, x]:
            continue
        start = (int(y), int(x))
        visited[start] = True
        neighbours = _trace_neighbours(skel, *start)
        if not neighbours:
            continue
        path = [start]
        prev, cur = start, neighbours[0]
        while cur != start and not visited[cur]:
            visited[cur] = True
            path.append(cur)
            nxt = None
            for cand in _trace_neighbours(skel, *cur):
                if cand != prev and (not visited[cand] or cand == start):
                    nxt = cand
                    break
            if nxt is None:
                break
            prev, cur = cur, nxt
        segments.append(_make_segment(path, edt))

    kept = [s for s in segments if len(s.path) >= min_segment_px]
    return SegmentGraph(nodes=nodes, segments=kept, source_map=source_map)


def _segment_roi_points(segment: VesselSegment, roi: RoiMask) -> np.ndarray:
    xs = segment.path[:, 0].astype(int)
    ys = segment.path[:, 1].astype(int)
    height, width = roi.mask.shape
    inside = (ys >= 0) & (ys < height) & (xs >= 0) & (xs < width)
    hit = np.zeros(len(xs), dtype=bool)
    hit[inside] = roi.mask[ys[inside], xs[inside]]
    return hit


def local_calibre(graph: SegmentGraph, roi: RoiMask, scale: PixelScale,
                  log: ProcessLog | None = None) -> float:
    """Unweighted mean over segments of each segment's mean inscribed-circle
    diameter, restricted to ROI-interior path points."""
    per_segment = []
    for segment in graph.segments:
        hit = _segment_roi_points(segment, roi)
        if hit.any():
            per_segment.append(float(segment.calibre_samples[hit].mean()))
    if not per_segment:
        raise NoSegmentsInRoi(f"no segments intersect roi {roi.name.value}")
    value = float(np.mean(per_segment))
    return value * scale.scalar() if scale.known else value


def _moving_average(points: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or len(points) < 3:
        return points.astype(float)
    kernel = np.ones(window) / window
    pad = window // 2
    padded = np.pad(points.astype(float), ((pad, pad), (0, 0)), mode="edge")
    out = np.column_stack([
        np.convolve(padded[:, 0], kernel, mode="valid"),
        np.convolve(padded[:, 1], kernel, mode="valid"),
    ])
    return out[:len(points)]


def tortuosity_density(segment: VesselSegment,
                       params: MetricParams | None = None) -> TortuosityResult:
    """Turn-curve tortuosity of one segment.

    The path is smoothed (moving average), subsampled, and split into n
    maximal constant-curvature-sign sub-arcs; with L_cs/L_x the sub-arc
    arc/chord lengths and L_c the whole-curve arc length,

        tau = ((n - 1) / n) * (1 / L_c) * sum(L_cs_i / L_x_i - 1)

    Straight and single-arc paths give tau = 0 exactly.
    """
    params = params or MetricParams()
    pts = _moving_average(np.asarray(segment.path, dtype=float),
                          params.smooth_window)
    if len(pts) < 5:
        return TortuosityResult(n_turns=1, tau=0.0)
    steps = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
    s = np.concatenate([[0.0], np.cumsum(steps)])
    if s[-1] <= 0:
        return TortuosityResult(n_turns=1, tau=0.0)
    # resample at the requested arc-length spacing (first/last point kept)
    targets = np.arange(0.0, s[-1], max(params.subsample_px, 1e-9))
    idx = np.unique(np.concatenate([np.searchsorted(s, targets),
                                    [len(s) - 1]]))
    pts = pts[idx]
    s = s[idx]
    if len(pts) < 5:
        return TortuosityResult(n_turns=1, tau=0.0)

    dx = np.gradient(pts[:, 0], s)
    dy = np.gradient(pts[:, 1], s)
    ddx = np.gradient(dx, s)
    ddy = np.gradient(dy, s)
    speed_cubed = (dx ** 2 + dy ** 2) ** 1.5
    with np.errstate(divide="ignore", invalid="ignore"):
        curvature = np.where(speed_cubed > 0,
                             (dx * ddy - dy * ddx) / speed_cubed, 0.0)

    signs = np.sign(curvature)
    signs[np.abs(curvature) < params.curvature_eps] = 0
    # zero-curvature runs merge into the adjacent turn curve
    filled = signs.copy()
    for i in range(1, len(filled)):
        if filled[i] == 0:
            filled[i] = filled[i - 1]
    for i in range(len(filled) - 2, -1, -1):
        if filled[i] == 0:
            filled[i] = filled[i + 1]
    if not filled.any():
        return TortuosityResult(n_turns=1, tau=0.0)  # collinear path

    boundaries = [0]
    for i in range(1, len(filled)):
        if filled[i] != filled[i - 1]:
            boundaries.append(i)
    boundaries.append(len(pts) - 1)

    n_turns = len(boundaries) - 1
    if n_turns <= 1:
        return TortuosityResult(n_turns=1, tau=0.0)

    arc_total = float(s[-1])
    excess = 0.0
    for a, b in zip(boundaries[:-1], boundaries[1:]):
        sub_arc = float(s[b] - s[a])
        sub_chord = float(math.hypot(*(pts[b] - pts[a])))
        if sub_chord > 0:
            excess += sub_arc / sub_chord - 1.0
    tau = ((n_turns - 1) / n_turns) * excess / arc_total
    return TortuosityResult(n_turns=n_turns, tau=float(tau))


def knudtson_equivalent(widths, kind: VesselMap) -> float:
    """Iterative pairwise combination of the six largest widths.

    Sorted descending, first is combined with last via c*sqrt(w1^2 + w2^2)
    (c = 0.88 arteries, 0.95 veins), odd counts carry the median unpaired,
    until one value remains. Fewer than six widths use the largest even
    count; fewer than two raise TooFewVessels.
    """
    widths = [float(w) for w in widths]
    if len(widths) < 2:
        raise TooFewVessels(f"{len(widths)} width(s) available, need >= 2")
    if any(w <= 0 for w in widths):
        raise ValueError("widths must be positive")
    if kind == VesselMap.ARTERY:
        c = KNUDTSON_ARTERY_C
    elif kind == VesselMap.VEIN:
        c = KNUDTSON_VEIN_C
    else:
        raise ValueError("kind must be artery or vein")

    current = sorted(widths, reverse=True)
    if len(current) >= 6:
        current = current[:6]
    else:
        current = current[:len(current) - (len(current) % 2)]
    while len(current) > 1:
        current.sort(reverse=True)
        n = len(current)
        combined = [c * math.hypot(current[i], current[n - 1 - i])
                    for i in range(n // 2)]
        if n % 2:
            combined.append(current[n // 2])
        current = combined
    return current[0]


def big_vessel_equivalents(artery_graph: SegmentGraph | None,
                           vein_graph: SegmentGraph | None,
                           roi: RoiMask, scale: PixelScale,
                           log: ProcessLog | None = None) -> BigVesselEquivalents:
    """CRAE/CRVE from per-map segment calibres intersecting the ROI, plus
    their ratio. Either side with too few vessels stays absent (warned), and
    the ratio needs both."""
    log = ensure_log(log)
    factor = scale.scalar() if scale.known else 1.0

    def side(graph: SegmentGraph | None, kind: VesselMap) -> float | None:
        if graph is None:
            return None
        widths = [s.mean_calibre for s in graph.segments
                  if _segment_roi_points(s, roi).any()]
        try:
            return knudtson_equivalent(sorted(widths, reverse=True), kind) * factor
        except TooFewVessels as exc:
            log.warn(f"{kind.value} {roi.name.value}: {exc}")
            return None

    crae = side(artery_graph, VesselMap.ARTERY)
    crve = side(vein_graph, VesselMap.VEIN)
    avr = crae / crve if crae is not None and crve is not None else None
    return BigVesselEquivalents(crae=crae, crve=crve, avr=avr)


# The (map, roi, metric) matrix: global metrics are whole-image only, the
# segment metrics cover every region, and the big-vessel equivalents live on
# their anatomical map with the ratio reported against the all-vessel map.
GLOBAL_METRICS = (MetricName.FRACTAL_DIMENSION, MetricName.VESSEL_DENSITY,
                  MetricName.GLOBAL_CALIBRE)
SEGMENT_METRICS = (MetricName.LOCAL_CALIBRE, MetricName.TORTUOSITY_DENSITY)


def expected_cells(rois: list[RoiName], maps: list[VesselMap],
                   with_avr: bool = True) -> list[tuple[VesselMap, RoiName, MetricName]]:
    """Canonical ordering of the metric matrix for the given maps/rois."""
    cells = []
    for vmap in maps:
        if RoiName.WHOLE in rois:
            for metric in GLOBAL_METRICS:
                cells.append((vmap, RoiName.WHOLE, metric))
        for roi in rois:
            for metric in SEGMENT_METRICS:
                cells.append((vmap, roi, metric))
    if VesselMap.ARTERY in maps:
        for roi in rois:
            cells.append((VesselMap.ARTERY, roi, MetricName.CRAE))
    if VesselMap.VEIN in maps:
        for roi in rois:
            cells.append((VesselMap.VEIN, roi, MetricName.CRVE))
    if with_avr and VesselMap.ARTERY in maps and VesselMap.VEIN in maps:
        for roi in rois:
            cells.append((VesselMap.ALL, roi, MetricName.AVR))
    return cells


def _units_for(metric: MetricName, scale: PixelScale) -> Units:
    if metric in (MetricName.GLOBAL_CALIBRE, MetricName.LOCAL_CALIBRE,
                  MetricName.CRAE, MetricName.CRVE):
        return Units.UM if scale.known else Units.PX
    return Units.NONE


def measure_all(bundle: SegmentationBundle, rois: list[RoiMask],
                scale: PixelScale, location: Location,
                disc: DiscGeometry | None = None,
                params: MetricParams | None = None,
                robust: bool = True,
                log: ProcessLog | None = None) -> list[MetricRecord]:
    """Compute the full metric matrix for one post-processed bundle.

    Macula-centred images are measured across the whole image only. Absent
    masks drop their map's records entirely; metric failures downgrade to an
    absent record plus a WARN entry when robust is on.
    """
    log = ensure_log(log)
    params = params or MetricParams()
    dims = None
    available: dict[VesselMap, np.ndarray] = {}
    for vmap, mask in ((VesselMap.ALL, bundle.binary_vessel),
                       (VesselMap.ARTERY, bundle.artery),
                       (VesselMap.VEIN, bundle.vein)):
        if mask is not None:
            available[vmap] = np.asarray(mask, dtype=bool)
            dims = available[vmap].shape
    if not available:
        log.warn("no vessel maps available; nothing measured")
        return []

    if location is not Location.DISC:
        rois = [r for r in rois if r.name is RoiName.WHOLE]
        if location is Location.UNKNOWN:
            log.warn("scan location unknown; measuring the whole image only")
    roi_by_name = {r.name: r for r in rois}

    scaled = params.scaled(dims)
    skeletons, graphs = {}, {}
    for vmap, mask in available.items():
        skeletons[vmap] = raster.skeletonize(mask)
        edt = raster.distance_transform(mask)
        graphs[vmap] = decompose_segments(
            skeletons[vmap], disc, edt,
            min_segment_px=scaled.min_segment_px, source_map=vmap)

    records: list[MetricRecord] = []

    def emit(vmap: VesselMap, roi: RoiName, metric: MetricName, compute) -> None:
        units = _units_for(metric, scale)
        try:
            value = compute()
        except SlomorphError as exc:
            if not robust:
                raise
            log.warn(f"{vmap.value} {roi.value} {metric.value}: {exc}")
            value = None
        records.append(MetricRecord(vmap, roi, metric, value, units))

    whole = roi_by_name.get(RoiName.WHOLE)
    for vmap, mask in available.items():
        skeleton = skeletons[vmap]
        graph = graphs[vmap]
        if whole is not None:
            emit(vmap, RoiName.WHOLE, MetricName.FRACTAL_DIMENSION,
                 lambda m=mask: fractal_dimension(m, whole))
            emit(vmap, RoiName.WHOLE, MetricName.VESSEL_DENSITY,
                 lambda m=mask: vessel_density(m, whole, log))
            emit(vmap, RoiName.WHOLE, MetricName.GLOBAL_CALIBRE,
                 lambda m=mask, s=skeleton: global_calibre(m, s, whole, scale))
        for roi in rois:
            emit(vmap, roi.name, MetricName.LOCAL_CALIBRE,
                 lambda g=graph, r=roi: local_calibre(g, r, scale, log))

            def roi_tortuosity(g=graph, r=roi):
                taus = [tortuosity_density(s, scaled).tau for s in g.segments
                        if _segment_roi_points(s, r).any()]
                if not taus:
                    raise NoSegmentsInRoi(f"no segments intersect roi {r.name.value}")
                return float(np.mean(taus))

            emit(vmap, roi.name, MetricName.TORTUOSITY_DENSITY, roi_tortuosity)

    artery_graph = graphs.get(VesselMap.ARTERY)
    vein_graph = graphs.get(VesselMap.VEIN)
    for roi in rois:
        pair = None
        if artery_graph is not None or vein_graph is not None:
            pair = big_vessel_equivalents(artery_graph, vein_graph, roi,
                                          scale, log)
        if artery_graph is not None:
            records.append(MetricRecord(VesselMap.ARTERY, roi.name,
                                        MetricName.CRAE, pair.crae,
                                        _units_for(MetricName.CRAE, scale)))
        if vein_graph is not None:
            records.append(MetricRecord(VesselMap.VEIN, roi.name,
                                        MetricName.CRVE, pair.crve,
                                        _units_for(MetricName.CRVE, scale)))
        if artery_graph is not None and vein_graph is not None:
            if pair.avr is None and pair.crae is not None and pair.crve is not None:
                log.warn(f"avr {roi.name.value}: ratio unavailable")
            records.append(MetricRecord(VesselMap.ALL, roi.name,
                                        MetricName.AVR, pair.avr, Units.NONE))
    return records
