"""Core raster primitives: thresholding, component filtering, gap bridging,
thinning, exact Euclidean distance transform and resizing.

All functions are pure on value inputs and safe for concurrent calls. Masks
are boolean numpy arrays; intensity and probability grids are numeric arrays.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage
from skimage import draw as skdraw
from skimage import morphology as skmorph
from skimage import transform as sktransform

from .logs import ProcessLog, ensure_log

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)

# Post-processing defaults, defined at the 768x768 working resolution.
# Area-like parameters scale by (min_dim/768)^2, length-like ones linearly.
BASE_RESOLUTION = 768
DEFAULT_MIN_AREA = 150
DEFAULT_MAX_GAP = 10
DEFAULT_MAX_ANGLE = 30.0


def scale_length(value: float, dims: tuple[int, int]) -> int:
    return max(1, round(value * min(dims) / BASE_RESOLUTION))

def scale_area(value: float, dims: tuple[int, int]) -> int:
    return max(1, round(value * (min(dims) / BASE_RESOLUTION) ** 2))


def threshold(prob: np.ndarray, t: float) -> np.ndarray:
    """Binary mask of prob >= t (boundary inclusive)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold {t} outside [0, 1]")
    return np.asarray(prob) >= t


def remove_small_components(mask: np.ndarray, min_area_px: int) -> np.ndarray:
    """Drop 8-connected components with area below min_area_px. Never adds."""
    if min_area_px < 0:
        raise ValueError("min_area_px must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if min_area_px == 0 or not mask.any():
        return mask.copy()
    labels, count = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if count == 0:
        return mask.copy()
    areas = np.bincount(labels.ravel())
    keep = areas >= min_area_px
    keep[0] = False
    return keep[labels]


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance to the nearest background pixel; 0 outside."""
    return ndimage.distance_transform_edt(np.asarray(mask, dtype=bool))


def _neighbour_counts(skel: np.ndarray) -> np.ndarray:
    kernel = EIGHT_CONNECTED.copy()
    kernel[1, 1] = 0
    return ndimage.convolve(skel.astype(np.uint8), kernel, mode="constant")


def _remove_staircases(skel: np.ndarray) -> np.ndarray:
    """Sequentially delete corner pixels (exactly two orthogonally-adjacent
    neighbours); the neighbours stay 8-connected through their diagonal, so
    connectivity and endpoints are preserved."""
    skel = skel.copy()
    candidates = np.argwhere(skel)
    height, width = skel.shape
    for y, x in candidates:
        if not skel[y, x]:
            continue
        neighbours = []
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == dx == 0:
                    continue
                yy, xx = y + dy, x + dx
                if 0 <= yy < height and 0 <= xx < width and skel[yy, xx]:
                    neighbours.append((dy, dx))
        if len(neighbours) != 2:
            continue
        (dy1, dx1), (dy2, dx2) = neighbours
        # one vertical, one horizontal step => an L-corner
        if dy1 * dx1 == 0 and dy2 * dx2 == 0 and (dy1 == 0) != (dy2 == 0):
            skel[y, x] = False
    return skel


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Two-subiteration parallel thinning to 1 px width plus a
    staircase-removal pass. Skeleton is a subset of the mask and keeps the
    mask's 8-connected component count."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros_like(mask)
    skel = skmorph.skeletonize(mask, method="zhang")
    return _remove_staircases(skel)


def _endpoint_tangent(skel: np.ndarray, start: tuple[int, int],
                      depth: int = 7) -> tuple[float, float]:
    """Unit direction pointing off the skeleton end, estimated by walking
    up to `depth` pixels inward from the endpoint."""
    height, width = skel.shape
    path = [start]
    previous = None
    current = start
    for _ in range(depth):
        nxt = None
        y, x = current
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == dx == 0:
                    continue
                yy, xx = y + dy, x + dx
                if (0 <= yy < height and 0 <= xx < width and skel[yy, xx]
                        and (yy, xx) != previous and (yy, xx) not in path):
                    nxt = (yy, xx)
                    break
            if nxt:
                break
        if nxt is None:
            break
        previous = current
        current = nxt
        path.append(current)
    if len(path) < 2:
        return (0.0, 0.0)
    dy = path[0][0] - path[-1][0]
    dx = path[0][1] - path[-1][1]
    norm = math.hypot(dy, dx)
    return (dy / norm, dx / norm)


def _axis_angle_deg(v1: tuple[float, float], v2: tuple[float, float]) -> float:
    """Angle between undirected axes in [0, 90]."""
    dot = abs(v1[0] * v2[0] + v1[1] * v2[1])
    return math.degrees(math.acos(min(1.0, dot)))


def bridge_gaps(mask: np.ndarray, max_gap_px: int,
                max_angle_deg: float = DEFAULT_MAX_ANGLE) -> np.ndarray:
    """Join endpoints of distinct components that are within max_gap_px and
    whose local vessel axes agree within max_angle_deg.

    The connecting stroke is a straight segment whose width is the rounded
    mean of the two endpoint calibres. Output is a superset of the input.
    """
    if max_gap_px < 0:
        raise ValueError("max_gap_px must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if max_gap_px == 0 or not mask.any():
        return mask.copy()

    labels, count = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if count < 2:
        return mask.copy()
    skel = skeletonize(mask)
    counts = _neighbour_counts(skel)
    endpoints = np.argwhere(skel & (counts == 1))
    if len(endpoints) < 2:
        return mask.copy()
    edt = distance_transform(mask)

    tangents = [_endpoint_tangent(skel, tuple(pt)) for pt in endpoints]
    calibres = [max(1.0, 2.0 * edt[pt[0], pt[1]] - 1.0) for pt in endpoints]

    out = mask.copy()
    joined: set[tuple[int, int]] = set()
    for i in range(len(endpoints)):
        for j in range(i + 1, len(endpoints)):
            yi, xi = endpoints[i]
            yj, xj = endpoints[j]
            if labels[yi, xi] == labels[yj, xj]:
                continue
            if math.hypot(yi - yj, xi - xj) > max_gap_px:
                continue
            if _axis_angle_deg(tangents[i], tangents[j]) > max_angle_deg:
                continue
            key = (i, j)
            if key in joined:
                continue
            joined.add(key)
            width = int(round((calibres[i] + calibres[j]) / 2.0))
            stroke = np.zeros_like(mask)
            rr, cc = skdraw.line(yi, xi, yj, xj)
            stroke[rr, cc] = True
            radius = max(0, (width - 1) // 2)
            if radius:
                stroke = ndimage.binary_dilation(stroke, skmorph.disk(radius))
            out |= stroke
    return out


def resize(array: np.ndarray, target: tuple[int, int], is_mask: bool = False,
           log: ProcessLog | None = None) -> np.ndarray:
    """Resize to target (rows, cols): bilinear for intensity/probability
    grids, nearest-neighbour for masks. Identity targets return a copy."""
    target = tuple(int(v) for v in target)
    if min(target) < 32:
        raise ValueError(f"target dims {target} below the 32 px minimum")
    array = np.asarray(array)
    if array.shape[:2] == target:
        return array.copy()
    if array.shape[0] != array.shape[1]:
        ensure_log(log).warn(
            f"non-square input {array.shape[:2]} resized to {target}"
        )
    if is_mask or array.dtype == bool:
        # explicit index mapping keeps integer upscales exact block replication
        rows = np.minimum(
            (np.floor((np.arange(target[0]) + 0.5) * array.shape[0] / target[0])
             ).astype(int), array.shape[0] - 1)
        cols = np.minimum(
            (np.floor((np.arange(target[1]) + 0.5) * array.shape[1] / target[1])
             ).astype(int), array.shape[1] - 1)
        return array[np.ix_(rows, cols)]
    resized = sktransform.resize(array.astype(float), target, order=1,
                                 preserve_range=True, anti_aliasing=False)
    if np.issubdtype(array.dtype, np.integer):
        info = np.iinfo(array.dtype)
        return np.clip(np.rint(resized), info.min, info.max).astype(array.dtype)
    return resized.astype(array.dtype)


def postprocess(mask: np.ndarray, min_area_px: int | None = None,
                max_gap_px: int | None = None,
                max_angle_deg: float = DEFAULT_MAX_ANGLE) -> np.ndarray:
    """Standard mask clean-up: small-region removal then gap bridging,
    with defaults scaled from the 768 base resolution."""
    dims = mask.shape
    if min_area_px is None:
        min_area_px = scale_area(DEFAULT_MIN_AREA, dims)
    if max_gap_px is None:
        max_gap_px = scale_length(DEFAULT_MAX_GAP, dims)
    cleaned = remove_small_components(mask, min_area_px)
    return bridge_gaps(cleaned, max_gap_px, max_angle_deg)
