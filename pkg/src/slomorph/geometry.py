"""Anatomical geometry from masks: fovea coordinate, optic-disc ellipse,
zone B/C annuli, laterality and scan-location inference."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from . import raster
from .errors import DegenerateFit, EmptyMask
from .ingest import Laterality, Location
from .logs import ProcessLog, ensure_log

MIN_DISC_AREA = 500  # px at the 768 base resolution


class RoiName(str, Enum):
    WHOLE = "whole"
    ZONE_B = "zoneB"
    ZONE_C = "zoneC"


@dataclass(frozen=True)
class FoveaPoint:
    x: float
    y: float


@dataclass(frozen=True)
class DiscGeometry:
    centre_x: float = 0.0
    centre_y: float = 0.0
    diameter_D: float = 0.0   # (major + minor) / 2
    major_axis: float = 0.0   # full axis length
    minor_axis: float = 0.0
    present: bool = False
    orientation_deg: float = 0.0  # extra field, only used for rendering


@dataclass
class RoiMask:
    name: RoiName
    mask: np.ndarray


def fovea_centroid(fovea_mask: np.ndarray,
                   log: ProcessLog | None = None) -> FoveaPoint:
    """Arithmetic mean of foreground pixel coordinates.

    A mask with several components still yields the union centroid, with a
    warning; an empty mask raises EmptyMask.
    """
    log = ensure_log(log)
    mask = np.asarray(fovea_mask, dtype=bool)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptyMask("fovea mask is empty")
    _, n_components = ndimage.label(mask, structure=raster.EIGHT_CONNECTED)
    if n_components > 1:
        log.warn(f"fovea mask has {n_components} components; using union centroid")
    return FoveaPoint(x=float(xs.mean()), y=float(ys.mean()))


def _largest_component(mask: np.ndarray) -> tuple[np.ndarray, int]:
    labels, count = ndimage.label(mask, structure=raster.EIGHT_CONNECTED)
    if count == 0:
        return np.zeros_like(mask, dtype=bool), 0
    areas = np.bincount(labels.ravel())
    areas[0] = 0
    best = int(areas.argmax())
    return labels == best, int(areas[best])


def _boundary_pixels(component: np.ndarray) -> np.ndarray:
    eroded = ndimage.binary_erosion(component, structure=raster.EIGHT_CONNECTED,
                                    border_value=0)
    return component & ~eroded


def _fit_conic(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Direct least-squares conic fit with the ellipse constraint
    (numerically stable partitioned form). Returns [A, B, C, D, E, F]."""
    x = xs - xs.mean()
    y = ys - ys.mean()
    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError as exc:
        raise DegenerateFit("boundary points are collinear") from exc
    m = s1 + s2 @ t
    # premultiply by C1^-1 for the 4AC - B^2 = 1 constraint
    m = np.array([m[2] / 2.0, -m[1], m[0] / 2.0])
    eigval, eigvec = np.linalg.eig(m)
    a1 = None
    for k in range(3):
        if abs(eigval[k].imag) > 1e-9:
            continue
        vec = np.real(eigvec[:, k])
        if 4.0 * vec[0] * vec[2] - vec[1] ** 2 > 0:
            a1 = vec
            break
    if a1 is None:
        raise DegenerateFit("no elliptical solution")
    a2 = t @ a1
    coeffs = np.concatenate([a1, a2])
    # undo the centroid shift
    cx, cy = xs.mean(), ys.mean()
    a, b, c, d, e, f = coeffs
    d_full = d - 2 * a * cx - b * cy
    e_full = e - 2 * c * cy - b * cx
    f_full = f + a * cx * cx + b * cx * cy + c * cy * cy - d * cx - e * cy
    return np.array([a, b, c, d_full, e_full, f_full])


def _conic_to_ellipse(coeffs: np.ndarray) -> tuple[float, float, float, float, float]:
    """Conic [A..F] -> (centre_x, centre_y, semi_major, semi_minor, angle_deg)."""
    a, b, c, d, e, f = coeffs
    den = b * b - 4 * a * c
    if den >= 0:
        raise DegenerateFit("conic is not an ellipse")
    cx = (2 * c * d - b * e) / den
    cy = (2 * a * e - b * d) / den
    # translate to the centre: A u^2 + B uv + C v^2 = -Q(centre)
    q0 = a * cx * cx + b * cx * cy + c * cy * cy + d * cx + e * cy + f
    quad = np.array([[a, b / 2.0], [b / 2.0, c]])
    eigval, eigvec = np.linalg.eigh(quad)
    axes_sq = -q0 / eigval
    if np.any(axes_sq <= 0):
        raise DegenerateFit("degenerate axis lengths")
    semi = np.sqrt(axes_sq)
    major_idx = int(semi.argmax())
    angle = math.degrees(math.atan2(eigvec[1, major_idx], eigvec[0, major_idx]))
    return float(cx), float(cy), float(semi.max()), float(semi.min()), angle % 180.0


def fit_disc_ellipse(disc_mask: np.ndarray,
                     log: ProcessLog | None = None) -> DiscGeometry:
    """Model the optic disc as an ellipse fitted to the boundary of the
    largest mask component; D is the mean of the full major and minor axes.

    Masks that are empty, too small, or whose boundary defeats the fit return
    present=False with a warning rather than raising, so the pipeline can
    skip zones gracefully.
    """
    log = ensure_log(log)
    mask = np.asarray(disc_mask, dtype=bool)
    min_area = raster.scale_area(MIN_DISC_AREA, mask.shape)
    component, area = _largest_component(mask)
    if area < min_area:
        if area:
            log.warn(f"disc component area {area} px below minimum {min_area} px")
        return DiscGeometry(present=False)
    ys, xs = np.nonzero(_boundary_pixels(component))
    try:
        coeffs = _fit_conic(xs.astype(float), ys.astype(float))
        cx, cy, semi_major, semi_minor, angle = _conic_to_ellipse(coeffs)
    except DegenerateFit as exc:
        log.warn(f"disc ellipse fit failed: {exc}; zones will be skipped")
        return DiscGeometry(present=False)
    major, minor = 2.0 * semi_major, 2.0 * semi_minor
    return DiscGeometry(
        centre_x=cx, centre_y=cy, diameter_D=(major + minor) / 2.0,
        major_axis=major, minor_axis=minor, present=True,
        orientation_deg=angle,
    )


def disc_interior_mask(disc: DiscGeometry, dims: tuple[int, int]) -> np.ndarray:
    """Mean-radius circle (radius D/2 about the fitted centre), the margin
    approximation used for zone construction and skeleton removal."""
    if not disc.present:
        return np.zeros(dims, dtype=bool)
    yy, xx = np.mgrid[0:dims[0], 0:dims[1]]
    dist = np.hypot(yy - disc.centre_y, xx - disc.centre_x)
    return dist < disc.diameter_D / 2.0


def build_zones(disc: DiscGeometry, dims: tuple[int, int]) -> list[RoiMask]:
    """Whole image plus the two annuli around the disc.

    With r = D/2 measured from the disc centre: zone B covers radii
    [r + 0.5D, r + 1.0D], zone C covers [r, r + 2.0D]; both are clipped by
    the image bounds and exclude the disc interior by construction.
    """
    whole = RoiMask(RoiName.WHOLE, np.ones(dims, dtype=bool))
    if not disc.present:
        return [whole]
    d = disc.diameter_D
    r = d / 2.0
    yy, xx = np.mgrid[0:dims[0], 0:dims[1]]
    dist = np.hypot(yy - disc.centre_y, xx - disc.centre_x)
    zone_b = (dist >= r + 0.5 * d) & (dist <= r + 1.0 * d)
    zone_c = (dist >= r) & (dist <= r + 2.0 * d)
    return [whole, RoiMask(RoiName.ZONE_B, zone_b), RoiMask(RoiName.ZONE_C, zone_c)]


def infer_laterality(fovea: FoveaPoint | None, disc: DiscGeometry,
                     log: ProcessLog | None = None) -> Laterality:
    """Right eye iff the disc centre lies image-right of the fovea
    (standard non-mirrored en face display convention)."""
    if fovea is None or not disc.present:
        ensure_log(log).warn("laterality not inferred: fovea or disc missing")
        return Laterality.UNKNOWN
    return Laterality.RIGHT if disc.centre_x > fovea.x else Laterality.LEFT


def infer_location(fovea: FoveaPoint | None, disc: DiscGeometry,
                   dims: tuple[int, int],
                   log: ProcessLog | None = None) -> Location:
    """The landmark nearer the image centre names the scan location.

    With a single landmark it must lie within min(dims)/4 of the centre to
    decide; equidistant landmarks return Unknown rather than guessing.
    """
    log = ensure_log(log)
    cy, cx = (dims[0] - 1) / 2.0, (dims[1] - 1) / 2.0
    d_fovea = math.hypot(fovea.x - cx, fovea.y - cy) if fovea is not None else None
    d_disc = (math.hypot(disc.centre_x - cx, disc.centre_y - cy)
              if disc.present else None)
    if d_fovea is None and d_disc is None:
        log.warn("location not inferred: no landmarks detected")
        return Location.UNKNOWN
    if d_fovea is not None and d_disc is not None:
        if d_fovea == d_disc:
            log.warn("location not inferred: landmarks equidistant from centre")
            return Location.UNKNOWN
        return Location.MACULA if d_fovea < d_disc else Location.DISC
    near = min(dims) / 4.0
    if d_disc is not None:
        if d_disc <= near:
            return Location.DISC
        log.warn("location not inferred: lone disc is far from the image centre")
        return Location.UNKNOWN
    if d_fovea <= near:
        return Location.MACULA
    log.warn("location not inferred: lone fovea is far from the image centre")
    return Location.UNKNOWN
