"""Synthetic eye phantoms with exact ground truth, shared across the suite.

Each phantom is a 768x768 disc- or macula-centred scene: dark vessels of
known integer widths radiating from the optic disc, a bright disc, a dark
fovea spot, and the matching label masks.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage import draw as skdraw
from skimage import morphology as skmorph

DIMS = (768, 768)
DISC_RADIUS = 55
BACKGROUND = 205.0
VESSEL_INTENSITY = 50.0
DISC_INTENSITY = 220.0

ARTERY_WIDTHS = (5, 7, 9)
VEIN_WIDTHS = (7, 9, 11)


@dataclass
class Phantom:
    image: np.ndarray
    binary: np.ndarray
    artery: np.ndarray
    vein: np.ndarray
    disc: np.ndarray
    fovea: np.ndarray
    disc_centre: tuple[float, float]  # (x, y)
    disc_radius: float
    fovea_centre: tuple[float, float]
    artery_widths: list[int] = field(default_factory=list)
    vein_widths: list[int] = field(default_factory=list)

    def avod_labels(self) -> np.ndarray:
        labels = np.zeros(DIMS, dtype=np.uint8)
        labels[self.artery] = 1
        labels[self.vein] = 2
        labels[self.disc] = 3
        return labels


def draw_vessel(canvas: np.ndarray, points, width: int) -> np.ndarray:
    """Rasterize a polyline as a distance band of the given pixel width.

    Painting every pixel within width/2 of the path keeps the inscribed
    circle diameter equal to the nominal width at any orientation, so the
    drawn widths serve as calibre ground truth.
    """
    path = np.zeros_like(canvas, dtype=bool)
    for (y0, x0), (y1, x1) in zip(points[:-1], points[1:]):
        rr, cc = skdraw.line(int(round(y0)), int(round(x0)),
                             int(round(y1)), int(round(x1)))
        ok = ((rr >= 0) & (rr < canvas.shape[0])
              & (cc >= 0) & (cc < canvas.shape[1]))
        path[rr[ok], cc[ok]] = True
    band = ndimage.distance_transform_edt(~path) <= width / 2.0
    return canvas | band


def _radial_tree(rng, disc_centre_yx, disc_radius, n_vessels=12,
                 length_range=(280, 360), wobble=12.0):
    """Non-crossing radial vessels, arteries and veins alternating."""
    artery = np.zeros(DIMS, dtype=bool)
    vein = np.zeros(DIMS, dtype=bool)
    artery_widths, vein_widths = [], []
    for k in range(n_vessels):
        angle = 2 * math.pi * k / n_vessels + rng.uniform(-0.1, 0.1)
        is_artery = k % 2 == 0
        width = int(rng.choice(ARTERY_WIDTHS if is_artery else VEIN_WIDTHS))
        length = rng.uniform(*length_range)
        points = []
        for t in np.linspace(0.0, 1.0, 24):
            r = disc_radius - 6 + t * length
            wob = wobble * math.sin(3 * math.pi * t + k)
            points.append((
                disc_centre_yx[0] + r * math.sin(angle) + wob * math.cos(angle),
                disc_centre_yx[1] + r * math.cos(angle) - wob * math.sin(angle),
            ))
        if is_artery:
            artery = draw_vessel(artery, points, width)
            artery_widths.append(width)
        else:
            vein = draw_vessel(vein, points, width)
            vein_widths.append(width)
    return artery, vein, artery_widths, vein_widths


def _render(binary, disc, fovea_mask) -> np.ndarray:
    img = np.full(DIMS, BACKGROUND)
    img[binary] = VESSEL_INTENSITY
    img[disc] = DISC_INTENSITY
    img[fovea_mask] -= 12
    img = ndimage.gaussian_filter(img, 0.8)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _assemble(rng, disc_centre_yx, fovea_centre_yx, **tree_kwargs) -> Phantom:
    artery, vein, widths_a, widths_v = _radial_tree(
        rng, disc_centre_yx, DISC_RADIUS, **tree_kwargs)
    yy, xx = np.mgrid[0:DIMS[0], 0:DIMS[1]]
    disc = np.hypot(yy - disc_centre_yx[0], xx - disc_centre_yx[1]) <= DISC_RADIUS
    fovea = np.hypot(yy - fovea_centre_yx[0], xx - fovea_centre_yx[1]) <= 18
    binary = artery | vein
    return Phantom(
        image=_render(binary, disc, fovea),
        binary=binary, artery=artery, vein=vein, disc=disc, fovea=fovea,
        disc_centre=(disc_centre_yx[1], disc_centre_yx[0]),
        disc_radius=DISC_RADIUS,
        fovea_centre=(fovea_centre_yx[1], fovea_centre_yx[0]),
        artery_widths=widths_a, vein_widths=widths_v,
    )


def make_disc_phantom(seed: int = 0) -> Phantom:
    """Disc-centred right eye: disc mid-image, fovea far image-left."""
    rng = np.random.default_rng(seed)
    return _assemble(rng, disc_centre_yx=(384, 384), fovea_centre_yx=(384, 70))


def make_macula_phantom(seed: int = 0) -> Phantom:
    """Macula-centred right eye: fovea mid-image, disc toward the right edge.

    Vessels stay shorter so the tree fits between the disc and the borders.
    """
    rng = np.random.default_rng(seed)
    return _assemble(rng, disc_centre_yx=(384, 660), fovea_centre_yx=(384, 384),
                     length_range=(180, 240))
