"""Classical multi-scale ridge filter used as a stand-in segmentation when no
vessel mask is supplied. Produces binary-vessel maps only; artery/vein
classification always requires supplied masks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import raster
from .logs import ProcessLog, ensure_log

DEFAULT_SCALES = (1.5, 2.5, 3.5, 5.0)


@dataclass
class VesselnessParams:
    scales_px: tuple[float, ...] = DEFAULT_SCALES
    beta: float = 0.5
    c: float | None = None  # None -> half the max Frobenius Hessian norm
    polarity: str = "DarkOnBright"
    prob_threshold: float = 0.10

    def __post_init__(self):
        self.scales_px = tuple(float(s) for s in self.scales_px)
        if not self.scales_px:
            raise ValueError("at least one scale required")
        if any(s <= 0 for s in self.scales_px):
            raise ValueError("scales must be positive")
        if list(self.scales_px) != sorted(self.scales_px):
            raise ValueError("scales must be sorted ascending")
        if self.beta <= 0:
            raise ValueError("beta must be positive")


def _hessian(img: np.ndarray, sigma: float):
    # gamma-normalised Gaussian-derivative Hessian (gamma = 2)
    hxx = sigma ** 2 * ndimage.gaussian_filter(img, sigma, order=(0, 2))
    hyy = sigma ** 2 * ndimage.gaussian_filter(img, sigma, order=(2, 0))
    hxy = sigma ** 2 * ndimage.gaussian_filter(img, sigma, order=(1, 1))
    return hxx, hyy, hxy


def frangi_vesselness(img: np.ndarray, params: VesselnessParams | None = None,
                      log: ProcessLog | None = None) -> np.ndarray:
    """Per-pixel maximum over scales of the 2-D ridge response from Hessian
    eigenvalues (|l1| <= |l2|):

        exp(-(l1/l2)^2 / 2 beta^2) * (1 - exp(-(l1^2 + l2^2) / 2 c^2))

    gated to dark-on-bright ridges (l2 > 0) and normalised to [0, 1] by the
    global maximum. A flat image yields an all-zero map with a warning.
    """
    params = params or VesselnessParams()
    log = ensure_log(log)
    img = np.asarray(img, dtype=float)
    if img.max() == img.min():
        log.warn("flat image: vesselness response is all-zero")
        return np.zeros_like(img)

    response = np.zeros_like(img)
    for sigma in params.scales_px:
        hxx, hyy, hxy = _hessian(img, sigma)
        tmp = np.sqrt((hxx - hyy) ** 2 + 4.0 * hxy ** 2)
        mu1 = (hxx + hyy + tmp) / 2.0
        mu2 = (hxx + hyy - tmp) / 2.0
        # order by magnitude: |l1| <= |l2|
        swap = np.abs(mu1) > np.abs(mu2)
        l1 = np.where(swap, mu2, mu1)
        l2 = np.where(swap, mu1, mu2)

        frobenius_sq = l1 ** 2 + l2 ** 2
        c = params.c
        if c is None:
            c = 0.5 * np.sqrt(frobenius_sq.max())
        if c <= 0:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            blobness_sq = np.where(l2 != 0, (l1 / l2) ** 2, 0.0)
        scale_response = (np.exp(-blobness_sq / (2.0 * params.beta ** 2))
                          * (1.0 - np.exp(-frobenius_sq / (2.0 * c ** 2))))
        scale_response[l2 <= 0] = 0.0  # dark-vessel polarity gate
        response = np.maximum(response, scale_response)

    peak = response.max()
    if peak > 0:
        response /= peak
    return response


def segment_fallback(img: np.ndarray, params: VesselnessParams | None = None,
                     log: ProcessLog | None = None) -> np.ndarray:
    """Threshold the vesselness map and apply the standard mask clean-up.

    Marked as fallback provenance in the process log; the pipeline must not
    call this when a mask was supplied upstream.
    """
    params = params or VesselnessParams()
    log = ensure_log(log)
    prob = frangi_vesselness(img, params, log)
    mask = raster.threshold(prob, params.prob_threshold)
    mask = raster.postprocess(mask)
    log.info("binary vessel map produced by fallback vesselness segmentation")
    return mask
