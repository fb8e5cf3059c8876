"""Agreement and reproducibility statistics for paired measurement series.

Implements the evaluation battery used for repeated-capture analysis:

- mean absolute error,
- Pearson and Spearman (average-rank) correlation,
- ICC(3,1): two-way mixed effects, consistency, single rater/measurement,
  from the ANOVA decomposition ``(MS_R - MS_E) / (MS_R + (k - 1) MS_E)``
  with k = 2 raters,
- Bland-Altman mean difference with 1.96-sd limits of agreement,
- eye-level measurement noise: per eye, the within-eye standard deviation as
  a percentage of the between-eye standard deviation of per-eye means,
- Dice similarity and rank-based (Mann-Whitney) AUC for masks.

Everything is formula-level numpy; the test-suite oracle recomputes each
quantity through an independent route.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegeneratePopulation,
    DimMismatch,
    SingleClass,
    ZeroVariance,
)
from .logs import ProcessLog, ensure_log


@dataclass
class PairedSeries:
    """Two measurement series of the same n >= 2 subjects, optionally tagged
    with eye identifiers so eye-level noise can be computed."""

    a: np.ndarray
    b: np.ndarray
    eye_ids: list | None = None

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.a.shape != self.b.shape or self.a.ndim != 1:
            raise DimMismatch("paired series must be equal-length vectors")
        if len(self.a) < 2:
            raise ValueError("need at least two pairs")
        if np.isnan(self.a).any() or np.isnan(self.b).any():
            raise ValueError("missing values must be dropped before pairing")
        if self.eye_ids is not None and len(self.eye_ids) != len(self.a):
            raise ValueError("eye_ids length mismatch")


@dataclass
class AgreementReport:
    mae: float
    pearson: float | None
    spearman: float | None
    icc_3_1: float | None
    bland_altman: tuple[float, float, float]  # (mean_diff, loa_low, loa_high)
    lambda_per_eye: list[float] = field(default_factory=list)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank (midranks)."""
    order = np.argsort(values, kind="mergesort")
    sorted_values = values[order]
    _, inverse, counts = np.unique(sorted_values, return_inverse=True,
                                   return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts
    group_rank = (starts + ends - 1) / 2.0 + 1.0
    ranks = np.empty(len(values), dtype=float)
    ranks[order] = group_rank[inverse]
    return ranks


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da ** 2).sum() * (db ** 2).sum())
    if denom == 0:
        raise ZeroVariance("a correlation needs non-zero variance")
    return float((da * db).sum() / denom)


def _icc_3_1(a: np.ndarray, b: np.ndarray) -> float:
    """Two-way mixed, consistency, single measurement, k = 2 raters."""
    data = np.column_stack([a, b])
    n, k = data.shape
    grand = data.mean()
    row_means = data.mean(axis=1)
    col_means = data.mean(axis=0)
    ss_total = ((data - grand) ** 2).sum()
    ss_rows = k * ((row_means - grand) ** 2).sum()
    ss_cols = n * ((col_means - grand) ** 2).sum()
    ss_error = ss_total - ss_rows - ss_cols
    ms_rows = ss_rows / (n - 1)
    ms_error = ss_error / ((n - 1) * (k - 1))
    denom = ms_rows + (k - 1) * ms_error
    if denom == 0:
        raise ZeroVariance("ICC undefined for a constant table")
    return float((ms_rows - ms_error) / denom)


def agreement(paired: PairedSeries,
              log: ProcessLog | None = None) -> AgreementReport:
    """Full agreement battery for one paired series.

    Zero variance in either series drops the correlation fields (None) while
    MAE and Bland-Altman are still reported. When eye identifiers are given,
    the eye-level noise percentages are attached.
    """
    log = ensure_log(log)
    a, b = paired.a, paired.b
    mae = float(np.abs(a - b).mean())

    try:
        pearson = _pearson(a, b)
        spearman = _pearson(_average_ranks(a), _average_ranks(b))
        icc = _icc_3_1(a, b)
    except ZeroVariance as exc:
        log.warn(f"correlations unavailable: {exc}")
        pearson = spearman = icc = None

    diff = a - b
    mean_diff = float(diff.mean())
    sd_diff = float(diff.std(ddof=1))
    bland_altman = (mean_diff, mean_diff - 1.96 * sd_diff,
                    mean_diff + 1.96 * sd_diff)

    lambdas: list[float] = []
    if paired.eye_ids is not None:
        groups: dict = {}
        for eye, va, vb in zip(paired.eye_ids, a, b):
            groups.setdefault(eye, []).extend([float(va), float(vb)])
        try:
            lambdas = lambda_noise(groups)
        except DegeneratePopulation as exc:
            log.warn(f"eye-level noise unavailable: {exc}")

    return AgreementReport(mae=mae, pearson=pearson, spearman=spearman,
                           icc_3_1=icc, bland_altman=bland_altman,
                           lambda_per_eye=lambdas)


def lambda_noise(per_eye_values: dict) -> list[float]:
    """Eye-level measurement noise, one percentage per eye.

    lambda = 100 * sd(within-eye values) / sd(between-eye per-eye means).
    Needs >= 2 measurements per eye and >= 2 eyes; a zero between-eye sd
    raises DegeneratePopulation.
    """
    if len(per_eye_values) < 2:
        raise DegeneratePopulation("need at least two eyes")
    eyes = list(per_eye_values)
    for eye in eyes:
        if len(per_eye_values[eye]) < 2:
            raise ValueError(f"eye {eye!r} has fewer than two measurements")
    means = np.array([np.mean(per_eye_values[eye]) for eye in eyes])
    between_sd = float(means.std(ddof=1))
    if between_sd == 0:
        raise DegeneratePopulation("between-eye standard deviation is zero")
    out = []
    for eye in eyes:
        within_sd = float(np.std(per_eye_values[eye], ddof=1))
        out.append(100.0 * within_sd / between_sd)
    return out


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """Dice similarity 2|a&b| / (|a| + |b|); two empty masks count as 1."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def auc(prob: np.ndarray, truth: np.ndarray) -> float:
    """Rank-based (Mann-Whitney) AUC over pixels with midrank tie handling.

    Invariant under strictly monotone transforms of the probability grid;
    requires both classes present in the truth mask.
    """
    prob = np.asarray(prob, dtype=float).ravel()
    truth = np.asarray(truth, dtype=bool).ravel()
    if prob.shape != truth.shape:
        raise DimMismatch("probability grid and truth mask differ in size")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("truth mask must contain both classes")
    ranks = _average_ranks(prob)
    rank_sum = float(ranks[truth].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
