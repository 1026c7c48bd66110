"""Error rate, validity, observed fuzziness and Wilcoxon comparisons."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np

from .conformal import PValuePair, PredictionRegion, prediction_region
from .errors import EmptyInput, LengthMismatch, TooFewPairs, UnpairedResults

Alternative = Literal["greater", "less", "two_sided"]

EXACT_MAX_N = 20


def fmt6(x: float) -> str:
    """Six significant digits, as used in every emitted CSV."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    return f"{x:.6g}"


@dataclass(frozen=True)
class SignificanceGrid:
    levels: tuple[float, ...] = tuple(i / 100 for i in range(1, 100))

    def __post_init__(self):
        lv = tuple(float(e) for e in self.levels)
        if not lv:
            raise EmptyInput("significance grid is empty")
        if any(not 0.0 < e < 1.0 for e in lv):
            raise ValueError("significance levels must lie in (0, 1)")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError("significance levels must be strictly increasing")
        object.__setattr__(self, "levels", lv)

    @classmethod
    def arange(cls, start: float, stop: float, step: float) -> "SignificanceGrid":
        n = int(round((stop - start) / step)) + 1
        return cls(tuple(round(start + i * step, 12) for i in range(n)))

    def __len__(self) -> int:
        return len(self.levels)


@dataclass(frozen=True, eq=False)
class CalibrationCurve:
    epsilons: np.ndarray
    error_rates: np.ndarray

    def __iter__(self):
        return iter(zip(self.epsilons.tolist(), self.error_rates.tolist()))

    def __len__(self) -> int:
        return len(self.epsilons)


@dataclass(frozen=True, eq=False)
class MetricsReport:
    validity: float
    efficiency: float
    curve: CalibrationCurve = field(repr=False)
    scenario: str = ""
    repetition: int = 0


def _check_lengths(a, b) -> int:
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} predictions vs {len(b)} labels")
    if len(a) == 0:
        raise EmptyInput("no test cases")
    return len(a)


def error_rate(regions: Sequence[PredictionRegion], truths: Sequence[int]) -> float:
    m = _check_lengths(regions, truths)
    return sum(1 for r, y in zip(regions, truths) if int(y) not in r) / m


def _true_pvalues(pvals: Sequence[PValuePair], truths: Sequence[int]) -> np.ndarray:
    P = np.asarray(pvals, dtype=np.float64).reshape(-1, 2)
    y = np.asarray(truths, dtype=np.int64)
    return P[np.arange(len(y)), y]


def calibration_curve(pvals: Sequence[PValuePair], truths: Sequence[int],
                      grid: SignificanceGrid = SignificanceGrid()) -> CalibrationCurve:
    """Observed error rate at every grid level.

    The true label falls outside the region exactly when its p-value is
    <= epsilon, which lets the whole curve be computed in one pass.
    """
    _check_lengths(pvals, truths)
    p_true = np.sort(_true_pvalues(pvals, truths))
    eps = np.asarray(grid.levels)
    errors = np.searchsorted(p_true, eps, side="right") / len(p_true)
    return CalibrationCurve(eps, errors)


def calibration_curve_by_regions(pvals, truths, grid: SignificanceGrid = SignificanceGrid()) -> CalibrationCurve:
    """Reference path: build each region explicitly and count errors."""
    _check_lengths(pvals, truths)
    errs = [error_rate([prediction_region(p, e) for p in pvals], truths) for e in grid.levels]
    return CalibrationCurve(np.asarray(grid.levels), np.asarray(errs))


def validity(curve: CalibrationCurve) -> float:
    """Euclidean distance between the observed error curve and the diagonal."""
    if len(curve) == 0:
        raise EmptyInput("empty calibration curve")
    d = np.asarray(curve.error_rates) - np.asarray(curve.epsilons)
    return float(math.sqrt(float(np.dot(d, d))))


def observed_fuzziness(pvals: Sequence[PValuePair], truths: Sequence[int]) -> float:
    """Mean p-value of the wrong label."""
    _check_lengths(pvals, truths)
    P = np.asarray(pvals, dtype=np.float64).reshape(-1, 2)
    y = np.asarray(truths, dtype=np.int64)
    return float(P[np.arange(len(y)), 1 - y].mean())


def evaluate(pvals, truths, grid: SignificanceGrid = SignificanceGrid(),
             scenario: str = "", repetition: int = 0) -> MetricsReport:
    curve = calibration_curve(pvals, truths, grid)
    return MetricsReport(validity(curve), observed_fuzziness(pvals, truths), curve, scenario, repetition)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sv = values[order]
    i = 0
    while i < len(sv):
        j = i
        while j + 1 < len(sv) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _signed_rank_setup(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch("paired samples must have equal length")
    d = a - b
    d = d[d != 0]
    if len(d) < 5:
        raise TooFewPairs(f"{len(d)} non-zero differences; at least 5 are required")
    ranks = average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    return d, ranks, w_plus


def _exact_pvalue(ranks: np.ndarray, w_plus: float, alternative: Alternative) -> float:
    # mean ranks are multiples of 1/2, so doubled ranks are integers and the
    # null distribution of 2*W+ over all 2^n sign flips can be counted exactly
    r2 = np.rint(2 * ranks).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    w2 = int(round(2 * w_plus))
    n_assign = 2 ** len(r2)
    upper = sum(counts[w2:]) / n_assign
    lower = sum(counts[: w2 + 1]) / n_assign
    if alternative == "greater":
        return float(upper)
    if alternative == "less":
        return float(lower)
    return float(min(1.0, 2 * min(upper, lower)))


def _normal_pvalue(ranks: np.ndarray, w_plus: float, alternative: Alternative) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
    sd = math.sqrt(var)

    def sf(z):
        return 0.5 * math.erfc(z / math.sqrt(2.0))

    if alternative == "greater":
        return sf((w_plus - mean - 0.5) / sd)
    if alternative == "less":
        return 1.0 - sf((w_plus - mean + 0.5) / sd)
    z = (abs(w_plus - mean) - 0.5) / sd
    return min(1.0, 2.0 * sf(max(z, 0.0)))


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float], alternative: Alternative = "two_sided",
                         method: Literal["auto", "exact", "normal"] = "auto") -> float:
    """p-value of the paired Wilcoxon signed-rank test on ``a - b``.

    ``alternative="greater"`` tests whether ``a`` tends to exceed ``b``.
    Zero differences are dropped; tied magnitudes get mean ranks. ``auto``
    uses the exact null distribution up to 20 pairs and the normal
    approximation (tie and continuity corrected) beyond.
    """
    if alternative not in ("greater", "less", "two_sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    _, ranks, w_plus = _signed_rank_setup(a, b)
    if method == "exact" or (method == "auto" and len(ranks) <= EXACT_MAX_N):
        return _exact_pvalue(ranks, w_plus, alternative)
    if method in ("normal", "auto"):
        return _normal_pvalue(ranks, w_plus, alternative)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True, eq=False)
class ComparisonMatrix:
    """Cell (row, col) tests whether ``col`` scenario values exceed ``row`` values.

    Diagonal cells are NaN. Degenerate cells (fewer than 5 non-zero paired
    differences) report p = 1.0 and are flagged.
    """

    labels: tuple[str, ...]
    pvalues: np.ndarray
    degenerate: np.ndarray
    alternative: Alternative = "greater"

    def rows(self):
        for i, r in enumerate(self.labels):
            for j, c in enumerate(self.labels):
                yield r, c, float(self.pvalues[i, j]), bool(self.degenerate[i, j])


def comparison_matrix(results: Mapping[str, Sequence[float]],
                      alternative: Alternative = "greater") -> ComparisonMatrix:
    labels = tuple(results)
    lengths = {len(results[k]) for k in labels}
    if len(lengths) > 1:
        raise UnpairedResults(f"scenario result vectors differ in length: {sorted(lengths)}")
    k = len(labels)
    P = np.full((k, k), np.nan)
    flag = np.zeros((k, k), dtype=bool)
    for i, row in enumerate(labels):
        for j, col in enumerate(labels):
            if i == j:
                continue
            try:
                P[i, j] = wilcoxon_signed_rank(results[col], results[row], alternative)
            except TooFewPairs:
                P[i, j] = 1.0
                flag[i, j] = True
    return ComparisonMatrix(labels, P, flag, alternative)
