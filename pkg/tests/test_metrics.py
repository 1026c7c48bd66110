import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ndcp.conformal import PValuePair, PredictionRegion, prediction_region
from ndcp.errors import EmptyInput, LengthMismatch, TooFewPairs, UnpairedResults
from ndcp.metrics import (
    CalibrationCurve,
    SignificanceGrid,
    average_ranks,
    calibration_curve,
    calibration_curve_by_regions,
    comparison_matrix,
    error_rate,
    evaluate,
    observed_fuzziness,
    validity,
    wilcoxon_signed_rank,
)


def region(*labels, eps=0.1):
    return PredictionRegion(0 in labels, 1 in labels, eps)


def test_error_rate_examples():
    assert error_rate([region(0), region(0, 1), region(1)], [1, 0, 1]) == pytest.approx(1 / 3)
    assert error_rate([region(0, 1)] * 4, [0, 1, 1, 0]) == 0
    assert error_rate([region()] * 3, [0, 1, 0]) == 1


def test_error_rate_errors():
    with pytest.raises(LengthMismatch):
        error_rate([region(0)], [0, 1])
    with pytest.raises(EmptyInput):
        error_rate([], [])


def test_calibration_all_true_pvalues_one():
    pv = [PValuePair(1.0, 0.3), PValuePair(0.2, 1.0)]
    curve = calibration_curve(pv, [0, 1])
    assert (curve.error_rates == 0).all()
    assert len(curve) == 99


def test_calibration_strict_boundary():
    curve = calibration_curve([PValuePair(0.5, 0.2)], [0])
    for eps, er in curve:
        assert er == (0.0 if eps < 0.5 else 1.0)


def test_calibration_uniform_pvalues():
    rng = np.random.default_rng(0)
    truths = rng.integers(0, 2, 200)
    p = rng.random((200, 2))
    curve = calibration_curve(p, truths)
    assert np.max(np.abs(curve.error_rates - curve.epsilons)) < 0.1


@settings(max_examples=50)
@given(st.lists(st.tuples(st.sampled_from([0.0, 0.05, 0.1, 0.5, 0.95, 1.0]), st.floats(0, 1), st.integers(0, 1)),
                min_size=1, max_size=25))
def test_calibration_fast_path_matches_region_path(cases):
    pv = [PValuePair(a, b) for a, b, _ in cases]
    y = [t for *_, t in cases]
    grid = SignificanceGrid((0.05, 0.1, 0.5, 0.95))
    fast = calibration_curve(pv, y, grid)
    slow = calibration_curve_by_regions(pv, y, grid)
    np.testing.assert_array_equal(fast.error_rates, slow.error_rates)
    assert (np.diff(fast.error_rates) >= 0).all()
    # permutation invariance
    order = np.random.default_rng(len(cases)).permutation(len(cases))
    perm = calibration_curve([pv[i] for i in order], [y[i] for i in order], grid)
    np.testing.assert_array_equal(perm.error_rates, fast.error_rates)
    assert observed_fuzziness([pv[i] for i in order], [y[i] for i in order]) == \
        pytest.approx(observed_fuzziness(pv, y))


def curve(eps, errs):
    return CalibrationCurve(np.asarray(eps), np.asarray(errs))


def test_validity_examples():
    assert validity(curve([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])) == 0
    assert validity(curve([0.05, 0.1], [0.1, 0.2])) == pytest.approx(math.sqrt(0.0025 + 0.01), abs=1e-12)
    assert validity(curve([0.05, 0.1], [0.1, 0.2])) == pytest.approx(0.1118, abs=1e-4)
    assert validity(curve([0.3], [0.42])) == pytest.approx(0.12)
    with pytest.raises(EmptyInput):
        validity(curve([], []))


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(0.01, 0.99), st.floats(0, 1)), min_size=1, max_size=99))
def test_validity_matches_naive_loop(pairs):
    eps, errs = zip(*pairs)
    acc = 0.0
    for e, r in pairs:
        acc += (r - e) ** 2
    assert validity(curve(eps, errs)) == pytest.approx(math.sqrt(acc), rel=1e-12, abs=1e-15)


def test_fuzziness_examples():
    pv = [PValuePair(0.2, 0.9), PValuePair(0.7, 0.4)]
    assert observed_fuzziness(pv, [1, 0]) == pytest.approx(0.3)
    assert observed_fuzziness([PValuePair(0.0, 0.6), PValuePair(0.8, 0.0)], [1, 0]) == 0
    assert observed_fuzziness([PValuePair(1.0, 0.6), PValuePair(0.8, 1.0)], [1, 0]) == 1
    with pytest.raises(LengthMismatch):
        observed_fuzziness(pv, [1])


def test_evaluate_combines():
    pv = [PValuePair(0.9, 0.05), PValuePair(0.2, 0.6)]
    rep = evaluate(pv, [0, 1], SignificanceGrid((0.1, 0.5)), "S", 3)
    assert rep.efficiency == pytest.approx((0.05 + 0.2) / 2)
    assert rep.curve.error_rates.tolist() == [0.0, 0.0]
    assert rep.validity == pytest.approx(math.sqrt(0.01 + 0.25))
    assert (rep.scenario, rep.repetition) == ("S", 3)


def test_grid():
    g = SignificanceGrid()
    assert g.levels[0] == 0.01 and g.levels[-1] == 0.99 and len(g) == 99
    assert SignificanceGrid.arange(0.05, 0.5, 0.05).levels[-1] == 0.5
    with pytest.raises(ValueError):
        SignificanceGrid((0.2, 0.1))
    with pytest.raises(ValueError):
        SignificanceGrid((0.0, 0.5))


# --- Wilcoxon ------------------------------------------------------------


def enumerate_pvalue(d, alternative):
    """Brute force over all 2^n sign assignments."""
    d = np.asarray(d, float)
    d = d[d != 0]
    ranks = stats.rankdata(np.abs(d))
    w = ranks[d > 0].sum()
    sums = [sum(r for r, s in zip(ranks, signs) if s) for signs in itertools.product([0, 1], repeat=len(d))]
    sums = np.array(sums)
    up = np.mean(sums >= w - 1e-9)
    lo = np.mean(sums <= w + 1e-9)
    return {"greater": up, "less": lo, "two_sided": min(1.0, 2 * min(up, lo))}[alternative]


def test_all_positive_five():
    assert wilcoxon_signed_rank([1, 2, 3, 4, 5], [0] * 5, "greater") == 0.03125
    assert enumerate_pvalue([1, 2, 3, 4, 5], "greater") == 0.03125


def test_all_positive_ten_is_one_in_1024():
    a = np.arange(10) + 5.0
    assert wilcoxon_signed_rank(a, np.zeros(10), "greater") == pytest.approx(1 / 1024, abs=1e-15)


def test_too_few_pairs():
    with pytest.raises(TooFewPairs):
        wilcoxon_signed_rank([1, 2, 3], [1, 2, 3])
    with pytest.raises(TooFewPairs):
        wilcoxon_signed_rank([1, 2, 3, 4, 5, 6], [1, 2, 3, 4, 0, 0])


@pytest.mark.parametrize("alternative", ["greater", "less", "two_sided"])
def test_exact_matches_brute_force_with_ties_and_zeros(alternative):
    rng = np.random.default_rng(42)
    for _ in range(40):
        n = int(rng.integers(5, 13))
        d = rng.integers(-4, 5, n).astype(float)
        if np.count_nonzero(d) < 5:
            continue
        got = wilcoxon_signed_rank(d, np.zeros(n), alternative, method="exact")
        assert got == pytest.approx(enumerate_pvalue(d, alternative), abs=1e-12)


@pytest.mark.parametrize("alternative", ["greater", "less", "two_sided"])
def test_normal_branch_matches_scipy(alternative):
    rng = np.random.default_rng(7)
    for _ in range(20):
        a = rng.normal(size=40).round(1)
        b = rng.normal(0.2, size=40).round(1)
        ours = wilcoxon_signed_rank(a, b, alternative, method="normal")
        ref = stats.wilcoxon(a, b, alternative=alternative.replace("_", "-"),
                             zero_method="wilcox", correction=True, method="approx").pvalue
        assert ours == pytest.approx(ref, rel=1e-9)


def test_exact_vs_normal_at_25_against_monte_carlo():
    rng = np.random.default_rng(3)
    d = rng.normal(0.3, 1, 25)
    normal = wilcoxon_signed_rank(d, np.zeros(25), "greater")
    ranks = average_ranks(np.abs(d))
    w = ranks[d > 0].sum()
    flips = rng.integers(0, 2, size=(200_000, 25)).astype(bool)
    mc = np.mean((flips * ranks).sum(axis=1) >= w)
    assert abs(normal - mc) < 0.02
    assert abs(wilcoxon_signed_rank(d, np.zeros(25), "greater", method="exact") - normal) < 0.02


def test_average_ranks():
    assert average_ranks(np.array([3.0, 1.0, 3.0, 2.0])).tolist() == [3.5, 1.0, 3.5, 2.0]


def test_comparison_matrix():
    base = np.linspace(0.1, 0.2, 10)
    res = {"A": base + 0.5, "B": base, "C": base.copy()}
    m = comparison_matrix(res, "greater")
    assert m.labels == ("A", "B", "C")
    assert np.isnan(np.diag(m.pvalues)).all()
    # cell (B, A): does A exceed B?
    assert m.pvalues[1, 0] == pytest.approx(1 / 1024)
    assert m.pvalues[0, 1] == pytest.approx(1.0)
    assert m.pvalues[1, 2] == 1.0 and m.degenerate[1, 2]
    assert len(list(m.rows())) == 9


def test_comparison_matrix_unpaired():
    with pytest.raises(UnpairedResults):
        comparison_matrix({"A": [1, 2, 3, 4, 5], "B": [1, 2]})
