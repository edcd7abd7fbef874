import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newsdiet.changepoint import (
    ChangeRegion,
    SegmentedFit,
    aggregate_regions,
    fit_segments,
    information_criterion,
    select_model,
)
from newsdiet.synth import TrendSpec

T = np.arange(48.0)


def _series(y, t=None):
    t = np.arange(len(y), dtype=float) if t is None else t
    return np.column_stack([t, y])


def _noisy_envelope(seed, breakpoints=(13.0, 39.0), slopes=(-2.0, 1.5, -3.0), rel_noise=0.05):
    trend = TrendSpec(breakpoints=breakpoints, slopes=slopes, start_level=100.0)
    y = trend.envelope(T)
    rng = np.random.default_rng(seed)
    return _series(y + rng.normal(0, rel_noise * np.ptp(y), len(T)))


def test_noiseless_kink():
    t = np.arange(21.0)
    y = np.where(t <= 10, t, 20 - t)
    fit = fit_segments(_series(y, t), 1)
    assert fit.breakpoints[0] == pytest.approx(10.0, abs=0.01)
    assert fit.sse <= 1e-12
    assert fit.slopes == pytest.approx((1.0, -1.0))


def test_line_zero_breakpoints_is_ols():
    rng = np.random.default_rng(0)
    y = 3.0 - 0.5 * T + rng.normal(0, 1, len(T))
    fit = fit_segments(_series(y), 0)
    slope, intercept = np.polyfit(T, y, 1)
    assert fit.slopes[0] == pytest.approx(slope, rel=1e-10)
    assert fit.intercepts[0] == pytest.approx(intercept, rel=1e-10)
    exact = fit_segments(_series(2.0 + 0.25 * T), 0)
    assert exact.sse <= 1e-12


def test_grid_search_matches_brute_force():
    s = _noisy_envelope(3)
    fit = fit_segments(s, 2)
    # brute force over the month grid with the same min-segment rule
    best = np.inf
    for b1 in np.arange(3.0, 45.0):
        for b2 in np.arange(b1 + 3, 45.0):
            X = np.column_stack([np.ones_like(T), T, np.maximum(T - b1, 0), np.maximum(T - b2, 0)])
            r = s[:, 1] - X @ np.linalg.lstsq(X, s[:, 1], rcond=None)[0]
            best = min(best, r @ r)
    assert fit.sse <= best * (1 + 1e-6)


def test_planted_kinks_recovered():
    hits = 0
    for seed in range(20):
        fit = fit_segments(_noisy_envelope(seed), 2)
        hits += np.all(np.abs(np.array(fit.breakpoints) - [13.0, 39.0]) <= 1.0)
    assert hits >= 18


def test_select_one_kink():
    t = np.arange(30.0)
    y = np.where(t <= 12, 2 * t, 24 - 0.5 * (t - 12))
    y = y + np.random.default_rng(1).normal(0, 0.05, len(t))
    assert select_model(_series(y, t)).n_breakpoints == 1


def test_select_down_up_down():
    assert select_model(_noisy_envelope(11)).n_breakpoints == 2


def test_straight_line_usually_zero():
    zero = 0
    for seed in range(40):
        rng = np.random.default_rng(1000 + seed)
        y = 5 + 0.3 * T
        y = y + rng.normal(0, 0.1 * np.ptp(y), len(T))
        zero += select_model(_series(y)).n_breakpoints == 0
    assert zero >= 36


def test_bad_inputs():
    with pytest.raises(ValueError, match="too short"):
        fit_segments(_series(np.arange(5.0)), 1)
    with pytest.raises(ValueError):
        fit_segments(_series(np.arange(20.0)), -1)
    with pytest.raises(ValueError):
        fit_segments(_series(np.arange(20.0), np.r_[np.arange(19.0), 5.0]), 1)
    with pytest.raises(ValueError):
        fit_segments(_series(np.r_[np.arange(19.0), np.nan]), 1)


def test_select_lowers_order_for_short_series():
    fit = select_model(_series(np.abs(np.arange(10.0) - 5)), max_breakpoints=3)
    assert fit.n_breakpoints <= 2


def test_information_criterion():
    assert information_criterion(10.0, 48, 4) == pytest.approx(48 * np.log(10 / 48) + 4 * np.log(48))
    assert information_criterion(10.0, 48, 4, kind="aic") == pytest.approx(48 * np.log(10 / 48) + 8)
    assert information_criterion(0.0, 48, 4, floor=1e-6) > -np.inf


def test_fit_json_shape():
    d = fit_segments(_noisy_envelope(0), 2).to_dict()
    assert set(d) == {"breakpoints", "segments", "sse", "bic", "n_points"}
    assert len(d["segments"]) == 3 and d["segments"][0]["start"] == 0.0 and d["segments"][-1]["end"] == 47.0


# --- properties ------------------------------------------------------------------------

series_values = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=16, max_size=30)


@settings(max_examples=25, deadline=None)
@given(series_values)
def test_continuity_and_monotone_sse(values):
    s = _series(np.array(values))
    fits = [fit_segments(s, n) for n in range(3)]
    for f in fits:
        assert f.continuity_gap() <= 1e-9 * max(1.0, np.abs(values).max())
        assert all(s[0, 0] < b < s[-1, 0] for b in f.breakpoints)
    scale = max(1.0, float(np.sum(np.square(values))))
    for a, b in zip(fits, fits[1:]):
        assert b.sse <= a.sse + 1e-9 * scale


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(-1e4, 1e4), st.floats(0.01, 100.0))
def test_shift_scale_equivariance(seed, shift, c):
    s = _noisy_envelope(seed, rel_noise=0.02)
    base = fit_segments(s, 2)
    moved = s.copy()
    moved[:, 1] = c * s[:, 1] + shift
    other = fit_segments(moved, 2)
    assert np.allclose(other.breakpoints, base.breakpoints, atol=1e-6)
    assert other.sse == pytest.approx(c ** 2 * base.sse, rel=1e-6)


def _fit_at(*bps):
    return SegmentedFit(tuple(bps), (0.0,) * (len(bps) + 1), (0.0,) * (len(bps) + 1), 0.0, 0.0, 48, 0.0, 47.0)


def test_region_examples():
    r = aggregate_regions([_fit_at(13.0) for _ in range(5)])
    assert [(x.start, x.end, x.support) for x in r] == [(13, 13, 5)]
    r = aggregate_regions([_fit_at(13.0), _fit_at(14.0), _fit_at(15.0)], window_months=2)
    assert [(x.start, x.end) for x in r] == [(13, 15)]
    assert aggregate_regions([_fit_at(20.0)], min_support=2) == []
    # rounded outward; one series breaking twice counts once
    r = aggregate_regions({"a": _fit_at(12.4, 13.6), "b": _fit_at(13.2)})
    assert [(x.start, x.end, x.support) for x in r] == [(12, 14, 2)]
    assert aggregate_regions({"a": _fit_at(12.4, 13.6)}) == []
    assert isinstance(r[0], ChangeRegion) and r[0].to_dict()["support"] == 2


@given(
    st.lists(st.lists(st.floats(1.0, 46.0), max_size=3).map(sorted), min_size=1, max_size=8),
    st.randoms(use_true_random=False),
)
def test_regions_permutation_invariant(bp_lists, rnd):
    fits = {f"s{i}": _fit_at(*b) for i, b in enumerate(bp_lists)}
    names = list(fits)
    rnd.shuffle(names)
    shuffled = {n: fits[n] for n in names}
    a = aggregate_regions(fits)
    b = aggregate_regions(shuffled)
    assert [(x.start, x.end, x.support) for x in a] == [(x.start, x.end, x.support) for x in b]
    for x in a:
        assert x.start <= x.end and x.support >= 2
