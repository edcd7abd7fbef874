import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newsdiet.errors import DataError, GateError
from newsdiet.metrics import (
    BinSpec,
    bootstrap_ci,
    conditional_distribution,
    gap_interval,
    ideology_gap,
    low_quality_share,
    normalized_engagement,
    snr,
    snr_from_sums,
    total_variation,
    url_weights,
    weighted_mean_std,
    weighted_moments,
    worst_case_interval,
)
from newsdiet.model import ACTIONS, DEFINED_BUCKETS, PPA_BUCKETS, ActionType, DomainInfo, DomainTable, UserGroup
from newsdiet.noise import NoiseModel

from conftest import make_table

M = "2019-03"


def _doms(ideo_quality):
    """{id: (normalised ideology, quality)}; two anchors pin the min-max map."""
    items = [DomainInfo("lo", 0.0, 0.5), DomainInfo("hi", 1.0, 0.5)]
    items += [DomainInfo(k, i, q) for k, (i, q) in ideo_quality.items()]
    return DomainTable.from_domains(items)


def _clicks(rows, doms):
    """rows: (url, domain, ppa, clicks)."""
    return make_table([(u, d, M, M, "clicks", p, c) for u, d, p, c in rows], doms)


# --- normalised engagement --------------------------------------------------------------

def test_normalized_engagement_hand_example():
    doms = _doms({"a": (0.5, 0.5)})
    t = make_table(
        [
            ("u1", "a", M, M, "views", -2, 100),
            ("u1", "a", M, M, "views", 2, 100),
            ("u1", "a", M, M, "clicks", -2, 10),
            ("u1", "a", M, M, "clicks", 2, 30),
        ],
        doms,
    )
    ne = normalized_engagement(t)
    df = ne.to_frame()
    assert df.loc["clicks", "-2"] == pytest.approx(1 / 3)
    assert df.loc["clicks", "2"] == 1.0
    assert df.loc["views", "-2"] == 1.0 and df.loc["views", "2"] == 1.0
    assert np.isnan(df.loc["clicks", "0"])  # no view records in that bucket


def test_normalized_engagement_symmetric_counts_all_one():
    doms = _doms({"a": (0.5, 0.5)})
    rows = [("u1", "a", M, M, a.value, b.label, 7.0) for a in ACTIONS for b in DEFINED_BUCKETS]
    ne = normalized_engagement(make_table(rows, doms))
    assert np.array_equal(ne.values, np.ones_like(ne.values))


def test_normalized_engagement_nonpositive_views():
    doms = _doms({"a": (0.5, 0.5)})
    t = make_table([("u1", "a", M, M, "views", 0, -3.0), ("u1", "a", M, M, "clicks", 0, 1.0)], doms)
    with pytest.raises(DataError, match="bucket 0"):
        normalized_engagement(t)


def test_normalized_engagement_intervals_bracket_values():
    doms = _doms({"a": (0.5, 0.5)})
    rng = np.random.default_rng(1)
    rows = [("u1", "a", M, M, a.value, b.label, float(rng.uniform(1e5, 1e6))) for a in ACTIONS for b in DEFINED_BUCKETS]
    ne = normalized_engagement(make_table(rows, doms), noise=NoiseModel.uniform(10.0))
    assert (ne.interval[0] <= ne.values + 1e-15).all() and (ne.values <= ne.interval[1] + 1e-15).all()
    assert (ne.per_view_interval[0] <= ne.per_view).all() and (ne.per_view <= ne.per_view_interval[1]).all()


# --- weighted moments ------------------------------------------------------------------

def test_point_mass():
    doms = _doms({"a": (0.7, 0.5)})
    ws = weighted_moments(_clicks([("u1", "a", 2, 5.0)], doms), "clicks", "C", "ideology", _m(), n_boot=0)
    assert ws.mean == pytest.approx(0.7) and ws.std == 0.0


def _m():
    from newsdiet.model import Month

    return Month.parse(M).ordinal


def test_two_urls_equal_weights():
    doms = _doms({"a": (0.2, 0.5), "b": (0.8, 0.5)})
    t = _clicks([("u1", "a", 1, 4.0), ("u2", "b", 1, 4.0)], doms)
    ws = weighted_moments(t, "clicks", UserGroup.CONSERVATIVE, "ideology", _m(), n_boot=0)
    assert ws.mean == pytest.approx(0.5, abs=1e-12)
    assert ws.std == pytest.approx(0.3, abs=1e-12)


def test_groups_use_their_buckets_only():
    doms = _doms({"a": (0.2, 0.5), "b": (0.8, 0.5)})
    t = _clicks([("u1", "a", -2, 4.0), ("u2", "b", 2, 4.0), ("u2", "b", "nd", 100.0)], doms)
    assert weighted_moments(t, "clicks", "L", "ideology", _m(), n_boot=0).mean == pytest.approx(0.2)
    assert weighted_moments(t, "clicks", "C", "ideology", _m(), n_boot=0).mean == pytest.approx(0.8)
    assert weighted_moments(t, "clicks", "D", "ideology", _m(), n_boot=0).mean == pytest.approx(0.8)


def test_empty_month_and_gate():
    doms = _doms({"a": (0.2, 0.5)})
    t = _clicks([("u1", "a", 1, 4.0)], doms)
    with pytest.raises(DataError):
        weighted_moments(t, "clicks", "C", "ideology", _m() + 1, n_boot=0)
    with pytest.raises(GateError) as exc:
        weighted_moments(t, "clicks", "C", "ideology", _m(), noise=NoiseModel.uniform(10.0), n_boot=0)
    assert exc.value.snr == pytest.approx(0.4)


@st.composite
def click_tables(draw):
    n_dom = draw(st.integers(1, 6))
    scores = draw(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=n_dom, max_size=n_dom))
    doms = _doms({f"x{i}": s for i, s in enumerate(scores)})
    n = draw(st.integers(1, 12))
    rows = []
    for u in range(n):
        d = f"x{draw(st.integers(0, n_dom - 1))}"
        for p in draw(st.sets(st.sampled_from(["-2", "-1", "0", "1", "2", "nd"]), min_size=1)):
            rows.append((f"u{u}", d, p, draw(st.floats(0.01, 1e4))))
    return _clicks(rows, doms)


@settings(max_examples=60, deadline=None)
@given(click_tables(), st.floats(1e-3, 1e3))
def test_scale_invariance(t, c):
    scaled = t.select(np.ones(len(t), bool))
    scaled.frame["count"] = scaled.frame["count"] * c
    for g in ("C", "L", "N", "D"):
        w, _ = url_weights(t, "clicks", _m()).group(UserGroup.parse(g))
        if w.sum() <= 0:
            continue
        a = weighted_moments(t, "clicks", g, "quality", _m(), n_boot=0)
        b = weighted_moments(scaled, "clicks", g, "quality", _m(), n_boot=0)
        assert b.mean == pytest.approx(a.mean, abs=1e-12)
        assert b.std == pytest.approx(a.std, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(click_tables())
def test_std_matches_second_central_moment(t):
    uw = url_weights(t, "clicks", _m())
    w, _ = uw.group(None)
    mu, sd = weighted_mean_std(uw.quality, w)
    m2 = np.sum(w * (uw.quality - mu) ** 2) / w.sum()
    assert sd ** 2 == pytest.approx(m2, abs=1e-9)


# --- gap and low-quality share ---------------------------------------------------------

def test_gap_examples():
    doms = _doms({"a": (0.9, 0.5), "b": (0.3, 0.5)})
    t = _clicks([("u1", "a", 2, 5.0), ("u2", "b", -1, 9.0)], doms)
    assert ideology_gap(t, "clicks", _m()) == pytest.approx(0.6)
    swapped = _clicks([("u1", "a", -2, 5.0), ("u2", "b", 1, 9.0)], doms)
    assert ideology_gap(swapped, "clicks", _m()) == pytest.approx(0.6)
    same = _clicks([("u1", "a", 2, 5.0), ("u1", "a", -2, 5.0), ("u2", "b", 1, 3.0), ("u2", "b", -1, 3.0)], doms)
    assert ideology_gap(same, "clicks", _m()) == 0.0


def test_gap_interval_contains_zero_when_overlapping():
    lo, hi = gap_interval((0.4, 0.6), (0.5, 0.7))
    assert lo == 0.0 and hi == pytest.approx(0.3)
    lo, hi = gap_interval((0.8, 0.9), (0.1, 0.2))
    assert lo == pytest.approx(0.6) and hi == pytest.approx(0.8)


def test_low_quality_examples():
    doms = _doms({"lq": (0.5, 0.3), "hq": (0.5, 0.9)})
    below = _clicks([("u1", "lq", 0, 5.0), ("u2", "lq", 1, 3.0)], doms)
    above = _clicks([("u1", "hq", 0, 5.0), ("u2", "hq", 1, 3.0)], doms)
    half = _clicks([("u1", "lq", 0, 5.0), ("u2", "hq", 1, 5.0)], doms)
    assert low_quality_share(below, "clicks", _m()) == 1.0
    assert low_quality_share(above, "clicks", _m()) == 0.0
    assert low_quality_share(half, "clicks", _m()) == 0.5
    # the threshold itself counts as low quality
    assert low_quality_share(half, "clicks", _m(), t_low=0.9) == 1.0


# --- noise diagnostics -----------------------------------------------------------------

def test_snr_examples():
    assert snr_from_sums(1e6, 100 * 10.0 ** 2) == pytest.approx(1e4)
    assert snr_from_sums(5.0, 0.0) == math.inf
    assert snr_from_sums(0.0, 4.0) == 0.0


def test_snr_on_table():
    doms = _doms({"a": (0.5, 0.5)})
    t = _clicks([(f"u{i}", "a", 0, 1e4) for i in range(100)], doms)
    assert snr(t, NoiseModel.uniform(10.0)) == pytest.approx(1e4)
    assert snr(t, NoiseModel.uniform(0.0)) == math.inf


def test_worst_case_examples():
    assert worst_case_interval(3.0, 4.0, 0.0, 0.0) == (0.75, 0.75)
    lo, hi = worst_case_interval(1e6, 1e6, 100.0, 100.0, 3)
    assert lo == pytest.approx(0.9994, abs=2e-7) and hi == pytest.approx(1.0006, abs=2e-7)
    with pytest.raises(GateError):
        worst_case_interval(1.0, 10.0, 1.0, 5.0, 3)


def test_worst_case_width_shrinks_with_snr():
    widths = []
    for d in (1e3, 1e4, 1e5, 1e6):
        lo, hi = worst_case_interval(0.5 * d, d, 1.0, 1.0, 3)
        widths.append(hi - lo)
    assert all(a > b for a, b in zip(widths, widths[1:]))
    lo, hi = worst_case_interval(0.5e5, 1e5, 1.0, 1.0, 3)  # denominator SNR 1e5
    assert hi - lo < 1e-3


# --- distributions --------------------------------------------------------------------

BINS = BinSpec(0.0, 0.25, 4)


def test_single_atom_column():
    doms = _doms({"a": (0.6, 0.5)})
    cd = conditional_distribution(_clicks([("u1", "a", 0, 3.0)] + _fill("a"), doms), "clicks", "ideology", BINS)
    assert list(cd.column("0").probs) == [0.0, 0.0, 1.0, 0.0]


def _fill(dom):
    return [(f"f{p}", dom, p, 1.0) for p in ["-2", "-1", "1", "2", "nd"]]


def test_equal_weights_split():
    doms = _doms({"a": (0.1, 0.5), "b": (0.9, 0.5)})
    t = _clicks([("u1", "a", 0, 2.0), ("u2", "b", 0, 2.0)] + _fill("a"), doms)
    cd = conditional_distribution(t, "clicks", "ideology", BINS)
    assert list(cd.column("0").probs) == [0.5, 0.0, 0.0, 0.5]


def test_negative_mass_floored_and_reported():
    doms = _doms({"a": (0.1, 0.5), "b": (0.9, 0.5)})
    t = _clicks([("u1", "a", 0, 4.0), ("u2", "b", 0, -1.5)] + _fill("a"), doms)
    cd = conditional_distribution(t, "clicks", "ideology", BINS)
    assert list(cd.column("0").probs) == [1.0, 0.0, 0.0, 0.0]
    assert cd.floored_mass[PPA_BUCKETS.index(PPA_BUCKETS[2])] == 1.5


@settings(max_examples=40, deadline=None)
@given(click_tables())
def test_columns_sum_to_one(t):
    try:
        cd = conditional_distribution(t, "clicks", "quality", BinSpec(0.0, 0.05, 20))
    except DataError:
        return  # some bucket without clicks
    assert np.allclose(cd.probs.sum(axis=0), 1.0, atol=1e-9)
    assert (cd.probs >= 0).all()


def test_tv_examples():
    p = np.array([0.5, 0.5])
    assert total_variation(p, p) == 0.0
    assert total_variation([1, 0], [0, 1]) == 1.0
    assert total_variation([0.5, 0.5], [0.25, 0.75]) == 0.25
    with pytest.raises(ValueError):
        total_variation([1.0], [0.5, 0.5])


def _simplex(n):
    return st.lists(st.floats(0, 1), min_size=n, max_size=n).filter(lambda v: sum(v) > 0).map(
        lambda v: np.array(v) / sum(v)
    )


@given(_simplex(6), _simplex(6), _simplex(6))
def test_tv_is_a_metric(p, q, r):
    assert total_variation(p, q) == pytest.approx(total_variation(q, p))
    assert total_variation(p, r) <= total_variation(p, q) + total_variation(q, r) + 1e-12
    assert 0.0 <= total_variation(p, q) <= 1.0 + 1e-12


# --- bootstrap -------------------------------------------------------------------------

def _uw(n, seed=0, dominant=False):
    doms = _doms({f"x{i}": (i / max(n - 1, 1), 0.5) for i in range(n)})
    rng = np.random.default_rng(seed)
    w = rng.uniform(1, 10, n)
    if dominant:
        w[0] = 1e4 * w.sum()
    t = _clicks([(f"u{i:03d}", f"x{i}", 1, w[i]) for i in range(n)], doms)
    return url_weights(t, "clicks", _m())


def test_bootstrap_constant_metric():
    res = bootstrap_ci(_uw(20), lambda b: 0.42, B=50, seed=3)
    assert res.std == 0.0 and res.q025 == res.q975 == 0.42


def test_bootstrap_dominant_url():
    # URL resampling leaves the dominant URL out of about a third of replicates;
    # every replicate that draws it stays pinned to its score.
    uw = _uw(30, dominant=True)
    drawn = []

    def metric(b):
        mean = weighted_mean_std(b.ideology, b.group(None)[0])[0]
        if "u000" in set(b.url_ids):
            drawn.append(mean)
        return mean

    bootstrap_ci(uw, metric, B=200, seed=1)
    assert len(drawn) > 100
    assert np.std(drawn) < 1e-3
    assert np.allclose(drawn, uw.ideology[0], atol=1e-3)


def test_bootstrap_deterministic_and_vector_valued():
    uw = _uw(25)

    def metric(b):
        w = b.group(None)[0]
        return np.array([weighted_mean_std(b.ideology, w)[0], weighted_mean_std(b.quality, w)[0]])

    a = bootstrap_ci(uw, metric, B=40, seed=9)
    b = bootstrap_ci(uw, metric, B=40, seed=9)
    assert np.array_equal(a.std, b.std) and a.std.shape == (2,)
    with pytest.raises(DataError):
        bootstrap_ci(_uw(1), metric, B=5)


def test_moments_interval_brackets_mean_under_noise():
    uw_doms = _doms({f"x{i}": (i / 9, 0.5) for i in range(10)})
    t = _clicks([(f"u{i}", f"x{i}", 2, 1e5 + i) for i in range(10)], uw_doms)
    ws = weighted_moments(t, "clicks", "C", "ideology", _m(), noise=NoiseModel.uniform(10.0), n_boot=20)
    lo, hi = ws.worst_case_interval
    assert lo <= ws.mean <= hi
    assert ws.bootstrap is not None and ws.bootstrap.n_replicates == 20
    assert ActionType.CLICKS.passive
