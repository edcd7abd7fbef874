"""Engagement-weighted measurements and their noise diagnostics.

Every ratio here has a noisy denominator, so the ratio helpers carry the
denominator SNR and a worst-case interval alongside the point value. Noisy
counts stay signed inside sums; they are floored at zero only where a
probability distribution has to be formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Literal

import numpy as np
import pandas as pd

from .errors import DataError, GateError
from .ingest import EngagementTable
from .model import (
    ACTIONS,
    DEFINED_BUCKETS,
    GROUP_OF_CODE,
    PPA_BUCKETS,
    USER_GROUPS,
    ActionType,
    BinSpec,
    PpaBucket,
    UserGroup,
    month_label,
)
from .noise import NoiseModel
from .rng import derive_rng

Score = Literal["ideology", "quality"]

DEFAULT_SNR_GATE = 16.0
DEFAULT_K = 3.0
DEFAULT_T_LOW = 0.6


# --- noise diagnostics -------------------------------------------------------

def snr_from_sums(signal: float, noise_var: float) -> float:
    signal = abs(float(signal))
    if signal == 0.0:
        return 0.0
    if noise_var <= 0.0:
        return math.inf
    return signal / math.sqrt(noise_var)


def snr(cells, noise: NoiseModel | None) -> float:
    """|sum of counts| / sqrt(sum of per-cell noise variances).

    ``cells`` is an ``EngagementTable`` or a frame slice with ``action`` and
    ``count`` columns; every row is one noisy cell.
    """
    frame = cells.frame if isinstance(cells, EngagementTable) else cells
    counts = frame["count"].to_numpy()
    if noise is None:
        var = 0.0
    else:
        var = float(np.sum(noise.sigmas[frame["action"].to_numpy()] ** 2))
    return snr_from_sums(counts.sum(), var)


def check_gate(value: float, gate: float, metric: str) -> None:
    if not value >= gate:
        raise GateError(metric, value, gate)


def worst_case_interval(
    numerator: float, denominator: float, sigma_num: float, sigma_den: float, k: float = DEFAULT_K
) -> tuple[float, float]:
    """Bounds of N/D when both move by up to ``k`` noise standard deviations
    in the least favourable direction."""
    lo_den = denominator - k * sigma_den
    if not lo_den > 0:
        raise GateError(
            "worst-case interval (denominator interval crosses zero)",
            snr_from_sums(denominator, sigma_den ** 2),
            k,
        )
    return (numerator - k * sigma_num) / (denominator + k * sigma_den), (numerator + k * sigma_num) / lo_den


# --- per-URL weights for one month and action ----------------------------------

@dataclass(frozen=True)
class UrlWeights:
    """Per-URL counts of one action in one month, split by PPA bucket.

    ``weights[u, b]`` is the summed count, ``cells[u, b]`` the number of noisy
    cells behind it; ``sigma`` is the per-cell noise std for the action.
    """

    url_ids: np.ndarray
    ideology: np.ndarray
    quality: np.ndarray
    weights: np.ndarray
    cells: np.ndarray
    sigma: float = 0.0

    def __len__(self) -> int:
        return len(self.url_ids)

    def score(self, which: Score) -> np.ndarray:
        if which == "ideology":
            return self.ideology
        if which == "quality":
            return self.quality
        raise ValueError(f"score must be 'ideology' or 'quality', got {which!r}")

    def group(self, group: UserGroup | None) -> tuple[np.ndarray, np.ndarray]:
        """(weight, cell count) per URL summed over the group's buckets;
        ``None`` means every bucket."""
        if group is None:
            cols = np.arange(len(PPA_BUCKETS))
        else:
            cols = np.flatnonzero(GROUP_OF_CODE == USER_GROUPS.index(UserGroup.parse(group)))
        return self.weights[:, cols].sum(axis=1), self.cells[:, cols].sum(axis=1)

    def take(self, idx: np.ndarray) -> "UrlWeights":
        return UrlWeights(
            self.url_ids[idx], self.ideology[idx], self.quality[idx], self.weights[idx], self.cells[idx], self.sigma
        )


def url_weights(
    table: EngagementTable, action: ActionType | str, month: int, noise: NoiseModel | None = None
) -> UrlWeights:
    action = ActionType.parse(action)
    f = table.frame
    rows = np.flatnonzero((f["observation_month"].to_numpy() == month) & (f["action"].to_numpy() == action.code))
    if len(rows) == 0:
        raise DataError(f"no {action.value} records in month {month_label(month)}")
    url_col, dom_col = f["url_id"].array, f["domain_id"].array
    codes = url_col.codes[rows]
    uniq, inv = np.unique(codes, return_inverse=True)
    n = len(uniq)
    ppa = f["ppa"].to_numpy()[rows].astype(np.int64)
    w = np.zeros((n, len(PPA_BUCKETS)))
    c = np.zeros((n, len(PPA_BUCKETS)))
    np.add.at(w, (inv, ppa), f["count"].to_numpy()[rows])
    np.add.at(c, (inv, ppa), 1.0)
    first_row = np.zeros(n, dtype=np.int64)
    first_row[inv[::-1]] = np.arange(len(inv))[::-1]
    dom = dom_col.codes[rows][first_row]
    used, dom_inv = np.unique(dom, return_inverse=True)
    names = list(dom_col.categories[used])
    ideo = table.domains.ideology(names)[dom_inv]
    qual = table.domains.quality(names)[dom_inv]
    urls = np.asarray(url_col.categories)[uniq]
    return UrlWeights(urls, ideo, qual, w, c, noise.sigma(action) if noise else 0.0)


# --- weighted moments -----------------------------------------------------------

def weighted_mean_std(scores: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    """Engagement-weighted mean and (population) standard deviation."""
    s = np.asarray(scores, dtype=float)
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total == 0:
        raise DataError("weighted moments undefined: total weight is zero")
    mu = float(np.dot(s, w) / total)
    var = float(np.dot(w, (s - mu) ** 2) / total)
    return mu, math.sqrt(max(var, 0.0))


@dataclass(frozen=True)
class BootstrapResult:
    std: float | np.ndarray
    q025: float | np.ndarray
    q975: float | np.ndarray
    n_replicates: int

    def to_dict(self) -> dict:
        return {"boot_std": self.std, "boot_q025": self.q025, "boot_q975": self.q975}


@dataclass(frozen=True)
class RatioEstimate:
    """A ratio of noisy sums with its denominator SNR and worst-case bounds."""

    value: float
    snr: float
    interval: tuple[float, float]
    numerator: float
    denominator: float


@dataclass(frozen=True)
class WeightedStats:
    mean: float
    std: float
    snr: float
    worst_case_interval: tuple[float, float]
    bootstrap: BootstrapResult | None = None
    n_urls: int = 0
    total_weight: float = 0.0

    def to_dict(self) -> dict:
        d = {
            "mean": self.mean,
            "std": self.std,
            "snr": self.snr,
            "wc_lo": self.worst_case_interval[0],
            "wc_hi": self.worst_case_interval[1],
            "n_urls": self.n_urls,
            "total_weight": self.total_weight,
        }
        if self.bootstrap is not None:
            d.update(self.bootstrap.to_dict())
        return d


def _ratio(values: np.ndarray, w: np.ndarray, ncells: np.ndarray, sigma: float, k: float) -> RatioEstimate:
    num = float(np.dot(values, w))
    den = float(w.sum())
    var_num = sigma ** 2 * float(np.dot(ncells, values ** 2))
    var_den = sigma ** 2 * float(ncells.sum())
    s = snr_from_sums(den, var_den)
    if den == 0:
        raise DataError("ratio undefined: denominator is zero")
    lo, hi = worst_case_interval(num, den, math.sqrt(var_num), math.sqrt(var_den), k)
    return RatioEstimate(num / den, s, (lo, hi), num, den)


def moments_of(
    uw: UrlWeights,
    group: UserGroup | None,
    score: Score,
    *,
    snr_gate: float = DEFAULT_SNR_GATE,
    k: float = DEFAULT_K,
    n_boot: int = 0,
    seed: int = 0,
    label: str = "weighted mean",
) -> WeightedStats:
    w, ncells = uw.group(group)
    s = uw.score(score)
    den_snr = snr_from_sums(w.sum(), uw.sigma ** 2 * ncells.sum())
    check_gate(den_snr, snr_gate, label)
    mu, sd = weighted_mean_std(s, w)
    r = _ratio(s, w, ncells, uw.sigma, k)
    boot = None
    if n_boot:
        boot = bootstrap_ci(uw, lambda b: weighted_mean_std(b.score(score), b.group(group)[0])[0], n_boot, seed)
    return WeightedStats(mu, sd, den_snr, r.interval, boot, int(np.count_nonzero(ncells)), float(w.sum()))


def weighted_moments(
    table: EngagementTable,
    action: ActionType | str,
    group: UserGroup | str,
    score: Score,
    month: int,
    *,
    noise: NoiseModel | None = None,
    snr_gate: float = DEFAULT_SNR_GATE,
    k: float = DEFAULT_K,
    n_boot: int = 1000,
    seed: int = 0,
) -> WeightedStats:
    """Weighted mean and std of a domain score over one month's URLs,
    weighted by the group's counts of ``action``."""
    group = UserGroup.parse(group)
    uw = url_weights(table, action, month, noise)
    label = f"{score} mean ({ActionType.parse(action).value}, {group.label}, {month_label(month)})"
    return moments_of(uw, group, score, snr_gate=snr_gate, k=k, n_boot=n_boot, seed=seed, label=label)


# --- gap and low-quality share -----------------------------------------------------

def gap_interval(c_int: tuple[float, float], l_int: tuple[float, float]) -> tuple[float, float]:
    """Range of |x - y| for x, y anywhere in the two intervals."""
    a, b = c_int[0] - l_int[1], c_int[1] - l_int[0]
    lo = 0.0 if a <= 0.0 <= b else min(abs(a), abs(b))
    return lo, max(abs(a), abs(b))


@dataclass(frozen=True)
class GapPoint:
    month: int
    gap: float
    interval: tuple[float, float]
    snr_conservative: float
    snr_liberal: float


@dataclass(frozen=True)
class GapSeries:
    action: ActionType
    points: tuple[GapPoint, ...]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "month": [month_label(p.month) for p in self.points],
                "gap": [p.gap for p in self.points],
                "wc_lo": [p.interval[0] for p in self.points],
                "wc_hi": [p.interval[1] for p in self.points],
                "snr_conservative": [p.snr_conservative for p in self.points],
                "snr_liberal": [p.snr_liberal for p in self.points],
            }
        )


def gap_of(uw: UrlWeights, *, snr_gate: float = DEFAULT_SNR_GATE, k: float = DEFAULT_K, label: str = "ideology gap") -> tuple[float, tuple[float, float], float, float]:
    c = moments_of(uw, UserGroup.CONSERVATIVE, "ideology", snr_gate=snr_gate, k=k, label=f"{label} [conservative]")
    lib = moments_of(uw, UserGroup.LIBERAL, "ideology", snr_gate=snr_gate, k=k, label=f"{label} [liberal]")
    return abs(c.mean - lib.mean), gap_interval(c.worst_case_interval, lib.worst_case_interval), c.snr, lib.snr


def ideology_gap(
    table: EngagementTable,
    action: ActionType | str,
    month: int,
    *,
    noise: NoiseModel | None = None,
    snr_gate: float = DEFAULT_SNR_GATE,
) -> float:
    """|conservative mean ideology - liberal mean ideology| for one month."""
    uw = url_weights(table, action, month, noise)
    return gap_of(uw, snr_gate=snr_gate, label=f"ideology gap ({month_label(month)})")[0]


def gap_series(
    table: EngagementTable,
    action: ActionType | str,
    months: Iterable[int] | None = None,
    *,
    noise: NoiseModel | None = None,
    snr_gate: float = DEFAULT_SNR_GATE,
    k: float = DEFAULT_K,
) -> GapSeries:
    action = ActionType.parse(action)
    pts = []
    for m in table.months if months is None else months:
        uw = url_weights(table, action, int(m), noise)
        g, iv, sc, sl = gap_of(uw, snr_gate=snr_gate, k=k, label=f"ideology gap ({month_label(int(m))})")
        pts.append(GapPoint(int(m), g, iv, sc, sl))
    return GapSeries(action, tuple(pts))


def low_quality_of(
    uw: UrlWeights,
    t_low: float = DEFAULT_T_LOW,
    group: UserGroup | None = None,
    *,
    snr_gate: float = DEFAULT_SNR_GATE,
    k: float = DEFAULT_K,
    label: str = "low-quality share",
) -> RatioEstimate:
    w, ncells = uw.group(group)
    ind = (uw.quality <= t_low).astype(float)
    check_gate(snr_from_sums(w.sum(), uw.sigma ** 2 * ncells.sum()), snr_gate, label)
    return _ratio(ind, w, ncells, uw.sigma, k)


def low_quality_share(
    table: EngagementTable,
    action: ActionType | str,
    month: int,
    t_low: float = DEFAULT_T_LOW,
    *,
    group: UserGroup | str | None = None,
    noise: NoiseModel | None = None,
    snr_gate: float = DEFAULT_SNR_GATE,
) -> float:
    """Share of the month's engagement going to domains with quality <= ``t_low``."""
    uw = url_weights(table, action, month, noise)
    g = None if group is None else UserGroup.parse(group)
    return low_quality_of(uw, t_low, g, snr_gate=snr_gate, label=f"low-quality share ({month_label(month)})").value


@dataclass(frozen=True)
class LowQualityShare:
    action: ActionType
    t_low: float
    months: tuple[int, ...]
    estimates: tuple[RatioEstimate, ...]
    group: UserGroup | None = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "month": [month_label(m) for m in self.months],
                "group": "all" if self.group is None else self.group.label,
                "share": [e.value for e in self.estimates],
                "wc_lo": [e.interval[0] for e in self.estimates],
                "wc_hi": [e.interval[1] for e in self.estimates],
                "snr": [e.snr for e in self.estimates],
            }
        )


def low_quality_series(
    table: EngagementTable,
    action: ActionType | str,
    months: Iterable[int] | None = None,
    t_low: float = DEFAULT_T_LOW,
    *,
    group: UserGroup | None = None,
    noise: NoiseModel | None = None,
    snr_gate: float = DEFAULT_SNR_GATE,
    k: float = DEFAULT_K,
) -> LowQualityShare:
    action = ActionType.parse(action)
    months = tuple(int(m) for m in (table.months if months is None else months))
    est = tuple(
        low_quality_of(url_weights(table, action, m, noise), t_low, group, snr_gate=snr_gate, k=k,
                       label=f"low-quality share ({month_label(m)})")
        for m in months
    )
    return LowQualityShare(action, t_low, months, est, group)


# --- normalised engagement by PPA --------------------------------------------------

@dataclass(frozen=True)
class NormalizedEngagement:
    """``values[e, p]``: per-view engagement of action ``e`` in defined bucket
    ``p``, divided by its maximum over buckets. ``per_view`` is the
    intermediate count/views ratio, ``counts`` the raw aggregated counts.
    Buckets with no view records are NaN throughout."""

    values: np.ndarray
    per_view: np.ndarray
    counts: np.ndarray
    view_snr: np.ndarray
    per_view_interval: np.ndarray | None = None
    interval: np.ndarray | None = None

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, index=[a.value for a in ACTIONS], columns=[b.label for b in DEFINED_BUCKETS])
        df.index.name = "action"
        return df


def normalized_engagement(
    table: EngagementTable,
    months: Iterable[int] | None = None,
    *,
    noise: NoiseModel | None = None,
    snr_gate: float = DEFAULT_SNR_GATE,
    k: float = DEFAULT_K,
) -> NormalizedEngagement:
    f = table.frame
    if months is not None:
        f = f.loc[np.isin(f["observation_month"].to_numpy(), np.fromiter(months, dtype=np.int64))]
    nb = len(DEFINED_BUCKETS)
    ppa = f["ppa"].to_numpy().astype(np.int64)
    act = f["action"].to_numpy().astype(np.int64)
    keep = ppa < nb
    counts = np.zeros((len(ACTIONS), nb))
    ncell = np.zeros((len(ACTIONS), nb))
    np.add.at(counts, (act[keep], ppa[keep]), f["count"].to_numpy()[keep])
    np.add.at(ncell, (act[keep], ppa[keep]), 1.0)

    views = counts[ActionType.VIEWS.code]
    v_cells = ncell[ActionType.VIEWS.code]
    present = v_cells > 0  # buckets without any view record are absent, not zero
    if not present.any():
        raise DataError("no view records for any defined PPA bucket")
    sig_v = noise.sigma(ActionType.VIEWS) if noise else 0.0
    view_snr = np.array([snr_from_sums(views[j], sig_v ** 2 * v_cells[j]) for j in range(nb)])
    for j, b in enumerate(DEFINED_BUCKETS):
        if not present[j]:
            continue
        if not views[j] > 0:
            raise DataError(f"aggregated view count for PPA bucket {b.label} is not positive ({views[j]})")
        check_gate(view_snr[j], snr_gate, f"view count, PPA bucket {b.label}")

    sig = noise.sigmas if noise else np.zeros(len(ACTIONS))
    per_view = np.full(counts.shape, np.nan)
    pv_int = np.full((2,) + counts.shape, np.nan)
    for j in np.flatnonzero(present):
        per_view[:, j] = counts[:, j] / views[j]
        for e in range(len(ACTIONS)):
            pv_int[:, e, j] = worst_case_interval(
                counts[e, j], views[j], sig[e] * math.sqrt(ncell[e, j]), sig_v * math.sqrt(v_cells[j]), k
            )
    with np.errstate(invalid="ignore", divide="ignore"):
        top = np.nanmax(per_view, axis=1, keepdims=True)
        values = np.where(top > 0, per_view / top, np.nan)
        # the row maximum itself ranges over [max lo, max hi]
        top_lo = np.nanmax(pv_int[0], axis=1, keepdims=True)
        top_hi = np.nanmax(pv_int[1], axis=1, keepdims=True)
        norm_int = np.stack([pv_int[0] / top_hi, np.where(top_lo > 0, pv_int[1] / top_lo, np.inf)])
    return NormalizedEngagement(values, per_view, counts, view_snr, pv_int, norm_int)


# --- binned distributions ------------------------------------------------------------

def binned_distribution(scores: np.ndarray, weights: np.ndarray, bins: BinSpec) -> tuple[np.ndarray, float, float]:
    """Weighted histogram normalised to 1, with negative bin totals floored.

    Returns (probabilities, floored mass, total after flooring).
    """
    raw = np.bincount(bins.index(scores), weights=np.asarray(weights, dtype=float), minlength=bins.count)
    floored = float(-raw[raw < 0].sum())
    pos = np.maximum(raw, 0.0)
    total = float(pos.sum())
    if not total > 0:
        raise DataError("distribution undefined: no positive mass after flooring")
    return pos / total, floored, total


@dataclass(frozen=True)
class ConditionalDistribution:
    """Column-stochastic matrix P[bin, bucket] = P(score in bin | PPA bucket)."""

    probs: np.ndarray
    bins: BinSpec
    dimension: Score
    action: ActionType
    floored_mass: np.ndarray
    totals: np.ndarray

    def column(self, bucket) -> "Histogram":
        j = PpaBucket.parse(bucket).code
        return Histogram(self.probs[:, j], self.bins)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.probs, columns=[b.label for b in PPA_BUCKETS])
        df.insert(0, "bin_center", self.bins.centers)
        return df

    def tv_from(self, reference="nd") -> dict[str, float]:
        ref = self.column(reference)
        return {b.label: total_variation(ref, self.column(b)) for b in PPA_BUCKETS}


def conditional_distribution(
    table: EngagementTable,
    action: ActionType | str,
    dimension: Score,
    bins: BinSpec,
    months: Iterable[int] | None = None,
) -> ConditionalDistribution:
    action = ActionType.parse(action)
    f = table.frame
    m = f["action"].to_numpy() == action.code
    if months is not None:
        m &= np.isin(f["observation_month"].to_numpy(), np.fromiter(months, dtype=np.int64))
    f = f.loc[m]
    if dimension not in ("ideology", "quality"):
        raise ValueError(f"dimension must be 'ideology' or 'quality', got {dimension!r}")
    ideo, qual = table.url_scores(f["domain_id"].to_numpy())
    s = ideo if dimension == "ideology" else qual
    ppa = f["ppa"].to_numpy()
    cnt = f["count"].to_numpy()
    probs = np.zeros((bins.count, len(PPA_BUCKETS)))
    floored = np.zeros(len(PPA_BUCKETS))
    totals = np.zeros(len(PPA_BUCKETS))
    for j, b in enumerate(PPA_BUCKETS):
        sel = ppa == j
        try:
            probs[:, j], floored[j], totals[j] = binned_distribution(s[sel], cnt[sel], bins)
        except DataError:
            raise DataError(f"no positive {action.value} mass for PPA bucket {b.label}") from None
    return ConditionalDistribution(probs, bins, dimension, action, floored, totals)


@dataclass(frozen=True)
class Histogram:
    probs: np.ndarray
    bins: BinSpec | None = None


def total_variation(p, q) -> float:
    """Half the L1 distance between two distributions on the same bins."""
    bins_p = getattr(p, "bins", None)
    bins_q = getattr(q, "bins", None)
    if bins_p is not None and bins_q is not None and bins_p != bins_q:
        raise ValueError(f"bin axes differ: {bins_p} vs {bins_q}")
    a = np.asarray(getattr(p, "probs", p), dtype=float)
    b = np.asarray(getattr(q, "probs", q), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"bin axes differ: {a.shape} vs {b.shape}")
    return 0.5 * float(np.abs(a - b).sum())


# --- bootstrap --------------------------------------------------------------------------

def bootstrap_ci(
    data: UrlWeights,
    metric: Callable[[UrlWeights], float | np.ndarray],
    B: int = 1000,
    seed: int = 0,
) -> BootstrapResult:
    """Resample URLs with replacement ``B`` times and summarise ``metric``.

    Replicate ``r`` draws from its own stream ``(seed, "bootstrap", r)``, so
    the result does not depend on evaluation order. ``metric`` may return a
    vector; the summary is then element-wise.
    """
    n = len(data)
    if n < 2:
        raise DataError("bootstrap needs at least two URLs")
    reps = []
    for r in range(B):
        idx = derive_rng(seed, "bootstrap", r).integers(0, n, size=n)
        reps.append(metric(data.take(idx)))
    arr = np.asarray(reps, dtype=float)
    # a constant statistic reports exactly zero spread, not rounding residue
    std = np.where(np.ptp(arr, axis=0) == 0, 0.0, arr.std(axis=0, ddof=1))
    q025, q975 = np.quantile(arr, [0.025, 0.975], axis=0)
    if arr.ndim == 1:
        return BootstrapResult(float(std), float(q025), float(q975), B)
    return BootstrapResult(std, q025, q975, B)


# --- ground-truth summaries ------------------------------------------------------------

def month_summary(
    table: EngagementTable, month: int, action: ActionType | str = ActionType.CLICKS, t_low: float = DEFAULT_T_LOW
) -> dict:
    """Noise-free summary used for planted-truth manifests: weighted means
    and stds per group, the ideology gap and the low-quality share."""
    uw = url_weights(table, action, month)
    out: dict = {"groups": {}}
    for g in USER_GROUPS:
        w, _ = uw.group(g)
        if w.sum() == 0:
            out["groups"][g.label] = None
            continue
        mi, si = weighted_mean_std(uw.ideology, w)
        mq, sq = weighted_mean_std(uw.quality, w)
        out["groups"][g.label] = {"ideology_mean": mi, "ideology_std": si, "quality_mean": mq, "quality_std": sq}
    c, lib = out["groups"]["conservative"], out["groups"]["liberal"]
    out["gap"] = abs(c["ideology_mean"] - lib["ideology_mean"]) if c and lib else None
    w_all, _ = uw.group(None)
    out["low_quality_share"] = float(np.dot((uw.quality <= t_low).astype(float), w_all) / w_all.sum())
    return out
