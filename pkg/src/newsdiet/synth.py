"""Synthetic engagement panels with planted ground truth, and a simulation
of the dataset's privacy release (Laplace-noised share threshold for
inclusion, Gaussian noise on every released count)."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import optimize, stats

from .errors import ConfigError
from .ingest import EngagementTable
from .metrics import month_summary
from .model import (
    ACTIONS,
    DEFINED_BUCKETS,
    GROUP_OF_CODE,
    PPA_BUCKETS,
    USER_GROUPS,
    ActionType,
    DomainInfo,
    DomainTable,
    Month,
    month_label,
)
from .noise import NoiseModel
from .rng import derive_rng

log = logging.getLogger(__name__)

# --- specs -----------------------------------------------------------------------


@dataclass(frozen=True)
class TrendSpec:
    """Continuous piecewise-linear engagement envelope over month indices."""

    breakpoints: tuple[float, ...] = (12.0, 38.0)
    slopes: tuple[float, ...] = (-0.02, 0.015, -0.03)
    start_level: float = 1.0

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "slopes", tuple(float(s) for s in self.slopes))
        if len(self.slopes) != len(bp) + 1:
            raise ConfigError(f"trend needs {len(bp) + 1} slopes for {len(bp)} breakpoints, got {len(self.slopes)}")
        if any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
            raise ConfigError("trend breakpoints must be strictly increasing")

    def envelope(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        y = self.start_level + self.slopes[0] * t
        for b, (s0, s1) in zip(self.breakpoints, zip(self.slopes, self.slopes[1:])):
            y = y + (s1 - s0) * np.maximum(t - b, 0.0)
        return y

    def check(self, horizon: int, first: int = 0) -> None:
        if any(not 0 < b < horizon - 1 for b in self.breakpoints):
            raise ConfigError(f"trend breakpoints {self.breakpoints} must lie inside the horizon (0, {horizon - 1})")
        env = self.envelope(np.arange(first, horizon))
        if not (env > 0).all():
            raise ConfigError("trend envelope must stay positive over the simulated months")


def geometric_decay(first_two_mass: float = 0.70, length: int = 6) -> tuple[float, ...]:
    """Truncated geometric profile whose first two months carry ``first_two_mass``."""
    if length < 3:
        raise ConfigError("a geometric decay profile needs at least three months")
    if not 2.0 / length < first_two_mass < 1.0:
        raise ConfigError(f"first_two_mass must lie in ({2.0 / length:.4g}, 1) for length {length}")
    r = optimize.brentq(lambda r: (1 - r ** 2) / (1 - r ** length) - first_two_mass, 1e-12, 1 - 1e-9)
    w = r ** np.arange(length)
    return tuple(w / w.sum())


_DEFAULT_MIXTURES = {
    "liberal": ((1.0, 0.35),),
    "centrist": ((1.0, 0.5),),
    "conservative": ((0.6, 0.55), (0.4, 0.9)),
    "undefined": ((1.0, 0.5),),
}

_DEFAULT_RATES = {
    "views": 1.0, "clicks": 0.08, "shares": 0.01, "likes": 0.03, "comments": 0.012,
    "angers": 0.004, "hahas": 0.003, "wows": 0.001, "loves": 0.003, "sorrys": 0.001,
}

# share of the monthly audience per PPA bucket; undefined users dominate views
_DEFAULT_AUDIENCE = {"-2": 0.10, "-1": 0.12, "0": 0.08, "1": 0.08, "2": 0.07, "nd": 0.55}


@dataclass(frozen=True)
class PopulationSpec:
    n_domains: int = 300
    target_ideology_quality_corr: float = -0.35
    high_quality_share: float = 0.58
    quality_concentration: float = 5.0
    ideology_beta: tuple[float, float] = (1.2, 1.2)
    mixtures: Mapping[str, tuple] = field(default_factory=lambda: dict(_DEFAULT_MIXTURES))
    kernel_std: float = 0.08
    urls_per_month: tuple[float, float] = (9e4, 2e5)
    url_scale: float = 1e-3
    decay: tuple[float, ...] = field(default_factory=geometric_decay)
    burn_in: bool = True
    lifetime_views_mean: float = 2e5
    lifetime_sigma: float = 1.0
    cohort_budget: bool = True
    domain_popularity_sigma: float = 1.0
    action_rates: Mapping[str, float] = field(default_factory=lambda: dict(_DEFAULT_RATES))
    audience: Mapping[str, float] = field(default_factory=lambda: dict(_DEFAULT_AUDIENCE))
    active_u_shape: float = 0.25
    actions: tuple[str, ...] = tuple(a.value for a in ACTIONS)
    start_month: str = "2017-01"

    def __post_init__(self):
        mix = {}
        for g in USER_GROUPS:
            comps = self.mixtures.get(g.label)
            if comps is None:
                raise ConfigError(f"missing engagement mixture for group {g.label}")
            comps = tuple((float(w), float(c)) for w, c in comps)
            if abs(sum(w for w, _ in comps) - 1.0) > 1e-9 or any(w < 0 for w, _ in comps):
                raise ConfigError(f"mixture weights for {g.label} must be non-negative and sum to 1")
            mix[g.label] = comps
        object.__setattr__(self, "mixtures", mix)
        decay = tuple(float(x) for x in self.decay)
        if len(decay) < 1 or any(x < 0 for x in decay) or abs(sum(decay) - 1.0) > 1e-9:
            raise ConfigError("decay fractions must be non-negative and sum to 1")
        object.__setattr__(self, "decay", decay)
        object.__setattr__(self, "actions", tuple(ActionType.parse(a).value for a in self.actions))
        object.__setattr__(self, "urls_per_month", tuple(float(x) for x in self.urls_per_month))
        object.__setattr__(self, "ideology_beta", tuple(float(x) for x in self.ideology_beta))
        if self.n_domains < 2:
            raise ConfigError("n_domains must be at least 2")
        if not abs(self.target_ideology_quality_corr) < 1:
            raise ConfigError("target_ideology_quality_corr must lie strictly inside (-1, 1)")
        if not 0 < self.high_quality_share < 1:
            raise ConfigError("high_quality_share must lie in (0, 1)")
        lo, hi = self.urls_per_month
        if not 0 < lo <= hi:
            raise ConfigError("urls_per_month must be an increasing positive range")
        Month.parse(self.start_month)

    @property
    def first_two_mass(self) -> float:
        return sum(self.decay[:2])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mixtures"] = {k: [list(c) for c in v] for k, v in self.mixtures.items()}
        return d


def population_from_dict(d: Mapping) -> PopulationSpec:
    d = dict(d)
    allowed = set(PopulationSpec.__dataclass_fields__) | {"decay_first_two", "decay_length"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown population keys: {sorted(unknown)}")
    if "decay_first_two" in d or "decay_length" in d:
        if "decay" in d:
            raise ConfigError("give either decay or decay_first_two/decay_length, not both")
        d["decay"] = geometric_decay(d.pop("decay_first_two", 0.70), int(d.pop("decay_length", 6)))
    for key in ("ideology_beta", "urls_per_month", "decay", "actions"):
        if key in d:
            d[key] = tuple(d[key])
    return PopulationSpec(**d)


def trend_from_dict(d: Mapping) -> TrendSpec:
    unknown = set(d) - set(TrendSpec.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown trend keys: {sorted(unknown)}")
    return TrendSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


# --- domains --------------------------------------------------------------------------

def _quality_marginal(spec: PopulationSpec):
    kappa = spec.quality_concentration

    def excess(m):
        return stats.beta.sf(0.6, kappa * m, kappa * (1 - m)) - spec.high_quality_share

    m = optimize.brentq(excess, 1e-6, 1 - 1e-6)
    return stats.beta(kappa * m, kappa * (1 - m))


def _ideology_marginal(spec: PopulationSpec):
    a, b = spec.ideology_beta
    return stats.beta(a, b, loc=-1.0, scale=2.0)


def copula_pearson(rho: float, fx, fy, n_nodes: int = 96) -> float:
    """Pearson correlation of (F_x^-1(Phi(z1)), F_y^-1(Phi(z2))) for standard
    normals with correlation ``rho``, by Gauss-Hermite quadrature."""
    z, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / w.sum()
    gx = fx.ppf(stats.norm.cdf(z))
    mx = np.dot(w, gx)
    vx = np.dot(w, (gx - mx) ** 2)
    gy_marg = fy.ppf(stats.norm.cdf(z))
    my = np.dot(w, gy_marg)
    vy = np.dot(w, (gy_marg - my) ** 2)
    z2 = rho * z[:, None] + math.sqrt(1 - rho ** 2) * z[None, :]
    gy = fy.ppf(stats.norm.cdf(z2))
    cov = np.einsum("i,j,i,ij->", w, w, gx - mx, gy - my)
    return float(cov / math.sqrt(vx * vy))


def calibrate_copula(target: float, fx, fy) -> float:
    if not abs(target) < 1:
        raise ConfigError(f"infeasible correlation {target}: |r| must be < 1")
    lo, hi = copula_pearson(-0.999, fx, fy), copula_pearson(0.999, fx, fy)
    if not lo < target < hi:
        raise ConfigError(f"correlation {target} not attainable with these marginals (range {lo:.3f}..{hi:.3f})")
    return optimize.brentq(lambda r: copula_pearson(r, fx, fy) - target, -0.999, 0.999, xtol=1e-10)


def generate_domains(spec: PopulationSpec, seed: int) -> DomainTable:
    """Domains whose ideology and quality are linked by a Gaussian copula
    calibrated to the requested Pearson correlation."""
    fi, fq = _ideology_marginal(spec), _quality_marginal(spec)
    rho = calibrate_copula(spec.target_ideology_quality_corr, fi, fq)
    rng = derive_rng(seed, "domains")
    z = rng.standard_normal((spec.n_domains, 2))
    z2 = rho * z[:, 0] + math.sqrt(1 - rho ** 2) * z[:, 1]
    ideology = fi.ppf(stats.norm.cdf(z[:, 0]))
    quality = np.clip(fq.ppf(stats.norm.cdf(z2)), 0.0, 1.0)
    width = len(str(spec.n_domains))
    return DomainTable.from_domains(
        DomainInfo(f"d{i:0{width}d}", float(ideology[i]), float(quality[i])) for i in range(spec.n_domains)
    )


# --- panel -------------------------------------------------------------------------------

def mixture_density(x: np.ndarray, components: Sequence[tuple[float, float]], std: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for w, c in components:
        out += w * stats.norm.pdf(x, loc=c, scale=std)
    return out


@dataclass
class GroundTruthManifest:
    seed: int
    start_month: str
    horizon: int
    trend: TrendSpec
    population: PopulationSpec
    domains: DomainTable
    monthly_truth: dict
    true_table: EngagementTable = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "start_month": self.start_month,
            "horizon": self.horizon,
            "trend": asdict(self.trend),
            "population": self.population.to_dict(),
            "domains": [
                {"domain_id": d.domain_id, "ideology_raw": d.ideology_raw, "ideology_norm": d.ideology_norm, "quality": d.quality}
                for d in self.domains
            ],
            "domain_normalization": self.domains.metadata(),
            "monthly_truth": self.monthly_truth,
        }


def compute_monthly_truth(table: EngagementTable, t_low: float = 0.6) -> dict:
    """Per-month noise-free click-weighted summaries keyed by ``YYYY-MM``."""
    f = table.frame
    if ActionType.CLICKS.code not in set(np.unique(f["action"].to_numpy())):
        return {}
    return {month_label(int(m)): month_summary(table, int(m), ActionType.CLICKS, t_low) for m in table.months}


def generate_panel(
    domains: DomainTable,
    spec: PopulationSpec,
    trend: TrendSpec,
    horizon: int,
    seed: int,
) -> tuple[EngagementTable, GroundTruthManifest]:
    """Simulate true monthly counts per URL x month x action x PPA bucket.

    URLs arrive in monthly cohorts (one derived random stream per cohort).
    Each URL's expected count for bucket ``p`` is its lifetime volume times
    the decay fraction for its age, the trend envelope at the observation
    month, the action rate, the bucket's audience share and the bucket's
    group mixture density at the URL's domain ideology. Counts are Poisson.
    With ``cohort_budget`` each cohort's expected total per action is held
    fixed; cohort size and domain mix then change how engagement is split,
    not how much there is. With ``burn_in`` the cohorts
    of the ``len(decay) - 1`` months before the start are simulated as well,
    including their months before the start, so the privacy release sees
    their full history. ``apply_privacy_release(..., from_month=...)`` trims
    those months afterwards; ``monthly_truth`` covers only months from the
    start.
    """
    decay = np.asarray(spec.decay)
    n_off = len(decay)
    if horizon < 2:
        raise ConfigError("horizon must be at least 2 months")
    if horizon < n_off:
        raise ConfigError(f"horizon ({horizon}) shorter than the decay profile ({n_off} months)")
    first_cohort = -(n_off - 1) if spec.burn_in else 0
    trend.check(horizon, first_cohort)

    start = Month.parse(spec.start_month)
    actions = [ActionType.parse(a) for a in spec.actions]
    act_codes = np.array([a.code for a in actions])
    try:
        rates = np.array([float(spec.action_rates[a.value]) for a in actions])
        audience = np.array([float(spec.audience[b.label]) for b in PPA_BUCKETS])
    except KeyError as exc:
        raise ConfigError(f"missing rate/audience entry {exc}") from None
    # U-shaped activity for active engagement: extremes engage more per view
    activity = np.ones((len(actions), len(PPA_BUCKETS)))
    for i, a in enumerate(actions):
        if not a.passive:
            for j, b in enumerate(DEFINED_BUCKETS):
                activity[i, j] = 1.0 + spec.active_u_shape * abs(b.value)

    ideo_by_dom = np.array([d.ideology_norm for d in domains])
    dom_ids = np.array(domains.ids, dtype=object)
    pop = derive_rng(seed, "popularity").lognormal(0.0, spec.domain_popularity_sigma, size=len(domains))
    pop /= pop.sum()
    group_density = np.stack(
        [mixture_density(ideo_by_dom, spec.mixtures[USER_GROUPS[GROUP_OF_CODE[j]].label], spec.kernel_std)
         for j in range(len(PPA_BUCKETS))],
        axis=1,
    )  # (domain, bucket)
    cell_rate = rates[:, None] * activity * audience[None, :]  # (action, bucket)
    # expected engagement per unit lifetime of a URL on each domain, per action
    reach = group_density @ cell_rate.T  # (domain, action)
    mean_reach = pop @ reach

    lo, hi = spec.urls_per_month
    lo_n = max(1, int(round(lo * spec.url_scale)))
    hi_n = max(lo_n, int(round(hi * spec.url_scale)))
    mu_log = math.log(spec.lifetime_views_mean) - 0.5 * spec.lifetime_sigma ** 2

    cohorts = []
    n_urls = 0
    for c in range(first_cohort, horizon):
        rng = derive_rng(seed, "cohort", c)
        n = int(rng.integers(lo_n, hi_n + 1))
        dom = rng.choice(len(domains), size=n, p=pop)
        life = rng.lognormal(mu_log, spec.lifetime_sigma, size=n)
        scale = np.ones(len(actions))
        if spec.cohort_budget:
            # a cohort splits a fixed expected budget per action, so monthly totals track the envelope
            scale = 0.5 * (lo_n + hi_n) * spec.lifetime_views_mean * mean_reach / (life @ reach[dom])
        ages = np.arange(n_off)
        obs = c + ages
        live = obs < horizon
        ages, obs = ages[live], obs[live]
        env = trend.envelope(obs)
        lam = (
            life[:, None, None, None]
            * (decay[ages] * env)[None, :, None, None]
            * (cell_rate * scale[:, None])[None, None, :, :]
            * group_density[dom][:, None, None, :]
        )
        counts = rng.poisson(lam).astype(np.float64)
        u, k, a, p = np.indices(counts.shape).reshape(4, -1)
        cohorts.append(
            pd.DataFrame(
                {
                    "url": u + n_urls,
                    "domain": dom[u],
                    "first_month": start.ordinal + c,
                    "observation_month": start.ordinal + obs[k],
                    "action": act_codes[a].astype(np.int8),
                    "ppa": p.astype(np.int8),
                    "count": counts.reshape(-1),
                }
            )
        )
        n_urls += n

    frame = pd.concat(cohorts, ignore_index=True)
    width = max(7, len(str(n_urls)))
    url_ids = np.array([f"u{i:0{width}d}" for i in range(n_urls)], dtype=object)
    used_dom = np.unique(frame["domain"].to_numpy())
    frame["url_id"] = pd.Categorical.from_codes(frame["url"].to_numpy(), categories=url_ids)
    frame["domain_id"] = pd.Categorical.from_codes(
        np.searchsorted(used_dom, frame["domain"].to_numpy()), categories=dom_ids[used_dom]
    )
    table = EngagementTable.from_frame(frame, domains, validate=False)
    log.info("generated %d urls, %d rows over %d months", n_urls, len(table), horizon)
    manifest = GroundTruthManifest(
        seed=int(seed),
        start_month=spec.start_month,
        horizon=int(horizon),
        trend=trend,
        population=spec,
        domains=domains,
        monthly_truth=compute_monthly_truth(trim_months(table, start.ordinal)),
        true_table=table,
    )
    return table, manifest


# --- privacy release ---------------------------------------------------------------------

def inclusion_months(table: EngagementTable, noise: NoiseModel, seed: int) -> np.ndarray:
    """First month each URL clears the Laplace-noised share threshold, as an
    array indexed by url category code (``-1`` when never included)."""
    f = table.frame
    codes = f["url_id"].cat.codes.to_numpy().astype(np.int64)
    obs = f["observation_month"].to_numpy()
    is_share = f["action"].to_numpy() == ActionType.SHARES.code
    # one Laplace draw per (url, month), in (url, month) order
    span = int(obs.max() - obs.min()) + 1 if len(obs) else 1
    pair = codes * span + (obs - (obs.min() if len(obs) else 0))
    uniq_key, inv = np.unique(pair, return_inverse=True)
    uniq = np.stack([uniq_key // span, uniq_key % span + (obs.min() if len(obs) else 0)], axis=1)
    shares = np.bincount(inv, weights=np.where(is_share, f["count"].to_numpy(), 0.0), minlength=len(uniq))
    lap = derive_rng(seed, "release", "laplace").laplace(0.0, noise.laplace_scale_b, size=len(uniq))
    passed = shares + lap >= noise.share_threshold
    n_cat = len(f["url_id"].cat.categories)
    first = np.full(n_cat, np.iinfo(np.int64).max)
    np.minimum.at(first, uniq[passed, 0], uniq[passed, 1])
    first[first == np.iinfo(np.int64).max] = -1
    return first


def trim_months(table: EngagementTable, from_month: int) -> EngagementTable:
    """Drop observation months before ``from_month`` (a month ordinal)."""
    keep = table.frame["observation_month"].to_numpy() >= from_month
    if keep.all():
        return table
    out = table.frame.loc[keep].reset_index(drop=True)
    out["url_id"] = out["url_id"].cat.remove_unused_categories()
    out["domain_id"] = out["domain_id"].cat.remove_unused_categories()
    return EngagementTable(out, table.domains)


def apply_privacy_release(
    true: EngagementTable, noise: NoiseModel, seed: int, *, from_month: int | None = None
) -> EngagementTable:
    """Release a true panel the way the dataset does.

    A URL enters in the first month where its total shares plus Laplace
    noise reach the threshold and is then kept for every later month of the
    panel. Every released cell gets zero-mean Gaussian noise with the
    action's sigma; negative results are kept as they are. With
    ``from_month`` the released panel starts at that month ordinal, the
    inclusion decisions still using the earlier months.
    """
    f = true.frame
    incl = inclusion_months(true, noise, seed)
    codes = f["url_id"].cat.codes.to_numpy()
    inc_row = incl[codes]
    keep = (inc_row >= 0) & (f["observation_month"].to_numpy() >= inc_row)
    out = f.loc[keep].reset_index(drop=True)
    sig = noise.sigmas[out["action"].to_numpy()]
    eps = derive_rng(seed, "release", "gaussian").standard_normal(len(out))
    out["count"] = out["count"].to_numpy() + sig * eps
    out["url_id"] = out["url_id"].cat.remove_unused_categories()
    out["domain_id"] = out["domain_id"].cat.remove_unused_categories()
    released = EngagementTable(out, true.domains)
    return released if from_month is None else trim_months(released, from_month)
