"""End-to-end workflow: synthesize or load a panel, apply the URL-age cutoff,
compute every metric table, detect change points and write the bundle."""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import pandas as pd

from . import __version__
from .changepoint import GRID_STEP, MIN_SEGMENT, N_STARTS, aggregate_regions, select_model
from .errors import ConfigError, DataError, NewsDietError
from .ingest import CutoffPolicy, EngagementTable, apply_cutoff, load_counts, write_counts
from .metrics import (
    DEFAULT_K,
    DEFAULT_SNR_GATE,
    DEFAULT_T_LOW,
    UrlWeights,
    binned_distribution,
    bootstrap_ci,
    conditional_distribution,
    gap_of,
    low_quality_of,
    moments_of,
    normalized_engagement,
    snr_from_sums,
    weighted_mean_std,
    url_weights,
)
from .model import (
    ACTIONS,
    DEFINED_BUCKETS,
    IDEOLOGY_BINS,
    IDEOLOGY_TIMELINE_BINS,
    PPA_BUCKETS,
    QUALITY_BINS,
    USER_GROUPS,
    ActionType,
    BinSpec,
    Month,
    load_domains,
    month_label,
    write_domains,
)
from .noise import NoiseModel
from .rng import seed_sequence
from .synth import (
    GroundTruthManifest,
    PopulationSpec,
    TrendSpec,
    apply_privacy_release,
    generate_domains,
    generate_panel,
    trim_months,
    population_from_dict,
    trend_from_dict,
)

log = logging.getLogger(__name__)

SCORES = ("ideology", "quality")
FIGURE_FILES = (
    "fig2_decay.csv",
    "fig3a.csv",
    "fig3b.csv",
    "fig3b_tv.csv",
    "fig3c.csv",
    "fig3c_tv.csv",
    "fig4.csv",
    "changepoints.json",
    "fig5.csv",
    "fig5_gap.csv",
    "fig5_lowq.csv",
    "fig6_violin.csv",
    "fig7_ideology.csv",
    "fig7_quality.csv",
    "weights.csv",
)


# --- configuration ----------------------------------------------------------------------

# formulas behind the uncertainty columns; both are reconstructions, not published definitions
METHODS = {
    "snr": {"formula": "abs(sum(count)) / sqrt(sum(sigma_action**2 over cells))", "reconstructed": True},
    "worst_case_interval": {
        "formula": "[(N - k*sN) / (D + k*sD), (N + k*sN) / (D - k*sD)], sX = sqrt(sum(sigma**2 over cells of X))",
        "reconstructed": True,
    },
    "bootstrap": {"resampling_unit": "url", "replicate_stream": "(seed, 'bootstrap', r)"},
}


def _bins_to_dict(b: BinSpec) -> dict:
    return {"origin": b.origin, "width": b.width, "count": b.count}


def _bins_from(value) -> BinSpec:
    if isinstance(value, BinSpec):
        return value
    if isinstance(value, Mapping):
        if set(value) == {"center", "width"} or set(value) == {"center", "width", "lo", "hi"}:
            return BinSpec.centered_on(**value)
        try:
            return BinSpec(float(value["origin"]), float(value["width"]), int(value["count"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bin spec needs origin/width/count or center/width: {exc}") from None
    raise ConfigError(f"invalid bin spec {value!r}")


@dataclass(frozen=True)
class ChangepointSettings:
    max_breakpoints: int = 3
    grid_step: float = GRID_STEP
    min_segment: int = MIN_SEGMENT
    n_starts: int = N_STARTS
    criterion: str = "bic"
    window_months: float = 2.0
    min_support: int = 2

    def __post_init__(self):
        if self.max_breakpoints < 0:
            raise ConfigError("max_breakpoints must be non-negative")
        if self.criterion not in ("bic", "aic"):
            raise ConfigError(f"criterion must be 'bic' or 'aic', got {self.criterion!r}")
        if not self.grid_step > 0 or self.min_segment < 2 or self.min_support < 1:
            raise ConfigError("invalid change-point settings")


@dataclass(frozen=True)
class PipelineConfig:
    input: str = "synth"
    counts_path: str | None = None
    domains_path: str | None = None
    seed: int = 0
    horizon: int = 48
    cutoff: CutoffPolicy = field(default_factory=CutoffPolicy)
    noise: NoiseModel = field(default_factory=NoiseModel)
    population: PopulationSpec = field(default_factory=PopulationSpec)
    trend: TrendSpec = field(default_factory=TrendSpec)
    ideology_bins: BinSpec = IDEOLOGY_BINS
    quality_bins: BinSpec = QUALITY_BINS
    timeline_ideology_bins: BinSpec = IDEOLOGY_TIMELINE_BINS
    timeline_quality_bins: BinSpec = QUALITY_BINS
    action: str = "clicks"
    t_low: float = DEFAULT_T_LOW
    snr_gate: float = DEFAULT_SNR_GATE
    k: float = DEFAULT_K
    bootstrap: int = 1000
    changepoints: ChangepointSettings = field(default_factory=ChangepointSettings)
    out: str | None = None

    def __post_init__(self):
        if self.input not in ("synth", "files"):
            raise ConfigError(f"input must be 'synth' or 'files', got {self.input!r}")
        if self.input == "files":
            for key in ("counts_path", "domains_path"):
                p = getattr(self, key)
                if not p:
                    raise ConfigError(f"file mode needs {key}")
                if not Path(p).is_file():
                    raise ConfigError(f"{key} does not exist: {p}")
        if self.bootstrap < 0:
            raise ConfigError("bootstrap replicates must be non-negative")
        if not 0.0 <= self.t_low <= 1.0:
            raise ConfigError("t_low must lie in [0, 1]")
        if not self.snr_gate >= 0 or not self.k > 0:
            raise ConfigError("snr_gate must be >= 0 and k > 0")
        ActionType.parse(self.action)

    # serialisation ------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "input": self.input,
            "counts_path": self.counts_path,
            "domains_path": self.domains_path,
            "seed": self.seed,
            "horizon": self.horizon,
            "cutoff": self.cutoff.max_age_months,
            "noise": self.noise.to_dict(),
            "population": self.population.to_dict(),
            "trend": dataclasses.asdict(self.trend),
            "ideology_bins": _bins_to_dict(self.ideology_bins),
            "quality_bins": _bins_to_dict(self.quality_bins),
            "timeline_ideology_bins": _bins_to_dict(self.timeline_ideology_bins),
            "timeline_quality_bins": _bins_to_dict(self.timeline_quality_bins),
            "action": self.action,
            "t_low": self.t_low,
            "snr_gate": self.snr_gate,
            "k": self.k,
            "bootstrap": self.bootstrap,
            "changepoints": dataclasses.asdict(self.changepoints),
            "out": self.out,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "cutoff" in d and not isinstance(d["cutoff"], CutoffPolicy):
                c = d["cutoff"]
                d["cutoff"] = CutoffPolicy(int(c["max_age_months"] if isinstance(c, Mapping) else c))
            if "noise" in d and not isinstance(d["noise"], NoiseModel):
                d["noise"] = NoiseModel.from_dict(d["noise"])
            if "population" in d and not isinstance(d["population"], PopulationSpec):
                d["population"] = population_from_dict(d["population"])
            if "trend" in d and not isinstance(d["trend"], TrendSpec):
                d["trend"] = trend_from_dict(d["trend"])
            for key in ("ideology_bins", "quality_bins", "timeline_ideology_bins", "timeline_quality_bins"):
                if key in d:
                    d[key] = _bins_from(d[key])
            if "changepoints" in d and not isinstance(d["changepoints"], ChangepointSettings):
                cp = dict(d["changepoints"])
                bad = set(cp) - set(ChangepointSettings.__dataclass_fields__)
                if bad:
                    raise ConfigError(f"unknown changepoints keys: {sorted(bad)}")
                d["changepoints"] = ChangepointSettings(**cp)
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    @property
    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out")  # where results go does not change them
        return hashlib.sha256(canonical_json(d).encode()).hexdigest()

    def excerpt(self, *keys: str) -> str:
        d = self.to_dict()
        return ", ".join(f"{k}={json.dumps(d[k], sort_keys=True)}" for k in keys if k in d)


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=True)


def _plain(obj):
    """Recursively turn numpy scalars/arrays and tuples into JSON types."""
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# --- bundle ---------------------------------------------------------------------------------

@dataclass
class ReportBundle:
    """All emitted tables plus run metadata.

    ``tables`` maps output file name to a frame; ``changepoints`` is the JSON
    document for change-point fits and regions; ``manifest`` carries the
    config, its hash, the seed, per-file gate outcomes and repair report.
    """

    tables: dict[str, pd.DataFrame]
    changepoints: dict
    manifest: dict
    truth: GroundTruthManifest | None = field(default=None, repr=False)
    table: EngagementTable | None = field(default=None, repr=False)

    def __getitem__(self, name: str) -> pd.DataFrame:
        return self.tables[name]

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(self.manifest, out / "manifest.json")
        for name in FIGURE_FILES:
            if name == "changepoints.json":
                if self.changepoints:
                    write_json(self.changepoints, out / name)
            elif name in self.tables:
                write_csv(self.tables[name], out / name)
        return out


def write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=True) + "\n", encoding="utf-8")


def write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, lineterminator="\n")


# --- stages -----------------------------------------------------------------------------------

@contextlib.contextmanager
def _stage(name: str, config: PipelineConfig, *keys: str):
    try:
        yield
    except NewsDietError as exc:
        if exc.stage is None:
            exc.stage = name
            if keys:
                exc.message = f"{exc.message} (config: {config.excerpt(*keys)})"
        raise
    except (ValueError, ArithmeticError) as exc:
        raise DataError(f"{exc} (config: {config.excerpt(*keys)})", stage=name) from exc


def load_input(config: PipelineConfig) -> tuple[EngagementTable, GroundTruthManifest | None]:
    if config.input == "files":
        domains = load_domains(config.domains_path)
        return load_counts(config.counts_path, domains), None
    domains = generate_domains(config.population, config.seed)
    true, truth = generate_panel(domains, config.population, config.trend, config.horizon, config.seed)
    start = Month.parse(config.population.start_month).ordinal
    released = apply_privacy_release(true, config.noise, config.seed, from_month=start)
    return released, truth


def decay_profile(table: EngagementTable, max_age: int | None = None) -> pd.DataFrame:
    """Share of each action's engagement by URL age in months (age >= 0)."""
    f = table.frame
    age = f["observation_month"].to_numpy() - f["first_month"].to_numpy()
    keep = age >= 0
    top = int(age[keep].max()) if keep.any() else 0
    top = top if max_age is None else min(top, max_age)
    rows = []
    for a in ACTIONS:
        sel = keep & (f["action"].to_numpy() == a.code) & (age <= top)
        tot = np.bincount(age[sel], weights=f["count"].to_numpy()[sel], minlength=top + 1)
        total = tot.sum()
        for g in range(top + 1):
            rows.append((a.value, g, float(tot[g]), float(tot[g] / total) if total else math.nan))
    return pd.DataFrame(rows, columns=["action", "age", "count", "share"])


def timelines(table: EngagementTable, noise: NoiseModel, k: float) -> pd.DataFrame:
    """Monthly totals per action plus the summed active engagement, each with
    its SNR, a +-k sigma band and the series divided by its own maximum."""
    f = table.frame
    months = table.months
    mi = np.searchsorted(months, f["observation_month"].to_numpy())
    act = f["action"].to_numpy().astype(np.int64)
    tot = np.zeros((len(ACTIONS), len(months)))
    cells = np.zeros_like(tot)
    np.add.at(tot, (act, mi), f["count"].to_numpy())
    np.add.at(cells, (act, mi), 1.0)
    var = cells * (noise.sigmas ** 2)[:, None]
    active = np.array([not a.passive for a in ACTIONS])
    series = [(a.value, tot[i], var[i]) for i, a in enumerate(ACTIONS)]
    series.append(("active", tot[active].sum(axis=0), var[active].sum(axis=0)))
    rows = []
    for name, y, v in series:
        top = y.max()
        for j, m in enumerate(months):
            half = k * math.sqrt(v[j])
            rows.append(
                (month_label(int(m)), j, name, y[j], snr_from_sums(y[j], v[j]), y[j] - half, y[j] + half,
                 y[j] / top if top > 0 else math.nan)
            )
    return pd.DataFrame(rows, columns=["month", "t", "series", "count", "snr", "wc_lo", "wc_hi", "normalized"])


def fit_changepoints(fig4: pd.DataFrame, settings: ChangepointSettings, seed: int) -> dict:
    fits, doc = {}, {}
    labels = fig4.drop_duplicates("t").set_index("t")["month"]
    for i, (name, grp) in enumerate(fig4.groupby("series", sort=True)):
        series = grp[["t", "count"]].to_numpy(dtype=float)
        try:
            fit = select_model(
                series, settings.max_breakpoints, grid_step=settings.grid_step, min_segment=settings.min_segment,
                n_starts=settings.n_starts, seed=seed, criterion=settings.criterion,
            )
        except ValueError as exc:
            doc[name] = {"skipped": str(exc)}
            continue
        fits[name] = fit
        doc[name] = fit.to_dict() | {"n_breakpoints": fit.n_breakpoints, "criterion": settings.criterion}
    regions = aggregate_regions(fits, settings.window_months, settings.min_support)

    def label(t: int) -> str | None:
        return labels.get(t)

    return {
        "axis": "t = months since the first observed month",
        "fits": doc,
        "regions": [r.to_dict() | {"start_month": label(r.start), "end_month": label(r.end)} for r in regions],
        "settings": dataclasses.asdict(settings),
    }


def _group_means(uw: UrlWeights) -> np.ndarray:
    out = []
    for g in USER_GROUPS:
        w, _ = uw.group(g)
        for s in SCORES:
            try:
                out.append(weighted_mean_std(uw.score(s), w)[0])
            except DataError:
                out.append(math.nan)
    return np.array(out)


def monthly_metrics(table: EngagementTable, config: PipelineConfig, *, bootstrap: int | None = None) -> dict[str, pd.DataFrame]:
    """Per-month weighted statistics, gap, low-quality share, violin
    histograms, timeline distributions and the per-URL weights behind them."""
    action = ActionType.parse(config.action)
    B = config.bootstrap if bootstrap is None else bootstrap
    stats_rows, gap_rows, lq_rows, violin_rows, weight_frames = [], [], [], [], []
    t_ideo, t_qual = config.timeline_ideology_bins, config.timeline_quality_bins
    fig7 = {"ideology": {}, "quality": {}}
    floored7 = {"ideology": {}, "quality": {}}
    for m in table.months:
        m = int(m)
        lab = month_label(m)
        uw = url_weights(table, action, m, config.noise)
        boot = None
        if B:
            boot = bootstrap_ci(uw, _group_means, B, seed=int(seed_sequence(config.seed, "monthly", m).generate_state(1)[0]))
        col = 0
        for g in USER_GROUPS:
            for s in SCORES:
                ws = moments_of(uw, g, s, snr_gate=config.snr_gate, k=config.k,
                                label=f"{s} mean ({action.value}, {g.label}, {lab})")
                row = {"month": lab, "group": g.label, "score": s} | ws.to_dict()
                if boot is not None:
                    row |= {"boot_std": float(boot.std[col]), "boot_q025": float(boot.q025[col]),
                            "boot_q975": float(boot.q975[col])}
                stats_rows.append(row)
                col += 1
                w, _ = uw.group(g)
                bins = t_ideo if s == "ideology" else t_qual
                probs, floored, _ = binned_distribution(uw.score(s), w, bins)
                for b, p in zip(bins.centers, probs):
                    violin_rows.append((lab, g.label, s, float(b), float(p), floored))
        gap, iv, sc, sl = gap_of(uw, snr_gate=config.snr_gate, k=config.k, label=f"ideology gap ({lab})")
        gap_rows.append((lab, gap, iv[0], iv[1], sc, sl))
        lq = low_quality_of(uw, config.t_low, None, snr_gate=config.snr_gate, k=config.k,
                            label=f"low-quality share ({lab})")
        lq_rows.append((lab, config.t_low, lq.value, lq.interval[0], lq.interval[1], lq.snr))
        w_all, _ = uw.group(None)
        for s, bins in (("ideology", t_ideo), ("quality", t_qual)):
            fig7[s][lab], floored7[s][lab], _ = binned_distribution(uw.score(s), w_all, bins)
        wf = pd.DataFrame({"month": lab, "url_id": uw.url_ids, "ideology": uw.ideology, "quality": uw.quality})
        for g in USER_GROUPS:
            wf[f"w_{g.label}"] = uw.group(g)[0]
            wf[f"cells_{g.label}"] = uw.group(g)[1].astype(np.int64)
        weight_frames.append(wf)

    out = {
        "fig5.csv": pd.DataFrame(stats_rows),
        "fig5_gap.csv": pd.DataFrame(
            gap_rows, columns=["month", "gap", "wc_lo", "wc_hi", "snr_conservative", "snr_liberal"]
        ),
        "fig5_lowq.csv": pd.DataFrame(lq_rows, columns=["month", "t_low", "share", "wc_lo", "wc_hi", "snr"]),
        "fig6_violin.csv": pd.DataFrame(
            violin_rows, columns=["month", "group", "score", "bin_center", "weight", "floored_mass"]
        ),
        "weights.csv": pd.concat(weight_frames, ignore_index=True),
    }
    for s, bins in (("ideology", t_ideo), ("quality", t_qual)):
        df = pd.DataFrame(fig7[s])
        df.insert(0, "bin_center", bins.centers)
        out[f"fig7_{s}.csv"] = df
    out["_floored7"] = floored7
    return out


def aggregate_tables(table: EngagementTable, config: PipelineConfig) -> dict[str, pd.DataFrame]:
    ne = normalized_engagement(table, noise=config.noise, snr_gate=config.snr_gate, k=config.k)
    rows = []
    for e, a in enumerate(ACTIONS):
        for j, b in enumerate(DEFINED_BUCKETS):
            rows.append(
                (a.value, b.label, ne.counts[e, j], ne.per_view[e, j], ne.per_view_interval[0, e, j],
                 ne.per_view_interval[1, e, j], ne.values[e, j], ne.interval[0, e, j], ne.interval[1, e, j],
                 ne.view_snr[j])
            )
    out = {
        "fig3a.csv": pd.DataFrame(
            rows,
            columns=["action", "ppa", "count", "per_view", "per_view_lo", "per_view_hi",
                     "normalized", "normalized_lo", "normalized_hi", "view_snr"],
        )
    }
    action = ActionType.parse(config.action)
    for name, dim, bins in (("fig3b", "ideology", config.ideology_bins), ("fig3c", "quality", config.quality_bins)):
        cd = conditional_distribution(table, action, dim, bins)
        out[f"{name}.csv"] = cd.to_frame()
        tv = cd.tv_from("nd")
        out[f"{name}_tv.csv"] = pd.DataFrame(
            {
                "ppa": [b.label for b in PPA_BUCKETS],
                "tv_from_nd": [tv[b.label] for b in PPA_BUCKETS],
                "floored_mass": cd.floored_mass,
                "total": cd.totals,
            }
        )
    return out


def _gate_summary(frame: pd.DataFrame, gate: float) -> dict:
    cols = [c for c in frame.columns if c == "snr" or c.startswith("snr_") or c.endswith("_snr")]
    if not cols:
        return {"gate": gate, "checked": False}
    values = frame[cols].to_numpy(dtype=float)
    return {"gate": gate, "checked": True, "min_snr": float(np.nanmin(values)) if values.size else None, "passed": True}


def run_pipeline(config: PipelineConfig, *, changepoints: bool = True, write: bool = True) -> ReportBundle:
    """Run every stage and, if ``config.out`` is set, write the bundle there."""
    with _stage("input", config, "input", "counts_path", "domains_path", "seed", "horizon"):
        raw, truth = load_input(config)
    with _stage("cutoff", config, "cutoff"):
        table, repair = apply_cutoff(raw, config.cutoff)
        if len(table) == 0:
            raise DataError("no records left after the cutoff")
    tables: dict[str, pd.DataFrame] = {}
    with _stage("decay", config, "cutoff"):
        tables["fig2_decay.csv"] = decay_profile(raw)
    with _stage("aggregate", config, "action", "snr_gate", "ideology_bins", "quality_bins"):
        tables.update(aggregate_tables(table, config))
    with _stage("timelines", config, "noise"):
        tables["fig4.csv"] = timelines(table, config.noise, config.k)
    with _stage("monthly", config, "action", "snr_gate", "t_low", "bootstrap"):
        monthly = monthly_metrics(table, config)
        floored7 = monthly.pop("_floored7")
        tables.update(monthly)
    cp_doc: dict = {}
    if changepoints:
        with _stage("changepoints", config, "changepoints"):
            cp_doc = fit_changepoints(tables["fig4.csv"], config.changepoints, config.seed)

    h = config.config_hash
    files = {
        name: {"config_hash": h, "seed": config.seed, "rows": len(df), "snr_gate": _gate_summary(df, config.snr_gate)}
        for name, df in tables.items()
    }
    if cp_doc:
        files["changepoints.json"] = {"config_hash": h, "seed": config.seed, "series": len(cp_doc["fits"])}
    manifest = {
        "package_version": __version__,
        "config": {k: v for k, v in config.to_dict().items() if k != "out"},
        "config_hash": h,
        "seed": config.seed,
        "files": files,
        "repair": repair.to_dict(),
        "domain_normalization": table.domains.metadata(),
        "months": [month_label(int(m)) for m in table.months],
        "n_urls": table.n_urls,
        "fig7_floored_mass": floored7,
        "methods": METHODS,
    }
    bundle = ReportBundle(tables, cp_doc, manifest, truth, table)
    if write and config.out:
        with _stage("write", config, "out"):
            bundle.write(config.out)
    return bundle


# --- synthetic data export -----------------------------------------------------------------

def write_synthetic(config: PipelineConfig, out_dir: str | Path) -> GroundTruthManifest:
    """Write domains.csv, the released counts.csv, the noise-free
    true_counts.csv and the ground-truth manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with _stage("synth", config, "seed", "horizon", "population", "trend"):
        released, truth = load_input(config.replace(input="synth"))
    manifest = truth.to_dict() | {"noise": config.noise.to_dict(), "config_hash": config.config_hash}
    write_json(manifest, out / "manifest.json")
    write_domains(truth.domains, out / "domains.csv")
    write_counts(released, out / "counts.csv")
    write_counts(trim_months(truth.true_table, Month.parse(truth.start_month).ordinal), out / "true_counts.csv")
    return truth


# --- cutoff robustness ----------------------------------------------------------------------

def _flatten(tables: dict[str, pd.DataFrame]) -> dict[str, pd.Series]:
    """Ratio-valued outputs keyed so values line up across runs."""
    out = {}
    f = tables["fig3a.csv"].set_index(["action", "ppa"])
    out["fig3a normalized"] = f["normalized"]
    for name in ("fig3b", "fig3c"):
        out[f"{name} probabilities"] = tables[f"{name}.csv"].set_index("bin_center").stack()
        out[f"{name} tv"] = tables[f"{name}_tv.csv"].set_index("ppa")["tv_from_nd"]
    f4 = tables["fig4.csv"].set_index(["series", "month"])
    out["fig4 normalized timeline"] = f4["normalized"]
    f5 = tables["fig5.csv"].set_index(["month", "group", "score"])
    out["fig5 mean"] = f5["mean"]
    out["fig5 std"] = f5["std"]
    out["fig5 gap"] = tables["fig5_gap.csv"].set_index("month")["gap"]
    out["fig5 low-quality share"] = tables["fig5_lowq.csv"].set_index("month")["share"]
    out["fig6 violin"] = tables["fig6_violin.csv"].set_index(["month", "group", "score", "bin_center"])["weight"]
    for s in SCORES:
        out[f"fig7 {s}"] = tables[f"fig7_{s}.csv"].set_index("bin_center").stack()
    return out


def compare_cutoffs(config: PipelineConfig, ages=(3, 6, 12)) -> pd.DataFrame:
    """Rerun the analysis under each URL-age cutoff and report, per output,
    the largest absolute difference between any two cutoffs."""
    ages = sorted({int(a) for a in ages})
    if len(ages) < 2:
        raise ConfigError("compare_cutoffs needs at least two cutoff values")
    with _stage("input", config, "input", "seed", "horizon"):
        raw, _ = load_input(config)
    runs = []
    for a in ages:
        cfg = config.replace(cutoff=CutoffPolicy(a))
        with _stage(f"cutoff={a}", cfg, "cutoff", "snr_gate"):
            table, _ = apply_cutoff(raw, cfg.cutoff)
            tables = aggregate_tables(table, cfg)
            tables["fig4.csv"] = timelines(table, cfg.noise, cfg.k)
            monthly = monthly_metrics(table, cfg, bootstrap=0)
            monthly.pop("_floored7")
            tables.update(monthly)
        runs.append(_flatten(tables))
    rows = []
    for metric in runs[0]:
        aligned = pd.concat([r[metric] for r in runs], axis=1, join="inner").to_numpy(dtype=float)
        div = float(np.nanmax(aligned.max(axis=1) - aligned.min(axis=1))) if len(aligned) else 0.0
        rows.append((metric, div, len(aligned)))
    return pd.DataFrame(rows, columns=["metric", "max_abs_divergence", "n_values"]).assign(
        cutoffs=",".join(map(str, ages))
    )
