"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 SNR gate failure,
4 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd

from .errors import ConfigError, DataError, NewsDietError
from .ingest import apply_cutoff
from .pipeline import (
    PipelineConfig,
    compare_cutoffs,
    fit_changepoints,
    load_input,
    run_pipeline,
    timelines,
    write_json,
    write_synthetic,
)

log = logging.getLogger("newsdiet")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--counts", help="counts CSV (switches to file input)")
    p.add_argument("--domains", help="domains CSV (switches to file input)")
    p.add_argument("--horizon", type=int, help="synthetic panel length in months")
    p.add_argument("--cutoff", type=int, help="keep URLs for this many months after their first month")
    p.add_argument("--tlow", type=float, help="low-quality threshold")
    p.add_argument("--snr-gate", type=float)
    p.add_argument("--bootstrap", type=int, help="bootstrap replicates per month")
    p.add_argument("--breaks-max", type=int, help="largest number of breakpoints considered")
    p.add_argument("--sigma", type=float, help="uniform per-cell noise std for every action")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="newsdiet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic panel with its ground truth")
    _common(p)
    p = sub.add_parser("metrics", help="compute every metric table (no change points)")
    _common(p)
    p = sub.add_parser("changepoints", help="fit segmented regressions to engagement timelines")
    _common(p)
    p.add_argument("--timeline", help="CSV with month, series and value columns (e.g. a fig4.csv)")
    p.add_argument("--value", default="count", help="value column of --timeline (default: count)")
    p = sub.add_parser("pipeline", help="run the full analysis and write the report bundle")
    _common(p)
    p = sub.add_parser("compare-cutoffs", help="divergence of all outputs across URL-age cutoffs")
    _common(p)
    p.add_argument("--ages", default="3,6,12", help="comma-separated cutoffs (default: 3,6,12)")
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    base: dict = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")
    flags = {
        "seed": args.seed,
        "out": args.out,
        "horizon": args.horizon,
        "cutoff": args.cutoff,
        "t_low": args.tlow,
        "snr_gate": args.snr_gate,
        "bootstrap": args.bootstrap,
        "counts_path": args.counts,
        "domains_path": args.domains,
    }
    base.update({k: v for k, v in flags.items() if v is not None})
    if args.counts or args.domains:
        base["input"] = "files"
    if args.breaks_max is not None:
        base["changepoints"] = dict(base.get("changepoints", {}), max_breakpoints=args.breaks_max)
    if args.sigma is not None:
        noise = dict(base.get("noise", {}))
        noise.pop("sigma_per_action", None)
        base["noise"] = noise | {"sigma": args.sigma}
    return PipelineConfig.from_dict(base)


def _read_timeline(path: str, value: str) -> pd.DataFrame:
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot read timeline {path}: {exc}") from None
    missing = {"month", value} - set(df.columns)
    if missing:
        raise DataError(f"timeline {path} lacks columns {sorted(missing)}")
    if "series" not in df.columns:
        df["series"] = value
    if "t" not in df.columns:
        months = sorted(df["month"].unique())
        df["t"] = df["month"].map({m: i for i, m in enumerate(months)})
    return df[["month", "t", "series"]].assign(count=df[value])


def _cmd_synth(cfg: PipelineConfig) -> None:
    if not cfg.out:
        raise ConfigError("synth needs --out")
    truth = write_synthetic(cfg, cfg.out)
    print(f"wrote synthetic panel ({len(truth.domains)} domains, {truth.horizon} months) to {cfg.out}")


def _cmd_changepoints(cfg: PipelineConfig, args) -> None:
    if args.timeline:
        fig4 = _read_timeline(args.timeline, args.value)
    else:
        raw, _ = load_input(cfg)
        table, _ = apply_cutoff(raw, cfg.cutoff)
        fig4 = timelines(table, cfg.noise, cfg.k)
    doc = fit_changepoints(fig4, cfg.changepoints, cfg.seed)
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        write_json(doc, Path(cfg.out) / "changepoints.json")
    for r in doc["regions"]:
        print(f"region {r['start_month'] or r['start']}..{r['end_month'] or r['end']} support={r['support']}")
    if not doc["regions"]:
        print("no change regions")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "synth":
            _cmd_synth(cfg)
        elif args.command == "metrics":
            bundle = run_pipeline(cfg, changepoints=False)
            print(f"metrics for {len(bundle.manifest['months'])} months" + (f" written to {cfg.out}" if cfg.out else ""))
        elif args.command == "changepoints":
            _cmd_changepoints(cfg, args)
        elif args.command == "pipeline":
            bundle = run_pipeline(cfg)
            n_reg = len(bundle.changepoints.get("regions", []))
            print(f"pipeline done: {len(bundle.manifest['months'])} months, {n_reg} change regions"
                  + (f", written to {cfg.out}" if cfg.out else ""))
        elif args.command == "compare-cutoffs":
            try:
                ages = [int(a) for a in args.ages.split(",") if a.strip()]
            except ValueError:
                raise ConfigError(f"--ages must be comma-separated integers, got {args.ages!r}") from None
            table = compare_cutoffs(cfg, ages)
            if cfg.out:
                Path(cfg.out).mkdir(parents=True, exist_ok=True)
                table.to_csv(Path(cfg.out) / "cutoffs.csv", index=False, lineterminator="\n")
            print(table.to_string(index=False))
    except NewsDietError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
