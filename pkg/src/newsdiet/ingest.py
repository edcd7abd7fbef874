"""Engagement panels: the in-memory table, the counts CSV format, and the
URL-age cutoff with its early-engagement repair."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError, SchemaError
from .model import ACTIONS, PPA_BUCKETS, ActionType, DomainTable, month_label

log = logging.getLogger(__name__)

COUNTS_HEADER = ["url_id", "domain_id", "first_month", "observation_month", "action", "ppa", "count"]
KEY = ["url_id", "observation_month", "action", "ppa"]

_ACTION_CODE = {a.value: i for i, a in enumerate(ACTIONS)}
_PPA_CODE = {b.label: i for i, b in enumerate(PPA_BUCKETS)}
_PPA_LABELS = np.array([b.label for b in PPA_BUCKETS], dtype=object)
_ACTION_LABELS = np.array([a.value for a in ACTIONS], dtype=object)


def _categorical(values) -> pd.Categorical:
    if isinstance(values, pd.Series):
        values = values.array
    if isinstance(values, pd.Categorical) and values.categories.is_monotonic_increasing:
        return values.remove_unused_categories()
    values = np.asarray(values, dtype=object)
    return pd.Categorical(values, categories=np.unique(values))


@dataclass(frozen=True)
class EngagementTable:
    """Long-format panel of (possibly noisy) counts.

    ``frame`` columns: url_id and domain_id (sorted categoricals),
    first_month and observation_month (month ordinals), action and ppa
    (integer codes into ``ACTIONS`` / ``PPA_BUCKETS``), count (float64).
    Rows are kept in canonical key order so every aggregate is independent
    of how the table was produced. Treat the frame as read-only.
    """

    frame: pd.DataFrame
    domains: DomainTable

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, domains: DomainTable, *, validate: bool = True) -> "EngagementTable":
        f = pd.DataFrame(
            {
                "url_id": _categorical(frame["url_id"]),
                "domain_id": _categorical(frame["domain_id"]),
                "first_month": np.asarray(frame["first_month"], dtype=np.int64),
                "observation_month": np.asarray(frame["observation_month"], dtype=np.int64),
                "action": np.asarray(frame["action"], dtype=np.int8),
                "ppa": np.asarray(frame["ppa"], dtype=np.int8),
                "count": np.asarray(frame["count"], dtype=np.float64),
            }
        )
        order = np.lexsort(
            (f["ppa"].to_numpy(), f["action"].to_numpy(), f["observation_month"].to_numpy(), f["url_id"].cat.codes.to_numpy())
        )
        f = f.iloc[order].reset_index(drop=True)
        table = cls(f, domains)
        if validate:
            table.validate()
        return table

    def validate(self) -> None:
        f = self.frame
        unknown = sorted(set(f["domain_id"].cat.categories) - set(self.domains.ids))
        if unknown:
            raise DataError(f"unknown domain ids: {unknown[:20]}{' ...' if len(unknown) > 20 else ''}")
        codes = f["url_id"].cat.codes.to_numpy()
        key = np.stack([codes, f["observation_month"].to_numpy(), f["action"].to_numpy(), f["ppa"].to_numpy()], axis=1)
        if len(key) > 1:
            same = np.all(key[1:] == key[:-1], axis=1)
            if same.any():
                i = int(np.flatnonzero(same)[0]) + 1
                raise DataError(f"duplicate key {tuple(f.loc[i, KEY])}")
        per_url = f.groupby(codes, sort=False)[["domain_id", "first_month"]].nunique()
        bad = per_url[(per_url > 1).any(axis=1)]
        if len(bad):
            url = f["url_id"].cat.categories[bad.index[0]]
            raise DataError(f"url {url!r} has inconsistent domain_id or first_month across rows")

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def months(self) -> np.ndarray:
        return np.unique(self.frame["observation_month"].to_numpy())

    @property
    def n_urls(self) -> int:
        return int(self.frame["url_id"].nunique())

    def total(self) -> float:
        return float(self.frame["count"].sum())

    def select(self, mask) -> "EngagementTable":
        return EngagementTable(self.frame.loc[np.asarray(mask)].reset_index(drop=True), self.domains)

    def month_slice(self, month: int, action: ActionType | None = None) -> pd.DataFrame:
        f = self.frame
        m = f["observation_month"].to_numpy() == month
        if action is not None:
            m &= f["action"].to_numpy() == ActionType.parse(action).code
        return f.loc[m]

    def url_scores(self, domain_ids) -> tuple[np.ndarray, np.ndarray]:
        """(normalised ideology, quality) for each element of ``domain_ids``."""
        ids = pd.Categorical(domain_ids)
        cats = list(ids.categories)
        ideo = self.domains.ideology(cats)
        qual = self.domains.quality(cats)
        return ideo[ids.codes], qual[ids.codes]


@dataclass(frozen=True)
class CutoffPolicy:
    max_age_months: int = 3

    def __post_init__(self):
        if int(self.max_age_months) != self.max_age_months or self.max_age_months < 0:
            raise ValueError("max_age_months must be a non-negative integer")


@dataclass(frozen=True)
class RepairReport:
    n_rows_in: int
    total_in: float
    n_folded: int
    count_folded: float
    n_dropped_early: int
    count_dropped_early: float
    n_dropped_age: int
    count_dropped_age: float
    max_age_months: int

    @property
    def count_dropped(self) -> float:
        return self.count_dropped_early + self.count_dropped_age

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["count_dropped"] = self.count_dropped
        return d


def apply_cutoff(table: EngagementTable, policy: CutoffPolicy = CutoffPolicy()) -> tuple[EngagementTable, RepairReport]:
    """Keep each URL only for ``max_age_months`` after its first month.

    Engagement reported one month before the first month is folded into the
    first month; anything earlier is dropped. Both repairs are reported.
    """
    f = table.frame
    counts = f["count"].to_numpy()
    offset = f["observation_month"].to_numpy() - f["first_month"].to_numpy()
    early = offset <= -2
    fold = offset == -1
    old = offset > policy.max_age_months

    report = RepairReport(
        n_rows_in=len(f),
        total_in=float(counts.sum()),
        n_folded=int(fold.sum()),
        count_folded=float(counts[fold].sum()),
        n_dropped_early=int(early.sum()),
        count_dropped_early=float(counts[early].sum()),
        n_dropped_age=int(old.sum()),
        count_dropped_age=float(counts[old].sum()),
        max_age_months=int(policy.max_age_months),
    )

    kept = f.loc[~(early | old)]
    if fold.any():
        kept = kept.copy()
        kept.loc[fold[~(early | old)], "observation_month"] = kept.loc[fold[~(early | old)], "first_month"]
        kept = (
            kept.groupby(["url_id", "observation_month", "action", "ppa"], observed=True, sort=False)
            .agg(domain_id=("domain_id", "first"), first_month=("first_month", "first"), count=("count", "sum"))
            .reset_index()
        )
        out = EngagementTable.from_frame(kept, table.domains, validate=False)
    else:
        out = EngagementTable(kept.reset_index(drop=True), table.domains)
    if report.n_folded or report.n_dropped_early:
        log.info(
            "cutoff repair: folded %d rows (%.6g), dropped %d early rows (%.6g)",
            report.n_folded, report.count_folded, report.n_dropped_early, report.count_dropped_early,
        )
    return out, report


def _bad_line(mask: np.ndarray, what: str, values) -> SchemaError:
    i = int(np.flatnonzero(mask)[0])
    return SchemaError(f"invalid {what} {values[i]!r}", line=i + 2)


def _parse_months(col: np.ndarray, what: str) -> np.ndarray:
    s = pd.Series(col, dtype=object)
    ok = s.str.fullmatch(r"\d{4}-(0[1-9]|1[0-2])").fillna(False).to_numpy(dtype=bool)
    if not ok.all():
        raise _bad_line(~ok, what, col)
    year = s.str.slice(0, 4).astype(np.int64).to_numpy()
    month = s.str.slice(5, 7).astype(np.int64).to_numpy()
    return year * 12 + month - 1


def load_counts(path: str | Path, domains: DomainTable) -> EngagementTable:
    """Parse a counts CSV into a validated ``EngagementTable``.

    An optional trailing ``posting_month`` column overrides ``first_month``
    where it is non-empty.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n").split(",")
    if header not in (COUNTS_HEADER, COUNTS_HEADER + ["posting_month"]):
        raise SchemaError(f"expected header {','.join(COUNTS_HEADER)}, got {','.join(header)}", line=1)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    except pd.errors.ParserError as exc:
        raise SchemaError(f"malformed CSV: {exc}") from None

    cols = {c: raw[c].to_numpy(dtype=object) for c in raw.columns}
    first = _parse_months(cols["first_month"], "first_month")
    obs = _parse_months(cols["observation_month"], "observation_month")
    if "posting_month" in cols:
        given = cols["posting_month"] != ""
        if given.any():
            first = first.copy()
            first[given] = _parse_months(cols["posting_month"][given], "posting_month")

    action = pd.Series(cols["action"]).map(_ACTION_CODE)
    if action.isna().any():
        raise _bad_line(action.isna().to_numpy(), "action", cols["action"])
    ppa = pd.Series(cols["ppa"]).map(_PPA_CODE)
    if ppa.isna().any():
        raise _bad_line(ppa.isna().to_numpy(), "ppa bucket", cols["ppa"])

    try:
        count = np.array(cols["count"], dtype=np.float64) if len(raw) else np.zeros(0)
    except ValueError:
        bad = pd.to_numeric(pd.Series(cols["count"]), errors="coerce").isna().to_numpy()
        raise _bad_line(bad, "count", cols["count"]) from None
    if not np.isfinite(count).all():
        raise _bad_line(~np.isfinite(count), "count", cols["count"])
    for c in ("url_id", "domain_id"):
        empty = cols[c] == ""
        if empty.any():
            raise _bad_line(empty, c, cols[c])

    frame = pd.DataFrame(
        {
            "url_id": cols["url_id"],
            "domain_id": cols["domain_id"],
            "first_month": first,
            "observation_month": obs,
            "action": action.to_numpy(dtype=np.int8),
            "ppa": ppa.to_numpy(dtype=np.int8),
            "count": count,
        }
    )
    unknown = sorted(set(frame["domain_id"]) - set(domains.ids))
    if unknown:
        raise DataError(f"unknown domain ids in {path.name}: {unknown[:20]}")
    dup = frame.duplicated(KEY, keep="first").to_numpy()
    if dup.any():
        i = int(np.flatnonzero(dup)[0])
        raise SchemaError(f"duplicate key {tuple(frame.loc[i, KEY])}", line=i + 2)
    table = EngagementTable.from_frame(frame, domains)
    log.info("loaded %d rows (%d urls) from %s", len(table), table.n_urls, path)
    return table


def write_counts(table: EngagementTable, path: str | Path) -> None:
    f = table.frame
    months = np.union1d(f["first_month"].unique(), f["observation_month"].unique())
    labels = {int(m): month_label(int(m)) for m in months}
    out = pd.DataFrame(
        {
            "url_id": f["url_id"].astype(str),
            "domain_id": f["domain_id"].astype(str),
            "first_month": f["first_month"].map(labels),
            "observation_month": f["observation_month"].map(labels),
            "action": _ACTION_LABELS[f["action"].to_numpy()],
            "ppa": _PPA_LABELS[f["ppa"].to_numpy()],
            "count": [repr(c) for c in f["count"].tolist()],
        }
    )
    out.to_csv(path, index=False, lineterminator="\n")

