"""Domain types shared by all modules: actions, PPA buckets, user groups,
domain scores, calendar months and score bins."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, SchemaError


class ActionType(Enum):
    VIEWS = "views"
    CLICKS = "clicks"
    SHARES = "shares"
    LIKES = "likes"
    COMMENTS = "comments"
    ANGERS = "angers"
    HAHAS = "hahas"
    WOWS = "wows"
    LOVES = "loves"
    SORRYS = "sorrys"

    @property
    def passive(self) -> bool:
        return self in (ActionType.VIEWS, ActionType.CLICKS)

    @property
    def code(self) -> int:
        return ACTIONS.index(self)

    @classmethod
    def parse(cls, value: "str | ActionType") -> "ActionType":
        if isinstance(value, ActionType):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown action {value!r}") from None


ACTIONS: tuple[ActionType, ...] = tuple(ActionType)


class PpaBucket(Enum):
    """Political page affinity bucket; ``UNDEFINED`` is distinct from 0."""

    MINUS_2 = -2
    MINUS_1 = -1
    ZERO = 0
    PLUS_1 = 1
    PLUS_2 = 2
    UNDEFINED = "nd"

    @property
    def code(self) -> int:
        return PPA_BUCKETS.index(self)

    @property
    def label(self) -> str:
        return "nd" if self is PpaBucket.UNDEFINED else str(self.value)

    @classmethod
    def parse(cls, value: "str | int | PpaBucket") -> "PpaBucket":
        if isinstance(value, PpaBucket):
            return value
        text = str(value).strip()
        if text == "nd":
            return cls.UNDEFINED
        if re.fullmatch(r"[+-]?\d+", text):
            n = int(text)
            if -2 <= n <= 2:
                return cls(n)
        raise ValueError(f"invalid PPA bucket {value!r}; expected one of -2,-1,0,1,2,nd")


PPA_BUCKETS: tuple[PpaBucket, ...] = tuple(PpaBucket)
DEFINED_BUCKETS: tuple[PpaBucket, ...] = PPA_BUCKETS[:5]


class UserGroup(Enum):
    CONSERVATIVE = "C"
    LIBERAL = "L"
    CENTRIST = "N"
    UNDEFINED = "D"

    @property
    def buckets(self) -> tuple[PpaBucket, ...]:
        return tuple(b for b in PPA_BUCKETS if map_ppa_to_group(b) is self)

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: "str | UserGroup") -> "UserGroup":
        if isinstance(value, UserGroup):
            return value
        for g in cls:
            if value in (g.value, g.name, g.label):
                return g
        raise ValueError(f"unknown user group {value!r}")


USER_GROUPS: tuple[UserGroup, ...] = tuple(UserGroup)

_GROUP_OF = {
    PpaBucket.PLUS_2: UserGroup.CONSERVATIVE,
    PpaBucket.PLUS_1: UserGroup.CONSERVATIVE,
    PpaBucket.ZERO: UserGroup.CENTRIST,
    PpaBucket.MINUS_1: UserGroup.LIBERAL,
    PpaBucket.MINUS_2: UserGroup.LIBERAL,
    PpaBucket.UNDEFINED: UserGroup.UNDEFINED,
}


def map_ppa_to_group(p: PpaBucket) -> UserGroup:
    return _GROUP_OF[PpaBucket.parse(p)]


# bucket code -> group index, for vectorised aggregation
GROUP_OF_CODE = np.array([USER_GROUPS.index(_GROUP_OF[b]) for b in PPA_BUCKETS], dtype=np.int64)


@dataclass(frozen=True, order=True)
class Month:
    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month must be in 1..12, got {self.month}")

    @classmethod
    def parse(cls, text: str) -> "Month":
        m = re.fullmatch(r"(\d{4})-(\d{2})", text.strip())
        if not m:
            raise ValueError(f"invalid month {text!r}; expected YYYY-MM")
        return cls(int(m.group(1)), int(m.group(2)))

    @classmethod
    def from_ordinal(cls, n: int) -> "Month":
        y, m = divmod(int(n), 12)
        return cls(y, m + 1)

    @property
    def ordinal(self) -> int:
        """Months since year 0; the integer representation used in tables."""
        return self.year * 12 + self.month - 1

    def index_from(self, start: "Month") -> int:
        return self.ordinal - start.ordinal

    def __add__(self, k: int) -> "Month":
        return Month.from_ordinal(self.ordinal + int(k))

    def __sub__(self, other: "Month") -> int:
        return self.ordinal - other.ordinal

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


def month_label(ordinal: int) -> str:
    return str(Month.from_ordinal(ordinal))


@dataclass(frozen=True)
class BinSpec:
    """Half-open bins ``[origin + k*width, origin + (k+1)*width)``; the last bin
    also includes its right edge."""

    origin: float
    width: float
    count: int

    def __post_init__(self):
        if not (self.width > 0 and math.isfinite(self.width)):
            raise ValueError("bin width must be positive")
        if self.count < 1:
            raise ValueError("bin count must be a positive integer")

    @property
    def upper(self) -> float:
        return self.origin + self.width * self.count

    @property
    def centers(self) -> np.ndarray:
        return self.origin + (np.arange(self.count) + 0.5) * self.width

    @property
    def edges(self) -> np.ndarray:
        return self.origin + np.arange(self.count + 1) * self.width

    def center(self, k: int) -> float:
        return self.origin + (k + 0.5) * self.width

    def index(self, scores) -> np.ndarray:
        """Vectorised ``bin_of``; raises on any out-of-range score."""
        s = np.asarray(scores, dtype=float)
        bad = ~((s >= self.origin) & (s <= self.upper))
        if bad.any():
            raise ValueError(
                f"score {s[bad].flat[0]!r} outside bin range [{self.origin}, {self.upper}]"
            )
        k = np.clip(np.floor((s - self.origin) / self.width).astype(np.int64), 0, self.count - 1)
        # settle round-off against the edges as reported by ``edges``
        k = np.where((k + 1 < self.count) & (s >= self.origin + (k + 1) * self.width), k + 1, k)
        k = np.where((k > 0) & (s < self.origin + k * self.width), k - 1, k)
        return k

    @classmethod
    def centered_on(cls, center: float, width: float, lo: float = 0.0, hi: float = 1.0) -> "BinSpec":
        """Smallest grid of the given width that covers ``[lo, hi]`` and has a
        bin centred exactly on ``center``."""
        k_below = math.ceil((center - 0.5 * width - lo) / width - 1e-9)
        origin = center - 0.5 * width - k_below * width
        count = math.ceil((hi - origin) / width - 1e-9)
        return cls(origin=origin, width=width, count=count)


def bin_of(score: float, spec: BinSpec) -> int:
    return int(spec.index([score])[0])


IDEOLOGY_BINS = BinSpec.centered_on(0.5, 0.094)
QUALITY_BINS = BinSpec.centered_on(0.58, 0.05)
IDEOLOGY_TIMELINE_BINS = BinSpec.centered_on(0.5, 0.05)


@dataclass(frozen=True)
class DomainInfo:
    domain_id: str
    ideology_raw: float
    quality: float
    ideology_norm: float = float("nan")

    def __post_init__(self):
        if not 0.0 <= self.quality <= 1.0:
            raise ValueError(f"quality of {self.domain_id!r} outside [0, 1]: {self.quality}")


@dataclass(frozen=True)
class DomainTable:
    """Domains with ideology min-max normalised over the table itself."""

    domains: tuple[DomainInfo, ...]
    raw_min: float
    raw_max: float
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {d.domain_id: i for i, d in enumerate(self.domains)})
        if len(self._index) != len(self.domains):
            raise DataError("duplicate domain_id in domain table")

    @classmethod
    def from_domains(cls, domains: Iterable[DomainInfo]) -> "DomainTable":
        normed = normalize_ideology(list(domains))
        raw = [d.ideology_raw for d in normed]
        return cls(tuple(normed), min(raw), max(raw))

    def __len__(self) -> int:
        return len(self.domains)

    def __iter__(self):
        return iter(self.domains)

    def __contains__(self, domain_id) -> bool:
        return domain_id in self._index

    def __getitem__(self, domain_id: str) -> DomainInfo:
        return self.domains[self._index[domain_id]]

    @property
    def ids(self) -> list[str]:
        return [d.domain_id for d in self.domains]

    def ideology(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self[i].ideology_norm for i in ids], dtype=float)

    def quality(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self[i].quality for i in ids], dtype=float)

    def to_raw(self, ideology_norm):
        return self.raw_min + np.asarray(ideology_norm) * (self.raw_max - self.raw_min)

    def gap_to_raw(self, gap):
        return np.asarray(gap) * (self.raw_max - self.raw_min)

    def metadata(self) -> dict:
        return {"ideology_raw_min": self.raw_min, "ideology_raw_max": self.raw_max, "n_domains": len(self)}


def normalize_ideology(table: Sequence[DomainInfo]) -> list[DomainInfo]:
    """Min-max rescale ``ideology_raw`` onto [0, 1] over the given table."""
    if not table:
        raise DataError("cannot normalise an empty domain table")
    raw = np.array([d.ideology_raw for d in table], dtype=float)
    lo, hi = float(raw.min()), float(raw.max())
    if not hi > lo:
        raise DataError(
            f"degenerate domain table: all ideology_raw values equal ({lo}); need at least two distinct values"
        )
    span = hi - lo
    return [replace(d, ideology_norm=min(1.0, max(0.0, (d.ideology_raw - lo) / span))) for d in table]


DOMAIN_HEADER = ["domain_id", "ideology_raw", "quality"]


def load_domains(path: str | Path) -> DomainTable:
    path = Path(path)
    rows = []
    seen = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DOMAIN_HEADER:
            raise SchemaError(f"expected header {','.join(DOMAIN_HEADER)}, got {header}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise SchemaError(f"expected 3 fields, got {len(row)}", line=lineno)
            did = row[0]
            try:
                raw, q = float(row[1]), float(row[2])
            except ValueError:
                raise SchemaError(f"non-numeric score in {row}", line=lineno) from None
            if not (math.isfinite(raw) and 0.0 <= q <= 1.0):
                raise SchemaError(f"score out of range in {row}", line=lineno)
            if did in seen:
                raise SchemaError(f"duplicate domain_id {did!r}", line=lineno)
            seen.add(did)
            rows.append(DomainInfo(did, raw, q))
    return DomainTable.from_domains(rows)


def write_domains(table: DomainTable | Iterable[DomainInfo], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DOMAIN_HEADER)
        for d in table:
            w.writerow([d.domain_id, repr(float(d.ideology_raw)), repr(float(d.quality))])
