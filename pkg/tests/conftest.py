from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from newsdiet.ingest import EngagementTable
from newsdiet.model import ACTIONS, PPA_BUCKETS, DomainInfo, DomainTable, Month

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_domains(n: int = 5, seed: int = 0) -> DomainTable:
    rng = np.random.default_rng(seed)
    raw = np.linspace(-1.0, 1.0, n)
    q = rng.uniform(0.05, 0.95, n)
    return DomainTable.from_domains(DomainInfo(f"d{i}", float(raw[i]), float(q[i])) for i in range(n))


def make_table(rows, domains: DomainTable) -> EngagementTable:
    """rows: (url, domain, first 'YYYY-MM', obs 'YYYY-MM', action str, ppa label, count)."""
    act = {a.value: i for i, a in enumerate(ACTIONS)}
    ppa = {b.label: i for i, b in enumerate(PPA_BUCKETS)}
    frame = pd.DataFrame(
        {
            "url_id": [r[0] for r in rows],
            "domain_id": [r[1] for r in rows],
            "first_month": [Month.parse(r[2]).ordinal for r in rows],
            "observation_month": [Month.parse(r[3]).ordinal for r in rows],
            "action": [act[r[4]] for r in rows],
            "ppa": [ppa[str(r[5])] for r in rows],
            "count": [float(r[6]) for r in rows],
        }
    )
    return EngagementTable.from_frame(frame, domains)


@pytest.fixture
def domains() -> DomainTable:
    return make_domains()
