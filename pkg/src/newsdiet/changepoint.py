"""Continuous piecewise-linear (segmented) regression and change regions.

Given breakpoints ``b_1 < ... < b_n`` the model is ordinary least squares in
the hinge basis ``{1, t, max(0, t - b_j)}``, which is continuous by
construction. Breakpoints are searched on a grid (exhaustively when the
number of combinations is small, otherwise by multi-start coordinate
descent) and then polished with a derivative-free local search.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize

from .rng import derive_rng

GRID_STEP = 0.25
MIN_SEGMENT = 3
N_STARTS = 8
MAX_EXHAUSTIVE = 50_000
_CHUNK = 4096


@dataclass(frozen=True)
class SegmentedFit:
    breakpoints: tuple[float, ...]
    slopes: tuple[float, ...]
    intercepts: tuple[float, ...]
    sse: float
    bic: float
    n_points: int
    t_first: float
    t_last: float
    coef: tuple[float, ...] = field(repr=False, default=())

    @property
    def n_breakpoints(self) -> int:
        return len(self.breakpoints)

    @property
    def n_params(self) -> int:
        return 2 + 2 * self.n_breakpoints

    def predict(self, t) -> np.ndarray:
        return _design(np.asarray(t, dtype=float), np.asarray(self.breakpoints)) @ np.asarray(self.coef)

    def continuity_gap(self) -> float:
        """Largest jump between adjacent segment lines at the breakpoints."""
        gaps = [
            abs((self.intercepts[i] + self.slopes[i] * b) - (self.intercepts[i + 1] + self.slopes[i + 1] * b))
            for i, b in enumerate(self.breakpoints)
        ]
        return max(gaps, default=0.0)

    def to_dict(self) -> dict:
        bounds = (self.t_first,) + self.breakpoints + (self.t_last,)
        return {
            "breakpoints": list(self.breakpoints),
            "segments": [
                {"start": bounds[i], "end": bounds[i + 1], "slope": self.slopes[i], "intercept": self.intercepts[i]}
                for i in range(len(self.slopes))
            ],
            "sse": self.sse,
            "bic": self.bic,
            "n_points": self.n_points,
        }


def _design(t: np.ndarray, bps: np.ndarray) -> np.ndarray:
    cols = [np.ones_like(t), t] + [np.maximum(t - b, 0.0) for b in bps]
    return np.stack(cols, axis=-1)


def _validate(series) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("series must be a sequence of (month, value) pairs")
    t, y = arr[:, 0], arr[:, 1]
    if not np.isfinite(arr).all():
        raise ValueError("series contains non-finite values")
    if len(t) > 1 and not (np.diff(t) > 0).all():
        raise ValueError("months must be strictly increasing")
    return t, y


def information_criterion(sse: float, n: int, n_params: int, floor: float = 0.0, kind: str = "bic") -> float:
    s = max(sse, floor) / n
    if s <= 0:
        return -math.inf
    penalty = n_params * math.log(n) if kind == "bic" else 2.0 * n_params
    return n * math.log(s) + penalty


class _Problem:
    """Batched SSE evaluation for one series."""

    def __init__(self, t, y, min_seg, grid_step):
        self.t, self.y = t, y
        self.T = len(t)
        self.min_seg = min_seg
        # scaled time for well-conditioned normal equations
        self.t0, self.ts = t.mean(), max(t.max() - t.min(), 1e-12)
        self.u = (t - self.t0) / self.ts
        k = np.arange(1, int(math.floor((t[-1] - t[0]) / grid_step)) + 1)
        grid = t[0] + k * grid_step
        self.grid = grid[(grid > t[0]) & (grid < t[-1])]

    def feasible(self, bps: np.ndarray) -> np.ndarray:
        """Row mask over (K, n) breakpoint sets: strictly inside, increasing,
        at least ``min_seg`` observations per segment."""
        bps = np.atleast_2d(bps)
        ok = (bps > self.t[0]).all(axis=1) & (bps < self.t[-1]).all(axis=1)
        if bps.shape[1] > 1:
            ok &= (np.diff(bps, axis=1) > 0).all(axis=1)
        # observations with t <= b
        cum = np.searchsorted(self.t, bps, side="right")
        edges = np.concatenate([np.zeros((len(bps), 1), int), cum, np.full((len(bps), 1), self.T)], axis=1)
        ok &= (np.diff(edges, axis=1) >= self.min_seg).all(axis=1)
        return ok

    def sse(self, bps: np.ndarray) -> np.ndarray:
        bps = np.atleast_2d(np.asarray(bps, dtype=float))
        out = np.empty(len(bps))
        for s in range(0, len(bps), _CHUNK):
            b = (bps[s:s + _CHUNK] - self.t0) / self.ts
            X = np.concatenate(
                [
                    np.ones((len(b), self.T, 1)),
                    np.broadcast_to(self.u[None, :, None], (len(b), self.T, 1)),
                    np.maximum(self.u[None, :, None] - b[:, None, :], 0.0),
                ],
                axis=2,
            )
            XtX = np.einsum("ktp,ktq->kpq", X, X)
            Xty = np.einsum("ktp,t->kp", X, self.y)
            beta = np.linalg.solve(XtX, Xty[..., None])[..., 0]
            r = self.y[None, :] - np.einsum("ktp,kp->kt", X, beta)
            out[s:s + _CHUNK] = np.einsum("kt,kt->k", r, r)
        return out

    def exact_sse(self, bps) -> float:
        X = _design(self.t, np.asarray(bps, dtype=float))
        beta, *_ = np.linalg.lstsq(X, self.y, rcond=None)
        r = self.y - X @ beta
        return float(r @ r)


def _n_combinations(n_grid: int, n: int) -> int:
    return math.comb(n_grid, n)


def _exhaustive(p: _Problem, n: int) -> tuple[np.ndarray, float]:
    best_b, best_s = None, math.inf
    combos = itertools.combinations(range(len(p.grid)), n)
    while True:
        chunk = list(itertools.islice(combos, _CHUNK * 4))
        if not chunk:
            break
        bps = p.grid[np.array(chunk)]
        bps = bps[p.feasible(bps)]
        if not len(bps):
            continue
        s = p.sse(bps)
        i = int(np.argmin(s))
        if s[i] < best_s:
            best_b, best_s = bps[i].copy(), float(s[i])
    return best_b, best_s


def _coordinate_descent(p: _Problem, start: np.ndarray, max_sweeps: int = 50) -> tuple[np.ndarray, float]:
    b = np.array(start, dtype=float)
    cur = float(p.sse(b)[0])
    for _ in range(max_sweeps):
        improved = False
        for j in range(len(b)):
            cand = np.repeat(b[None, :], len(p.grid), axis=0)
            cand[:, j] = p.grid
            cand = cand[p.feasible(cand)]
            if not len(cand):
                continue
            s = p.sse(cand)
            i = int(np.argmin(s))
            if s[i] < cur * (1 - 1e-12) - 1e-300:
                b, cur, improved = cand[i].copy(), float(s[i]), True
        if not improved:
            break
    return b, cur


def _random_start(p: _Problem, n: int, rng: np.random.Generator, tries: int = 200) -> np.ndarray | None:
    for _ in range(tries):
        b = np.sort(rng.choice(p.grid, size=n, replace=False))
        if p.feasible(b)[0]:
            return b
    return None


def _insertions(p: _Problem, prev: np.ndarray) -> np.ndarray | None:
    """Best feasible way to add one grid breakpoint to ``prev``."""
    cand = np.sort(np.concatenate([np.repeat(prev[None, :], len(p.grid), axis=0), p.grid[:, None]], axis=1), axis=1)
    cand = cand[p.feasible(cand)]
    if not len(cand):
        return None
    return cand[int(np.argmin(p.sse(cand)))]


def _refine(p: _Problem, b0: np.ndarray, s0: float) -> tuple[np.ndarray, float]:
    def f(b):
        b = np.sort(b)
        if not p.feasible(b)[0]:
            return s0 * 2 + 1.0
        return float(p.sse(b)[0])

    simplex = np.vstack([b0] + [b0 + GRID_STEP * e for e in np.eye(len(b0))])
    res = optimize.minimize(
        f, b0, method="Nelder-Mead",
        options={"initial_simplex": simplex, "xatol": 1e-7, "fatol": s0 * 1e-13, "maxiter": 400 * len(b0)},
    )
    b = np.sort(res.x)
    if p.feasible(b)[0] and res.fun < s0:
        return b, float(res.fun)
    return b0, s0


def _build_fit(p: _Problem, bps: np.ndarray, floor: float, criterion: str) -> SegmentedFit:
    bps = np.sort(np.asarray(bps, dtype=float))
    X = _design(p.t, bps)
    beta, *_ = np.linalg.lstsq(X, p.y, rcond=None)
    r = p.y - X @ beta
    sse = float(r @ r)
    slopes, intercepts = [beta[1]], [beta[0]]
    for j, b in enumerate(bps):
        slopes.append(slopes[-1] + beta[2 + j])
        intercepts.append(intercepts[-1] - beta[2 + j] * b)
    k = 2 + 2 * len(bps)
    return SegmentedFit(
        breakpoints=tuple(float(b) for b in bps),
        slopes=tuple(float(s) for s in slopes),
        intercepts=tuple(float(c) for c in intercepts),
        sse=sse,
        bic=information_criterion(sse, p.T, k, floor, criterion),
        n_points=p.T,
        t_first=float(p.t[0]),
        t_last=float(p.t[-1]),
        coef=tuple(float(c) for c in beta),
    )


def _sse_floor(y: np.ndarray) -> float:
    # below this SSE a fit is treated as exact, so the criterion is not driven by round-off
    rng = float(np.ptp(y)) if len(y) else 0.0
    return len(y) * (1e-9 * rng) ** 2


def _fit_chain(
    series,
    max_breakpoints: int,
    *,
    grid_step: float = GRID_STEP,
    min_segment: int = MIN_SEGMENT,
    n_starts: int = N_STARTS,
    seed: int = 0,
    max_exhaustive: int = MAX_EXHAUSTIVE,
    criterion: str = "bic",
) -> list[SegmentedFit]:
    if max_breakpoints < 0:
        raise ValueError("n_breakpoints must be non-negative")
    t, y = _validate(series)
    need = max(2 * (max_breakpoints + 1) + 2, min_segment * (max_breakpoints + 1))
    if len(t) < need:
        raise ValueError(f"series too short for {max_breakpoints} breakpoints: {len(t)} points, need {need}")
    p = _Problem(t, y, min_segment, grid_step)
    floor = _sse_floor(y)
    fits = [_build_fit(p, np.empty(0), floor, criterion)]
    prev = np.empty(0)
    prev_sse = fits[0].sse
    for n in range(1, max_breakpoints + 1):
        candidates = []
        if _n_combinations(len(p.grid), n) <= max_exhaustive:
            b, s = _exhaustive(p, n)
            if b is not None:
                candidates.append((s, b))
        else:
            even = np.quantile(t, np.arange(1, n + 1) / (n + 1))
            starts = [p.grid[np.abs(p.grid[:, None] - even[None, :]).argmin(axis=0)]]
            rng = derive_rng(seed, "segments", n)
            for _ in range(n_starts):
                r = _random_start(p, n, rng)
                if r is not None:
                    starts.append(r)
            for st in starts:
                if p.feasible(st)[0]:
                    b, s = _coordinate_descent(p, st)
                    candidates.append((s, b))
        ins = _insertions(p, prev) if n > 1 else None
        if ins is not None:
            b, s = _coordinate_descent(p, ins)
            candidates.append((s, b))
        if not candidates:
            raise ValueError(f"no feasible placement of {n} breakpoints with min segment {min_segment}")
        s, b = min(candidates, key=lambda c: c[0])
        b, s = _refine(p, b, s)
        fit = _build_fit(p, b, floor, criterion)
        # keep the nested-model guarantee against solver round-off
        if fit.sse > prev_sse and ins is not None:
            fit = _build_fit(p, ins, floor, criterion)
        fits.append(fit)
        prev, prev_sse = np.asarray(fit.breakpoints), fit.sse
    return fits


def fit_segments(series, n_breakpoints: int, **kw) -> SegmentedFit:
    """Least-squares continuous piecewise-linear fit with ``n_breakpoints`` kinks.

    ``series`` is a sequence of (month, value) pairs with strictly increasing
    months. Keyword options: ``grid_step`` (0.25), ``min_segment`` (3),
    ``n_starts`` (8), ``seed``, ``max_exhaustive``.
    """
    return _fit_chain(series, n_breakpoints, **kw)[n_breakpoints]


def select_model(series, max_breakpoints: int = 3, **kw) -> SegmentedFit:
    """Fit 0..``max_breakpoints`` kinks and return the fit with the lowest
    information criterion (BIC unless ``criterion="aic"``)."""
    t, _ = _validate(series)
    max_feasible = max_breakpoints
    min_seg = kw.get("min_segment", MIN_SEGMENT)
    while max_feasible > 0 and len(t) < max(2 * (max_feasible + 1) + 2, min_seg * (max_feasible + 1)):
        max_feasible -= 1
    fits = _fit_chain(series, max_feasible, **kw)
    return min(fits, key=lambda f: (f.bic, f.n_breakpoints))


# --- change regions ---------------------------------------------------------------------


@dataclass(frozen=True)
class ChangeRegion:
    start: int
    end: int
    support: int
    breakpoints: tuple[tuple[str, float], ...]

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "support": self.support,
            "breakpoints": [{"series": s, "month": b} for s, b in self.breakpoints],
        }


def aggregate_regions(
    fits: Sequence[SegmentedFit] | dict,
    window_months: float = 2.0,
    min_support: int = 2,
) -> list[ChangeRegion]:
    """Single-linkage clustering of every breakpoint across series.

    Breakpoints closer than ``window_months`` chain into one cluster; a
    cluster backed by at least ``min_support`` distinct series becomes a
    region spanning its breakpoints, rounded outward to whole months.
    ``fits`` may be a list or a mapping of series name to fit.
    """
    items: Iterable = fits.items() if isinstance(fits, dict) else ((str(i), f) for i, f in enumerate(fits))
    points = sorted((b, name) for name, f in items for b in f.breakpoints)
    regions = []
    cluster: list[tuple[float, str]] = []

    def close():
        support = len({name for _, name in cluster})
        if cluster and support >= min_support:
            regions.append(
                ChangeRegion(
                    start=int(math.floor(cluster[0][0] + 1e-9)),
                    end=int(math.ceil(cluster[-1][0] - 1e-9)),
                    support=support,
                    breakpoints=tuple((name, b) for b, name in cluster),
                )
            )

    for b, name in points:
        if cluster and b - cluster[-1][0] > window_months:
            close()
            cluster = []
        cluster.append((b, name))
    close()
    return regions
