"""Nonparametric comparisons used to grade instrumentation variants."""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaincc

__all__ = [
    "EffectReport",
    "TestResult",
    "cliffs_delta",
    "delta_value",
    "delta_magnitude",
    "mann_whitney_u",
    "kruskal_wallis",
    "effect_report",
    "skim_best",
    "skim_worst",
    "EXACT_LIMIT",
]

EXACT_LIMIT = 16
_THRESHOLDS = ((0.147, "negligible"), (0.33, "small"), (0.474, "medium"))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str = ""


@dataclass(frozen=True)
class EffectReport:
    cliffs_delta: float
    magnitude: str
    u_statistic: float
    p_value: float


def _sample(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError(f"sample {name} is empty")
    if np.isnan(arr).any():
        raise ValueError(f"sample {name} contains NaN")
    return arr


def delta_value(a, b) -> float:
    """``(#{a > b} - #{a < b}) / (|a| |b|)`` over all cross pairs."""
    a, b = _sample(a, "a"), _sample(b, "b")
    bs = np.sort(b)
    below = np.searchsorted(bs, a, side="left")
    above = bs.size - np.searchsorted(bs, a, side="right")
    return float(below.sum() - above.sum()) / (a.size * b.size)


def delta_magnitude(delta: float) -> str:
    d = abs(delta)
    for cut, name in _THRESHOLDS:
        if d < cut:
            return name
    return "large"


def _midranks(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average ranks (1-based) and the sizes of each tie block."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    edges = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate(([0], edges))
    ends = np.concatenate((edges, [xs.size]))
    ranks = np.empty(x.size)
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2
    return ranks, ends - starts


@lru_cache(maxsize=None)
def _u_counts(n1: int, n2: int) -> tuple[int, ...]:
    """Number of orderings giving each U value, for tie-free samples."""
    # c[i][j] is the polynomial for sizes (i, j); build by the standard
    # recurrence f(i, j) = z**j f(i-1, j) + f(i, j-1)
    prev = [[1] for _ in range(n2 + 1)]  # i = 0
    for i in range(1, n1 + 1):
        cur = [[1]]
        for j in range(1, n2 + 1):
            a = [0] * j + prev[j]
            b = cur[j - 1]
            size = max(len(a), len(b))
            cur.append([(a[k] if k < len(a) else 0) + (b[k] if k < len(b) else 0) for k in range(size)])
        prev = cur
    return tuple(prev[n2])


def _exact_p(u: float, n1: int, n2: int) -> float:
    counts = _u_counts(n1, n2)
    total = sum(counts)
    k = int(round(u))
    lower = sum(counts[: k + 1]) / total
    upper = sum(counts[k:]) / total
    return min(1.0, 2 * min(lower, upper))


def mann_whitney_u(a, b) -> TestResult:
    """Two-sided Mann-Whitney U test; ``statistic`` is ``U`` for sample ``a``.

    Exact null distribution when the samples total at most ``EXACT_LIMIT``
    values and have no ties, otherwise the normal approximation with
    tie-corrected variance and a 0.5 continuity correction.
    """
    a, b = _sample(a, "a"), _sample(b, "b")
    n1, n2 = a.size, b.size
    ranks, ties = _midranks(np.concatenate([a, b]))
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2)
    if n1 + n2 <= EXACT_LIMIT and np.all(ties == 1):
        return TestResult(u, _exact_p(u, n1, n2), "exact")
    n = n1 + n2
    mu = n1 * n2 / 2
    tie_term = float(np.sum(ties.astype(float) ** 3 - ties))
    var = n1 * n2 / 12 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        return TestResult(u, 1.0, "normal")
    z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var)
    return TestResult(u, min(1.0, math.erfc(z / math.sqrt(2))), "normal")


def kruskal_wallis(groups: Sequence) -> TestResult:
    """Tie-corrected Kruskal-Wallis H with a chi-square p-value."""
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    samples = [_sample(g, f"#{i}") for i, g in enumerate(groups)]
    sizes = np.array([s.size for s in samples])
    n = int(sizes.sum())
    ranks, ties = _midranks(np.concatenate(samples))
    bounds = np.concatenate(([0], np.cumsum(sizes)))
    rsum = np.array([ranks[bounds[i] : bounds[i + 1]].sum() for i in range(len(samples))])
    h = 12.0 / (n * (n + 1)) * float(np.sum(rsum**2 / sizes)) - 3.0 * (n + 1)
    correction = 1.0 - float(np.sum(ties.astype(float) ** 3 - ties)) / (n**3 - n)
    if correction <= 0:
        return TestResult(0.0, 1.0, "chi2")
    h = max(h / correction, 0.0)
    df = len(samples) - 1
    return TestResult(h, float(gammaincc(df / 2, h / 2)), "chi2")


def cliffs_delta(a, b) -> EffectReport:
    """Cliff's delta with its magnitude label and the matching U test."""
    d = delta_value(a, b)
    mw = mann_whitney_u(a, b)
    return EffectReport(d, delta_magnitude(d), mw.statistic, mw.p_value)


effect_report = cliffs_delta


def _as_items(groups) -> list[tuple[object, np.ndarray]]:
    if isinstance(groups, Mapping):
        items = list(groups.items())
    else:
        items = list(enumerate(groups))
    if len(items) < 2:
        raise ValueError("need at least two groups")
    return [(k, _sample(v, str(k))) for k, v in items]


def _skim(groups, alpha: float, worst: bool) -> list:
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie strictly between 0 and 1")
    items = _as_items(groups)
    if kruskal_wallis([v for _, v in items]).p_value >= alpha:
        return []
    pooled, _ = _midranks(np.concatenate([v for _, v in items]))
    mean_rank = []
    pos = 0
    for _, v in items:
        mean_rank.append(pooled[pos : pos + v.size].mean())
        pos += v.size
    order = sorted(range(len(items)), key=lambda i: (-mean_rank[i] if worst else mean_rank[i], i))
    lead = items[order[0]][1]
    m = len(order) - 1
    for step, idx in enumerate(order[1:]):
        # Holm: the j-th comparison runs at alpha / (m - j)
        if mann_whitney_u(lead, items[idx][1]).p_value < alpha / (m - step):
            return [items[i][0] for i in order[: step + 1]]
    return [items[i][0] for i in order]


def skim_best(groups, alpha: float = 0.05) -> list:
    """Groups indistinguishable from the lowest-ranked one.

    ``groups`` is a mapping of label to sample or a sequence of samples
    (labelled by position).  Empty when the Kruskal-Wallis test finds no
    evidence of variation.
    """
    return _skim(groups, alpha, worst=False)


def skim_worst(groups, alpha: float = 0.05) -> list:
    """Mirror of ``skim_best`` from the highest-ranked group down."""
    return _skim(groups, alpha, worst=True)
