"""Retention schedules: which checkpoint ranks survive at a given generation.

Every policy is described by a closed-form enumeration ``enumerate_retained``
plus an independent one-deposit-at-a-time replay (``replay_retained``) that
serves as its oracle.  ``G`` below always counts deposits, so the retained
ranks at ``G`` are drawn from ``0 .. G-1`` and always include both ends.

Capped policies retain exactly ``min(G, n)`` ranks and drop at most one rank
per deposit.  That property lets surface storage share the column schedule:
a new rank simply overwrites the site of the rank the schedule drops.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterator

__all__ = [
    "RetentionPolicy",
    "GapBound",
    "parse_policy",
    "keep_all",
    "fixed_resolution",
    "recency_proportional",
    "steady",
    "tilted",
    "hybrid",
    "enumerate_retained",
    "replay_retained",
    "iter_replay",
    "pick_deposition_site",
    "surface_site_ranks",
    "gap_bound_check",
    "TILTED_RATIO_BOUND",
    "tilted_ratio_bound",
]

_KINDS = ("keep-all", "fixed", "recprop", "steady", "tilted", "hybrid")
_CAPPED = ("steady", "tilted", "hybrid")
_POLICY_RE = re.compile(r"^(keep-all|fixed|recprop|steady|tilted|hybrid)(?::(\d+))?$")


@dataclass(frozen=True)
class RetentionPolicy:
    """A retention schedule variant and its single integer parameter.

    ``param`` is the resolution for ``fixed``/``recprop`` and the capacity
    for the capped variants; ``keep-all`` has none.
    """

    kind: str
    param: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "keep-all":
            if self.param is not None:
                raise ValueError("keep-all takes no parameter")
            return
        if self.param is None or int(self.param) != self.param:
            raise ValueError(f"policy {self.kind!r} needs an integer parameter")
        if self.kind in ("fixed", "recprop") and self.param < 1:
            raise ValueError("resolution must be at least 1")
        if self.kind in ("steady", "tilted") and self.param < 4:
            raise ValueError("capacity must be at least 4")
        if self.kind == "hybrid" and (self.param < 8 or self.param % 2):
            raise ValueError("hybrid capacity must be even and at least 8")

    @property
    def capped(self) -> bool:
        return self.kind in _CAPPED

    @property
    def capacity(self) -> int | None:
        return self.param if self.capped else None

    def __str__(self) -> str:
        return self.kind if self.param is None else f"{self.kind}:{self.param}"


def parse_policy(text: str | RetentionPolicy) -> RetentionPolicy:
    """Parse ``keep-all``, ``fixed:<r>``, ``recprop:<r>``, ``steady:<n>``..."""
    if isinstance(text, RetentionPolicy):
        return text
    m = _POLICY_RE.match(str(text).strip().lower())
    if m is None:
        raise ValueError(f"cannot parse retention policy {text!r}")
    kind, param = m.group(1), m.group(2)
    return RetentionPolicy(kind, None if param is None else int(param))


def keep_all() -> RetentionPolicy:
    return RetentionPolicy("keep-all")


def fixed_resolution(r: int) -> RetentionPolicy:
    return RetentionPolicy("fixed", r)


def recency_proportional(r: int) -> RetentionPolicy:
    return RetentionPolicy("recprop", r)


def steady(n: int) -> RetentionPolicy:
    return RetentionPolicy("steady", n)


def tilted(n: int) -> RetentionPolicy:
    return RetentionPolicy("tilted", n)


def hybrid(n: int) -> RetentionPolicy:
    return RetentionPolicy("hybrid", n)


def _ctz(x: int) -> int:
    return (x & -x).bit_length() - 1


# -- closed forms -----------------------------------------------------------


def _fixed(r: int, G: int) -> list[int]:
    out = list(range(0, G, r))
    if out[-1] != G - 1:
        out.append(G - 1)
    return out


def _recprop(res: int, G: int) -> list[int]:
    # rank x (interior) survives while its age is below (res+1) * 2**(ctz(x)+1),
    # so each trailing-zero class keeps about its res+1 newest members; this
    # is the smallest horizon of that shape giving gap <= time-ago / res
    t = G - 1
    out = {0, t}
    v = 0
    while (1 << v) < t:
        step = 1 << (v + 1)
        horizon = (res + 1) * step
        # members of class v are (2i+1) * 2**v; newest one below t first
        hi = t - 1
        if hi >= (1 << v):
            i = ((hi >> v) - 1) >> 1
            x = ((i << 1) | 1) << v
            while x >= 1 and t - x < horizon:
                out.add(x)
                x -= step
        v += 1
    return sorted(out)


def _steady(n: int, G: int) -> list[int]:
    if G <= n:
        return list(range(G))
    t = G - 1

    def cmax(s: int) -> int:
        # multiples of s in [0, t] together with t itself
        return -(-t // s) + 1

    s = 1
    while cmax(2 * s) >= n:
        s *= 2
    base = cmax(2 * s)
    spare = n - base
    out = set(range(0, t + 1, 2 * s))
    out.add(t)
    # spare slots go to the oldest odd multiples of s
    out.update(range(s, s + 2 * s * spare, 2 * s))
    return sorted(out)


def _tilted_priority(v: int) -> tuple[int, int]:
    # class 0 first, then classes with more trailing zeros, so that any prefix
    # of the order is spread evenly across the class range
    return (-64, v) if v == 0 else (-_ctz(v), v)


def _tilted_counts(n: int, G: int) -> list[int]:
    """Members kept per trailing-zero class among interior ranks 1..G-2."""
    inner = G - 2
    pops = []
    v = 0
    while (1 << v) <= inner:
        pops.append(((inner >> v) + 1) >> 1)
        v += 1
    budget = n - 2
    if sum(pops) <= budget:
        return pops
    # water level: largest q with sum(min(pop, q)) within budget
    lo, hi = 0, max(pops)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if sum(min(p, mid) for p in pops) <= budget:
            lo = mid
        else:
            hi = mid - 1
    q = lo
    counts = [min(p, q) for p in pops]
    spare = budget - sum(counts)
    eligible = sorted((v for v, p in enumerate(pops) if p > q), key=_tilted_priority)
    for v in eligible[:spare]:
        counts[v] += 1
    return counts


def _tilted(n: int, G: int) -> list[int]:
    if G <= n:
        return list(range(G))
    t = G - 1
    out = [0, t]
    for v, c in enumerate(_tilted_counts(n, G)):
        pop = ((G - 2 >> v) + 1) >> 1
        for i in range(pop - c, pop):
            out.append(((i << 1) | 1) << v)
    return sorted(out)


def _hybrid_halves(G: int) -> tuple[int, int]:
    # even ranks feed the steady half, odd ranks the tilted half
    return (G + 1) // 2, G // 2


def _hybrid(n: int, G: int) -> list[int]:
    ge, go = _hybrid_halves(G)
    half = n // 2
    evens = [2 * x for x in _steady(half, ge)] if ge else []
    odds = [2 * y + 1 for y in _tilted(half, go)] if go else []
    return sorted(evens + odds)


def enumerate_retained(policy: RetentionPolicy | str, G: int) -> list[int]:
    """Ranks retained after ``G`` deposits, in increasing order."""
    policy = parse_policy(policy)
    if G < 0:
        raise ValueError("generation must be non-negative")
    if G == 0:
        return []
    if G <= 2:
        return list(range(G))
    kind, p = policy.kind, policy.param
    if kind == "keep-all":
        return list(range(G))
    if kind == "fixed":
        return _fixed(p, G)
    if kind == "recprop":
        return _recprop(p, G)
    if kind == "steady":
        return _steady(p, G)
    if kind == "tilted":
        return _tilted(p, G)
    return _hybrid(p, G)


# -- replay oracles ---------------------------------------------------------


class _Replay:
    """One deposit at a time, using only local drop rules."""

    def __init__(self, policy: RetentionPolicy) -> None:
        self.policy = policy
        self.G = 0
        self.kept: list[int] = []
        if policy.kind == "tilted":
            self.classes: dict[int, list[int]] = {}
        if policy.kind == "hybrid":
            half = policy.param // 2
            self.halves = (_Replay(steady(half)), _Replay(tilted(half)))

    def step(self) -> None:
        r = self.G
        self.G += 1
        kind, p = self.policy.kind, self.policy.param
        if kind == "hybrid":
            self.halves[r % 2].step()
            ev, od = self.halves
            self.kept = sorted([2 * x for x in ev.kept] + [2 * y + 1 for y in od.kept])
            return
        prev = self.kept[-1] if self.kept else None
        self.kept.append(r)
        if prev is None or prev == 0:
            return
        if kind == "fixed":
            if prev % p:
                self.kept.remove(prev)
        elif kind == "recprop":
            # expire interior ranks whose age passed their class horizon
            self.kept = [
                x
                for x in self.kept
                if x in (0, r) or r - x < (p + 1) * (1 << (_ctz(x) + 1))
            ]
        elif kind == "steady":
            if len(self.kept) > p:
                # drop the interior rank with fewest trailing zeros; among
                # equals the most recent one goes first
                inner = self.kept[1:-1]
                victim = min(inner, key=lambda x: (_ctz(x), -x))
                self.kept.remove(victim)
        elif kind == "tilted":
            self.classes.setdefault(_ctz(prev), []).append(prev)
            if len(self.kept) > p:
                # shrink the fullest class; ties go to the class that comes
                # last in the priority order
                v = max(
                    (v for v, m in self.classes.items() if m),
                    key=lambda v: (len(self.classes[v]), _tilted_priority(v)),
                )
                self.kept.remove(self.classes[v].pop(0))


def iter_replay(policy: RetentionPolicy | str, G_max: int) -> Iterator[tuple[int, list[int]]]:
    """Yield ``(G, retained)`` for ``G = 1 .. G_max`` by stepwise replay."""
    rep = _Replay(parse_policy(policy))
    for _ in range(G_max):
        rep.step()
        yield rep.G, list(rep.kept)


def replay_retained(policy: RetentionPolicy | str, G: int) -> list[int]:
    """Oracle for ``enumerate_retained`` by stepwise simulation."""
    out: list[int] = []
    for _, out in iter_replay(policy, G):
        pass
    return out


# -- surface site selection -------------------------------------------------


class _SiteTable:
    """Memoized site assignment for one capped policy.

    Rank ``r`` overwrites the site of the unique rank dropped by the column
    schedule when going from ``r`` to ``r+1`` deposits.  Ranks written during
    the initial fill take site ``r``.
    """

    def __init__(self, policy: RetentionPolicy) -> None:
        self.policy = policy
        self.sites: list[int] = []
        self._prev: set[int] = set()

    def extend(self, upto: int) -> None:
        n = self.policy.param
        while len(self.sites) <= upto:
            r = len(self.sites)
            if r < n:
                self.sites.append(r)
                self._prev.add(r)
                continue
            if not self._prev:
                self._prev = set(enumerate_retained(self.policy, r))
            nxt = set(enumerate_retained(self.policy, r + 1))
            (victim,) = self._prev - nxt
            self.sites.append(self.sites[victim])
            self._prev = nxt


@lru_cache(maxsize=None)
def _site_table(policy: RetentionPolicy) -> _SiteTable:
    return _SiteTable(policy)


def _check_surface(policy: RetentionPolicy, S: int) -> None:
    if not policy.capped:
        raise ValueError(f"policy {policy} is unbounded and cannot back a surface")
    if S < 8 or S & (S - 1):
        raise ValueError(f"surface size must be a power of two >= 8, got {S}")
    if policy.param != S:
        raise ValueError(f"policy capacity {policy.param} does not match surface size {S}")


def pick_deposition_site(policy: RetentionPolicy | str, r: int, S: int) -> int:
    """Surface site receiving rank ``r``; deterministic in ``(policy, r, S)``."""
    policy = parse_policy(policy)
    _check_surface(policy, S)
    if r < 0:
        raise ValueError("rank must be non-negative")
    if policy.kind == "hybrid":
        half = S // 2
        if r % 2 == 0:
            return _site_of(steady(half), r // 2)
        return half + _site_of(tilted(half), r // 2)
    return _site_of(policy, r)


def _site_of(policy: RetentionPolicy, r: int) -> int:
    table = _site_table(policy)
    table.extend(r)
    return table.sites[r]


def surface_site_ranks(policy: RetentionPolicy | str, G: int, S: int) -> list[int]:
    """Rank held by each site after ``G`` deposits, ``-1`` where unwritten."""
    policy = parse_policy(policy)
    _check_surface(policy, S)
    out = [-1] * S
    for r in enumerate_retained(policy, G):
        out[pick_deposition_site(policy, r, S)] = r
    return out


# -- gap bounds -------------------------------------------------------------


@dataclass(frozen=True)
class GapBound:
    max_absolute_gap: int
    max_recency_ratio: Fraction


def gap_bound_check(policy: RetentionPolicy | str, G: int) -> GapBound:
    """Largest gap between adjacent retained ranks, absolute and relative.

    The relative figure divides each gap ``r2 - r1`` by ``G - r2 + 1``, where
    ``G - r2`` is the time-ago of ``r2`` (the newest rank sits one generation
    back), so the newest adjacent pair alone scores 1/2.
    """
    if G < 2:
        raise ValueError("need at least two deposits")
    ranks = enumerate_retained(policy, G)
    best_gap = 0
    best = (0, 1)
    for a, b in zip(ranks, ranks[1:]):
        gap = b - a
        best_gap = max(best_gap, gap)
        if gap * best[1] > best[0] * (G - b + 1):
            best = (gap, G - b + 1)
    return GapBound(best_gap, Fraction(*best))


# Documented ceilings on ``max_recency_ratio`` for tilted schedules: the worst
# value over every G up to 10**6 (exhaustive scan), rounded up.  With a fixed
# capacity no schedule can keep the ratio below about G**(1/(n-1)) - 1; ours
# does worse for n <= 16 because once G passes 2**(n-2) there are more
# trailing-zero classes than slots, so the ceiling keeps growing with G.
TILTED_RATIO_BOUND: dict[int, float] = {
    8: 491.0,
    16: 28.0,
    32: 1.34,
    64: 0.5,
    128: 0.5,
    256: 0.5,
}


def tilted_ratio_bound(n: int) -> float:
    """Documented recency-ratio ceiling for ``tilted:n`` with G <= 10**6."""
    try:
        return TILTED_RATIO_BOUND[n]
    except KeyError:
        raise ValueError(f"no documented ratio bound for capacity {n}") from None
