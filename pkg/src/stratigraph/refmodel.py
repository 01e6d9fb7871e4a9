"""Toy evolution model with exact lineage tracking.

A population of single-float genomes evolves under tournament selection with
synchronous generations.  Slots are split evenly into islands and, within
each island, into niches; competition never crosses a slot group.  Every
birth is logged and lineages without extant descendants are pruned as the
run proceeds, which yields the reference phylogeny.

Annotations are not carried through the generation loop.  Because each
individual deposits exactly one differentia keyed by its own id, the
annotation of a sampled individual is a pure function of its ancestry, so it
is assembled afterwards from the tracked tree (``inherit_annotations``).
``replay_inheritance`` does the same by copying and depositing along every
branch and serves as the oracle for that shortcut.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .annotation import (
    Annotation,
    ColumnAnnotation,
    SurfaceAnnotation,
    create_annotation,
    differentia_draw,
    differentia_draws,
)
from .phylogeny import Phylogeny, prune_extinct
from .retention import RetentionPolicy, enumerate_retained, parse_policy, surface_site_ranks

__all__ = [
    "EvolutionConfig",
    "REGIMES",
    "regime_config",
    "AnnotationSpec",
    "Individual",
    "EvolutionResult",
    "run_evolution",
    "prune_extinct",
    "downsample",
    "annotate",
    "inherit_annotations",
    "replay_inheritance",
    "labelled_reference",
    "DEFAULT_NICHE_SWAP_PROB",
]

DEFAULT_NICHE_SWAP_PROB = 3.0517578125e-8  # 2**-25

REGIMES: dict[str, dict[str, int]] = {
    "plain": {"tournament_size": 2, "niche_count": 1, "island_count": 1},
    "mild": {"tournament_size": 2, "niche_count": 2, "island_count": 4},
    "rich": {"tournament_size": 2, "niche_count": 8, "island_count": 64},
    "drift": {"tournament_size": 1, "niche_count": 1, "island_count": 1},
}


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 1024
    generations: int = 10_000
    tournament_size: int = 2
    niche_count: int = 1
    island_count: int = 1
    migration_fraction: float = 0.01
    niche_swap_prob: float = DEFAULT_NICHE_SWAP_PROB
    seed: int = 0
    prune_interval: int = 64

    def __post_init__(self) -> None:
        if self.population_size < 1:
            raise ValueError("population_size must be positive")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be at least 1")
        if self.niche_count < 1 or self.island_count < 1:
            raise ValueError("niche and island counts must be positive")
        if self.population_size % (self.niche_count * self.island_count):
            raise ValueError("population_size must be divisible by niche_count * island_count")
        if not 0.0 <= self.migration_fraction <= 1.0:
            raise ValueError("migration_fraction must lie in [0, 1]")
        if not 0.0 <= self.niche_swap_prob <= 1.0:
            raise ValueError("niche_swap_prob must lie in [0, 1]")
        if self.prune_interval < 1:
            raise ValueError("prune_interval must be positive")

    @property
    def island_size(self) -> int:
        return self.population_size // self.island_count

    @property
    def group_size(self) -> int:
        return self.island_size // self.niche_count


def regime_config(regime: str, **overrides) -> EvolutionConfig:
    """Config for a named regime (``plain``, ``mild``, ``rich``, ``drift``)."""
    try:
        base = REGIMES[regime]
    except KeyError:
        raise ValueError(f"unknown regime {regime!r}; choose from {sorted(REGIMES)}") from None
    return EvolutionConfig(**{**base, **overrides})


@dataclass(frozen=True)
class AnnotationSpec:
    """How sampled individuals are annotated."""

    policy: RetentionPolicy | str
    width: int
    storage: str | None = None
    capacity: int | None = None
    seed: int = 0

    def resolved(self) -> AnnotationSpec:
        policy = parse_policy(self.policy)
        storage = self.storage or ("surface" if policy.capped else "column")
        return replace(self, policy=policy, storage=storage)

    def progenitor(self) -> Annotation:
        spec = self.resolved()
        return create_annotation(spec.policy, spec.width, spec.capacity, spec.seed, spec.storage)


@dataclass
class Individual:
    id: int
    genome: float
    niche: int
    island: int
    annotation: Annotation | None = None


@dataclass
class EvolutionResult:
    config: EvolutionConfig
    individuals: list[Individual]
    reference: Phylogeny
    generation: int
    annotation_spec: AnnotationSpec | None = None
    meta: dict = field(default_factory=dict)

    @property
    def labels(self) -> list[str]:
        return [str(ind.id) for ind in self.individuals]

    @property
    def annotations(self) -> list[Annotation]:
        return [ind.annotation for ind in self.individuals]


class _Tracker:
    """Birth log kept one array pair per generation, pruned from the tip."""

    def __init__(self, founders: np.ndarray) -> None:
        self.ids: list[np.ndarray] = [founders.copy()]
        self.parents: list[np.ndarray] = [np.zeros(founders.size, dtype=np.int64)]
        self.pruned_upto = -1  # every level <= this was pruned at least once

    def record(self, ids: np.ndarray, parents: np.ndarray) -> None:
        order = np.argsort(ids)
        self.ids.append(ids[order])
        self.parents.append(parents[order])

    def prune(self, extant: np.ndarray) -> None:
        need = np.sort(extant)
        for g in range(len(self.ids) - 1, -1, -1):
            keep = np.isin(self.ids[g], need, assume_unique=True)
            if keep.all():
                if g <= self.pruned_upto:
                    break
            else:
                self.ids[g] = self.ids[g][keep]
                self.parents[g] = self.parents[g][keep]
            need = np.unique(self.parents[g])
        self.pruned_upto = len(self.ids) - 1

    def phylogeny(self) -> Phylogeny:
        ids = np.concatenate([np.zeros(1, dtype=np.int64), *self.ids])
        par_ids = np.concatenate([np.full(1, -1, dtype=np.int64), *self.parents])
        times = np.concatenate(
            [np.zeros(1, dtype=np.int64)]
            + [np.full(a.size, g, dtype=np.int64) for g, a in enumerate(self.ids)]
        )
        par = np.searchsorted(ids, par_ids)
        par[0] = -1
        return Phylogeny(ids, par, times)


def _tournament(rng: np.random.Generator, genome: np.ndarray, cfg: EvolutionConfig) -> np.ndarray:
    n, m, k = cfg.population_size, cfg.group_size, cfg.tournament_size
    start = (np.arange(n) // m) * m
    comps = start[:, None] + rng.integers(0, m, size=(n, k))
    if k == 1:
        return comps[:, 0]
    fit = np.abs(genome[comps])
    best = fit.max(axis=1, keepdims=True)
    # ties go to the lower slot index
    return np.where(fit == best, comps, n).min(axis=1)


def _migrate(rng: np.random.Generator, cfg: EvolutionConfig) -> np.ndarray | None:
    """Slot permutation moving a random batch one island along the ring."""
    if cfg.island_count < 2 or cfg.migration_fraction == 0:
        return None
    expected = cfg.migration_fraction * cfg.island_size
    count = int(expected)
    if rng.random() < expected - count:
        count += 1
    if count == 0:
        return None
    offsets = rng.choice(cfg.island_size, size=count, replace=False)
    step = 1 if rng.random() < 0.5 else -1
    perm = np.arange(cfg.population_size)
    for isl in range(cfg.island_count):
        dst = ((isl + step) % cfg.island_count) * cfg.island_size + offsets
        perm[dst] = isl * cfg.island_size + offsets
    return perm


def _niche_swaps(rng: np.random.Generator, cfg: EvolutionConfig) -> np.ndarray | None:
    if cfg.niche_count < 2 or cfg.niche_swap_prob == 0:
        return None
    movers = np.flatnonzero(rng.random(cfg.population_size) < cfg.niche_swap_prob)
    if movers.size == 0:
        return None
    perm = np.arange(cfg.population_size)
    m = cfg.group_size
    for slot in movers.tolist():
        island_base = (slot // cfg.island_size) * cfg.island_size
        niche = (slot - island_base) // m
        other = int(rng.integers(cfg.niche_count - 1))
        other += other >= niche
        partner = island_base + other * m + int(rng.integers(m))
        perm[slot], perm[partner] = perm[partner], perm[slot]
    return perm


def _slot_niche_island(cfg: EvolutionConfig) -> tuple[np.ndarray, np.ndarray]:
    slots = np.arange(cfg.population_size)
    island = slots // cfg.island_size
    niche = (slots % cfg.island_size) // cfg.group_size
    return niche, island


def run_evolution(
    config: EvolutionConfig,
    annotation: AnnotationSpec | None = None,
    replicate: int = 0,
) -> EvolutionResult:
    """Run the model and return the final population plus its reference tree.

    Node ids: the shared progenitor is 0, founders are ``1..N`` and the
    ``j``-th birth of generation ``g`` gets ``1 + g*N + j``.
    """
    cfg = config
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, replicate]))
    n = cfg.population_size
    genome = np.zeros(n)
    ids = np.arange(1, n + 1, dtype=np.int64)
    tracker = _Tracker(ids)
    for g in range(1, cfg.generations + 1):
        parents = _tournament(rng, genome, cfg)
        genome = genome[parents] + rng.standard_normal(n)
        born = 1 + g * n + np.arange(n, dtype=np.int64)
        tracker.record(born, ids[parents])
        ids = born
        for perm in (_migrate(rng, cfg), _niche_swaps(rng, cfg)):
            if perm is not None:
                genome, ids = genome[perm], ids[perm]
        if g % cfg.prune_interval == 0:
            tracker.prune(ids)
    tracker.prune(ids)
    reference = tracker.phylogeny()
    niche, island = _slot_niche_island(cfg)
    individuals = [
        Individual(int(i), float(x), int(a), int(b))
        for i, x, a, b in zip(ids.tolist(), genome.tolist(), niche.tolist(), island.tolist())
    ]
    result = EvolutionResult(cfg, individuals, reference, cfg.generations)
    if annotation is not None:
        _attach(result, annotation)
    return result


def annotate(result: EvolutionResult, spec: AnnotationSpec) -> EvolutionResult:
    """Copy of ``result`` whose individuals carry annotations under ``spec``.

    Annotating after ``downsample`` is much cheaper than annotating the
    whole population, and gives the same annotations for the kept taxa.
    """
    out = EvolutionResult(
        result.config,
        [replace(ind) for ind in result.individuals],
        result.reference,
        result.generation,
        None,
        dict(result.meta),
    )
    _attach(out, spec)
    return out


def _attach(result: EvolutionResult, spec: AnnotationSpec) -> None:
    anns = inherit_annotations(result.reference, [ind.id for ind in result.individuals], spec)
    for ind, ann in zip(result.individuals, anns):
        ind.annotation = ann
    result.annotation_spec = spec


def _ancestor_matrix(tree: Phylogeny, leaf_ids: Sequence[int], generation: int) -> np.ndarray:
    """``A[g, j]`` is the id of leaf ``j``'s ancestor living in generation ``g``."""
    lookup = {int(i): k for k, i in enumerate(tree.ids.tolist())}
    cur = np.array([lookup[int(i)] for i in leaf_ids], dtype=np.int64)
    if np.any(tree.origin_times[cur] != generation):
        raise ValueError("all leaves must belong to the final generation")
    A = np.empty((generation + 1, cur.size), dtype=np.int64)
    for g in range(generation, -1, -1):
        A[g] = tree.ids[cur]
        if g:
            cur = tree.parents[cur]
    return A


def inherit_annotations(
    tree: Phylogeny, leaf_ids: Sequence[int], spec: AnnotationSpec
) -> list[Annotation]:
    """Annotations of final-generation individuals, read off their ancestry.

    Every birth deposits one differentia keyed by the newborn's id.  A column
    pairs rank ``r`` with the ancestor born in generation ``r`` (rank 0 is
    the progenitor's); a surface pairs rank ``r`` with generation ``r + 1``
    and keeps the progenitor's fill on sites not yet written.
    """
    spec = spec.resolved()
    generation = int(tree.origin_times.max())
    A = _ancestor_matrix(tree, leaf_ids, generation)
    base = spec.progenitor()
    out: list[Annotation] = []
    if spec.storage == "column":
        ranks = np.asarray(enumerate_retained(spec.policy, generation + 1), dtype=np.int64)
        vals = differentia_draws(spec.seed, A[ranks], spec.width)
        if ranks[0] == 0:
            vals[0] = base.values()[0]
        for j in range(A.shape[1]):
            out.append(ColumnAnnotation(spec.policy, spec.width, generation, vals[:, j]))
        return out
    sites = np.asarray(surface_site_ranks(spec.policy, generation, base.size), dtype=np.int64)
    written = sites >= 0
    fill = base.values()
    vals = np.repeat(fill[:, None], A.shape[1], axis=1)
    vals[written] = differentia_draws(spec.seed, A[sites[written] + 1], spec.width)
    for j in range(A.shape[1]):
        out.append(SurfaceAnnotation(spec.policy, spec.width, generation, vals[:, j]))
    return out


def replay_inheritance(
    tree: Phylogeny, spec: AnnotationSpec
) -> dict[int, Annotation]:
    """Copy-and-deposit along every branch; returns annotations by node id.

    Founders (origin time 0 below the progenitor) copy the progenitor
    without depositing.  Slow; meant as an oracle.
    """
    spec = spec.resolved()
    anns: dict[int, Annotation] = {}
    base = spec.progenitor()
    for node in tree.topological_order().tolist():
        nid = int(tree.ids[node])
        p = tree.parents[node]
        if p < 0:
            anns[nid] = base.copy()
            continue
        ann = anns[int(tree.ids[p])].copy()
        if tree.origin_times[node] > 0:
            ann.deposit(differentia_draw(spec.seed, nid, spec.width))
        anns[nid] = ann
    leaves = set(tree.ids[tree.leaves()].tolist())
    return {k: v for k, v in anns.items() if k in leaves}


def downsample(result: EvolutionResult, k: int, seed: int = 0) -> EvolutionResult:
    """Uniform sample of ``k`` individuals with the reference re-pruned to them."""
    n = len(result.individuals)
    if not 1 <= k <= n:
        raise ValueError(f"cannot sample {k} of {n} individuals")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A3]))
    pick = np.sort(rng.choice(n, size=k, replace=False))
    chosen = [result.individuals[i] for i in pick.tolist()]
    reference = prune_extinct(result.reference, [ind.id for ind in chosen])
    return EvolutionResult(
        result.config, chosen, reference, result.generation, result.annotation_spec, dict(result.meta)
    )


def labelled_reference(result: EvolutionResult) -> Phylogeny:
    """Reference tree with leaves labelled by individual id."""
    ref = result.reference
    leaf_set = set(ref.ids[ref.leaves()].tolist())
    labels = [str(int(i)) if int(i) in leaf_set else None for i in ref.ids.tolist()]
    return Phylogeny(ref.ids, ref.parents, ref.origin_times, labels)
