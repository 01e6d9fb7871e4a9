"""Reconstruction quality: triplet distances, inner node loss, outcome bins.

Trees are compared over their shared leaf labels.  A triplet of leaves is
resolved in a tree when one pair's lowest common ancestor lies strictly
deeper than the triplet's; its topology is then that pair.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .phylogeny import Phylogeny, collapse_unifurcations

__all__ = [
    "QualityReport",
    "triplet_distance",
    "inner_node_loss",
    "classify_outcomes",
    "recent_inner_node_recovery",
    "evaluate",
    "random_tree",
    "EXACT_TRIPLET_LIMIT",
    "triplet_topology",
]

EXACT_TRIPLET_LIMIT = 1000
_MC_SAMPLES = 1_000_000

UNRESOLVED, AB, AC, BC = 0, 1, 2, 3


def _leaf_positions(tree: Phylogeny, labels: Sequence[str]) -> np.ndarray:
    where = tree.index_of_label()
    try:
        return np.array([where[lab] for lab in labels], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"leaf {exc.args[0]!r} missing from tree") from None


def _lca_tables(tree: Phylogeny, labels: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise LCA depth and LCA node index over the given leaves."""
    n = len(labels)
    pos = _leaf_positions(tree, labels)
    slot = {int(p): k for k, p in enumerate(pos)}
    depth = tree.depths()
    D = np.zeros((n, n), dtype=np.int64)
    L = np.zeros((n, n), dtype=np.int64)
    below: dict[int, np.ndarray] = {}
    kids = tree.children
    for node in tree.topological_order()[::-1].tolist():
        groups = [below.pop(c) for c in kids[node] if c in below]
        if node in slot:
            k = slot[node]
            D[k, k] = depth[node]
            L[k, k] = node
            groups.append(np.array([k], dtype=np.int64))
        if not groups:
            continue
        if len(groups) > 1:
            d = depth[node]
            for i in range(1, len(groups)):
                left = np.concatenate(groups[:i])
                right = groups[i]
                D[np.ix_(left, right)] = d
                D[np.ix_(right, left)] = d
                L[np.ix_(left, right)] = node
                L[np.ix_(right, left)] = node
        below[node] = np.concatenate(groups)
    return D, L


def _topologies(D: np.ndarray, i, j, k) -> np.ndarray:
    dij, dik, djk = D[i, j], D[i, k], D[j, k]
    out = np.full(np.shape(dij), UNRESOLVED, dtype=np.int8)
    out[(dij > dik) & (dij > djk)] = AB
    out[(dik > dij) & (dik > djk)] = AC
    out[(djk > dij) & (djk > dik)] = BC
    return out


def _outer(D: np.ndarray, L: np.ndarray, i, j, k) -> np.ndarray:
    """Node index of each triplet's overall lowest common ancestor."""
    dij, dik = D[i, j], D[i, k]
    return np.where(dij <= dik, L[i, j], L[i, k])


def _triplet_index_blocks(n: int):
    for i in range(n - 2):
        j, k = np.triu_indices(n - i - 1, k=1)
        yield np.full(j.size, i), j + i + 1, k + i + 1


def _sampled_triplets(n: int, count: int, seed: int) -> np.ndarray:
    """``count`` uniform 3-subsets of ``range(n)``, each sorted, as rows."""
    rng = np.random.default_rng(seed)
    out = np.empty((0, 3), dtype=np.int64)
    while out.shape[0] < count:
        draw = np.sort(rng.integers(0, n, size=(count, 3)), axis=1)
        ok = (draw[:, 0] != draw[:, 1]) & (draw[:, 1] != draw[:, 2])
        out = np.concatenate([out, draw[ok]])
    return out[:count]


class _Lifting:
    """Vectorized binary-lifting LCA queries, for trees too big for tables."""

    def __init__(self, tree: Phylogeny) -> None:
        self.depth = tree.depths()
        up = np.where(tree.parents < 0, np.arange(len(tree)), tree.parents)
        levels = [up]
        for _ in range(max(1, int(self.depth.max()).bit_length())):
            levels.append(levels[-1][levels[-1]])
        self.up = np.stack(levels)

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d = self.depth
        swap = d[a] < d[b]
        a, b = np.where(swap, b, a), np.where(swap, a, b)
        diff = d[a] - d[b]
        for k in range(self.up.shape[0]):
            hit = ((diff >> k) & 1).astype(bool)
            a = np.where(hit, self.up[k][a], a)
        for k in range(self.up.shape[0] - 1, -1, -1):
            ua, ub = self.up[k][a], self.up[k][b]
            move = ua != ub
            a, b = np.where(move, ua, a), np.where(move, ub, b)
        return np.where(a == b, a, self.up[0][a])


def _sampled_stream(ref: Phylogeny, rec: Phylogeny, labels, seed: int):
    trip = _sampled_triplets(len(labels), _MC_SAMPLES, seed)
    out = []
    for tree in (ref, rec):
        pos = _leaf_positions(tree, labels)
        lca = _Lifting(tree)
        i, j, k = (pos[trip[:, c]] for c in range(3))
        lij, lik, ljk = lca(i, j), lca(i, k), lca(j, k)
        dep = lca.depth
        D = np.stack([dep[lij], dep[lik], dep[ljk]])
        out.append((D, lij, lik))
    (Dr, lij, lik), (Dc, _, _) = out

    def topo(D):
        dij, dik, djk = D
        res = np.full(dij.shape, UNRESOLVED, dtype=np.int8)
        res[(dij > dik) & (dij > djk)] = AB
        res[(dik > dij) & (dik > djk)] = AC
        res[(djk > dij) & (djk > dik)] = BC
        return res

    outer = np.where(Dr[0] <= Dr[1], lij, lik)
    yield topo(Dr), topo(Dc), outer


_TOPOLOGY_NAMES = {UNRESOLVED: "unresolved", AB: "AB|C", AC: "AC|B", BC: "BC|A"}


def triplet_topology(tree: Phylogeny, a: str, b: str, c: str) -> str:
    """``"AB|C"``, ``"AC|B"``, ``"BC|A"`` or ``"unresolved"`` for three leaves."""
    where = tree.index_of_label()
    try:
        nodes = [where[x] for x in (a, b, c)]
    except KeyError as exc:
        raise ValueError(f"leaf {exc.args[0]!r} missing from tree") from None
    lca = _Lifting(tree)
    i, j, k = (np.array([x]) for x in nodes)
    d = lca.depth
    D = (d[lca(i, j)][0], d[lca(i, k)][0], d[lca(j, k)][0])
    dij, dik, djk = D
    if dij > dik and dij > djk:
        return _TOPOLOGY_NAMES[AB]
    if dik > dij and dik > djk:
        return _TOPOLOGY_NAMES[AC]
    if djk > dij and djk > dik:
        return _TOPOLOGY_NAMES[BC]
    return _TOPOLOGY_NAMES[UNRESOLVED]


def _shared_labels(ref: Phylogeny, rec: Phylogeny) -> list[str]:
    ref_leaves = [lab for lab in ref.leaf_labels() if lab is not None]
    rec_set = {lab for lab in rec.leaf_labels() if lab is not None}
    if set(ref_leaves) != rec_set:
        raise ValueError("reference and reconstruction have different leaf labels")
    return sorted(ref_leaves)


def _triplet_stream(ref: Phylogeny, rec: Phylogeny, seed: int):
    labels = _shared_labels(ref, rec)
    n = len(labels)
    if n < 3:
        raise ValueError("need at least three shared leaves")
    if n > EXACT_TRIPLET_LIMIT:
        yield from _sampled_stream(ref, rec, labels, seed)
        return
    Dr, Lr = _lca_tables(ref, labels)
    Dc, _ = _lca_tables(rec, labels)
    for i, j, k in _triplet_index_blocks(n):
        yield _topologies(Dr, i, j, k), _topologies(Dc, i, j, k), _outer(Dr, Lr, i, j, k)


def triplet_distance(ref: Phylogeny, rec: Phylogeny, mode: str = "strict", seed: int = 0) -> float:
    """Fraction of leaf triplets whose reference topology is not reproduced.

    ``strict`` counts every mismatch, including triplets left unresolved or
    spuriously resolved; ``lax`` counts only conflicting resolutions.  Exact
    for up to ``EXACT_TRIPLET_LIMIT`` leaves, Monte Carlo beyond that.
    """
    if mode not in ("strict", "lax"):
        raise ValueError("mode must be 'strict' or 'lax'")
    bad = total = 0
    for tr, tc, _ in _triplet_stream(ref, rec, seed):
        if mode == "strict":
            bad += int(np.count_nonzero(tr != tc))
        else:
            bad += int(np.count_nonzero((tr != tc) & (tr != UNRESOLVED) & (tc != UNRESOLVED)))
        total += tr.size
    return bad / total


def inner_node_loss(ref: Phylogeny, rec: Phylogeny) -> float | None:
    """``(I_ref - I_rec) / (I_ref - 1)`` over unifurcation-free trees.

    Zero means as many inner nodes as the reference, one means a star
    (a single inner node), negative means overresolution.  ``None`` when
    the reference has fewer than two inner nodes.
    """
    i_ref = collapse_unifurcations(ref).n_inner()
    i_rec = collapse_unifurcations(rec).n_inner()
    if i_ref < 2:
        return None
    return (i_ref - i_rec) / (i_ref - 1)


def _time_bin(time_ago: np.ndarray) -> np.ndarray:
    t = np.maximum(np.asarray(time_ago, dtype=np.int64), 0)
    out = np.zeros(t.shape, dtype=np.int64)
    pos = t > 0
    out[pos] = np.floor(np.log2(t[pos])).astype(np.int64) + 1
    return out


def classify_outcomes(
    ref: Phylogeny, rec: Phylogeny, final_generation: int | None = None, seed: int = 0
) -> dict[str, dict[int, int]]:
    """Per-triplet outcomes binned by time-ago of the reference divergence.

    Time-ago is ``final_generation`` minus the origin time of the triplet's
    overall common ancestor in the reference; bin ``b`` holds time-ago in
    ``[2**(b-1), 2**b)`` and bin 0 holds zero.  Outcomes are ``correct``,
    ``incorrect`` (both resolved, differently), ``unresolved`` (reference
    resolved, reconstruction not) and ``overresolved`` (the reverse).
    """
    if final_generation is None:
        final_generation = int(ref.origin_times.max())
    hist: dict[str, dict[int, int]] = {
        k: {} for k in ("correct", "incorrect", "unresolved", "overresolved")
    }
    times = ref.origin_times
    for tr, tc, outer in _triplet_stream(ref, rec, seed):
        bins = _time_bin(final_generation - times[outer])
        kinds = {
            "correct": tr == tc,
            "incorrect": (tr != tc) & (tr != UNRESOLVED) & (tc != UNRESOLVED),
            "unresolved": (tr != UNRESOLVED) & (tc == UNRESOLVED),
            "overresolved": (tr == UNRESOLVED) & (tc != UNRESOLVED),
        }
        for kind, mask in kinds.items():
            b, c = np.unique(bins[mask], return_counts=True)
            for bb, cc in zip(b.tolist(), c.tolist()):
                hist[kind][bb] = hist[kind].get(bb, 0) + cc
    return hist


def _inner_times(tree: Phylogeny) -> np.ndarray:
    t = collapse_unifurcations(tree)
    return t.origin_times[t.inner_nodes()]


def recent_inner_node_recovery(
    ref: Phylogeny, rec: Phylogeny, window: int, final_generation: int | None = None
) -> float | None:
    """Reconstructed over reference inner nodes dated within ``window`` of the end.

    Both trees are compared after collapsing unifurcations.  ``None`` when
    the reference has no inner node in the window.
    """
    if final_generation is None:
        final_generation = int(ref.origin_times.max())
    n_ref = int(np.count_nonzero(final_generation - _inner_times(ref) < window))
    if n_ref == 0:
        return None
    n_rec = int(np.count_nonzero(final_generation - _inner_times(rec) < window))
    return n_rec / n_ref


@dataclass
class QualityReport:
    strict_triplet_distance: float
    lax_triplet_distance: float
    inner_node_loss: float | None
    n_leaves: int
    ref_inner_nodes: int
    rec_inner_nodes: int
    recent_recovery: float | None
    recent_window: int
    outcomes: dict[str, dict[int, int]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["outcomes"] = {
            k: {str(b): c for b, c in sorted(v.items())} for k, v in self.outcomes.items()
        }
        return out

    @classmethod
    def from_dict(cls, data: dict) -> QualityReport:
        data = dict(data)
        data["outcomes"] = {
            k: {int(b): int(c) for b, c in v.items()} for k, v in data.get("outcomes", {}).items()
        }
        return cls(**data)


def evaluate(
    ref: Phylogeny,
    rec: Phylogeny,
    final_generation: int | None = None,
    recent_window: int = 128,
    seed: int = 0,
) -> QualityReport:
    """All quality measures for one reconstruction against its reference."""
    ref_c = collapse_unifurcations(ref)
    rec_c = collapse_unifurcations(rec)
    if final_generation is None:
        final_generation = int(ref.origin_times.max())
    outcomes = classify_outcomes(ref_c, rec_c, final_generation, seed)
    total = sum(sum(v.values()) for v in outcomes.values())
    wrong = total - sum(outcomes["correct"].values())
    return QualityReport(
        strict_triplet_distance=wrong / total,
        lax_triplet_distance=sum(outcomes["incorrect"].values()) / total,
        inner_node_loss=inner_node_loss(ref_c, rec_c),
        n_leaves=ref_c.n_leaves(),
        ref_inner_nodes=ref_c.n_inner(),
        rec_inner_nodes=rec_c.n_inner(),
        recent_recovery=recent_inner_node_recovery(ref_c, rec_c, recent_window, final_generation),
        recent_window=recent_window,
        outcomes=outcomes,
        meta={"estimator": "exact" if ref_c.n_leaves() <= EXACT_TRIPLET_LIMIT else "sampled"},
    )


def random_tree(n_leaves: int, seed: int = 0, prefix: str = "t") -> Phylogeny:
    """Random bifurcating tree from uniformly random pairwise coalescence.

    Leaves are labelled ``f"{prefix}{i}"``; each merge creates a parent one
    time unit before the previous merge, so origin times increase rootward
    to leafward.
    """
    if n_leaves < 2:
        raise ValueError("need at least two leaves")
    rng = np.random.default_rng(seed)
    parent = [-1] * n_leaves
    lineages = list(range(n_leaves))
    merges = []
    while len(lineages) > 1:
        a, b = sorted(rng.choice(len(lineages), 2, replace=False).tolist(), reverse=True)
        x, y = lineages.pop(a), lineages.pop(b)
        new = len(parent)
        parent.append(-1)
        parent[x] = parent[y] = new
        merges.append(new)
        lineages.append(new)
    n_nodes = len(parent)
    time = [0] * n_nodes
    # the last merge is the root at time 0; earlier merges are younger
    for rank, node in enumerate(reversed(merges)):
        time[node] = rank
    for leaf in range(n_leaves):
        time[leaf] = len(merges)
    labels = [f"{prefix}{i}" if i < n_leaves else None for i in range(n_nodes)]
    return Phylogeny(np.arange(n_nodes), parent, time, labels)
