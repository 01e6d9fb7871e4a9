"""Rooted phylogenies with origin times, shared by references and reconstructions."""

from __future__ import annotations

from collections.abc import Iterable, Sequence

import numpy as np

__all__ = ["Phylogeny", "collapse_unifurcations", "prune_extinct"]


class Phylogeny:
    """Rooted tree stored as parallel arrays.

    Nodes are addressed by position (``index``) internally; ``ids`` holds the
    external identifiers.  ``parents`` gives the parent's index, ``-1`` for
    the single root.  ``labels`` is optional per-node taxon text.
    """

    def __init__(
        self,
        ids: Sequence[int] | np.ndarray,
        parents: Sequence[int] | np.ndarray,
        origin_times: Sequence[int] | np.ndarray,
        labels: Sequence[str | None] | None = None,
    ) -> None:
        self.ids = np.asarray(ids, dtype=np.int64)
        self.parents = np.asarray(parents, dtype=np.int64)
        self.origin_times = np.asarray(origin_times, dtype=np.int64)
        n = self.ids.size
        if self.parents.size != n or self.origin_times.size != n:
            raise ValueError("ids, parents and origin_times must be equal length")
        self.labels: list[str | None] = [None] * n if labels is None else list(labels)
        if len(self.labels) != n:
            raise ValueError("labels must match node count")
        roots = np.flatnonzero(self.parents < 0)
        if n and roots.size != 1:
            raise ValueError(f"expected exactly one root, found {roots.size}")
        if np.any(self.parents >= n):
            raise ValueError("parent index out of range")
        if n and np.unique(self.ids).size != n:
            raise ValueError("node ids must be unique")
        self._children: list[list[int]] | None = None
        self._order: np.ndarray | None = None

    # -- construction helpers

    @classmethod
    def from_id_records(
        cls,
        ids: Sequence[int],
        parent_ids: Sequence[int | None],
        origin_times: Sequence[int],
        labels: Sequence[str | None] | None = None,
    ) -> Phylogeny:
        """Build from records that name parents by id (``None`` for the root)."""
        ids = np.asarray(ids, dtype=np.int64)
        lookup = {int(i): k for k, i in enumerate(ids)}
        if len(lookup) != ids.size:
            raise ValueError("node ids must be unique")
        try:
            parents = [-1 if p is None else lookup[int(p)] for p in parent_ids]
        except KeyError as exc:
            raise ValueError(f"unknown parent id {exc.args[0]}") from None
        return cls(ids, parents, origin_times, labels)

    # -- structure

    def __len__(self) -> int:
        return int(self.ids.size)

    @property
    def root(self) -> int:
        return int(np.flatnonzero(self.parents < 0)[0])

    @property
    def children(self) -> list[list[int]]:
        if self._children is None:
            kids: list[list[int]] = [[] for _ in range(len(self))]
            for c, p in enumerate(self.parents.tolist()):
                if p >= 0:
                    kids[p].append(c)
            self._children = kids
        return self._children

    def child_counts(self) -> np.ndarray:
        return np.bincount(self.parents[self.parents >= 0], minlength=len(self))

    def topological_order(self) -> np.ndarray:
        """Node indices with every parent before its children."""
        if self._order is None:
            kids = self.children
            order = [self.root]
            for node in order:
                order.extend(kids[node])
            if len(order) != len(self):
                raise ValueError("tree is disconnected or cyclic")
            self._order = np.asarray(order, dtype=np.int64)
        return self._order

    def leaves(self) -> np.ndarray:
        """Indices of childless nodes, in index order."""
        return np.flatnonzero(self.child_counts() == 0)

    def inner_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.child_counts() > 0)

    def n_leaves(self) -> int:
        return int(self.leaves().size)

    def n_inner(self) -> int:
        return int(self.inner_nodes().size)

    def depths(self) -> np.ndarray:
        """Edge count from the root to each node."""
        d = np.zeros(len(self), dtype=np.int64)
        par = self.parents
        for node in self.topological_order()[1:]:
            d[node] = d[par[node]] + 1
        return d

    def leaf_labels(self) -> list[str | None]:
        return [self.labels[i] for i in self.leaves()]

    def index_of_label(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.labels) if lab is not None}

    def validate(self) -> None:
        """Raise if the tree is malformed or a child predates its parent."""
        self.topological_order()
        par = self.parents
        has = par >= 0
        if np.any(self.origin_times[has] < self.origin_times[par[has]]):
            raise ValueError("child origin_time precedes parent origin_time")

    def subtree(self, keep: np.ndarray) -> Phylogeny:
        """Induced tree on a boolean mask closed under taking parents."""
        keep = np.asarray(keep, dtype=bool)
        remap = np.full(len(self), -1, dtype=np.int64)
        remap[keep] = np.arange(int(keep.sum()))
        par = self.parents[keep]
        new_par = np.where(par >= 0, remap[np.maximum(par, 0)], -1)
        if np.any((par >= 0) & (new_par < 0)):
            raise ValueError("mask is not closed under parents")
        labels = [lab for lab, k in zip(self.labels, keep) if k]
        return Phylogeny(self.ids[keep], new_par, self.origin_times[keep], labels)

    def __repr__(self) -> str:
        return f"Phylogeny(nodes={len(self)}, leaves={self.n_leaves()})"


def collapse_unifurcations(tree: Phylogeny) -> Phylogeny:
    """Splice out internal nodes that have exactly one child.

    A root left with a single internal child is dropped so that child becomes
    the root; a root whose only child is a leaf is kept, so a lone lineage
    becomes ``root -> leaf``.  Leaves are never removed.
    """
    n = len(tree)
    if n == 0:
        return tree
    counts = tree.child_counts()
    root = tree.root
    drop = counts == 1
    drop[root] = False
    par = tree.parents
    up = par.copy()
    for node in tree.topological_order()[1:]:
        p = par[node]
        if drop[p]:
            up[node] = up[p]
    keep = ~drop
    new_par = np.where(keep, up, -1)
    # splice the root if it ends up with a single internal child
    kids = np.flatnonzero(keep & (new_par == root))
    if kids.size == 1 and counts[kids[0]] > 0:
        keep[root] = False
        new_par[kids[0]] = -1
    remap = np.full(n, -1, dtype=np.int64)
    remap[keep] = np.arange(int(keep.sum()))
    sel = new_par[keep]
    sel = np.where(sel >= 0, remap[np.maximum(sel, 0)], -1)
    labels = [lab for lab, k in zip(tree.labels, keep) if k]
    return Phylogeny(tree.ids[keep], sel, tree.origin_times[keep], labels)


def prune_extinct(tree: Phylogeny, extant_ids: Iterable[int]) -> Phylogeny:
    """Keep only the extant nodes and their ancestors.

    Every listed id must be present; a node survives iff it is extant or has
    an extant descendant.
    """
    lookup = {int(i): k for k, i in enumerate(tree.ids.tolist())}
    keep = np.zeros(len(tree), dtype=bool)
    par = tree.parents
    for raw in extant_ids:
        try:
            node = lookup[int(raw)]
        except KeyError:
            raise ValueError(f"extant id {raw} not in tree") from None
        while node >= 0 and not keep[node]:
            keep[node] = True
            node = par[node]
    if not keep.any():
        raise ValueError("no extant nodes given")
    return tree.subtree(keep)
