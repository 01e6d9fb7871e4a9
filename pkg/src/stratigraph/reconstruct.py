"""Relatedness inference from annotations.

Pairwise comparison finds the first retained generation where two annotations
disagree.  Tree building inserts every annotation into a trie keyed by
``(rank, differentia)``, so each trie node stands for a lineage that shared
all differentiae up to that rank.

Ranks are placed on the generation scale of ``Annotation.retained_generations``
so that column and surface results line up with reference origin times.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .annotation import Annotation
from .phylogeny import Phylogeny, collapse_unifurcations

__all__ = [
    "MrcaBounds",
    "mrca_bounds",
    "build_tree",
    "peel_back_conjoined_leaves",
    "collapse_unifurcations",
    "reconstruct",
    "Phylogeny",
]


@dataclass(frozen=True)
class MrcaBounds:
    """The common ancestor lived in ``[lower, upper)``, in generations."""

    lower: int
    upper: int


def _check_comparable(a: Annotation, b: Annotation) -> None:
    if a.width != b.width:
        raise ValueError(f"differentia widths differ ({a.width} vs {b.width})")


def mrca_bounds(a: Annotation, b: Annotation) -> MrcaBounds | None:
    """Bounds on the most recent common ancestor of two annotated lineages.

    ``lower`` is the last rank, among ranks both retain, where their
    differentiae agree; ``upper`` is the first common rank where they differ,
    or ``lower + 1`` when they never differ.  Returns ``None`` when they
    already differ at the first common rank, i.e. no shared ancestry.
    """
    _check_comparable(a, b)
    ra, va = a.retained_generations()
    rb, vb = b.retained_generations()
    common, ia, ib = np.intersect1d(ra, rb, assume_unique=True, return_indices=True)
    if common.size == 0:
        return None
    diff = np.flatnonzero(va[ia] != vb[ib])
    if diff.size == 0:
        last = int(common[-1])
        return MrcaBounds(last, last + 1)
    j = int(diff[0])
    if j == 0:
        return None
    return MrcaBounds(int(common[j - 1]), int(common[j]))


def build_tree(
    annotations: Sequence[Annotation],
    labels: Sequence[str] | None = None,
) -> Phylogeny:
    """Agglomerative trie reconstruction.

    The root sits at rank 0.  Internal nodes carry the rank they were keyed
    on; each leaf hangs from the node of its last retained rank and carries
    its annotation's counter as origin time.  Annotations whose records are
    identical end on the same node and so form a polytomy.
    """
    if labels is None:
        labels = [str(i) for i in range(len(annotations))]
    if len(labels) != len(annotations):
        raise ValueError("labels must match annotations")
    if len(annotations) == 0:
        raise ValueError("no annotations given")
    width = annotations[0].width
    for ann in annotations:
        if ann.width != width:
            raise ValueError("all annotations must share a differentia width")

    kids: list[dict] = [{}]
    parent = [-1]
    time = [0]
    names: list[str | None] = [None]
    leaf_rows = []
    for label, ann in zip(labels, annotations):
        ranks, vals = ann.retained_generations()
        node = 0
        for key in zip(ranks.tolist(), vals.tolist()):
            table = kids[node]
            nxt = table.get(key)
            if nxt is None:
                nxt = len(parent)
                table[key] = nxt
                kids.append({})
                parent.append(node)
                time.append(key[0])
                names.append(None)
            node = nxt
        leaf_rows.append((node, ann.counter, label))
    for node, counter, label in leaf_rows:
        parent.append(node)
        time.append(max(counter, time[node]))
        names.append(str(label))
    ids = np.arange(len(parent))
    return Phylogeny(ids, parent, time, names)


def peel_back_conjoined_leaves(tree: Phylogeny) -> Phylogeny:
    """Move groups of identical-record leaves up to the previous retained rank.

    Distinct taxa cannot share their own newest deposit, so a node holding
    two or more leaves reflects a collision at its rank.  Such leaves are
    re-attached to that node's parent; a node left childless is removed.
    """
    counts = tree.child_counts()
    is_leaf = counts == 0
    par = tree.parents.copy()
    moved = False
    for node, kids in enumerate(tree.children):
        if par[node] < 0:
            continue
        leafy = [c for c in kids if is_leaf[c]]
        if len(leafy) >= 2:
            par[leafy] = par[node]
            moved = True
    if not moved:
        return tree
    out = Phylogeny(tree.ids, par, tree.origin_times, tree.labels)
    # drop internal nodes stripped of all children (they would pose as leaves)
    keep = np.ones(len(tree), dtype=bool)
    newcounts = out.child_counts()
    keep[(newcounts == 0) & ~is_leaf] = False
    return out.subtree(keep)


def reconstruct(
    annotations: Sequence[Annotation],
    labels: Sequence[str] | None = None,
    peel_back: bool = True,
    collapse: bool = True,
) -> Phylogeny:
    """``build_tree`` followed by the usual postprocessing steps."""
    tree = build_tree(annotations, labels)
    if peel_back:
        tree = peel_back_conjoined_leaves(tree)
    if collapse:
        tree = collapse_unifurcations(tree)
    return tree
