"""Hereditary stratigraphy: lineage annotations, retention policies and
phylogeny reconstruction, with a reference simulator and quality tooling."""

from .annotation import (
    Annotation,
    ColumnAnnotation,
    SurfaceAnnotation,
    create_annotation,
    deposit,
    differentia_draw,
    retained_ranks,
)
from .estimators import AnnotationEncoder, TreeReconstructor
from .phylogeny import Phylogeny, collapse_unifurcations, prune_extinct
from .quality import QualityReport, evaluate, triplet_distance
from .reconstruct import build_tree, mrca_bounds, peel_back_conjoined_leaves, reconstruct
from .retention import (
    RetentionPolicy,
    enumerate_retained,
    parse_policy,
    pick_deposition_site,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "ColumnAnnotation",
    "SurfaceAnnotation",
    "create_annotation",
    "deposit",
    "differentia_draw",
    "retained_ranks",
    "AnnotationEncoder",
    "TreeReconstructor",
    "Phylogeny",
    "collapse_unifurcations",
    "prune_extinct",
    "QualityReport",
    "evaluate",
    "triplet_distance",
    "build_tree",
    "mrca_bounds",
    "peel_back_conjoined_leaves",
    "reconstruct",
    "RetentionPolicy",
    "enumerate_retained",
    "parse_policy",
    "pick_deposition_site",
]
