"""Estimator-style wrappers over reconstruction and serialization."""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin

from . import formats
from ._validation import check_annotations, check_fitted
from .phylogeny import Phylogeny
from .quality import triplet_distance
from .reconstruct import mrca_bounds, reconstruct

__all__ = ["TreeReconstructor", "AnnotationEncoder"]


class TreeReconstructor(BaseEstimator):
    """Fit a phylogeny to a set of annotations.

    Parameters
    ----------
    peel_back : bool
        Move leaves that share their newest record up one retained rank.
    collapse : bool
        Splice out single-child internal nodes.

    Attributes
    ----------
    tree_ : Phylogeny
    labels_ : list of str
    """

    def __init__(self, peel_back: bool = True, collapse: bool = True) -> None:
        self.peel_back = peel_back
        self.collapse = collapse

    def fit(self, X, y=None):
        """``X`` is a sequence of annotations, ``y`` optional taxon labels."""
        anns, labels = check_annotations(X, y)
        self.tree_ = reconstruct(anns, labels, peel_back=self.peel_back, collapse=self.collapse)
        self.labels_ = labels
        self.annotations_ = anns
        return self

    def predict(self, pairs):
        """MRCA bounds for index pairs into the fitted annotations."""
        check_fitted(self, "tree_")
        return [mrca_bounds(self.annotations_[i], self.annotations_[j]) for i, j in pairs]

    def score(self, reference: Phylogeny, y=None) -> float:
        """One minus strict triplet distance against ``reference``."""
        check_fitted(self, "tree_")
        return 1.0 - triplet_distance(reference, self.tree_, "strict")


class AnnotationEncoder(TransformerMixin, BaseEstimator):
    """Annotations to plain records and back.

    ``transform`` yields one dict per annotation (see
    ``formats.serialize_annotation``); ``inverse_transform`` rebuilds them.
    """

    def fit(self, X, y=None):
        anns, _ = check_annotations(X)
        self.n_features_in_ = 1
        self.differentia_width_ = anns[0].width
        return self

    def transform(self, X):
        check_fitted(self, "differentia_width_")
        anns, _ = check_annotations(X)
        if anns[0].width != self.differentia_width_:
            raise ValueError("differentia width differs from the fitted one")
        return [formats.serialize_annotation(a) for a in anns]

    def inverse_transform(self, X):
        return [formats.deserialize_annotation(r) for r in X]
