"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

from collections.abc import Sequence

from sklearn.utils.validation import check_is_fitted

from .annotation import Annotation


def check_annotations(annotations, labels: Sequence | None = None) -> tuple[list[Annotation], list[str]]:
    """Non-empty list of same-width annotations, plus string labels."""
    anns = list(annotations)
    if not anns:
        raise ValueError("no annotations given")
    for a in anns:
        if not isinstance(a, Annotation):
            raise TypeError(f"expected Annotation, got {type(a).__name__}")
    widths = {a.width for a in anns}
    if len(widths) > 1:
        raise ValueError(f"mixed differentia widths {sorted(widths)}")
    if labels is None:
        labels = [str(i) for i in range(len(anns))]
    labels = [str(x) for x in labels]
    if len(labels) != len(anns):
        raise ValueError(f"{len(labels)} labels for {len(anns)} annotations")
    if len(set(labels)) != len(labels):
        raise ValueError("labels must be unique")
    return anns, labels


def check_fitted(estimator, attribute: str) -> None:
    check_is_fitted(estimator, attribute)
