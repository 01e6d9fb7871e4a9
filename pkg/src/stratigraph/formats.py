"""Serialization: annotation records, alife-standard CSV and Newick.

Annotation payloads are hex strings.  Sites are written in storage order,
each value most-significant bit first, so for 1-bit differentiae site 0 is
the top bit of the first byte.  Surfaces store the whole buffer; the rank of
each site is recomputed from ``(policy, generation)`` on load.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from .annotation import WIDTHS, Annotation, ColumnAnnotation, SurfaceAnnotation
from .phylogeny import Phylogeny
from .retention import enumerate_retained, parse_policy

__all__ = [
    "serialize_annotation",
    "deserialize_annotation",
    "annotation_to_json",
    "annotation_from_json",
    "write_annotations",
    "read_annotations",
    "export_alife_csv",
    "import_alife_csv",
    "export_newick",
    "parse_newick",
    "write_text_atomic",
    "ANNOTATION_CSV_FIELDS",
]

ANNOTATION_CSV_FIELDS = (
    "taxon",
    "policy",
    "differentia_width_bits",
    "surface_size",
    "generation",
    "differentia_hex",
)
_FORMAT_TAG = "stratigraph-annotations"


# -- annotations ------------------------------------------------------------


def _to_hex(values: np.ndarray, width: int) -> str:
    n = values.size
    if width == 1:
        raw = np.packbits(values.astype(np.uint8)).tobytes()
    else:
        raw = values.astype(f">u{width // 8}").tobytes()
    nchars = -(-n * width // 4)
    return raw.hex().upper()[:nchars]


def _from_hex(text: str, n: int, width: int) -> np.ndarray:
    nchars = -(-n * width // 4)
    if len(text) != nchars:
        raise ValueError(f"expected {nchars} hex characters, got {len(text)}")
    try:
        raw = bytes.fromhex(text + "0" * (len(text) % 2))
    except ValueError:
        raise ValueError("differentia_hex is not valid hexadecimal") from None
    if width == 1:
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
        if bits[n:].any():
            raise ValueError("nonzero padding bits in differentia_hex")
        return bits[:n].astype(np.uint64)
    return np.frombuffer(raw, dtype=f">u{width // 8}").astype(np.uint64)


def serialize_annotation(annotation: Annotation) -> dict:
    """Plain record with policy, width, surface size, generation and hex."""
    return {
        "policy": str(annotation.policy),
        "differentia_width_bits": annotation.width,
        "surface_size": annotation.size if isinstance(annotation, SurfaceAnnotation) else None,
        "generation": annotation.counter,
        "differentia_hex": _to_hex(annotation.values(), annotation.width),
    }


def deserialize_annotation(record: dict) -> Annotation:
    """Inverse of ``serialize_annotation``; validates every field."""
    try:
        policy = parse_policy(record["policy"])
        width = int(record["differentia_width_bits"])
        generation = int(record["generation"])
        text = str(record["differentia_hex"]).strip()
    except KeyError as exc:
        raise ValueError(f"annotation record lacks field {exc.args[0]!r}") from None
    if width not in WIDTHS:
        raise ValueError(f"unsupported differentia width {width}")
    if generation < 0:
        raise ValueError("generation must be non-negative")
    size = record.get("surface_size")
    if size not in (None, ""):
        size = int(size)
        return SurfaceAnnotation(policy, width, generation, _from_hex(text, size, width))
    n = len(enumerate_retained(policy, generation + 1))
    return ColumnAnnotation(policy, width, generation, _from_hex(text, n, width))


def annotation_to_json(annotation: Annotation) -> str:
    return json.dumps(serialize_annotation(annotation), sort_keys=True)


def annotation_from_json(text: str) -> Annotation:
    return deserialize_annotation(json.loads(text))


def write_text_atomic(path: str | os.PathLike, text: str) -> None:
    """Write UTF-8 text via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_annotations(
    path: str | os.PathLike, annotations: Sequence[Annotation], labels: Sequence[str]
) -> None:
    """Write ``.ann.json`` (default) or ``.ann.csv`` depending on suffix."""
    if len(labels) != len(annotations):
        raise ValueError("labels must match annotations")
    rows = [{"taxon": str(lab), **serialize_annotation(a)} for lab, a in zip(labels, annotations)]
    if str(path).endswith(".csv"):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=ANNOTATION_CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if row[k] is None else row[k] for k in ANNOTATION_CSV_FIELDS})
        write_text_atomic(path, buf.getvalue())
    else:
        doc = {"format": _FORMAT_TAG, "version": 1, "records": rows}
        write_text_atomic(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_annotations(path: str | os.PathLike) -> tuple[list[str], list[Annotation]]:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".csv"):
        rows = list(csv.DictReader(io.StringIO(text)))
    else:
        doc = json.loads(text)
        if doc.get("format") != _FORMAT_TAG:
            raise ValueError(f"{path}: not an annotation file")
        rows = doc["records"]
    labels = [str(r["taxon"]) for r in rows]
    return labels, [deserialize_annotation(r) for r in rows]


# -- alife standard ---------------------------------------------------------


def export_alife_csv(tree: Phylogeny) -> str:
    """Rows ``id, ancestor_list, origin_time, label`` in topological order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "ancestor_list", "origin_time", "label"])
    ids = tree.ids.tolist()
    for node in tree.topological_order().tolist():
        p = tree.parents[node]
        anc = "[none]" if p < 0 else f"[{ids[p]}]"
        label = tree.labels[node]
        writer.writerow([ids[node], anc, int(tree.origin_times[node]), "" if label is None else label])
    return buf.getvalue()


def import_alife_csv(text: str) -> Phylogeny:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty phylogeny table")
    ids, parents, times, labels = [], [], [], []
    for row in rows:
        anc = row["ancestor_list"].strip()
        if not (anc.startswith("[") and anc.endswith("]")):
            raise ValueError(f"malformed ancestor_list {anc!r}")
        inner = anc[1:-1].strip()
        if inner.lower() in ("none", ""):
            parents.append(None)
        elif "," in inner:
            raise ValueError(f"node {row['id']} has several ancestors; only asexual trees are supported")
        else:
            parents.append(int(inner))
        ids.append(int(row["id"]))
        t = float(row["origin_time"])
        if t != int(t):
            raise ValueError("origin_time must be an integer")
        times.append(int(t))
        lab = row.get("label") or row.get("taxon_label") or ""
        labels.append(lab or None)
    return Phylogeny.from_id_records(ids, parents, times, labels)


# -- Newick -----------------------------------------------------------------

_RESERVED = set("()[]':;, \t\n")


def _quote(label: str) -> str:
    if label and not (_RESERVED & set(label)):
        return label
    return "'" + label.replace("'", "''") + "'"


def export_newick(tree: Phylogeny, inner_times: bool = False) -> str:
    """Newick text with branch length ``child - parent`` origin time.

    The root's length is its own origin time.  With ``inner_times`` unlabelled
    internal nodes are labelled by their origin time.
    """
    kids = tree.children
    times = tree.origin_times.tolist()
    par = tree.parents.tolist()

    def name(node: int) -> str:
        lab = tree.labels[node]
        if lab is None and inner_times and kids[node]:
            lab = str(times[node])
        length = times[node] - (times[par[node]] if par[node] >= 0 else 0)
        return ("" if lab is None else _quote(lab)) + f":{length}"

    parts: list[str] = []
    # iterative so that deep unifurcation chains cannot hit the recursion limit
    stack: list[tuple[int, int]] = [(tree.root, 0)]
    while stack:
        node, state = stack.pop()
        if state == 2:
            parts.append(",")
            continue
        ch = kids[node]
        if not ch:
            parts.append(name(node))
        elif state == 0:
            parts.append("(")
            stack.append((node, 1))
            for i, c in enumerate(reversed(ch)):
                stack.append((c, 0))
                if i < len(ch) - 1:
                    stack.append((-1, 2))
        elif state == 1:
            parts.append(")" + name(node))
    return "".join(parts) + ";"


def parse_newick(text: str) -> Phylogeny:
    """Parse Newick text (as produced by ``export_newick``) into a tree.

    Origin times are accumulated from branch lengths, which must be whole
    numbers; a missing length counts as zero.
    """
    s = text.strip()
    if not s.endswith(";"):
        raise ValueError("Newick text must end with ';'")
    s = s[:-1]
    n = len(s)
    parent: list[int] = []
    label: list[str | None] = []
    length: list[int] = []
    open_nodes: list[int] = []
    pos = 0

    def new_node() -> int:
        parent.append(open_nodes[-1] if open_nodes else -1)
        label.append(None)
        length.append(0)
        return len(parent) - 1

    def read_label() -> str | None:
        nonlocal pos
        if pos < n and s[pos] == "'":
            pos += 1
            out = []
            while True:
                if pos >= n:
                    raise ValueError("unterminated quoted label")
                if s[pos] == "'":
                    if pos + 1 < n and s[pos + 1] == "'":
                        out.append("'")
                        pos += 2
                        continue
                    pos += 1
                    return "".join(out)
                out.append(s[pos])
                pos += 1
        start = pos
        while pos < n and s[pos] not in "(),:":
            pos += 1
        return s[start:pos].strip() or None

    def read_length() -> int:
        nonlocal pos
        if pos >= n or s[pos] != ":":
            return 0
        pos += 1
        start = pos
        while pos < n and s[pos] not in "(),":
            pos += 1
        try:
            value = float(s[start:pos])
        except ValueError:
            raise ValueError(f"bad branch length {s[start:pos]!r}") from None
        if value != int(value):
            raise ValueError("branch lengths must be whole numbers")
        return int(value)

    def finish(node: int) -> None:
        label[node] = read_label()
        length[node] = read_length()

    roots = 0
    while True:
        # at the start of a subtree
        while pos < n and s[pos] == "(":
            node = new_node()
            roots += parent[node] < 0
            open_nodes.append(node)
            pos += 1
        leaf = new_node()
        roots += parent[leaf] < 0
        finish(leaf)
        # close finished internal nodes
        while pos < n and s[pos] == ")":
            if not open_nodes:
                raise ValueError("unbalanced ')'")
            pos += 1
            finish(open_nodes.pop())
        if pos >= n:
            break
        if s[pos] != "," or not open_nodes:
            raise ValueError(f"unexpected character {s[pos]!r} at offset {pos}")
        pos += 1
    if open_nodes or roots != 1:
        raise ValueError("malformed Newick text")
    # parents always precede children, so one forward pass accumulates times
    times = [0] * len(parent)
    for i, p in enumerate(parent):
        times[i] = length[i] + (times[p] if p >= 0 else 0)
    return Phylogeny(np.arange(len(parent)), parent, times, label)
