"""Command-line pipeline: simulate, reconstruct, evaluate, compare, experiment.

Every command is a deterministic function of its inputs, flags and seed.
Failures print one line ``error: <category>: <message>`` to stderr and exit
nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import formats
from .phylogeny import Phylogeny
from .quality import QualityReport, evaluate
from .reconstruct import reconstruct
from .refmodel import (
    REGIMES,
    AnnotationSpec,
    annotate,
    downsample,
    labelled_reference,
    regime_config,
    run_evolution,
)
from .retention import RetentionPolicy, parse_policy
from .stats import cliffs_delta, skim_best, skim_worst

__all__ = ["ExperimentSpec", "CliError", "main", "cmd_simulate", "cmd_reconstruct",
           "cmd_evaluate", "cmd_compare", "cmd_experiment", "METRICS"]

METRICS = ("strict_triplet_distance", "lax_triplet_distance", "inner_node_loss", "recent_recovery")

_EXIT = {"usage": 2, "config": 3, "io": 4, "data": 5, "internal": 1}


class CliError(Exception):
    def __init__(self, category: str, message: str) -> None:
        super().__init__(message)
        self.category = category


@dataclass(frozen=True)
class ExperimentSpec:
    regime: str = "plain"
    population_size: int = 1024
    generations: int = 10_000
    downsample: int | None = 128
    policy: str = "tilted"
    storage: str | None = None
    annotation_bits: int = 64
    differentia_bits: int = 1
    replicates: int = 20
    seed: int = 0
    out: str = "out"

    def __post_init__(self) -> None:
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; choose from {sorted(REGIMES)}")
        if self.differentia_bits not in (1, 8, 32, 64):
            raise ValueError("differentia_bits must be 1, 8, 32 or 64")
        if self.annotation_bits <= 0 or self.annotation_bits % self.differentia_bits:
            raise ValueError("annotation_bits must be a positive multiple of differentia_bits")
        if self.storage not in (None, "column", "surface"):
            raise ValueError("storage must be 'column' or 'surface'")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if self.downsample is not None and not 1 <= self.downsample <= self.population_size:
            raise ValueError("downsample must lie in [1, population_size]")
        self.resolved_policy()  # validates

    @property
    def sites(self) -> int:
        return self.annotation_bits // self.differentia_bits

    def resolved_policy(self) -> RetentionPolicy:
        """Policy with its capacity filled in from the annotation size."""
        text = self.policy
        if ":" not in text and text != "keep-all":
            text = f"{text}:{self.sites}"
        policy = parse_policy(text)
        if policy.capped and policy.param != self.sites:
            raise ValueError(
                f"policy {policy} does not fit {self.annotation_bits}-bit annotation "
                f"of {self.differentia_bits}-bit differentiae ({self.sites} sites)"
            )
        if self.storage == "surface" and not policy.capped:
            raise ValueError(f"surface storage needs a capped policy, not {policy}")
        return policy

    def annotation_spec(self, replicate: int) -> AnnotationSpec:
        seed = int(np.random.SeedSequence([self.seed, replicate, 0xA77]).generate_state(1)[0])
        return AnnotationSpec(self.resolved_policy(), self.differentia_bits, self.storage, seed=seed)


# -- config handling --------------------------------------------------------


def _spec_from(args: argparse.Namespace) -> ExperimentSpec:
    values: dict = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError("io", f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise CliError("config", f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise CliError("config", "config must be a JSON object")
        known = {f.name for f in fields(ExperimentSpec)}
        for key, val in raw.items():
            name = key.replace("-", "_")
            if name not in known:
                raise CliError("config", f"unknown config key {key!r}")
            values[name] = val
    if "seed" not in values and os.environ.get("STRATIGRAPH_SEED"):
        try:
            values["seed"] = int(os.environ["STRATIGRAPH_SEED"])
        except ValueError:
            raise CliError("config", "STRATIGRAPH_SEED must be an integer") from None
    for f in fields(ExperimentSpec):
        val = getattr(args, f.name, None)
        if val is not None:
            values[f.name] = val
    if values.get("downsample") == 0:
        values["downsample"] = None
    try:
        return ExperimentSpec(**values)
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc)) from None


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


# -- commands ---------------------------------------------------------------


def _simulate_one(spec: ExperimentSpec, r: int) -> list[str]:
    config = regime_config(
        spec.regime,
        population_size=spec.population_size,
        generations=spec.generations,
        seed=spec.seed,
    )
    result = run_evolution(config, replicate=r)
    if spec.downsample is not None:
        result = downsample(result, spec.downsample, seed=spec.seed * 1_000_003 + r)
    result = annotate(result, spec.annotation_spec(r))
    out = Path(spec.out)
    ref_path = out / f"ref-{r}.phylo.csv"
    ann_path = out / f"ann-{r}.ann.json"
    formats.write_text_atomic(ref_path, formats.export_alife_csv(labelled_reference(result)))
    formats.write_annotations(ann_path, result.annotations, result.labels)
    return [str(ref_path), str(ann_path)]


def _run_replicates(fn, spec: ExperimentSpec, jobs: int | None) -> list:
    reps = range(spec.replicates)
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or spec.replicates == 1:
        return [fn(spec, r) for r in reps]
    with ProcessPoolExecutor(max_workers=min(jobs, spec.replicates)) as pool:
        return list(pool.map(fn, [spec] * spec.replicates, reps))


def cmd_simulate(spec: ExperimentSpec, jobs: int | None = None) -> list[str]:
    """Reference tree and annotation file for every replicate."""
    return [p for paths in _run_replicates(_simulate_one, spec, jobs) for p in paths]


def _read_tree(path: str | Path) -> Phylogeny:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".nwk"):
        return formats.parse_newick(text)
    return formats.import_alife_csv(text)


def cmd_reconstruct(ann_path: str | Path, out: str | Path, newick: str | Path | None = None) -> Phylogeny:
    labels, anns = formats.read_annotations(ann_path)
    tree = reconstruct(anns, labels)
    formats.write_text_atomic(out, formats.export_alife_csv(tree))
    if newick:
        formats.write_text_atomic(newick, formats.export_newick(tree) + "\n")
    return tree


def cmd_evaluate(ref_path, rec_path, out=None, recent_window: int = 128, seed: int = 0) -> QualityReport:
    ref = _read_tree(ref_path)
    rec = _read_tree(rec_path)
    report = evaluate(ref, rec, recent_window=recent_window, seed=seed)
    if out:
        formats.write_text_atomic(out, _dump(report.to_dict()))
    return report


def _load_reports(source: str | Path) -> list[QualityReport]:
    path = Path(source)
    files = sorted(path.glob("*.report.json")) if path.is_dir() else [path]
    if not files:
        raise CliError("data", f"no reports found in {source}")
    reports = []
    for f in files:
        data = json.loads(f.read_text(encoding="utf-8"))
        items = data if isinstance(data, list) else [data]
        reports.extend(QualityReport.from_dict(d) for d in items)
    return reports


def cmd_compare(sets: dict[str, list[QualityReport]], alpha: float = 0.05) -> dict:
    """Per-metric medians, pairwise effect sizes and skim memberships."""
    if len(sets) < 2:
        raise CliError("usage", "compare needs at least two report sets")
    table: dict = {}
    names = list(sets)
    for metric in METRICS:
        samples = {
            k: [getattr(r, metric) for r in v if getattr(r, metric) is not None]
            for k, v in sets.items()
        }
        if any(not s for s in samples.values()):
            continue
        pairwise = []
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                eff = cliffs_delta(samples[a], samples[b])
                pairwise.append({
                    "a": a, "b": b, "cliffs_delta": eff.cliffs_delta,
                    "magnitude": eff.magnitude, "u_statistic": eff.u_statistic,
                    "p_value": eff.p_value,
                })
        table[metric] = {
            "median": {k: float(np.median(v)) for k, v in samples.items()},
            "pairwise": pairwise,
            "skim_best": skim_best(samples, alpha),
            "skim_worst": skim_worst(samples, alpha),
        }
    return {"alpha": alpha, "groups": names, "metrics": table}


def _experiment_one(spec: ExperimentSpec, r: int) -> list[str]:
    paths = _simulate_one(spec, r)
    out = Path(spec.out)
    rec = out / f"rec-{r}.phylo.csv"
    cmd_reconstruct(paths[1], rec)
    report = out / f"rep-{r}.report.json"
    cmd_evaluate(paths[0], rec, report, seed=spec.seed)
    return paths + [str(rec), str(report)]


def cmd_experiment(spec: ExperimentSpec, jobs: int | None = None) -> dict:
    """Simulate, reconstruct and evaluate each replicate, then write a manifest."""
    paths = [p for ps in _run_replicates(_experiment_one, spec, jobs) for p in ps]
    out = Path(spec.out)
    reports = _load_reports(out)
    summary = {
        m: float(np.median([getattr(r, m) for r in reports if getattr(r, m) is not None]))
        for m in METRICS
        if any(getattr(r, m) is not None for r in reports)
    }
    manifest = {
        "experiment": asdict(spec),
        "policy": str(spec.resolved_policy()),
        "median": summary,
        "artifacts": {Path(p).name: _sha256(Path(p)) for p in paths},
    }
    formats.write_text_atomic(out / "manifest.json", _dump(manifest))
    return manifest


# -- argument parsing -------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise CliError("usage", message)


def _spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--regime", choices=sorted(REGIMES))
    p.add_argument("--population-size", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--downsample", type=int, help="taxa to sample; 0 keeps everyone")
    p.add_argument("--policy", help="e.g. tilted, steady:64, keep-all")
    p.add_argument("--storage", choices=["column", "surface"])
    p.add_argument("--annotation-bits", type=int)
    p.add_argument("--differentia-bits", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="parallel replicates (default: all cores)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="JSON file of ExperimentSpec fields; flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stratigraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    _spec_flags(sub.add_parser("simulate", help="reference trees and annotations"))
    _spec_flags(sub.add_parser("experiment", help="simulate, reconstruct, evaluate"))

    p = sub.add_parser("reconstruct", help="tree from an annotation file")
    p.add_argument("annotations")
    p.add_argument("--out", required=True, help="output .phylo.csv")
    p.add_argument("--newick", help="also write Newick here")

    p = sub.add_parser("evaluate", help="score a reconstruction")
    p.add_argument("reference")
    p.add_argument("reconstruction")
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--recent-window", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("compare", help="compare sets of reports")
    p.add_argument("sets", nargs="+", help="directory of *.report.json or a report file")
    p.add_argument("--labels", nargs="+", help="one name per set")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", help="output JSON (default: stdout)")
    return parser


def _run(argv: Sequence[str] | None) -> int:
    args = build_parser().parse_args(argv)
    cmd = args.command
    if cmd in ("simulate", "experiment"):
        spec = _spec_from(args)
        if args.jobs is not None and args.jobs < 1:
            raise CliError("config", "--jobs must be positive")
        if cmd == "simulate":
            for path in cmd_simulate(spec, args.jobs):
                print(path)
        else:
            manifest = cmd_experiment(spec, args.jobs)
            print(_dump(manifest["median"]), end="")
    elif cmd == "reconstruct":
        cmd_reconstruct(args.annotations, args.out, args.newick)
    elif cmd == "evaluate":
        report = cmd_evaluate(args.reference, args.reconstruction, args.out, args.recent_window, args.seed)
        if not args.out:
            print(_dump(report.to_dict()), end="")
    elif cmd == "compare":
        labels = args.labels or [Path(s).name for s in args.sets]
        if len(labels) != len(args.sets):
            raise CliError("usage", "--labels must name every set")
        if len(set(labels)) != len(labels):
            raise CliError("usage", "set labels must be distinct")
        if not 0 < args.alpha < 1:
            raise CliError("usage", "--alpha must lie strictly between 0 and 1")
        sets = {lab: _load_reports(s) for lab, s in zip(labels, args.sets)}
        text = _dump(cmd_compare(sets, args.alpha))
        if args.out:
            formats.write_text_atomic(args.out, text)
        else:
            print(text, end="")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    try:
        return _run(argv)
    except CliError as exc:
        category, msg = exc.category, str(exc)
    except OSError as exc:
        category, msg = "io", f"{exc.strerror or exc}: {exc.filename or ''}".rstrip(": ")
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        category, msg = "data", str(exc)
    except Exception as exc:  # pragma: no cover - last resort
        category, msg = "internal", f"{type(exc).__name__}: {exc}"
    print(f"error: {category}: {' '.join(msg.split())}", file=sys.stderr)
    return _EXIT[category]


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
