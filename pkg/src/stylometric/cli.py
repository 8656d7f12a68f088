"""Command-line surface: descriptor computation, index validation, querying,
evaluation, and ablation sweeps.

Conventions: stdout carries data (JSON lines, report JSON, CSV), stderr
carries diagnostics. Exit code 0 means no errors. Config precedence is
flags > config file (JSON) > defaults, with STYLOMETRIC_THREADS as an
environment fallback for --threads.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .descriptor import compute_descriptor
from .errors import ProvenanceError, StylometricError
from .evaluation import evaluate_artsplit, evaluate_retrieval, sweep
from .feature_store import (
    DatasetManifest,
    StyleDescriptor,
    load_manifest,
    read_descriptor_store,
    read_feature_tensor,
    write_descriptor_store,
)
from .metrics import MetricKind
from .retrieval import batch_query, build_index

DEFAULT_T = 25
DEFAULT_IDX = 1
DEFAULT_METRIC = MetricKind.W2
DEFAULT_KS = (1, 10, 100)

THREADS_ENV = "STYLOMETRIC_THREADS"


@dataclass
class RunConfig:
    """Resolved run parameters; defaults mirror the reference setup."""

    t: int = DEFAULT_T
    idx: int = DEFAULT_IDX
    metric: MetricKind = DEFAULT_METRIC
    ks: tuple[int, ...] = DEFAULT_KS
    threads: int | None = None
    # which of t/idx were demanded by the operator (assert against stores)
    explicit_t: bool = False
    explicit_idx: bool = False


def _parse_ks(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        values = tuple(int(v) for v in text)
    else:
        values = tuple(int(part) for part in str(text).split(",") if part.strip())
    if not values or any(v < 1 for v in values):
        raise ValueError(f"k values must be positive integers: {text!r}")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"k values must be strictly increasing: {text!r}")
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge flag, config-file, environment, and default values."""
    file_cfg = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        if not isinstance(file_cfg, dict):
            raise ValueError(f"config file {args.config} must hold a JSON object")

    def pick(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        if key in file_cfg:
            return file_cfg[key]
        return default

    metric_raw = pick(getattr(args, "metric", None), "metric", DEFAULT_METRIC.value)
    metric = metric_raw if isinstance(metric_raw, MetricKind) else MetricKind(metric_raw)

    ks_raw = pick(getattr(args, "k", None), "k", DEFAULT_KS)
    ks = _parse_ks(ks_raw)

    threads = getattr(args, "threads", None)
    if threads is None and os.environ.get(THREADS_ENV):
        threads = int(os.environ[THREADS_ENV])
    if threads is None and "threads" in file_cfg:
        threads = int(file_cfg["threads"])

    t_flag = getattr(args, "t", None)
    idx_flag = getattr(args, "idx", None)
    t = pick(t_flag, "t", DEFAULT_T)
    idx = pick(idx_flag, "idx", DEFAULT_IDX)
    return RunConfig(
        t=int(t),
        idx=int(idx),
        metric=metric,
        ks=ks,
        threads=threads,
        explicit_t=t_flag is not None or "t" in file_cfg,
        explicit_idx=idx_flag is not None or "idx" in file_cfg,
    )


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _error(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def _load_store(path: str) -> list[StyleDescriptor]:
    with open(path, "rb") as fh:
        return read_descriptor_store(fh)


def _load_manifest_file(path: str) -> DatasetManifest:
    with open(path, "rb") as fh:
        return load_manifest(fh)


def _store_provenance(descs: list[StyleDescriptor], path: str):
    if not descs:
        return None
    return descs[0].channels, descs[0].t, descs[0].idx


def _check_provenance(refs, ref_path, queries, query_path, config: RunConfig) -> None:
    ref_prov = _store_provenance(refs, ref_path)
    query_prov = _store_provenance(queries, query_path)
    if ref_prov and query_prov and ref_prov != query_prov:
        raise ProvenanceError(
            f"stores disagree: {ref_path} has (C={ref_prov[0]}, t={ref_prov[1]}, "
            f"idx={ref_prov[2]}), {query_path} has (C={query_prov[0]}, "
            f"t={query_prov[1]}, idx={query_prov[2]})"
        )
    for prov, path in ((ref_prov, ref_path), (query_prov, query_path)):
        if prov is None:
            continue
        if config.explicit_t and prov[1] != config.t:
            raise ProvenanceError(
                f"{path} has t={prov[1]}, but t={config.t} was requested"
            )
        if config.explicit_idx and prov[2] != config.idx:
            raise ProvenanceError(
                f"{path} has idx={prov[2]}, but idx={config.idx} was requested"
            )


def _report_config(config: RunConfig, **paths) -> dict:
    # Thread count and output paths are execution details, not provenance:
    # reports must be identical across thread counts.
    out = {"k": list(config.ks)}
    out.update({key: str(value) for key, value in paths.items() if value})
    return out


# ---------------------------------------------------------------------------
# descriptors / index


def _compute_store(feature_dir: str, out_path: str,
                   manifest: DatasetManifest | None) -> int:
    directory = Path(feature_dir)
    if not directory.is_dir():
        _error(f"{feature_dir}: not a directory")
        return 1
    files = sorted(p for p in directory.iterdir() if p.suffix == ".ift1")
    if not files:
        _warn(f"{feature_dir}: no .ift1 files found; writing an empty store")

    descs = []
    seen_ids: set[str] = set()
    expected = None
    failures = 0
    for path in files:
        try:
            with open(path, "rb") as fh:
                tensor = read_feature_tensor(fh)
            if manifest is not None and tensor.image_id not in manifest:
                raise StylometricError(
                    f"image_id '{tensor.image_id}' missing from manifest"
                )
            if tensor.image_id in seen_ids:
                raise StylometricError(f"duplicate image_id '{tensor.image_id}'")
            desc = compute_descriptor(tensor)
            shape = (desc.channels, desc.t, desc.idx)
            if expected is None:
                expected = shape
            elif shape != expected:
                raise StylometricError(
                    f"(C={shape[0]}, t={shape[1]}, idx={shape[2]}) does not "
                    f"match store (C={expected[0]}, t={expected[1]}, "
                    f"idx={expected[2]})"
                )
            seen_ids.add(tensor.image_id)
            descs.append(desc)
        except (StylometricError, OSError) as exc:
            _error(f"{path.name}: {exc}")
            failures += 1

    with open(out_path, "wb") as fh:
        write_descriptor_store(descs, fh)
    print(
        f"wrote {len(descs)} descriptor(s) to {out_path}"
        + (f" ({failures} failed)" if failures else ""),
        file=sys.stderr,
    )
    return 1 if failures else 0


def cmd_descriptors(args: argparse.Namespace) -> int:
    return _compute_store(args.features, args.out, None)


def cmd_index(args: argparse.Namespace) -> int:
    manifest = _load_manifest_file(args.manifest)
    return _compute_store(args.features, args.out, manifest)


# ---------------------------------------------------------------------------
# query


def cmd_query(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    refs = _load_store(args.store)
    queries = _load_store(args.queries)
    _check_provenance(refs, args.store, queries, args.queries, config)
    manifest = _load_manifest_file(args.manifest)
    index = build_index(refs, manifest)

    results = batch_query(index, queries, config.metric, max(config.ks),
                          threads=config.threads)
    lines = [
        json.dumps(
            {"query_id": r.query_id,
             "entries": [[image_id, score] for image_id, score in r.entries]},
            sort_keys=False,
        )
        for r in results
    ]
    payload = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)
    return 0


# ---------------------------------------------------------------------------
# eval


def _labeled_queries(queries: list[StyleDescriptor], manifest: DatasetManifest,
                     need_semantic: bool):
    labeled = []
    for desc in queries:
        rec = manifest.get(desc.image_id)
        if rec is None:
            raise StylometricError(
                f"query '{desc.image_id}' has no manifest entry"
            )
        if need_semantic:
            if rec.semantic_label is None:
                raise StylometricError(
                    f"query '{desc.image_id}' has no semantic label; "
                    f"--artsplit requires one"
                )
            labeled.append((desc, rec.style_label, rec.semantic_label))
        else:
            labeled.append((desc, rec.style_label))
    return labeled


def _eval_csv_rows(report, t, idx, metric_value) -> list[dict]:
    rows = []
    names = list(report.metrics.keys())
    for k in report.k_values:
        row = {"t": t, "idx": idx, "metric": metric_value, "k": k}
        for name in names:
            row[name] = repr(report.metrics[name][k])
        rows.append(row)
    return rows


def _write_csv(rows: list[dict], fieldnames: list[str], out_path: str | None) -> None:
    sink = io.StringIO()
    writer = csv.DictWriter(sink, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(sink.getvalue())
    else:
        sys.stdout.write(sink.getvalue())


def cmd_eval(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    refs = _load_store(args.store)
    queries = _load_store(args.queries)
    _check_provenance(refs, args.store, queries, args.queries, config)
    manifest = _load_manifest_file(args.manifest)
    query_manifest = _load_manifest_file(args.query_manifest)
    index = build_index(refs, manifest)

    labeled = _labeled_queries(queries, query_manifest, args.artsplit)
    report_config = _report_config(
        config,
        reference_store=args.store,
        reference_manifest=args.manifest,
        query_store=args.queries,
        query_manifest=args.query_manifest,
    )
    evaluate = evaluate_artsplit if args.artsplit else evaluate_retrieval
    report = evaluate(index, labeled, config.metric, config.ks,
                      threads=config.threads, config=report_config)

    payload = report.to_json() + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)

    if args.csv:
        rows = _eval_csv_rows(report, index.t, index.idx, config.metric.value)
        fieldnames = ["t", "idx", "metric", "k"] + list(report.metrics.keys())
        _write_csv(rows, fieldnames, args.csv)
    return 0


# ---------------------------------------------------------------------------
# sweep


def _load_sweep_cell(spec: dict, config: RunConfig):
    refs = _load_store(spec["store"])
    queries = _load_store(spec["queries"])
    prov = _store_provenance(refs, spec["store"])
    declared = (int(spec["t"]), int(spec["idx"]))
    if prov is not None and (prov[1], prov[2]) != declared:
        raise ProvenanceError(
            f"{spec['store']} has (t={prov[1]}, idx={prov[2]}), cell declares "
            f"(t={declared[0]}, idx={declared[1]})"
        )
    qprov = _store_provenance(queries, spec["queries"])
    if prov is not None and qprov is not None and prov != qprov:
        raise ProvenanceError(
            f"stores disagree: {spec['store']} vs {spec['queries']}"
        )
    manifest = _load_manifest_file(spec["manifest"])
    query_manifest = _load_manifest_file(spec["query_manifest"])
    index = build_index(refs, manifest)
    raw_queries = _labeled_queries(queries, query_manifest,
                                   need_semantic=spec.get("artsplit", False))
    return index, raw_queries


def cmd_sweep(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    with open(args.grid, "r", encoding="utf-8") as fh:
        grid = json.load(fh)

    cell_specs = grid.get("cells", [])
    artsplit = bool(grid.get("artsplit", False))
    kinds = [MetricKind(v) for v in grid.get("metrics", [config.metric.value])]
    ks = _parse_ks(grid.get("k", list(config.ks)))
    t_values = grid.get("t") or sorted({int(c["t"]) for c in cell_specs})
    idx_values = grid.get("idx") or sorted({int(c["idx"]) for c in cell_specs})

    by_cell = {(int(c["t"]), int(c["idx"])): c for c in cell_specs}
    cells = {}
    load_errors: dict[tuple[int, int], str] = {}
    for key, spec in by_cell.items():
        if artsplit:
            spec = dict(spec, artsplit=True)
        try:
            cells[key] = _load_sweep_cell(spec, config)
        except (StylometricError, OSError, KeyError) as exc:
            load_errors[key] = str(exc)
            _warn(f"cell (t={key[0]}, idx={key[1]}): {exc}")

    results = sweep(cells, t_values, idx_values, kinds, ks,
                    artsplit=artsplit, threads=config.threads)

    metric_names = (
        ["style_eval", "semantic_eval"] if artsplit
        else ["map", "map_flat", "recall"]
    )
    fieldnames = ["t", "idx", "metric", "k"] + metric_names
    rows = []
    warned = bool(load_errors)
    for cell in results:
        if cell.report is None:
            warned = True
            if (cell.t, cell.idx) not in load_errors:
                _warn(cell.warning or f"cell (t={cell.t}, idx={cell.idx}) skipped")
            rows.extend(
                {"t": cell.t, "idx": cell.idx, "metric": cell.metric.value,
                 "k": k, **{name: "" for name in metric_names}}
                for k in ks
            )
            continue
        rows.extend(_eval_csv_rows(cell.report, cell.t, cell.idx, cell.metric.value))
        if args.out_dir:
            out_dir = Path(args.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            name = f"report_t{cell.t}_idx{cell.idx}_{cell.metric.value}.json"
            with open(out_dir / name, "w", encoding="utf-8") as fh:
                fh.write(cell.report.to_json() + "\n")

    _write_csv(rows, fieldnames, args.csv)
    if warned and not args.allow_missing:
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--t", type=int, default=None,
                        help=f"expected extraction timestep (default {DEFAULT_T})")
    parser.add_argument("--idx", type=int, default=None,
                        help=f"expected up-block index (default {DEFAULT_IDX})")
    parser.add_argument("--metric", choices=[m.value for m in MetricKind],
                        default=None,
                        help=f"distance metric (default {DEFAULT_METRIC.value})")
    parser.add_argument("--k", default=None,
                        help="comma-separated cutoffs, strictly increasing "
                             "(default 1,10,100)")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: all cores; env "
                             f"{THREADS_ENV} is the fallback)")
    parser.add_argument("--config", default=None,
                        help="JSON config file; flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stylometric",
        description="Gaussian style-descriptor retrieval and evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("descriptors", help="compute descriptors from IFT1 files")
    p.add_argument("--features", required=True, help="directory of .ift1 files")
    p.add_argument("--out", required=True, help="output IDS1 store path")
    p.set_defaults(func=cmd_descriptors)

    p = sub.add_parser("index",
                       help="descriptors plus manifest validation")
    p.add_argument("--features", required=True, help="directory of .ift1 files")
    p.add_argument("--manifest", required=True, help="JSON-lines manifest")
    p.add_argument("--out", required=True, help="output IDS1 store path")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="rank references for each query descriptor")
    p.add_argument("--store", required=True, help="reference IDS1 store")
    p.add_argument("--manifest", required=True, help="reference manifest")
    p.add_argument("--queries", required=True, help="query IDS1 store")
    p.add_argument("--out", default=None, help="write JSON lines here "
                                               "instead of stdout")
    _add_common(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="retrieval or dual-protocol evaluation")
    p.add_argument("--store", required=True, help="reference IDS1 store")
    p.add_argument("--manifest", required=True, help="reference manifest")
    p.add_argument("--queries", required=True, help="query IDS1 store")
    p.add_argument("--query-manifest", required=True, dest="query_manifest",
                   help="manifest labeling the queries")
    p.add_argument("--artsplit", action="store_true",
                   help="dual style/semantic protocol (needs semantic labels)")
    p.add_argument("--out", default=None, help="report JSON path (default stdout)")
    p.add_argument("--csv", default=None, help="also write a CSV row per (metric, k)")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="evaluate a t x idx x metric grid")
    p.add_argument("--grid", required=True, help="grid spec JSON")
    p.add_argument("--allow-missing", action="store_true", dest="allow_missing",
                   help="missing cells warn instead of failing the run")
    p.add_argument("--out-dir", default=None, dest="out_dir",
                   help="directory for per-cell report JSON files")
    p.add_argument("--csv", default=None,
                   help="combined CSV path (default stdout)")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (StylometricError, OSError, ValueError) as exc:
        _error(str(exc))
        return 1


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
