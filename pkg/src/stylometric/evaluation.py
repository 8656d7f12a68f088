"""Ranking-quality evaluation: mAP@k / Recall@k and the dual
style-vs-semantic protocol for style/semantic grid datasets.

Two mAP normalizations exist in the retrieval literature; both are reported.
The headline `map` divides the precision sum by min(total_positives, k), so
a perfect prefix scores 1 even when k exceeds the number of positives;
`map_flat` divides by k. `recall` is the per-query hit rate within the top
k, which makes mAP@1 == Recall@1 an identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import MissingLabelError, QueryInIndexError, ValidationError
from .feature_store import StyleDescriptor
from .metrics import MetricKind
from .retrieval import DescriptorIndex, batch_query


@dataclass(frozen=True)
class RelevanceVector:
    """Binary relevance of a ranked list against one query.

    bits[i] == 1 iff the i-th retrieved item shares the query's label;
    total_positives counts label-matching items in the whole reference set.
    """

    bits: tuple[int, ...]
    total_positives: int

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ValidationError("relevance bits must be 0 or 1")
        if self.total_positives < 0:
            raise ValidationError("total_positives must be non-negative")
        if sum(bits) > self.total_positives:
            raise ValidationError(
                f"{sum(bits)} hits exceed total_positives={self.total_positives}"
            )
        object.__setattr__(self, "bits", bits)


def average_precision_at_k(rel: RelevanceVector, k: int, flat: bool = False) -> float:
    """AP@k = normalizer^-1 * sum_{i<=k} bits[i] * Precision@i.

    The normalizer is min(total_positives, k), or k when `flat`. Queries with
    no positives anywhere score 0.
    """
    if k < 1:
        raise ValidationError(f"k must be positive, got {k}")
    if rel.total_positives == 0:
        return 0.0
    denom = k if flat else min(rel.total_positives, k)
    hits = 0
    acc = 0.0
    for i, bit in enumerate(rel.bits[:k], start=1):
        if bit:
            hits += 1
            acc += hits / i
    return acc / denom


def recall_at_k(rel: RelevanceVector, k: int) -> int:
    """1 if any of the top-k items is relevant, else 0 (per-query hit rate)."""
    if k < 1:
        raise ValidationError(f"k must be positive, got {k}")
    return 1 if any(rel.bits[:k]) else 0


@dataclass(frozen=True)
class EvalReport:
    """Scores per metric name and cutoff k, plus the run configuration."""

    config: dict
    k_values: tuple[int, ...]
    metrics: dict[str, dict[int, float]]
    query_count: int
    zero_positive_queries: int

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "k_values": list(self.k_values),
            "metrics": {
                name: {str(k): v for k, v in per_k.items()}
                for name, per_k in self.metrics.items()
            },
            "query_count": self.query_count,
            "zero_positive_queries": self.zero_positive_queries,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=False)


def _check_ks(ks: Sequence[int]) -> tuple[int, ...]:
    ks = tuple(int(k) for k in ks)
    if not ks:
        raise ValidationError("at least one k value is required")
    if any(k < 1 for k in ks):
        raise ValidationError(f"k values must be positive: {ks}")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValidationError(f"k values must be strictly increasing: {ks}")
    return ks


def _base_config(index: DescriptorIndex, kind: MetricKind,
                 config: Mapping | None) -> dict:
    out = {"t": index.t, "idx": index.idx, "metric": kind.value}
    if config:
        out.update(config)
    return out


def evaluate_retrieval(index: DescriptorIndex,
                       queries: Iterable[tuple[StyleDescriptor, str]],
                       kind: MetricKind,
                       ks: Sequence[int],
                       threads: int | None = None,
                       config: Mapping | None = None) -> EvalReport:
    """Mean AP@k (both normalizations) and Recall@k over labeled queries.

    Relevance is style-label equality against the index labels. Queries must
    be disjoint from the index by id; a shared id raises QueryInIndexError
    (self-matches would silently inflate every score). Queries whose label
    has no positives at all count as AP 0 and are tallied in
    zero_positive_queries.
    """
    ks = _check_ks(ks)
    pairs = list(queries)
    if not pairs:
        raise ValidationError("at least one query is required")
    for desc, _ in pairs:
        if desc.image_id in index:
            raise QueryInIndexError(
                f"query '{desc.image_id}' is also indexed; evaluation queries "
                f"must be disjoint from the reference set"
            )

    ranked = batch_query(index, [d for d, _ in pairs], kind, max(ks), threads)

    ap = np.zeros((len(pairs), len(ks)))
    ap_flat = np.zeros((len(pairs), len(ks)))
    rec = np.zeros((len(pairs), len(ks)))
    zero_positive = 0
    for row, ((desc, label), result) in enumerate(zip(pairs, ranked)):
        total = index.style_counts.get(label, 0)
        bits = tuple(
            1 if index.style_labels[index.position(image_id)] == label else 0
            for image_id, _ in result.entries
        )
        rel = RelevanceVector(bits, total)
        if total == 0:
            zero_positive += 1
        for col, k in enumerate(ks):
            ap[row, col] = average_precision_at_k(rel, k)
            ap_flat[row, col] = average_precision_at_k(rel, k, flat=True)
            rec[row, col] = recall_at_k(rel, k)

    return EvalReport(
        config=_base_config(index, kind, config),
        k_values=ks,
        metrics={
            "map": {k: float(v) for k, v in zip(ks, ap.mean(axis=0))},
            "map_flat": {k: float(v) for k, v in zip(ks, ap_flat.mean(axis=0))},
            "recall": {k: float(v) for k, v in zip(ks, rec.mean(axis=0))},
        },
        query_count=len(pairs),
        zero_positive_queries=zero_positive,
    )


def evaluate_artsplit(index: DescriptorIndex,
                      queries: Iterable[tuple[StyleDescriptor, str, str]],
                      kind: MetricKind,
                      ks: Sequence[int],
                      threads: int | None = None,
                      config: Mapping | None = None) -> EvalReport:
    """Dual style/semantic precision@k over a style x semantic grid index.

    StyleEval@k is the mean fraction of top-k sharing the query's style
    label (higher is better); SemanticEval@k the same for semantic labels
    (lower is better -- chance level is positives-per-semantic / index size).
    Every reference must carry a semantic label.
    """
    ks = _check_ks(ks)
    triples = list(queries)
    if not triples:
        raise ValidationError("at least one query is required")
    for pos, label in enumerate(index.semantic_labels):
        if label is None:
            raise MissingLabelError(
                f"indexed '{index.ids[pos]}' has no semantic label; "
                f"the dual protocol requires one per reference"
            )
    for desc, _, _ in triples:
        if desc.image_id in index:
            raise QueryInIndexError(
                f"query '{desc.image_id}' is also indexed; evaluation queries "
                f"must be disjoint from the reference set"
            )

    ranked = batch_query(index, [d for d, _, _ in triples], kind, max(ks), threads)

    style_scores = np.zeros((len(triples), len(ks)))
    semantic_scores = np.zeros((len(triples), len(ks)))
    zero_positive = 0
    for row, ((desc, style, semantic), result) in enumerate(zip(triples, ranked)):
        if index.style_counts.get(style, 0) == 0:
            zero_positive += 1
        positions = [index.position(image_id) for image_id, _ in result.entries]
        style_bits = [1 if index.style_labels[p] == style else 0 for p in positions]
        sem_bits = [1 if index.semantic_labels[p] == semantic else 0 for p in positions]
        for col, k in enumerate(ks):
            style_scores[row, col] = sum(style_bits[:k]) / k
            semantic_scores[row, col] = sum(sem_bits[:k]) / k

    return EvalReport(
        config=_base_config(index, kind, config),
        k_values=ks,
        metrics={
            "style_eval": {k: float(v) for k, v in zip(ks, style_scores.mean(axis=0))},
            "semantic_eval": {
                k: float(v) for k, v in zip(ks, semantic_scores.mean(axis=0))
            },
        },
        query_count=len(triples),
        zero_positive_queries=zero_positive,
    )


@dataclass(frozen=True)
class SweepCellResult:
    """One grid cell's outcome: a report, or a warning for a missing cell."""

    t: int
    idx: int
    metric: MetricKind
    report: EvalReport | None = None
    warning: str | None = None


def sweep(cells: Mapping[tuple[int, int], tuple[DescriptorIndex, Sequence]],
          t_values: Sequence[int],
          idx_values: Sequence[int],
          kinds: Sequence[MetricKind],
          ks: Sequence[int],
          artsplit: bool = False,
          threads: int | None = None) -> list[SweepCellResult]:
    """Evaluate every (t, idx, metric) grid cell, in t-then-idx ascending
    order with metrics in the given order. A missing (t, idx) entry yields
    warning records instead of aborting the sweep."""
    ks = _check_ks(ks)
    results: list[SweepCellResult] = []
    for t in sorted(set(t_values)):
        for idx in sorted(set(idx_values)):
            cell = cells.get((t, idx))
            for kind in kinds:
                if cell is None:
                    results.append(SweepCellResult(
                        t, idx, kind,
                        warning=f"no descriptor set for cell (t={t}, idx={idx})",
                    ))
                    continue
                index, queries = cell
                evaluate = evaluate_artsplit if artsplit else evaluate_retrieval
                report = evaluate(index, queries, kind, ks, threads=threads)
                results.append(SweepCellResult(t, idx, kind, report=report))
    return results
