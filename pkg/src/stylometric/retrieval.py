"""Exact top-k style retrieval over an immutable descriptor index.

The scan is brute force and exact. For large indexes the W2/L2/GRAM metrics
use a two-stage plan: a BLAS pass computes approximate scores from cached
norms and inner products, a provably sufficient candidate set is taken
around the k-th smallest approximate score, and candidates are re-scored
with the same arithmetic the scalar metric functions use. The margin bounds
the worst-case float64 rounding gap between the two formulations, so the
returned ids and scores are bit-identical to a full exact scan regardless
of path, batch size, or thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import metrics as _m
from .errors import (
    BatchQueryError,
    DimensionMismatchError,
    DuplicateIdError,
    MissingLabelError,
    MixedDescriptorError,
    SingularCovarianceError,
    StylometricError,
    ValidationError,
    ZeroVarianceError,
)
from .feature_store import DatasetManifest, StyleDescriptor
from .metrics import MetricKind

# Below this index size a plain exact scan is cheaper than the filter pass.
_FILTER_MIN = 1024
# Candidate margin: ~1800x the worst-case rounding gap at C=1280, still
# vanishing relative to any real score spread.
_FILTER_EPS = 1e-9
# Row block size for chunked exact scans (keeps temporaries bounded).
_SCAN_BLOCK = 8192
# Query block size for batched GEMM scoring.
_QUERY_BLOCK = 256

_FILTERABLE = (MetricKind.W2, MetricKind.L2, MetricKind.GRAM)


@dataclass(frozen=True)
class RankedList:
    """Top-k retrieval result: (image_id, score) pairs, ascending score."""

    query_id: str
    entries: tuple[tuple[str, float], ...]

    def ids(self) -> tuple[str, ...]:
        return tuple(image_id for image_id, _ in self.entries)


class DescriptorIndex:
    """Immutable stack of descriptors plus label lookup, built by build_index."""

    def __init__(self, ids, mu, var, style_labels, semantic_labels, t, idx):
        self.ids: tuple[str, ...] = ids
        self.mu: np.ndarray = mu
        self.var: np.ndarray = var
        self.sd: np.ndarray = np.sqrt(var) if var.size else var.copy()
        self.style_labels: tuple[str, ...] = style_labels
        self.semantic_labels: tuple[str | None, ...] = semantic_labels
        self.t = t
        self.idx = idx
        self._pos = {image_id: i for i, image_id in enumerate(ids)}

        for arr in (self.mu, self.var, self.sd):
            arr.flags.writeable = False

        # Cached norms for the approximate scoring pass, and the first row
        # with a zero-variance channel (poisons KL/JSD), found once.
        if len(ids):
            self._mu_sq = np.einsum("ij,ij->i", mu, mu)
            self._row_sq = self._mu_sq + np.einsum("ij,ij->i", self.sd, self.sd)
            self._mu_sq_max = float(self._mu_sq.max())
            self._row_sq_max = float(self._row_sq.max())
            zero_rows = np.flatnonzero((var == 0.0).any(axis=1))
            self._zero_var_row: int | None = (
                int(zero_rows[0]) if zero_rows.size else None
            )
        else:
            self._mu_sq = np.zeros(0)
            self._row_sq = np.zeros(0)
            self._mu_sq_max = 0.0
            self._row_sq_max = 0.0
            self._zero_var_row = None

        self.style_counts: dict[str, int] = {}
        for label in style_labels:
            self.style_counts[label] = self.style_counts.get(label, 0) + 1
        self.semantic_counts: dict[str, int] = {}
        for label in semantic_labels:
            if label is not None:
                self.semantic_counts[label] = self.semantic_counts.get(label, 0) + 1

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._pos

    @property
    def channels(self) -> int | None:
        return self.mu.shape[1] if len(self.ids) else None

    def position(self, image_id: str) -> int:
        return self._pos[image_id]

    def descriptor(self, i: int) -> StyleDescriptor:
        return StyleDescriptor(self.ids[i], self.t, self.idx, self.mu[i], self.var[i])

    def labels(self, image_id: str) -> tuple[str, str | None]:
        i = self._pos[image_id]
        return self.style_labels[i], self.semantic_labels[i]


def build_index(descs: Sequence[StyleDescriptor],
                manifest: DatasetManifest) -> DescriptorIndex:
    """Stack descriptors into an index; every id must have a manifest entry.

    Descriptors must share channel width and (t, idx); insertion order is
    preserved and is the retrieval tie-break order.
    """
    descs = list(descs)
    if not descs:
        return DescriptorIndex(
            (), np.zeros((0, 0)), np.zeros((0, 0)), (), (), None, None
        )

    c, t, idx = descs[0].channels, descs[0].t, descs[0].idx
    ids: list[str] = []
    styles: list[str] = []
    semantics: list[str | None] = []
    seen: set[str] = set()
    for desc in descs:
        if desc.channels != c or (desc.t, desc.idx) != (t, idx):
            raise MixedDescriptorError(
                f"descriptor '{desc.image_id}' (C={desc.channels}, t={desc.t}, "
                f"idx={desc.idx}) does not match index (C={c}, t={t}, idx={idx})"
            )
        if desc.image_id in seen:
            raise DuplicateIdError(f"duplicate image_id '{desc.image_id}'")
        seen.add(desc.image_id)
        rec = manifest.get(desc.image_id)
        if rec is None:
            raise MissingLabelError(f"no manifest entry for '{desc.image_id}'")
        ids.append(desc.image_id)
        styles.append(rec.style_label)
        semantics.append(rec.semantic_label)

    mu = np.stack([d.mu for d in descs])
    var = np.stack([d.var for d in descs])
    return DescriptorIndex(
        tuple(ids), mu, var, tuple(styles), tuple(semantics), t, idx
    )


# ---------------------------------------------------------------------------
# scanning


def _validate_query(index: DescriptorIndex, q: StyleDescriptor,
                    kind: MetricKind) -> None:
    if len(index) and q.channels != index.channels:
        raise DimensionMismatchError(
            f"query '{q.image_id}' has {q.channels} channels, "
            f"index has {index.channels}"
        )
    if kind in (MetricKind.KL, MetricKind.JSD) and len(index):
        if index._zero_var_row is not None:
            raise SingularCovarianceError(
                f"'{index.ids[index._zero_var_row]}' has a zero-variance "
                f"channel; {kind.value} is undefined on it"
            )
        if (q.var == 0.0).any():
            raise ZeroVarianceError(
                f"query '{q.image_id}' has a zero-variance channel; "
                f"{kind.value} is undefined"
            )


def _exact_scores(index: DescriptorIndex, q: StyleDescriptor, kind: MetricKind,
                  rows: np.ndarray | None = None) -> np.ndarray:
    """Exact scores for the given row subset (all rows when None).

    Row results are independent of the subset, so any candidate pre-filter
    yields bit-identical scores to a full scan.
    """
    mu, var, sd = index.mu, index.var, index.sd
    if rows is not None:
        mu, var, sd = mu[rows], var[rows], sd[rows]
    n = mu.shape[0]
    q_sd = np.sqrt(q.var)

    parts = []
    for lo in range(0, n, _SCAN_BLOCK):
        hi = min(lo + _SCAN_BLOCK, n)
        if kind is MetricKind.W2:
            part = _m.w2_squared_rows(q.mu, q_sd, mu[lo:hi], sd[lo:hi])
        elif kind is MetricKind.L2:
            part = _m.l2_squared_rows(q.mu, mu[lo:hi])
        elif kind is MetricKind.GRAM:
            part = _m.gram_rows(q.mu, mu[lo:hi])
        elif kind is MetricKind.KL:
            part = _m.kl_rows(q.mu, q.var, mu[lo:hi], var[lo:hi])
        else:
            part = _m.jsd_rows(q.mu, q.var, mu[lo:hi], var[lo:hi])
        parts.append(part)
    return parts[0] if len(parts) == 1 else np.concatenate(parts)


def _approx_scores(index: DescriptorIndex, q: StyleDescriptor, kind: MetricKind,
                   gemm_row: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Approximate scores via cached norms + inner products, with a slack
    bounding |approx - exact| so no true top-k member can be filtered out.

    `gemm_row` optionally supplies the precomputed inner-product term for
    this query (from a batched GEMM).
    """
    q_mu = q.mu
    if kind is MetricKind.W2:
        q_sd = np.sqrt(q.var)
        cross = index.mu @ q_mu + index.sd @ q_sd if gemm_row is None else gemm_row
        q_sq = float(q_mu @ q_mu + q_sd @ q_sd)
        approx = (q_sq + index._row_sq) - 2.0 * cross
        slack = 2.0 * _FILTER_EPS * (abs(q_sq) + index._row_sq_max)
    elif kind is MetricKind.L2:
        cross = index.mu @ q_mu if gemm_row is None else gemm_row
        q_sq = float(q_mu @ q_mu)
        approx = (q_sq + index._mu_sq) - 2.0 * cross
        slack = 2.0 * _FILTER_EPS * (abs(q_sq) + index._mu_sq_max)
    else:  # GRAM, compared in squared-radicand space (sqrt is monotone)
        cross = index.mu @ q_mu if gemm_row is None else gemm_row
        q_sq = float(q_mu @ q_mu)
        approx = q_sq * q_sq + np.square(index._mu_sq) - 2.0 * np.square(cross)
        slack = 2.0 * _FILTER_EPS * (abs(q_sq) + index._mu_sq_max) ** 2
    return approx, slack


def _ranked_positions(index: DescriptorIndex, q: StyleDescriptor, kind: MetricKind,
                      k: int, gemm_row: np.ndarray | None = None
                      ) -> tuple[np.ndarray, np.ndarray]:
    """(scores, positions) of the k exact minima, ties by insertion order."""
    n = len(index)
    k_eff = min(k, n)
    if kind in _FILTERABLE and n > _FILTER_MIN and k_eff < n:
        approx, slack = _approx_scores(index, q, kind, gemm_row)
        kth = np.partition(approx, k_eff - 1)[k_eff - 1]
        cand = np.flatnonzero(approx <= kth + slack)
        if cand.size < n:
            exact = _exact_scores(index, q, kind, cand)
            order = np.argsort(exact, kind="stable")[:k_eff]
            return exact[order], cand[order]
    exact = _exact_scores(index, q, kind)
    order = np.argsort(exact, kind="stable")[:k_eff]
    return exact[order], order


def query(index: DescriptorIndex, q: StyleDescriptor, kind: MetricKind,
          k: int) -> RankedList:
    """Exact top-k scan: the k smallest distances, ascending, ties broken by
    index insertion order. Self-matches are not excluded."""
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        raise ValidationError(f"k must be a positive integer, got {k!r}")
    if len(index) == 0:
        return RankedList(q.image_id, ())
    _validate_query(index, q, kind)
    scores, positions = _ranked_positions(index, q, kind, k)
    entries = tuple(
        (index.ids[p], float(s)) for p, s in zip(positions, scores)
    )
    return RankedList(q.image_id, entries)


def _resolve_threads(threads: int | None) -> int:
    if threads is None:
        return max(os.cpu_count() or 1, 1)
    if threads < 1:
        raise ValidationError(f"thread count must be positive, got {threads}")
    return threads


def batch_query(index: DescriptorIndex, queries: Iterable[StyleDescriptor],
                kind: MetricKind, k: int, threads: int | None = None
                ) -> list[RankedList]:
    """query() over many descriptors; results match a sequential loop exactly.

    The first failing query aborts the batch with a BatchQueryError carrying
    its position (lowest position wins when several fail)."""
    qs = list(queries)
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        raise ValidationError(f"k must be a positive integer, got {k!r}")
    for i, q in enumerate(qs):
        try:
            if len(index):
                _validate_query(index, q, kind)
        except StylometricError as exc:
            raise BatchQueryError(i, str(exc)) from exc

    n_threads = _resolve_threads(threads)
    if len(index) == 0:
        return [RankedList(q.image_id, ()) for q in qs]

    use_gemm = kind in _FILTERABLE and len(index) > _FILTER_MIN and len(qs) > 1

    def run_one(i: int, gemm_row: np.ndarray | None = None) -> RankedList:
        q = qs[i]
        try:
            scores, positions = _ranked_positions(index, q, kind, k, gemm_row)
        except StylometricError as exc:
            raise BatchQueryError(i, str(exc)) from exc
        return RankedList(
            q.image_id,
            tuple((index.ids[p], float(s)) for p, s in zip(positions, scores)),
        )

    # pool.map re-raises in submission order, so the surfaced BatchQueryError
    # always belongs to the lowest failing position.
    results: list[RankedList]
    if use_gemm:
        needs_sd = kind is MetricKind.W2
        results = []
        for lo in range(0, len(qs), _QUERY_BLOCK):
            hi = min(lo + _QUERY_BLOCK, len(qs))
            block_mu = np.stack([qs[i].mu for i in range(lo, hi)])
            gemm = block_mu @ index.mu.T
            if needs_sd:
                block_sd = np.stack([np.sqrt(qs[i].var) for i in range(lo, hi)])
                gemm += block_sd @ index.sd.T
            if n_threads > 1 and hi - lo > 1:
                with ThreadPoolExecutor(max_workers=n_threads) as pool:
                    results.extend(
                        pool.map(lambda j: run_one(lo + j, gemm[j]), range(hi - lo))
                    )
            else:
                results.extend(run_one(lo + j, gemm[j]) for j in range(hi - lo))
    elif n_threads > 1 and len(qs) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(run_one, range(len(qs))))
    else:
        results = [run_one(i) for i in range(len(qs))]
    return results
