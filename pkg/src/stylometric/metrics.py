"""Closed-form distances between diagonal-Gaussian style descriptors.

Five metrics, all "lower is more style-similar":

  W2    squared 2-Wasserstein:  |mu_a - mu_b|^2 + sum_c (sqrt(va_c) - sqrt(vb_c))^2
  L2    squared Euclidean over means only
  GRAM  Frobenius distance of mean outer products, via the closed form
        sqrt(|mu_a|^4 + |mu_b|^4 - 2 (mu_a . mu_b)^2)
  KL    diagonal-Gaussian Kullback-Leibler divergence KL(a || b)
  JSD   symmetrized KL: (KL(a||b) + KL(b||a)) / 2

All arithmetic is float64. The scalar functions delegate to the row kernels
below so that single-pair and index-scan results are bit-identical.

KL carries the constant -C/2 term so KL(p, p) == 0; `include_constant=False`
drops it. The two variants differ by exactly C/2 on every pair, so rankings
are unaffected either way.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import DimensionMismatchError, SingularCovarianceError, ZeroVarianceError
from .feature_store import StyleDescriptor


class MetricKind(Enum):
    W2 = "w2"
    L2 = "l2"
    GRAM = "gram"
    KL = "kl"
    JSD = "jsd"


def _check_same_width(a: StyleDescriptor, b: StyleDescriptor) -> None:
    if a.channels != b.channels:
        raise DimensionMismatchError(
            f"'{a.image_id}' has {a.channels} channels, "
            f"'{b.image_id}' has {b.channels}"
        )


def _check_kl_pair(a: StyleDescriptor, b: StyleDescriptor) -> None:
    # Order matters: a singular target is reported before a degenerate source.
    if (b.var == 0.0).any():
        raise SingularCovarianceError(
            f"'{b.image_id}' has a zero-variance channel; KL target is singular"
        )
    if (a.var == 0.0).any():
        raise ZeroVarianceError(
            f"'{a.image_id}' has a zero-variance channel; KL is undefined"
        )


# ---------------------------------------------------------------------------
# row kernels: one query against a (m, C) block of references


def w2_squared_rows(q_mu, q_sd, ref_mu, ref_sd) -> np.ndarray:
    """Squared W2 of a query vs. reference rows; sd = sqrt(var) precomputed."""
    return (
        np.square(ref_mu - q_mu).sum(axis=1)
        + np.square(ref_sd - q_sd).sum(axis=1)
    )


def l2_squared_rows(q_mu, ref_mu) -> np.ndarray:
    return np.square(ref_mu - q_mu).sum(axis=1)


def gram_rows(q_mu, ref_mu) -> np.ndarray:
    q_sq = np.square(q_mu).sum()
    ref_sq = np.square(ref_mu).sum(axis=1)
    cross = (ref_mu * q_mu).sum(axis=1)
    radicand = q_sq * q_sq + ref_sq * ref_sq - 2.0 * np.square(cross)
    return np.sqrt(np.maximum(radicand, 0.0))


def kl_rows(q_mu, q_var, ref_mu, ref_var, include_constant: bool = True) -> np.ndarray:
    """KL(q || ref) per reference row; variances must be strictly positive."""
    terms = (
        np.log(ref_var / q_var)
        + q_var / ref_var
        + np.square(ref_mu - q_mu) / ref_var
    )
    half = 0.5 * terms.sum(axis=1)
    if include_constant:
        half = half - 0.5 * q_mu.shape[-1]
    return half


def jsd_rows(q_mu, q_var, ref_mu, ref_var) -> np.ndarray:
    forward = kl_rows(q_mu, q_var, ref_mu, ref_var)
    backward_terms = (
        np.log(q_var / ref_var)
        + ref_var / q_var
        + np.square(q_mu - ref_mu) / q_var
    )
    backward = 0.5 * backward_terms.sum(axis=1) - 0.5 * q_mu.shape[-1]
    return 0.5 * forward + 0.5 * backward


# ---------------------------------------------------------------------------
# scalar API


def w2_squared(a: StyleDescriptor, b: StyleDescriptor) -> float:
    """Squared 2-Wasserstein distance between two diagonal Gaussians."""
    _check_same_width(a, b)
    return float(
        w2_squared_rows(
            a.mu, np.sqrt(a.var), b.mu[None, :], np.sqrt(b.var)[None, :]
        )[0]
    )


def l2_squared(a: StyleDescriptor, b: StyleDescriptor) -> float:
    """Squared Euclidean distance between the mean vectors; variances unused."""
    _check_same_width(a, b)
    return float(l2_squared_rows(a.mu, b.mu[None, :])[0])


def gram_distance(a: StyleDescriptor, b: StyleDescriptor) -> float:
    """Frobenius distance |mu_a mu_a^T - mu_b mu_b^T|_F without materializing CxC."""
    _check_same_width(a, b)
    return float(gram_rows(a.mu, b.mu[None, :])[0])


def kl_divergence(a: StyleDescriptor, b: StyleDescriptor,
                  include_constant: bool = True) -> float:
    """KL(a || b) for diagonal Gaussians; requires strictly positive variances."""
    _check_same_width(a, b)
    _check_kl_pair(a, b)
    return float(
        kl_rows(a.mu, a.var, b.mu[None, :], b.var[None, :], include_constant)[0]
    )


def jsd(a: StyleDescriptor, b: StyleDescriptor) -> float:
    """Symmetrized KL divergence: KL both ways, averaged."""
    _check_same_width(a, b)
    _check_kl_pair(a, b)
    _check_kl_pair(b, a)
    return float(jsd_rows(a.mu, a.var, b.mu[None, :], b.var[None, :])[0])


_DISPATCH = {
    MetricKind.W2: w2_squared,
    MetricKind.L2: l2_squared,
    MetricKind.GRAM: gram_distance,
    MetricKind.KL: kl_divergence,
    MetricKind.JSD: jsd,
}


def distance(kind: MetricKind, a: StyleDescriptor, b: StyleDescriptor) -> float:
    """Dispatch to the metric named by `kind`; lower means more style-similar."""
    return _DISPATCH[kind](a, b)
