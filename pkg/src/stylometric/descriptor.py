"""Gaussian style descriptor: channel-wise mean and variance of a feature tensor."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .feature_store import FeatureTensor, StyleDescriptor


def compute_descriptor(tensor: FeatureTensor) -> StyleDescriptor:
    """Reduce a (c, h, w) tensor to per-channel mean and population variance.

    mu[c]  = (1 / (h*w)) * sum_ij F[c, i, j]
    var[c] = (1 / (h*w)) * sum_ij (F[c, i, j] - mu[c])^2

    Accumulation is float64 (two-pass); rounding residue that would make a
    variance negative is clamped to zero. Provenance (image_id, t, idx) is
    copied from the tensor.
    """
    c, h, w = tensor.c, tensor.h, tensor.w
    if h * w < 1:
        raise ValidationError(f"tensor '{tensor.image_id}' has empty spatial extent")
    x = tensor.data.reshape(c, h * w).astype(np.float64)
    mu = x.mean(axis=1)
    var = np.square(x - mu[:, None]).mean(axis=1)
    np.maximum(var, 0.0, out=var)
    return StyleDescriptor(tensor.image_id, tensor.t, tensor.idx, mu, var)
