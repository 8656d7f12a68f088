import json

import numpy as np
import pytest
import torch
from PIL import Image

from stylometric_extractor import load_backbone

torch.set_num_threads(2)

ARCH_SEED = 2021


@pytest.fixture(scope="session")
def backbone():
    return load_backbone("sd21-offline-seeded", ARCH_SEED)


def gradient_style(rng, size=512):
    """Smooth blue-dominant horizontal gradients."""
    x = np.linspace(0, 1, size)
    g = np.outer(np.ones(size), x)
    img = np.stack([0.15 * g, 0.3 * g, 0.6 + 0.35 * g], axis=-1)
    img = img + rng.normal(0, 0.02, img.shape)
    return np.clip(img, 0, 1)


def noise_style(rng, size=512):
    """High-frequency red-dominant texture."""
    img = np.stack([
        0.65 + 0.3 * rng.random((size, size)),
        0.15 * rng.random((size, size)),
        0.1 * rng.random((size, size)),
    ], axis=-1)
    return np.clip(img, 0, 1)


def stripe_style(rng, size=512):
    """Hard-edged green diagonal stripes with random period."""
    yy, xx = np.mgrid[0:size, 0:size]
    period = 16 + int(rng.integers(0, 16))
    stripes = (((xx + yy) // period) % 2).astype(float)
    img = np.stack([
        0.1 + 0.15 * stripes,
        0.35 + 0.55 * stripes,
        0.12 * np.ones_like(stripes),
    ], axis=-1)
    img = img + rng.normal(0, 0.02, img.shape)
    return np.clip(img, 0, 1)


STYLE_MAKERS = (gradient_style, noise_style, stripe_style)


def save_png(path, array01):
    Image.fromarray((array01 * 255).astype(np.uint8)).save(path)


def write_style_corpus(directory, rng, per_style, size=512, prefix="img"):
    """(image_id, path, style_label) triples for a 3-style procedural corpus."""
    rows = []
    for si, maker in enumerate(STYLE_MAKERS):
        for j in range(per_style):
            image_id = f"{prefix}-s{si}-{j}"
            path = directory / f"{image_id}.png"
            save_png(path, maker(rng, size))
            rows.append((image_id, str(path), f"style-{si}"))
    return rows


def write_manifest(path, rows, with_labels=True):
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, img_path, style in rows:
            obj = {"image_id": image_id, "path": img_path}
            if with_labels:
                obj["style_label"] = style
            fh.write(json.dumps(obj) + "\n")
    return path
