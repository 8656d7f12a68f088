"""Image -> latent -> noised latent -> denoiser forward -> IFT1 files."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbone import Backbone, load_backbone
from .config import RESOLUTION, ExtractionConfig
from .ift1 import load_manifest, write_ift1
from .schedule import image_noise_seed, noise_latent

LOG_NAME = "extraction_log.jsonl"


def load_image(path, resolution: int = RESOLUTION) -> torch.Tensor:
    """Decode to RGB, upscale the shorter side to `resolution` if needed,
    center-crop, and scale into [-1, 1]. Returns (3, res, res) float32."""
    with Image.open(path) as img:
        img = img.convert("RGB")
        w, h = img.size
        if min(w, h) < resolution:
            scale = resolution / min(w, h)
            img = img.resize(
                (max(resolution, round(w * scale)), max(resolution, round(h * scale))),
                Image.BICUBIC,
            )
            w, h = img.size
        left = (w - resolution) // 2
        top = (h - resolution) // 2
        img = img.crop((left, top, left + resolution, top + resolution))
        arr = np.asarray(img, dtype=np.float32)
    arr = arr / 127.5 - 1.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def extract_features(image: torch.Tensor, image_id: str,
                     config: ExtractionConfig, backbone: Backbone) -> np.ndarray:
    """Features for one preprocessed image: (C, H, W) float32."""
    z0 = backbone.encode(image[None])
    z_t = noise_latent(z0, config.t, image_noise_seed(config.seed, image_id))
    features = backbone.up_block_features(z_t, config.t, config.idx)
    return features[0].numpy().astype(np.float32, copy=False)


def extract_batch(manifest_path, config: ExtractionConfig,
                  backbone: Backbone | None = None) -> int:
    """One IFT1 per manifest record, plus extraction_log.jsonl.

    Unreadable images are logged as failed and skipped; the return value is
    the failure count. With skip_existing, records whose output file already
    exists are logged as skipped without recomputation.
    """
    entries = load_manifest(manifest_path)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if backbone is None:
        backbone = load_backbone(config.model, config.arch_seed)

    log: list[dict] = []
    failures = 0
    pending: list[tuple[str, Path, torch.Tensor]] = []

    def flush():
        nonlocal failures
        if not pending:
            return
        images = torch.stack([img for _, _, img in pending])
        z0 = backbone.encode(images)
        z_t = torch.stack([
            noise_latent(z0[i], config.t,
                         image_noise_seed(config.seed, pending[i][0]))
            for i in range(len(pending))
        ])
        features = backbone.up_block_features(z_t, config.t, config.idx)
        for i, (image_id, out_path, _) in enumerate(pending):
            arr = features[i].numpy().astype(np.float32, copy=False)
            try:
                write_ift1(out_path, image_id, config.t, config.idx, arr)
                log.append({"image_id": image_id, "status": "ok",
                            "file": out_path.name})
            except (OSError, ValueError) as exc:
                failures += 1
                log.append({"image_id": image_id, "status": "failed",
                            "error": str(exc)})
        pending.clear()

    for entry in entries:
        out_path = out_dir / f"{entry.image_id}.ift1"
        if config.skip_existing and out_path.exists():
            log.append({"image_id": entry.image_id, "status": "skipped",
                        "file": out_path.name})
            continue
        try:
            image = load_image(entry.path)
        except (OSError, ValueError) as exc:
            failures += 1
            log.append({"image_id": entry.image_id, "status": "failed",
                        "error": str(exc)})
            continue
        pending.append((entry.image_id, out_path, image))
        if len(pending) >= config.batch_size:
            flush()
    flush()

    with open(out_dir / LOG_NAME, "w", encoding="utf-8") as fh:
        for row in log:
            fh.write(json.dumps(row) + "\n")
    return failures
