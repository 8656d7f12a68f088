"""IFT1 emission and manifest ingestion.

The IFT1 byte layout is the retrieval engine's public file contract
(little-endian: magic "IFT1" | version u32 | id_len u32 | image_id utf-8 |
t u32 | idx u32 | c u32 | h u32 | w u32 | c*h*w float32 payload); this
module writes it independently so the extractor couples to the engine only
through its interfaces.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"IFT1"
FORMAT_VERSION = 1
MAX_ID_BYTES = 4096


def write_ift1(path, image_id: str, t: int, idx: int, features: np.ndarray) -> int:
    """Serialize a (c, h, w) float32 activation block; returns bytes written."""
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ValueError(f"features must be (c, h, w), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"features for '{image_id}' contain NaN/Inf")
    id_bytes = image_id.encode("utf-8")
    if len(id_bytes) > MAX_ID_BYTES:
        raise ValueError(f"image_id exceeds {MAX_ID_BYTES} bytes")
    c, h, w = arr.shape
    header = (
        MAGIC
        + struct.pack("<II", FORMAT_VERSION, len(id_bytes))
        + id_bytes
        + struct.pack("<IIIII", t, idx, c, h, w)
    )
    payload = arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    return len(header) + len(payload)


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    path: str


def load_manifest(path) -> list[ManifestEntry]:
    """JSON-lines manifest; extraction needs image_id and path only."""
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid JSON: {exc.msg}")
            if not isinstance(obj, dict) or "image_id" not in obj or "path" not in obj:
                raise ValueError(
                    f"{path}: line {lineno}: needs image_id and path fields"
                )
            image_id = obj["image_id"]
            if image_id in seen:
                raise ValueError(
                    f"{path}: line {lineno}: duplicate image_id '{image_id}'"
                )
            seen.add(image_id)
            entries.append(ManifestEntry(image_id, obj["path"]))
    return entries
