"""Bit-exact serialization of feature tensors and descriptors, plus manifests.

Two binary formats, little-endian throughout:

  IFT1 feature tensor:
      magic "IFT1" | version u32 | id_len u32 | image_id utf-8 |
      t u32 | idx u32 | c u32 | h u32 | w u32 |
      payload c*h*w float32, channel-major then row-major

  IDS1 descriptor store:
      magic "IDS1" | version u32 | count u64 | c u32 | t u32 | idx u32 |
      per record: id_len u32 | image_id utf-8 | mu c*f32 | var c*f32

Dataset manifests are UTF-8 JSON-lines, one record per line, with fields
image_id / path / style_label and optional semantic_label; unknown fields
are ignored.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    DimensionError,
    DuplicateIdError,
    FormatError,
    ManifestError,
    MixedDescriptorError,
    NonFiniteDataError,
    TruncatedStreamError,
    UnsupportedVersionError,
    ValidationError,
)

FORMAT_VERSION = 1
TENSOR_MAGIC = b"IFT1"
STORE_MAGIC = b"IDS1"

MAX_ID_BYTES = 4096
MAX_TIMESTEP = 999
UP_BLOCK_INDICES = (0, 1, 2, 3)

# Channel width produced by each denoiser up-block (512x512 input geometry).
UP_BLOCK_CHANNELS = {0: 1280, 1: 1280, 2: 640, 3: 320}

# Reject headers whose payload could not describe any real tensor
# (1280 x 64 x 64 floats is ~21 MB; 1 TB is far beyond any valid file).
_MAX_PAYLOAD_BYTES = 1 << 40
_MAX_STORE_COUNT = 1 << 32


def _check_image_id(image_id: str) -> bytes:
    if not isinstance(image_id, str):
        raise ValidationError(f"image_id must be str, got {type(image_id).__name__}")
    encoded = image_id.encode("utf-8")
    if len(encoded) > MAX_ID_BYTES:
        raise ValidationError(
            f"image_id exceeds {MAX_ID_BYTES} bytes ({len(encoded)} bytes)"
        )
    return encoded


def _check_provenance(t: int, idx: int) -> None:
    if not isinstance(t, int) or not 0 <= t <= MAX_TIMESTEP:
        raise ValidationError(f"timestep t={t!r} outside [0, {MAX_TIMESTEP}]")
    if idx not in UP_BLOCK_INDICES:
        raise ValidationError(f"up-block idx={idx!r} not in {UP_BLOCK_INDICES}")


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    """One image's (c, h, w) float32 activation block at timestep t, block idx."""

    image_id: str
    t: int
    idx: int
    data: np.ndarray

    def __post_init__(self):
        _check_image_id(self.image_id)
        _check_provenance(self.t, self.idx)
        arr = np.array(self.data, dtype=np.float32, order="C", copy=True)
        if arr.ndim != 3:
            raise ValidationError(f"data must be (c, h, w), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValidationError(f"all dimensions must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteDataError(f"tensor '{self.image_id}' has NaN/Inf values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_flat(cls, image_id: str, t: int, idx: int, c: int, h: int, w: int,
                  data) -> "FeatureTensor":
        flat = np.asarray(data, dtype=np.float32)
        if flat.size != c * h * w:
            raise ValidationError(
                f"expected {c * h * w} values for ({c},{h},{w}), got {flat.size}"
            )
        return cls(image_id, t, idx, flat.reshape(c, h, w))

    @property
    def c(self) -> int:
        return self.data.shape[0]

    @property
    def h(self) -> int:
        return self.data.shape[1]

    @property
    def w(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureTensor):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.t == other.t
            and self.idx == other.idx
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class StyleDescriptor:
    """Diagonal Gaussian (mu, var) over channels, with extraction provenance.

    mu/var are held as float64 for downstream distance math; the IDS1 store
    persists them as float32, matching the precision of the source features.
    """

    image_id: str
    t: int
    idx: int
    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        _check_image_id(self.image_id)
        _check_provenance(self.t, self.idx)
        mu = np.array(self.mu, dtype=np.float64, copy=True).reshape(-1)
        var = np.array(self.var, dtype=np.float64, copy=True).reshape(-1)
        if mu.shape != var.shape:
            raise ValidationError(
                f"mu and var lengths differ: {mu.shape[0]} vs {var.shape[0]}"
            )
        if mu.shape[0] < 1:
            raise ValidationError("descriptor must have at least one channel")
        if not (np.isfinite(mu).all() and np.isfinite(var).all()):
            raise NonFiniteDataError(f"descriptor '{self.image_id}' has NaN/Inf values")
        if (var < 0.0).any():
            raise ValidationError(f"descriptor '{self.image_id}' has negative variance")
        mu.flags.writeable = False
        var.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "var", var)

    @property
    def channels(self) -> int:
        return self.mu.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, StyleDescriptor):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.t == other.t
            and self.idx == other.idx
            and np.array_equal(self.mu, other.mu)
            and np.array_equal(self.var, other.var)
        )


@dataclass(frozen=True)
class DatasetRecord:
    """One manifest row: image identity, location, and labels."""

    image_id: str
    path: str
    style_label: str
    semantic_label: str | None = None

    def __post_init__(self):
        _check_image_id(self.image_id)
        if not isinstance(self.path, str):
            raise ValidationError("path must be a string")
        if not isinstance(self.style_label, str) or not self.style_label:
            raise ValidationError(
                f"record '{self.image_id}': style_label must be non-empty"
            )
        if self.semantic_label is not None and not isinstance(self.semantic_label, str):
            raise ValidationError(
                f"record '{self.image_id}': semantic_label must be a string"
            )


class DatasetManifest:
    """Immutable, id-unique collection of DatasetRecords."""

    def __init__(self, records: Iterable[DatasetRecord]):
        recs = tuple(records)
        by_id: dict[str, DatasetRecord] = {}
        for rec in recs:
            if rec.image_id in by_id:
                raise DuplicateIdError(f"duplicate image_id '{rec.image_id}'")
            by_id[rec.image_id] = rec
        self.records = recs
        self._by_id = by_id

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[DatasetRecord]:
        return iter(self.records)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._by_id

    def get(self, image_id: str) -> DatasetRecord | None:
        return self._by_id.get(image_id)

    @property
    def style_labels(self) -> set[str]:
        return {rec.style_label for rec in self.records}

    @property
    def semantic_labels(self) -> set[str]:
        return {
            rec.semantic_label for rec in self.records
            if rec.semantic_label is not None
        }


# ---------------------------------------------------------------------------
# binary codecs


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    data = source.read(n)
    if data is None or len(data) < n:
        got = 0 if data is None else len(data)
        raise TruncatedStreamError(f"stream ended reading {what} ({got}/{n} bytes)")
    return data


def _read_u32(source: BinaryIO, what: str) -> int:
    return struct.unpack("<I", _read_exact(source, 4, what))[0]


def _read_u64(source: BinaryIO, what: str) -> int:
    return struct.unpack("<Q", _read_exact(source, 8, what))[0]


def _read_image_id(source: BinaryIO) -> str:
    id_len = _read_u32(source, "id length")
    if id_len > MAX_ID_BYTES:
        raise DimensionError(f"image_id length {id_len} exceeds {MAX_ID_BYTES}")
    raw = _read_exact(source, id_len, "image_id")
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"image_id is not valid UTF-8: {exc}") from None


def _check_magic_version(source: BinaryIO, magic: bytes) -> None:
    got = _read_exact(source, 4, "magic")
    if got != magic:
        raise BadMagicError(f"expected magic {magic!r}, got {got!r}")
    version = _read_u32(source, "format version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"format version {version} not supported (expected {FORMAT_VERSION})"
        )


def write_feature_tensor(tensor: FeatureTensor, sink: BinaryIO) -> int:
    """Serialize one tensor in IFT1 form; returns the byte count written."""
    id_bytes = tensor.image_id.encode("utf-8")
    header = (
        TENSOR_MAGIC
        + struct.pack("<II", FORMAT_VERSION, len(id_bytes))
        + id_bytes
        + struct.pack("<IIIII", tensor.t, tensor.idx, tensor.c, tensor.h, tensor.w)
    )
    payload = tensor.data.astype("<f4", copy=False).tobytes()
    sink.write(header)
    sink.write(payload)
    return len(header) + len(payload)


def read_feature_tensor(source: BinaryIO) -> FeatureTensor:
    """Parse one IFT1 tensor; every malformed input raises a typed error."""
    _check_magic_version(source, TENSOR_MAGIC)
    image_id = _read_image_id(source)
    t = _read_u32(source, "timestep")
    idx = _read_u32(source, "up-block index")
    c = _read_u32(source, "channel count")
    h = _read_u32(source, "height")
    w = _read_u32(source, "width")
    if min(c, h, w) == 0:
        raise DimensionError(f"zero dimension in (c={c}, h={h}, w={w})")
    need = c * h * w * 4
    if need > _MAX_PAYLOAD_BYTES:
        raise DimensionError(f"declared payload of {need} bytes is not plausible")
    payload = _read_exact(source, need, "tensor payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    try:
        return FeatureTensor(image_id, t, idx, data)
    except ValidationError as exc:
        # Out-of-range header fields (t, idx) surface as a format problem.
        raise FormatError(str(exc)) from None


def write_descriptor_store(descs: Sequence[StyleDescriptor], sink: BinaryIO) -> int:
    """Serialize descriptors in IDS1 form; returns the byte count written.

    All descriptors must share channel width and (t, idx) provenance, and
    carry distinct ids. Values are stored as float32.
    """
    descs = list(descs)
    if descs:
        c, t, idx = descs[0].channels, descs[0].t, descs[0].idx
    else:
        c = t = idx = 0

    # Validate and encode everything before touching the sink, so a
    # rejection never leaves a partial store behind.
    seen: set[str] = set()
    chunks = [STORE_MAGIC + struct.pack("<IQIII", FORMAT_VERSION, len(descs), c, t, idx)]
    for desc in descs:
        if desc.channels != c:
            raise MixedDescriptorError(
                f"descriptor '{desc.image_id}' has {desc.channels} channels, "
                f"store has {c}"
            )
        if (desc.t, desc.idx) != (t, idx):
            raise MixedDescriptorError(
                f"descriptor '{desc.image_id}' has (t={desc.t}, idx={desc.idx}), "
                f"store has (t={t}, idx={idx})"
            )
        if desc.image_id in seen:
            raise DuplicateIdError(f"duplicate image_id '{desc.image_id}'")
        seen.add(desc.image_id)

        with np.errstate(over="ignore"):
            mu32 = desc.mu.astype("<f4")
            var32 = desc.var.astype("<f4")
        if not (np.isfinite(mu32).all() and np.isfinite(var32).all()):
            raise NonFiniteDataError(
                f"descriptor '{desc.image_id}' overflows float32 storage"
            )
        id_bytes = desc.image_id.encode("utf-8")
        chunks.append(
            struct.pack("<I", len(id_bytes)) + id_bytes
            + mu32.tobytes() + var32.tobytes()
        )

    written = 0
    for chunk in chunks:
        sink.write(chunk)
        written += len(chunk)
    return written


def read_descriptor_store(source: BinaryIO) -> list[StyleDescriptor]:
    """Parse an IDS1 store, preserving record order."""
    _check_magic_version(source, STORE_MAGIC)
    count = _read_u64(source, "record count")
    if count >= _MAX_STORE_COUNT:
        raise DimensionError(f"declared record count {count} is not plausible")
    c = _read_u32(source, "channel count")
    t = _read_u32(source, "timestep")
    idx = _read_u32(source, "up-block index")
    if count > 0 and c == 0:
        raise DimensionError("zero channel width with nonzero record count")
    if c * 8 > _MAX_PAYLOAD_BYTES:
        raise DimensionError(f"channel width {c} is not plausible")

    out: list[StyleDescriptor] = []
    seen: set[str] = set()
    for _ in range(count):
        image_id = _read_image_id(source)
        if image_id in seen:
            raise DuplicateIdError(f"duplicate image_id '{image_id}'")
        seen.add(image_id)
        mu = np.frombuffer(_read_exact(source, c * 4, "mu payload"), dtype="<f4")
        var = np.frombuffer(_read_exact(source, c * 4, "var payload"), dtype="<f4")
        try:
            out.append(StyleDescriptor(image_id, t, idx, mu, var))
        except ValidationError as exc:
            raise FormatError(str(exc)) from None
    return out


# ---------------------------------------------------------------------------
# manifests


def load_manifest(source) -> DatasetManifest:
    """Parse a JSON-lines manifest from a binary/text stream or iterable of lines.

    Raises ManifestError with the 1-based line number for malformed lines and
    DuplicateIdError naming the id for repeats. Unknown fields are ignored.
    """
    records: list[DatasetRecord] = []
    ids: set[str] = set()
    for lineno, raw in enumerate(source, start=1):
        if isinstance(raw, bytes):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid UTF-8: {exc}") from None
        else:
            line = raw
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise ManifestError(f"line {lineno}: expected a JSON object")
        try:
            image_id = obj["image_id"]
            path = obj["path"]
            style_label = obj["style_label"]
        except KeyError as exc:
            raise ManifestError(f"line {lineno}: missing field {exc.args[0]!r}") from None
        semantic = obj.get("semantic_label")
        try:
            rec = DatasetRecord(image_id, path, style_label, semantic)
        except ValidationError as exc:
            raise ManifestError(f"line {lineno}: {exc}") from None
        if rec.image_id in ids:
            raise DuplicateIdError(
                f"line {lineno}: duplicate image_id '{rec.image_id}'"
            )
        ids.add(rec.image_id)
        records.append(rec)
    return DatasetManifest(records)
