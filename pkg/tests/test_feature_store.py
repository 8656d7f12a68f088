import io
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylometric import (
    BadMagicError,
    DatasetRecord,
    DimensionError,
    DuplicateIdError,
    FeatureTensor,
    FormatError,
    ManifestError,
    MixedDescriptorError,
    NonFiniteDataError,
    StylometricError,
    TruncatedStreamError,
    UnsupportedVersionError,
    ValidationError,
    load_manifest,
    read_descriptor_store,
    read_feature_tensor,
    write_descriptor_store,
    write_feature_tensor,
)
from stylometric.feature_store import FORMAT_VERSION, TENSOR_MAGIC

from conftest import make_desc, make_tensor, random_desc


def roundtrip_tensor(tensor):
    buf = io.BytesIO()
    write_feature_tensor(tensor, buf)
    buf.seek(0)
    return read_feature_tensor(buf)


def roundtrip_store(descs):
    buf = io.BytesIO()
    write_descriptor_store(descs, buf)
    buf.seek(0)
    return read_descriptor_store(buf)


# ---------------------------------------------------------------------------
# feature tensors


class TestFeatureTensorType:
    def test_rejects_nan(self):
        with pytest.raises(NonFiniteDataError):
            make_tensor(c=1, data=[1.0, float("nan"), 0.0, 0.0])

    def test_rejects_inf(self):
        with pytest.raises(NonFiniteDataError):
            make_tensor(c=1, data=[1.0, float("inf"), 0.0, 0.0])

    def test_rejects_wrong_length(self):
        with pytest.raises(ValidationError):
            FeatureTensor.from_flat("img", 25, 1, 2, 2, 2, [1.0, 2.0])

    def test_rejects_bad_timestep(self):
        with pytest.raises(ValidationError):
            make_tensor(t=1000)

    def test_rejects_bad_idx(self):
        with pytest.raises(ValidationError):
            make_tensor(idx=4)

    def test_rejects_oversize_id(self):
        with pytest.raises(ValidationError):
            make_tensor(image_id="x" * 5000)

    def test_data_immutable(self):
        tensor = make_tensor()
        with pytest.raises(ValueError):
            tensor.data[0, 0, 0] = 5.0


class TestTensorRoundTrip:
    def test_roundtrip_identity(self):
        tensor = make_tensor(c=3, h=4, w=5)
        assert roundtrip_tensor(tensor) == tensor

    def test_zero_scalar_encoding(self):
        # c=h=w=1, payload must be exactly 4 zero bytes after the header
        tensor = make_tensor(image_id="z", c=1, h=1, w=1, data=[0.0])
        buf = io.BytesIO()
        count = write_feature_tensor(tensor, buf)
        raw = buf.getvalue()
        header_len = 4 + 4 + 4 + len(b"z") + 5 * 4
        assert count == len(raw) == header_len + 4
        assert raw[-4:] == b"\x00\x00\x00\x00"

    def test_thousand_random_roundtrips(self):
        rng = np.random.default_rng(11)
        for i in range(1000):
            c, h, w = rng.integers(1, 5, size=3)
            data = rng.standard_normal((c, h, w)).astype(np.float32)
            tensor = FeatureTensor(f"img-{i}", int(rng.integers(0, 1000)),
                                   int(rng.integers(0, 4)), data)
            assert roundtrip_tensor(tensor) == tensor

    def test_unicode_image_id(self):
        tensor = make_tensor(image_id="ünïcode/πcture-1")
        assert roundtrip_tensor(tensor).image_id == "ünïcode/πcture-1"

    def test_injective_on_distinct_tensors(self):
        a = make_tensor(c=1, data=[1, 2, 3, 4])
        b = make_tensor(c=1, data=[1, 2, 3, 5])
        buf_a, buf_b = io.BytesIO(), io.BytesIO()
        write_feature_tensor(a, buf_a)
        write_feature_tensor(b, buf_b)
        assert buf_a.getvalue() != buf_b.getvalue()

    def test_deterministic_bytes(self):
        tensor = make_tensor(c=2, h=3, w=3)
        buf_a, buf_b = io.BytesIO(), io.BytesIO()
        write_feature_tensor(tensor, buf_a)
        write_feature_tensor(tensor, buf_b)
        assert buf_a.getvalue() == buf_b.getvalue()


class TestTensorReaderErrors:
    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            read_feature_tensor(io.BytesIO(b"XXXX" + b"\x00" * 64))

    def test_version_mismatch(self):
        raw = TENSOR_MAGIC + struct.pack("<I", FORMAT_VERSION + 1) + b"\x00" * 64
        with pytest.raises(UnsupportedVersionError):
            read_feature_tensor(io.BytesIO(raw))

    def test_truncated_payload(self):
        tensor = make_tensor(c=2, h=2, w=2)
        buf = io.BytesIO()
        write_feature_tensor(tensor, buf)
        clipped = buf.getvalue()[:-5]
        with pytest.raises(TruncatedStreamError):
            read_feature_tensor(io.BytesIO(clipped))

    def test_truncated_header(self):
        with pytest.raises(TruncatedStreamError):
            read_feature_tensor(io.BytesIO(TENSOR_MAGIC + b"\x01"))

    def test_zero_dimension(self):
        raw = (TENSOR_MAGIC + struct.pack("<II", FORMAT_VERSION, 1) + b"a"
               + struct.pack("<IIIII", 25, 1, 0, 2, 2))
        with pytest.raises(DimensionError):
            read_feature_tensor(io.BytesIO(raw))

    def test_dimension_overflow(self):
        raw = (TENSOR_MAGIC + struct.pack("<II", FORMAT_VERSION, 1) + b"a"
               + struct.pack("<IIIII", 25, 1, 2**31, 2**31, 2**31))
        with pytest.raises(DimensionError):
            read_feature_tensor(io.BytesIO(raw))

    def test_nonfinite_payload(self):
        tensor = make_tensor(c=1, h=1, w=1, data=[1.0])
        buf = io.BytesIO()
        write_feature_tensor(tensor, buf)
        raw = bytearray(buf.getvalue())
        raw[-4:] = struct.pack("<f", float("nan"))
        with pytest.raises(NonFiniteDataError):
            read_feature_tensor(io.BytesIO(bytes(raw)))

    def test_out_of_range_header_field(self):
        tensor = make_tensor(c=1, h=1, w=1, data=[1.0])
        buf = io.BytesIO()
        write_feature_tensor(tensor, buf)
        raw = bytearray(buf.getvalue())
        # timestep field sits right after magic/version/id_len/id
        offset = 4 + 4 + 4 + len(b"img")
        raw[offset:offset + 4] = struct.pack("<I", 5000)
        with pytest.raises(FormatError):
            read_feature_tensor(io.BytesIO(bytes(raw)))

    @settings(max_examples=300, deadline=None)
    @given(st.binary(min_size=0, max_size=200))
    def test_fuzz_never_crashes(self, blob):
        try:
            read_feature_tensor(io.BytesIO(blob))
        except StylometricError:
            pass

    @settings(max_examples=100, deadline=None)
    @given(st.binary(min_size=0, max_size=80), st.integers(0, 60))
    def test_fuzz_valid_prefix_corruption(self, tail, cut):
        buf = io.BytesIO()
        write_feature_tensor(make_tensor(), buf)
        blob = buf.getvalue()[:cut] + tail
        try:
            read_feature_tensor(io.BytesIO(blob))
        except StylometricError:
            pass


# ---------------------------------------------------------------------------
# descriptor stores


class TestDescriptorStore:
    def test_empty_store(self):
        assert roundtrip_store([]) == []

    def test_two_descriptor_roundtrip(self):
        rng = np.random.default_rng(3)
        descs = [random_desc(rng, "a", 2), random_desc(rng, "b", 2)]
        assert roundtrip_store(descs) == descs

    def test_order_preserved(self):
        rng = np.random.default_rng(4)
        descs = [random_desc(rng, f"d{i}", 3) for i in range(20)]
        assert [d.image_id for d in roundtrip_store(descs)] == [
            d.image_id for d in descs
        ]

    def test_random_roundtrips(self):
        rng = np.random.default_rng(5)
        for trial in range(200):
            c = int(rng.integers(1, 8))
            n = int(rng.integers(0, 6))
            descs = [random_desc(rng, f"d{trial}-{i}", c) for i in range(n)]
            assert roundtrip_store(descs) == descs

    def test_mixed_width_rejected(self):
        rng = np.random.default_rng(6)
        descs = [random_desc(rng, "a", 2), random_desc(rng, "b", 3)]
        with pytest.raises(MixedDescriptorError):
            roundtrip_store(descs)

    def test_mixed_provenance_rejected(self):
        rng = np.random.default_rng(7)
        descs = [random_desc(rng, "a", 2, t=25), random_desc(rng, "b", 2, t=26)]
        with pytest.raises(MixedDescriptorError):
            roundtrip_store(descs)

    def test_duplicate_id_rejected(self):
        rng = np.random.default_rng(8)
        descs = [random_desc(rng, "a", 2), random_desc(rng, "a", 2)]
        with pytest.raises(DuplicateIdError):
            roundtrip_store(descs)

    def test_zero_variance_survives(self):
        desc = make_desc("a", [1.0, 2.0], [0.0, 0.5])
        assert roundtrip_store([desc]) == [desc]

    def test_float32_overflow_rejected(self):
        desc = make_desc("a", [1e300], [1.0])
        with pytest.raises(NonFiniteDataError):
            roundtrip_store([desc])

    def test_truncated_record(self):
        rng = np.random.default_rng(9)
        buf = io.BytesIO()
        write_descriptor_store([random_desc(rng, "a", 4)], buf)
        with pytest.raises(TruncatedStreamError):
            read_descriptor_store(io.BytesIO(buf.getvalue()[:-3]))

    @settings(max_examples=300, deadline=None)
    @given(st.binary(min_size=0, max_size=200))
    def test_fuzz_never_crashes(self, blob):
        try:
            read_descriptor_store(io.BytesIO(blob))
        except StylometricError:
            pass


# ---------------------------------------------------------------------------
# manifests


def lines(*objs):
    return io.BytesIO(b"\n".join(json.dumps(o).encode() for o in objs))


class TestManifest:
    def test_single_record(self):
        m = load_manifest(lines(
            {"image_id": "a", "path": "a.png", "style_label": "monet"}
        ))
        assert len(m) == 1
        rec = m.get("a")
        assert rec.style_label == "monet"
        assert rec.semantic_label is None

    def test_semantic_label_kept(self):
        m = load_manifest(lines(
            {"image_id": "a", "path": "a.png", "style_label": "monet",
             "semantic_label": "haystacks"}
        ))
        assert m.get("a").semantic_label == "haystacks"

    def test_unknown_fields_ignored(self):
        m = load_manifest(lines(
            {"image_id": "a", "path": "a.png", "style_label": "monet",
             "resolution": 512, "notes": "x"}
        ))
        assert len(m) == 1

    def test_duplicate_id_names_id(self):
        with pytest.raises(DuplicateIdError, match="'a'"):
            load_manifest(lines(
                {"image_id": "a", "path": "1.png", "style_label": "x"},
                {"image_id": "a", "path": "2.png", "style_label": "y"},
            ))

    def test_malformed_line_number(self):
        source = io.BytesIO(
            b'{"image_id": "a", "path": "a.png", "style_label": "x"}\n'
            b"{not json}\n"
        )
        with pytest.raises(ManifestError, match="line 2"):
            load_manifest(source)

    def test_missing_field(self):
        with pytest.raises(ManifestError, match="style_label"):
            load_manifest(lines({"image_id": "a", "path": "a.png"}))

    def test_empty_style_label(self):
        with pytest.raises(ManifestError, match="line 1"):
            load_manifest(lines(
                {"image_id": "a", "path": "a.png", "style_label": ""}
            ))

    def test_blank_lines_skipped(self):
        source = io.BytesIO(
            b'{"image_id": "a", "path": "a.png", "style_label": "x"}\n'
            b"\n"
            b'{"image_id": "b", "path": "b.png", "style_label": "y"}\n'
        )
        assert len(load_manifest(source)) == 2

    def test_artsplit_shaped_manifest(self):
        # 50 styles x 100 semantics x 12 variants = 60,000 records
        chunks = []
        for s in range(50):
            for sem in range(100):
                for v in range(12):
                    chunks.append(json.dumps({
                        "image_id": f"s{s}-m{sem}-v{v}",
                        "path": f"img/{s}/{sem}/{v}.png",
                        "style_label": f"style-{s}",
                        "semantic_label": f"sem-{sem}",
                    }))
        m = load_manifest(io.BytesIO("\n".join(chunks).encode()))
        assert len(m) == 60000
        assert len(m.style_labels) == 50
        assert len(m.semantic_labels) == 100

    def test_roundtrip_identity(self):
        objs = [
            {"image_id": f"id-{i}", "path": f"{i}.png", "style_label": f"s{i % 3}",
             "semantic_label": f"m{i % 5}"}
            for i in range(25)
        ]
        m1 = load_manifest(lines(*objs))
        redumped = io.BytesIO("\n".join(
            json.dumps({"image_id": r.image_id, "path": r.path,
                        "style_label": r.style_label,
                        "semantic_label": r.semantic_label})
            for r in m1
        ).encode())
        m2 = load_manifest(redumped)
        assert list(m1) == list(m2)

    @settings(max_examples=200, deadline=None)
    @given(st.binary(min_size=0, max_size=120))
    def test_fuzz_never_crashes(self, blob):
        try:
            load_manifest(io.BytesIO(blob))
        except StylometricError:
            pass

    def test_record_validation(self):
        with pytest.raises(ValidationError):
            DatasetRecord("a", "p.png", "")
