import numpy as np
import pytest

from stylometric import DatasetManifest, DatasetRecord, FeatureTensor, StyleDescriptor


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)


def make_tensor(image_id="img", t=25, idx=1, c=2, h=2, w=2, data=None, rng=None):
    if data is None:
        rng = rng or np.random.default_rng(7)
        data = rng.standard_normal((c, h, w)).astype(np.float32)
    return FeatureTensor.from_flat(image_id, t, idx, c, h, w,
                                   np.asarray(data, dtype=np.float32).ravel())


def make_desc(image_id, mu, var, t=25, idx=1):
    return StyleDescriptor(image_id, t, idx, np.asarray(mu, dtype=np.float64),
                           np.asarray(var, dtype=np.float64))


def random_desc(rng, image_id, c, t=25, idx=1, var_floor=0.1):
    """Descriptor with float32-representable values (the storage grid)."""
    mu = rng.standard_normal(c).astype(np.float32).astype(np.float64)
    var = (var_floor + rng.random(c)).astype(np.float32).astype(np.float64)
    return StyleDescriptor(image_id, t, idx, mu, var)


def manifest_for(descs, style=None, semantic=None):
    """Manifest covering the given descriptors with per-id or constant labels."""
    records = []
    for desc in descs:
        s = style(desc.image_id) if callable(style) else (style or "style-a")
        sem = semantic(desc.image_id) if callable(semantic) else semantic
        records.append(DatasetRecord(desc.image_id, f"{desc.image_id}.png", s, sem))
    return DatasetManifest(records)
