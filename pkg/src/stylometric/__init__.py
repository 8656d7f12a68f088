"""Gaussian style descriptors over diffusion features: storage, distances,
exact retrieval, and attribution evaluation."""

from .descriptor import compute_descriptor
from .errors import (
    BadMagicError,
    BatchQueryError,
    DimensionError,
    DimensionMismatchError,
    DuplicateIdError,
    FormatError,
    ManifestError,
    MissingLabelError,
    MixedDescriptorError,
    NonFiniteDataError,
    ProvenanceError,
    QueryInIndexError,
    SingularCovarianceError,
    StylometricError,
    TruncatedStreamError,
    UnsupportedVersionError,
    ValidationError,
    ZeroVarianceError,
)
from .evaluation import (
    EvalReport,
    RelevanceVector,
    SweepCellResult,
    average_precision_at_k,
    evaluate_artsplit,
    evaluate_retrieval,
    recall_at_k,
    sweep,
)
from .feature_store import (
    FORMAT_VERSION,
    MAX_ID_BYTES,
    MAX_TIMESTEP,
    STORE_MAGIC,
    TENSOR_MAGIC,
    UP_BLOCK_CHANNELS,
    UP_BLOCK_INDICES,
    DatasetManifest,
    DatasetRecord,
    FeatureTensor,
    StyleDescriptor,
    load_manifest,
    read_descriptor_store,
    read_feature_tensor,
    write_descriptor_store,
    write_feature_tensor,
)
from .metrics import (
    MetricKind,
    distance,
    gram_distance,
    jsd,
    kl_divergence,
    l2_squared,
    w2_squared,
)
from .retrieval import (
    DescriptorIndex,
    RankedList,
    batch_query,
    build_index,
    query,
)

__version__ = "0.1.0"
