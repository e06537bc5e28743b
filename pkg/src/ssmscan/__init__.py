"""Desk-scale state-space sequence kernels, 2D patch-scan connectors, and a
linear-vs-quadratic latency bench."""

from .bench import (
    AttentionBaselineWeights,
    BenchRecord,
    attention_forward,
    eval_avg,
    measure_decode,
    measure_forward,
    run_sweep,
    scaling_slope,
)
from .config import RunConfig, load_config
from .connector import (
    ConnectorVariant,
    ConnectorWeights,
    MlpWeights,
    ScanConnector,
    SwigluWeights,
    connector_forward,
    init_connector_weights,
    mlp_project,
    multi_scan_forward,
    swiglu,
)
from .errors import (
    BadMagicError,
    ConfigError,
    ConnectorError,
    DimensionOverflowError,
    DomainError,
    FormatError,
    FusionError,
    ShapeError,
    SingularMatrixError,
    SsmscanError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .lm import BOS, EOS, VOCAB_SIZE, GenerationResult, MambaLm, ToyLmConfig, detokenize, tokenize
from .scans import ScanOrder, apply_scan, bidirectional_orders, cross_orders, inverse_scan, scan_orders
from .ssm import (
    ContinuousSsm,
    DiscreteSsm,
    Mamba2BlockWeights,
    SsmKernel,
    init_mamba2_weights,
    mamba2_block,
    selective_scan,
    ssm_conv,
    ssm_kernel,
    ssm_recurrent,
    zoh_discretize,
)
from .tensor import matmul
from .tensorio import load_bundle, load_tensor, read_tensor, save_bundle, save_tensor, write_tensor
from .vision import (
    Image,
    PatchGrid,
    Patchifier,
    StubEncoder,
    fuse_encoders,
    load_pnm,
    load_pnm_file,
    patchify,
    stub_encode,
    unpatchify,
)

__version__ = "0.1.0"
