"""Low-rank factorization toolkit for sequential neural-network models.

Replaces linear and convolution layers with encoder-decoder factor pairs
(via SVD, semi-NMF, or random factors) and accounts for the parameter,
FLOP, and wall-clock savings against reconstruction error.
"""

from .errors import (
    BlobLengthError,
    LrfactError,
    ManifestError,
    ModelIOError,
    NonFiniteError,
    RankError,
    ShapeError,
    SolverError,
    TensorLayoutError,
    VersionError,
)
from .factorizer import (
    FactorizationReport,
    FactorizeConfig,
    ModuleFilter,
    RankPolicy,
    auto_fact,
    factorize_conv,
    factorize_linear,
    max_rank,
    rearrange_conv_weight,
    resolve_rank,
    should_factorize,
    split_sigma,
    tensorize_conv_factors,
)
from .linalg import (
    SnmfOptions,
    SvdResult,
    frobenius_error,
    matmul,
    random_factors,
    snmf,
    truncated_svd,
)
from .modelio import load_model, load_tensor, save_model, save_tensor
from .netgraph import (
    CED,
    LED,
    Activation,
    Conv,
    Flatten,
    Layer,
    Linear,
    Model,
    count_flops,
    count_params,
    forward,
    layer_output_shape,
)

__version__ = "0.1.0"
