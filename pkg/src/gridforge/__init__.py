"""gridforge: blockwise low-bit quantization with power-of-two grid families."""

from .errors import (
    CorruptBlockError,
    DegenerateBlockError,
    DegenerateGridError,
    EncodingError,
    GridforgeError,
    InputError,
    InsufficientDataError,
    ParameterError,
    ResidualEmptyError,
    ShapeError,
    SnapCollapseWarning,
    UnknownGridError,
)
from .formats import (
    E2M1,
    E3M2,
    E3M3U,
    E4M3,
    FORMATS,
    LowBitFormat,
    decode_format,
    decode_table,
    encode_format,
    format_values,
    round_to_format,
)
from .grids import (
    MIN_MSE,
    SIGN_OF_MAX,
    Grid,
    GridFamily,
    builtin_grid,
    builtin_names,
    load_grid_file,
    mirror_half,
    nf4_construct,
    positive_half,
    save_grid_file,
    snap_to_format,
)
from .quant import (
    BlockLoss,
    QuantizedBlock,
    dequantize_block,
    mu_statistic,
    nearest_point,
    pool_losses,
    pool_mu,
    quantize_block,
)
from .learn import (
    WEIGHT_MSQUARED,
    WEIGHT_UNIFORM,
    LearnReport,
    TrainConfig,
    learn_bof4s,
    learn_residual_pair,
    learn_split87,
    lloyd_fit,
)
from .pools import (
    BlockPool,
    PoolManifest,
    PoolSource,
    build_pool,
    load_manifest,
    load_raw_tensor,
    manifest_from_json,
    manifest_to_json,
)
from .sfp4 import (
    CorrectionMatrix,
    Sfp4Block,
    Sfp4Tensor,
    calibrate_shift,
    correction_matrix,
    pack_scale_byte,
    read_sfp4,
    sfp4_decode,
    sfp4_decode_tensor,
    sfp4_encode,
    sfp4_encode_tensor,
    sfp4_matmul_paths,
    sfp4_matmul_reference,
    sfp4_pool_mse,
    unpack_scale_byte,
    write_sfp4,
)
from .stats import (
    NU_BOUND,
    CompetitiveReport,
    DistributionSpec,
    RiskReport,
    TFit,
    asymptotic_gap,
    competitive_analysis,
    concavity_check,
    estimate_risk,
    fit_student_t,
    sample_pool,
)
from .reports import (
    CSV_COLUMNS,
    ReportRow,
    learn_report_to_json,
    read_csv,
    rows_to_csv,
    write_csv,
    write_json,
)

__version__ = "0.1.0"
