"""Efficient multi-input multi-output state space sequence layers.

Diagonalized SSM heads are discretized with zero-order hold, their states are
inferred by FFT convolution with the eigenvalue power kernel, and several heads
run side by side as one block-diagonal layer.
"""

__version__ = "0.1.0"

from .conv_engine import (
    KernelTensor,
    ProjectedInput,
    bidirectional_kernel,
    causality_probe,
    conv_direct,
    conv_fft,
    conv_fft_real,
    fft_length,
    kernel_from_exponent,
    project_input,
    system_kernel,
)
from .estimator import ESSMRegressor, ESSMTransformer
from .exceptions import (
    ESSMError,
    InvalidDimensionError,
    InvalidHeadCountError,
    InvalidLengthError,
    InvalidRangeError,
    InvalidShapeError,
    InvalidStateError,
    InvalidStepError,
    InvalidWidthError,
    NotDiagonalizableError,
    NumericFailureError,
    SingularMatrixError,
    TrainingDivergedError,
)
from .layer import (
    DeepModel,
    MultiHeadLayer,
    StabilizedSpectrum,
    block_diagonal_system,
    count_params,
    deep_forward,
    enforce_stability,
    gated_activation,
    head_forward,
    init_deep_model,
    init_multi_head_layer,
    layer_forward,
    multi_head_forward,
    normalize,
    ssm_forward,
)
from .spectral_init import (
    InitBundle,
    hippo_eigen_init,
    hippo_normal_matrix,
    init_bundle,
    init_delta,
    init_projections,
)
from .ssm_core import (
    ContinuousFull,
    DiagonalizationResult,
    DiagonalSystem,
    DiscreteDiagonal,
    DiscreteFull,
    StateTrajectory,
    diagonalize,
    discretize_full,
    discretize_gbt,
    discretize_zoh,
    recurrent_scan_diagonal,
    recurrent_scan_full,
)
from .trainer import (
    FitResult,
    GradBundle,
    TrainConfig,
    analytic_grad,
    finite_diff_grad,
    fit_system_id,
    layer_finite_diff_grad,
    mse_loss,
    relative_errors,
    train,
)
