"""Differentially-private and group-robust training on small models.

Train linear, logistic, or one-hidden-layer models with DP-SGD (per-sample
clipping + Gaussian noise, Renyi accounting, noise calibration to a target
epsilon) under ERM or Group DRO objectives, then measure per-group scores
and the best-vs-worst group disparity across a privacy-budget sweep.
"""

from .accounting import (
    AccountantState,
    CalibrationError,
    calibrate_sigma,
    compose_and_convert,
    rdp_of_step,
)
from .data import Dataset, Example
from .datalab import (
    CsvSchema,
    PriceSeries,
    SyntheticSpec,
    generate_synthetic,
    group_distribution,
    load_csv,
    load_price_csv,
    log_volatility,
    return_series,
    volatility_dataset,
)
from .dp import NoisyGradient, PrivacySpec, clip, dp_sgd_step, private_batch_gradient
from .experiment import (
    ExperimentConfig,
    RunReport,
    SweepSummary,
    emit_disparity_curves,
    emit_table,
    load_config,
    run_sweep,
)
from .metrics import (
    DisparityReport,
    GroupScores,
    accuracy,
    evaluate_groups,
    f1_binary,
    group_disparity,
    mse,
)
from .models import (
    Model,
    ModelParams,
    init_params,
    per_example_grad,
    per_example_loss,
    predict,
)
from .objectives import (
    GroupWeights,
    TrainConfig,
    TrainTrace,
    dro_weight_update,
    train_dro,
    train_erm,
    worst_group_loss,
)
from .rng import RngStream

__version__ = "0.1.0"
