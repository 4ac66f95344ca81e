"""Randomised-signature reservoirs, feature distances and neural-SDE generators."""

from .activations import Activation
from .data import (
    Dataset,
    load_dataset,
    past_future_windows,
    rolling_windows,
    save_dataset,
    simulate_ar,
    simulate_bm,
    train_test_split,
)
from .exceptions import DegenerateDataError, IllConditionedError
from .generator import (
    CondGeneratorParams,
    GeneratorConfig,
    GeneratorParams,
    generate_cond,
    generate_uncond,
    init_cond_generator,
    init_generator,
    project_ball,
)
from .metrics import (
    KdeCurve,
    MetricsReport,
    acf_dist,
    c_rs_w1_supervised,
    cov_dist,
    evaluate,
    evaluate_cond,
    kde,
    rs_w1_empirical,
    shapiro_wilk,
)
from .rsig import (
    RsParams,
    RsPath,
    delta_rs_batch,
    delta_rs_terminal,
    rs_path,
    rs_step,
    sample_rs_params,
    with_horizon,
)
from .schemes import (
    Scheme1Params,
    Scheme2Params,
    fit_readout,
    g_recursion_eval,
    injectivity_probe,
    sample_scheme1,
    sample_scheme2,
)
from .training import (
    AdamState,
    GradTape,
    OlsFit,
    TrainConfig,
    TrainHistory,
    adam_step,
    backward,
    fit_ols_cond,
    init_adam,
    loss_cond,
    loss_uncond,
    train_cond,
    train_uncond,
)

__version__ = "0.1.0"
