"""Gaussian-smoothed total variation and chi^2 divergences between an
empirical measure and its population, with their limit laws and bounds."""

from .bounds import (
    ConditionReport,
    chi2_divergence_probe,
    chi2_mean_integral,
    concentration_bound,
    condition_probe,
    lemma1_bound,
    lemma2_best_bound,
    lemma2_bound,
    lemma2_check,
    lemma3_check,
    lemma3_general_check,
    mgf_check,
    tv_lower_bound,
    tv_upper_bound,
    tv_variance_integral,
)
from .divergence import (
    DivergenceEstimator,
    DivergenceResult,
    empirical_smoothed_density,
    smooth_chi2,
    smooth_divergences,
    smooth_tv,
)
from .errors import ConfigError, NumericalError, SmoothDivError
from .experiments import (
    ConvergenceReport,
    ExperimentConfig,
    fit_loglog_slope,
    ks_statistic,
    run_concentration,
    run_convergence,
    wasserstein1_1d,
)
from .integration import (
    EstimateWithError,
    ImportanceRule,
    TensorGrid,
    choose_box,
    default_rule,
    integrate,
    make_grid,
)
from .limit_law import (
    GPModel,
    build_gp,
    build_multiplier,
    limit_chi2_draw,
    limit_means,
    limit_samples,
    limit_tv_draw,
)
from .measures import (
    Gaussian,
    GaussianMixture,
    MeasureSpec,
    PointCloud,
    Sample,
    UniformBox,
    covariance_kernel,
    sample,
    smoothed_density,
    spec_from_dict,
    squared_kernel_mean,
    subgaussian_parameter,
    tail_probability,
    variance_function,
)

__version__ = "0.1.0"
