"""Statistical validation of emulators against stochastic simulators.

Local tests compare emulator and simulator draws at one parameter value,
the global test pools local p-values across parameter space, and the
feature-space diagnostics locate where two samples differ.
"""

__version__ = "0.1.0"

from .core import (
    DimensionMismatchError,
    LabeledDataset,
    MalformedCSVError,
    RngStream,
    Sample,
    TestResult,
    derive_substream,
    pool_and_label,
    read_sample_csv,
    write_sample_csv,
)
from .diagnose import PointDiagnosis, benjamini_hochberg, feature_space_test, partial_dependence
from .globaltest import (
    BoxReference,
    GlobalTestConfig,
    GlobalTestResult,
    GridReference,
    LocalTestError,
    WeightedReference,
    null_quantile_schedule,
    global_test,
    uniformity_pvalue,
)
from .localtest import LocalTestConfig, SamplingError, local_test, mc_gof_test, permutation_test
from .models import (
    Ensemble,
    GammaPrior,
    SyntheticSetting,
    approximate_lr_pvalue,
    approximate_simulate,
    fit_gaussian_model,
    fit_kde_model,
    fit_poisson_model,
    kl_estimate,
    pq_statistic,
    sbc_rank,
    simulate,
)
from .regress import (
    ForestParams,
    RegressionMethod,
    estimate_cv_error,
    fit_constant,
    fit_knn,
    fit_random_forest,
    predict,
)
from .stats import (
    C2STStatistic,
    EnergyStatistic,
    MMDStatistic,
    RegressionStatistic,
    c2st_statistic,
    cvm_uniformity,
    energy_statistic,
    ks_uniformity,
    mmd_statistic,
    regression_statistic,
)

__all__ = [name for name in dir() if not name.startswith("_")]
