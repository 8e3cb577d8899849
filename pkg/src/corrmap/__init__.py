"""corrmap: statistical correction maps between model abstraction levels.

A reduced model is cheap to evaluate but biased; a detailed model is
expensive but authoritative.  This package learns a Gaussian-process
"correction map" over the shared parameters so that

    corrected(theta) = reduced_statistic(theta) + correction(theta)

is an unbiased predictor of the detailed model's expected statistic, with
uncertainty bands.  It ships exact GP regression with homoscedastic and
heteroscedastic noise schemes, deterministic (ODE) and stochastic (SSA)
simulation back-ends, statistic estimators including a bounded-eventually
temporal formula, and a CLI that runs experiments from config files.
"""

from corrmap.gp import (
    GpPosterior,
    Heteroscedastic,
    Homoscedastic,
    KernelParams,
    NumericalError,
    TrainingSet,
    gp_fit,
    gp_predict,
    kernel_eval,
    log_marginal_likelihood,
    optimize_hyperparams,
)
from corrmap.variance import (
    EmpiricalPooled,
    Nested,
    PointWise,
    VarianceField,
    nested_variance,
    pointwise_variance,
    pooled_variance,
)
from corrmap.trajectory import Trajectory
from corrmap.ode import OdeOptions, OdeSystem, StiffnessError, integrate, mm_full, mm_reduced
from corrmap.ssa import ReactionNetwork, SsaConfig, load_network, ptn_full, ptn_reduced, ssa_run
from corrmap.stats import (
    EventuallyAbove,
    LongRunMean,
    MeanAt,
    StatEstimate,
    eval_statistic,
    eventually_above,
)
from corrmap.pipeline import (
    CorrectionMap,
    Delta,
    EpsilonEstimate,
    SamplingDesign,
    UniformBox,
    build_training_set,
    check_equivalence,
    corrected_predict,
    estimate_epsilon,
    fit_correction,
    select_model,
)

__version__ = "0.1.0"
