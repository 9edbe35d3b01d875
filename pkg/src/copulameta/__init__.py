"""Copula mixed models for bivariate meta-analysis of diagnostic accuracy studies.

Fits copula random-effects models (normal or beta margins; BVN, Frank, and
rotated Clayton copulas) to collections of 2x2 diagnostic tables, computes
standard errors, SROC quantile-regression curves with confidence and
predictive regions, Vuong model comparisons, Monte-Carlo efficiency
studies, and large-sample limits of the approximate beta-binomial-copula
(KHS) estimator.
"""

from .copulas import (
    CopulaSpec,
    cond_cdf,
    copula_cdf,
    copula_density,
    copula_logdensity,
    inv_cond_cdf,
    swapped,
    tau_to_theta,
    theta_to_tau,
)
from .errors import (
    ConvergenceError,
    CopulaMetaError,
    DatasetParseError,
    DatasetValidationError,
    DegenerateComparisonError,
    DomainError,
    LikelihoodEvaluationError,
    NumericOverflowError,
)
from .asymptotics import (
    LimitingFit,
    OutcomeTable,
    limiting_khs,
    limiting_mle,
    model_probabilities,
)
from .estimation import FitOptions, FitResult, fit, fit_countermonotonic, standard_errors
from .inference import (
    CurveSet,
    VuongResult,
    build_curve_set,
    glmm_sroc,
    predictive_contours,
    quantile_curve,
    summary_point_region,
    vuong_test,
)
from .likelihood import (
    LogLikResult,
    ModelSpec,
    loglik_copula_mixed,
    loglik_countermonotonic,
    loglik_glmm,
    loglik_khs,
    loglik_sarmanov,
)
from .margins import (
    MarginSpec,
    StudyRecord,
    beta_shape,
    betabinomial_cdf,
    betabinomial_logpmf,
    binomial_logpmf,
    latent_probability,
    margin_cdf,
    margin_logpdf,
)
from .quadrature import QuadRule, dependent_nodes, gauss_legendre
from .simulation import (
    GeneratedData,
    SimConfig,
    SimReport,
    generate_meta_dataset,
    run_sim_study,
    sample_latent_pairs,
)

__version__ = "0.1.0"
