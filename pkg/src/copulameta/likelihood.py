"""Joint log-likelihoods for all model variants.

The copula mixed likelihood integrates binomial within-study terms against
the copula random-effects distribution; the double integral is evaluated on
a Gauss-Legendre product rule whose second coordinate is pushed through the
inverse conditional cdf (see `quadrature.dependent_nodes`).  Inner double
sums are computed with log-sum-exp over log-weights plus log-binomial terms
so that group sizes of several hundred do not underflow.

Variants:

* ``copula_mixed`` -- the full model, normal or beta margins (Eq.-style
  double integral); the GLMM is the BVN-copula/normal-margin special case
  and `loglik_glmm` is the named alias for it.
* ``khs`` -- the approximation that couples beta-binomial cdfs with a
  copula density (beta margins only).
* ``sarmanov`` -- the closed-form likelihood with beta-binomial factors and
  a linear dependence correction, valid only while every study's bracket
  stays positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .copulas import CopulaSpec, copula_logdensity, is_independence
from .errors import DomainError, LikelihoodEvaluationError
from .margins import (
    MarginSpec,
    StudyRecord,
    beta_shape,
    betabinomial_cdf,
    betabinomial_logpmf,
    latent_probability,
)
from .quadrature import QuadRule, dependent_nodes

__all__ = [
    "ModelSpec",
    "LogLikResult",
    "loglik_copula_mixed",
    "loglik_glmm",
    "loglik_khs",
    "loglik_sarmanov",
    "loglik_countermonotonic",
    "KHS_CDF_CLAMP",
]

VARIANTS = ("copula_mixed", "khs", "sarmanov", "countermonotonic")

# KHS cdf arguments are clamped into [KHS_CDF_CLAMP, 1 - KHS_CDF_CLAMP]
# before the copula density call; cdf values of 1 occur whenever y = n.
KHS_CDF_CLAMP = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    """Margins, copula, and likelihood variant for a bivariate mixed model.

    Component 1 is sensitivity (true positives), component 2 specificity
    (true negatives).  For the "sarmanov" variant `copula` must be None and
    the dependence parameter lives in `sarmanov_theta`.
    """

    margin1: MarginSpec
    margin2: MarginSpec
    copula: CopulaSpec | None
    variant: str = "copula_mixed"
    sarmanov_theta: float = 0.0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown model variant {self.variant!r}")
        if self.variant == "sarmanov":
            if self.copula is not None:
                raise DomainError("sarmanov variant carries its own dependence parameter; copula must be None")
        elif self.variant == "countermonotonic":
            if self.copula is not None:
                raise DomainError("countermonotonic variant fixes the copula at the Frechet lower bound")
        elif self.copula is None:
            raise DomainError(f"variant {self.variant!r} requires a copula spec")
        if self.variant in ("khs", "sarmanov"):
            if self.margin1.kind != "beta" or self.margin2.kind != "beta":
                raise DomainError(f"variant {self.variant!r} is defined for beta margins only")


@dataclass(frozen=True)
class LogLikResult:
    """Total log-likelihood and the per-study contributions that sum to it."""

    total: float
    per_study: np.ndarray
    clamp_count: int = 0

    def __post_init__(self) -> None:
        self.per_study.setflags(write=False)


def _study_arrays(data: list[StudyRecord]):
    if len(data) == 0:
        raise DomainError("empty study list")
    y1 = np.array([s.y1 for s in data], dtype=float)
    n1 = np.array([s.n1 for s in data], dtype=float)
    y2 = np.array([s.y2 for s in data], dtype=float)
    n2 = np.array([s.n2 for s in data], dtype=float)
    return y1, n1, y2, n2


def _result(per_study: np.ndarray, clamp_count: int = 0) -> LogLikResult:
    bad = ~np.isfinite(per_study)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise LikelihoodEvaluationError(
            f"log-likelihood contribution of study {idx} is non-finite"
        )
    return LogLikResult(total=float(np.sum(per_study)), per_study=per_study, clamp_count=clamp_count)


class _MixedEvaluator:
    """Per-dataset workspace for repeated copula-mixed evaluations.

    Binomial coefficients and the log-weight grid depend only on the data
    and the rule, so they are computed once and reused across every
    optimizer iteration.
    """

    def __init__(self, data: list[StudyRecord], rule: QuadRule):
        self.rule = rule
        self.y1, self.n1, self.y2, self.n2 = _study_arrays(data)
        self.logc1 = (
            gammaln(self.n1 + 1.0) - gammaln(self.y1 + 1.0) - gammaln(self.n1 - self.y1 + 1.0)
        )
        self.logc2 = (
            gammaln(self.n2 + 1.0) - gammaln(self.y2 + 1.0) - gammaln(self.n2 - self.y2 + 1.0)
        )
        logw = np.log(rule.weights)
        self.logw = logw
        self.logw_grid = logw[:, None] + logw[None, :]

    @property
    def n_studies(self) -> int:
        return len(self.y1)

    def _log_binom1(self, x1: np.ndarray) -> np.ndarray:
        lx, l1x = np.log(x1), np.log1p(-x1)
        return self.logc1[:, None] + self.y1[:, None] * lx + (self.n1 - self.y1)[:, None] * l1x

    def per_study(
        self, margin1: MarginSpec, margin2: MarginSpec, cspec: CopulaSpec
    ) -> np.ndarray:
        u = self.rule.nodes
        x1 = latent_probability(u, margin1)
        if is_independence(cspec):
            # the double integral factorizes; evaluate the two single sums
            x2 = latent_probability(u, margin2)
            lg1 = self._log_binom1(x1)
            lx, l1x = np.log(x2), np.log1p(-x2)
            lg2 = self.logc2[:, None] + self.y2[:, None] * lx + (self.n2 - self.y2)[:, None] * l1x
            return logsumexp(self.logw[None, :] + lg1, axis=1) + logsumexp(
                self.logw[None, :] + lg2, axis=1
            )
        v = dependent_nodes(self.rule, cspec)
        x2 = latent_probability(v, margin2)
        lg1 = self._log_binom1(x1)
        lx, l1x = np.log(x2), np.log1p(-x2)
        lg2 = (
            self.logc2[:, None, None]
            + self.y2[:, None, None] * lx[None]
            + (self.n2 - self.y2)[:, None, None] * l1x[None]
        )
        terms = self.logw_grid[None] + lg1[:, :, None] + lg2
        return logsumexp(terms, axis=(1, 2))

    def per_study_countermonotonic(
        self, margin1: MarginSpec, margin2: MarginSpec
    ) -> np.ndarray:
        u = self.rule.nodes
        x1 = latent_probability(u, margin1)
        x2 = latent_probability(1.0 - u, margin2)
        lg1 = self._log_binom1(x1)
        lx, l1x = np.log(x2), np.log1p(-x2)
        lg2 = self.logc2[:, None] + self.y2[:, None] * lx + (self.n2 - self.y2)[:, None] * l1x
        return logsumexp(self.logw[None, :] + lg1 + lg2, axis=1)


def loglik_copula_mixed(
    data: list[StudyRecord], model: ModelSpec, rule: QuadRule
) -> LogLikResult:
    """Copula mixed-model log-likelihood on the Gauss-Legendre product rule.

    Per-study contribution:
    log sum_{q1,q2} w_{q1} w_{q2} g(y1; n1, x1(u_{q1})) g(y2; n2, x2(v_{q1,q2}))
    with x_j the marginal quantile transform and v the dependent nodes.
    """
    if model.variant != "copula_mixed":
        raise DomainError(f"loglik_copula_mixed requires variant 'copula_mixed', got {model.variant!r}")
    ev = _MixedEvaluator(data, rule)
    return _result(ev.per_study(model.margin1, model.margin2, model.copula))


def loglik_glmm(
    data: list[StudyRecord],
    pi1: float,
    pi2: float,
    sigma1: float,
    sigma2: float,
    rho: float,
    rule: QuadRule,
) -> LogLikResult:
    """GLMM log-likelihood: the BVN-copula, normal-margin special case.

    The GLMM with correlation rho is the same model as the copula mixed
    model with a BVN(theta=rho) copula and normal margins, so this is a
    named alias for that evaluation.
    """
    model = ModelSpec(
        margin1=MarginSpec("normal", pi1, sigma1),
        margin2=MarginSpec("normal", pi2, sigma2),
        copula=CopulaSpec("bvn", rho),
    )
    return loglik_copula_mixed(data, model, rule)


def loglik_khs(data: list[StudyRecord], model: ModelSpec) -> LogLikResult:
    """Approximate likelihood coupling beta-binomial cdfs with a copula density.

    Per-study term: log c(H(y1; n1, pi1, g1), H(y2; n2, pi2, g2); theta)
    + sum_j log h(y_j; n_j, pi_j, g_j).  cdf values are clamped into
    [1e-12, 1 - 1e-12] (H = 1 occurs whenever y = n); clamping events are
    counted on the result.
    """
    if model.variant != "khs":
        raise DomainError(f"loglik_khs requires variant 'khs', got {model.variant!r}")
    y1, n1, y2, n2 = _study_arrays(data)
    m1, m2 = model.margin1, model.margin2
    h1 = np.atleast_1d(betabinomial_cdf(y1.astype(int), n1.astype(int), m1.pi, m1.scale))
    h2 = np.atleast_1d(betabinomial_cdf(y2.astype(int), n2.astype(int), m2.pi, m2.scale))
    lo, hi = KHS_CDF_CLAMP, 1.0 - KHS_CDF_CLAMP
    clamp_count = int(np.sum((h1 < lo) | (h1 > hi)) + np.sum((h2 < lo) | (h2 > hi)))
    h1 = np.clip(h1, lo, hi)
    h2 = np.clip(h2, lo, hi)
    per = (
        copula_logdensity(h1, h2, model.copula)
        + betabinomial_logpmf(y1, n1, m1.pi, m1.scale)
        + betabinomial_logpmf(y2, n2, m2.pi, m2.scale)
    )
    return _result(np.atleast_1d(per), clamp_count)


def loglik_sarmanov(
    data: list[StudyRecord],
    pi1: float,
    pi2: float,
    gamma1: float,
    gamma2: float,
    theta: float,
) -> LogLikResult:
    """Closed-form likelihood with beta-binomial margins and linear dependence.

    Per-study term: sum_j log h(y_ij; n_ij, pi_j, gamma_j)
    + log(1 + theta prod_j (y_ij - n_ij pi_j) / (1/gamma_j + n_ij - 1)).
    theta must keep every bracket positive for the observed data.
    """
    beta_shape(pi1, gamma1)
    beta_shape(pi2, gamma2)
    y1, n1, y2, n2 = _study_arrays(data)
    k1 = (y1 - n1 * pi1) / (1.0 / gamma1 + n1 - 1.0)
    k2 = (y2 - n2 * pi2) / (1.0 / gamma2 + n2 - 1.0)
    bracket = 1.0 + theta * k1 * k2
    if np.any(bracket <= 0.0):
        idx = int(np.flatnonzero(bracket <= 0.0)[0])
        raise DomainError(
            f"sarmanov theta={theta:g} makes the density factor non-positive "
            f"at study {idx} (outside the admissible range for these data)"
        )
    per = (
        betabinomial_logpmf(y1, n1, pi1, gamma1)
        + betabinomial_logpmf(y2, n2, pi2, gamma2)
        + np.log(bracket)
    )
    return _result(np.atleast_1d(per))


def loglik_countermonotonic(
    data: list[StudyRecord], margin1: MarginSpec, margin2: MarginSpec, rule: QuadRule
) -> LogLikResult:
    """Log-likelihood with the copula fixed at the Frechet lower bound.

    Perfect negative dependence collapses the double integral to a single
    one along v = 1 - u: per-study contribution
    log sum_q w_q g(y1; n1, x1(u_q)) g(y2; n2, x2(1 - u_q)).
    """
    ev = _MixedEvaluator(data, rule)
    return _result(ev.per_study_countermonotonic(margin1, margin2))
