"""Large-sample limits of the exact and approximate (KHS) estimators.

For a constant group size n and common margin parameters across the two
components, the (n+1)^2 outcome probabilities p^(t) of the true copula
mixed model are computed by Gauss-Legendre quadrature.  The probability
limit of an estimator is then the maximizer of the p-weighted
log-likelihood: with the exact mixed-model likelihood this recovers the
generating parameters, while the KHS objective has an interior maximum
whose dependence parameter is badly attenuated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .copulas import CopulaSpec, copula_logdensity, tau_to_theta, theta_to_tau
from .errors import DomainError
from .estimation import _central_grad
from .likelihood import KHS_CDF_CLAMP, ModelSpec
from .margins import MarginSpec, binomial_logpmf, betabinomial_logpmf, latent_probability
from .quadrature import QuadRule, dependent_nodes, gauss_legendre

__all__ = ["OutcomeTable", "LimitingFit", "model_probabilities", "limiting_khs", "limiting_mle"]

N_MAX = 200
_TINY = 1e-300


@dataclass(frozen=True)
class OutcomeTable:
    """Model probabilities p[y1, y2] for all outcomes at common group size n."""

    n: int
    probs: np.ndarray
    model: ModelSpec

    def __post_init__(self) -> None:
        self.probs.setflags(write=False)

    @property
    def total(self) -> float:
        return float(np.sum(self.probs))


@dataclass
class LimitingFit:
    """Probability limit of an estimator: common-margin (pi, scale, theta)."""

    pi: float
    scale: float
    theta: float
    tau: float
    converged: bool
    value: float


def _require_common(model: ModelSpec) -> MarginSpec:
    if model.margin1 != model.margin2:
        raise DomainError(
            "limiting computations assume common margin parameters across components"
        )
    return model.margin1


def _outcome_matrix(n: int, margin: MarginSpec, spec: CopulaSpec, rule: QuadRule) -> np.ndarray:
    y = np.arange(n + 1, dtype=float)[:, None]
    x1 = latent_probability(rule.nodes, margin)
    g1 = np.exp(binomial_logpmf(y, float(n), x1[None, :]))  # (n+1, nq)
    v = dependent_nodes(rule, spec)
    x2 = latent_probability(v, margin)
    g2 = np.exp(binomial_logpmf(y[:, :, None], float(n), x2[None, :, :]))  # (n+1, nq, nq)
    g2w = g2 @ rule.weights  # (n+1, nq): inner sums over q2
    return (g1 * rule.weights[None, :]) @ g2w.T  # (n+1, n+1)


def model_probabilities(n: int, true_model: ModelSpec, rule: QuadRule) -> OutcomeTable:
    """Outcome table of the copula mixed model at common group size n.

    p[y1, y2] is the double Gauss-Legendre sum of the joint pmf; the table
    is not renormalized, so its total's deviation from 1 reflects the
    rule's quality.
    """
    if n < 1:
        raise DomainError(f"group size must be >= 1, got {n}")
    if n > N_MAX:
        raise DomainError(f"group size {n} exceeds the budget cap {N_MAX}")
    margin = _require_common(true_model)
    probs = _outcome_matrix(n, margin, true_model.copula, rule)
    return OutcomeTable(n=n, probs=probs, model=true_model)


def _moment_start(table: OutcomeTable, family: str, rotation: int) -> np.ndarray:
    n = table.n
    p = table.probs
    y = np.arange(n + 1, dtype=float)
    p1 = p.sum(axis=1)
    m = float(np.sum(y * p1)) / n
    v = float(np.sum((y / n - m) ** 2 * p1))
    pi0 = float(np.clip(m, 0.01, 0.99))
    gamma0 = (v * n / (pi0 * (1.0 - pi0)) - 1.0) / max(n - 1, 1)
    gamma0 = float(np.clip(gamma0, 0.005, 0.8))
    e1 = float(np.sum(y * p1))
    sd1 = math.sqrt(float(np.sum((y - e1) ** 2 * p1)))
    e12 = float(y @ p @ y)
    r = (e12 - e1 * e1) / (sd1 * sd1) if sd1 > 0 else 0.0
    r = float(np.clip(r, -0.95, 0.95))
    if family == "bvn":
        theta0 = r
    else:
        tau0 = 2.0 / math.pi * math.asin(r)
        if family == "clayton":
            if rotation in (90, 270):
                tau0 = min(tau0, -0.05)
            else:
                tau0 = max(tau0, 0.05)
        elif abs(tau0) < 0.05:
            tau0 = 0.05 if tau0 >= 0 else -0.05
        theta0 = tau_to_theta(family, rotation, float(np.clip(tau0, -0.9, 0.9))).theta
    return np.array([pi0, gamma0, theta0])


def _dep_to_z(theta: float, family: str) -> float:
    if family == "bvn":
        return math.atanh(np.clip(theta, -1.0 + 1e-12, 1.0 - 1e-12))
    if family == "clayton":
        return math.log(max(theta, 1e-10))
    return theta


def _dep_from_z(z: float, family: str) -> float:
    if family == "bvn":
        return float(np.clip(math.tanh(z), -(1.0 - 1e-12), 1.0 - 1e-12))
    if family == "clayton":
        return float(np.clip(math.exp(z), 1e-10, 1e4))
    return float(np.clip(z, -500.0, 500.0))


def _maximize_weighted(objective, start: np.ndarray, family: str) -> tuple[np.ndarray, bool, float]:
    from scipy.special import expit, logit

    def pack(params):
        return np.array([logit(params[0]), logit(params[1]), _dep_to_z(params[2], family)])

    def unpack(z):
        return np.array(
            [
                float(np.clip(expit(z[0]), 1e-10, 1.0 - 1e-10)),
                float(np.clip(expit(z[1]), 1e-10, 1.0 - 1e-10)),
                _dep_from_z(z[2], family),
            ]
        )

    def neg(z):
        value = objective(unpack(z))
        return np.inf if not np.isfinite(value) else -value

    res = minimize(
        neg,
        pack(start),
        jac=lambda z: _central_grad(neg, z),
        method="BFGS",
        options={"gtol": 1e-7, "maxiter": 500},
    )
    grad_ok = res.jac is not None and np.max(np.abs(res.jac)) <= 1e-5
    return unpack(res.x), bool(res.success or grad_ok), -float(res.fun)


def limiting_khs(table: OutcomeTable, rule: QuadRule | None = None) -> LimitingFit:
    """Probability limit of the KHS estimator on the given outcome table.

    Maximizes sum_t p^(t) log[c(H(y1), H(y2); theta) h(y1) h(y2)] over the
    common (pi, gamma, theta); beta margins only, matching the KHS
    definition.  The copula family is the table model's.
    """
    margin = _require_common(table.model)
    if margin.kind != "beta":
        raise DomainError("the KHS estimator is defined for beta margins")
    family = table.model.copula.family
    rotation = table.model.copula.rotation
    n = table.n
    y = np.arange(n + 1, dtype=float)
    p = table.probs
    mask = p > 0.0

    def objective(params: np.ndarray) -> float:
        pi, gamma, theta = params
        try:
            spec = CopulaSpec(family, theta, rotation)
            logh = betabinomial_logpmf(y, float(n), pi, gamma)
            h = np.clip(
                np.minimum(np.cumsum(np.exp(logh)), 1.0), KHS_CDF_CLAMP, 1.0 - KHS_CDF_CLAMP
            )
            term = (
                copula_logdensity(h[:, None], h[None, :], spec)
                + logh[:, None]
                + logh[None, :]
            )
            return float(np.sum(p[mask] * term[mask]))
        except DomainError:
            return -np.inf

    start = _moment_start(table, family, rotation)
    params, converged, value = _maximize_weighted(objective, start, family)
    spec = CopulaSpec(family, params[2], rotation)
    return LimitingFit(
        pi=params[0],
        scale=params[1],
        theta=params[2],
        tau=theta_to_tau(spec),
        converged=converged,
        value=value,
    )


def limiting_mle(table: OutcomeTable, rule: QuadRule | None = None) -> LimitingFit:
    """Probability limit of the exact maximum-likelihood estimator.

    Maximizes sum_t p^(t) log L_t(pi, gamma, theta) with L evaluated by the
    same Gauss-Legendre scheme as the likelihood; recovers the generating
    parameters (the weighted score is exactly unbiased on the rule).
    """
    margin = _require_common(table.model)
    if margin.kind != "beta":
        raise DomainError("limiting computations cover the beta-margin model")
    rule = rule if rule is not None else gauss_legendre(50)
    family = table.model.copula.family
    rotation = table.model.copula.rotation
    n = table.n
    p = table.probs
    mask = p > 0.0

    def objective(params: np.ndarray) -> float:
        pi, scale, theta = params
        try:
            spec = CopulaSpec(family, theta, rotation)
            m = MarginSpec(margin.kind, pi, scale)
            lik = _outcome_matrix(n, m, spec, rule)
            return float(np.sum(p[mask] * np.log(np.maximum(lik[mask], _TINY))))
        except DomainError:
            return -np.inf

    start = _moment_start(table, family, rotation)
    params, converged, value = _maximize_weighted(objective, start, family)
    spec = CopulaSpec(family, params[2], rotation)
    return LimitingFit(
        pi=params[0],
        scale=params[1],
        theta=params[2],
        tau=theta_to_tau(spec),
        converged=converged,
        value=value,
    )
