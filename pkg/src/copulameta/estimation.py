"""Maximum-likelihood fitting, standard errors, and boundary handling.

Fitting maximizes the selected variant's log-likelihood with a quasi-Newton
(BFGS) search on unconstrained transforms of the parameters: logit for the
mean and dispersion parameters, log for sigma, Fisher-z for the BVN
correlation, log for Clayton theta, identity for Frank and Sarmanov theta.
Gradients are central finite differences; no analytic derivatives exist for
these likelihoods.

Standard errors come from the observed information: the Hessian of the
log-likelihood in the *original* parameters at the optimum, by central
differences with step h = cbrt(eps) * max(1, |x|).  When the estimated
Kendall tau is pushed against the countermonotonic bound (tau < -0.97) the
dependence cannot be estimated; the copula is then fixed at the Frechet
lower bound and only the univariate parameters are re-optimized.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit
from scipy.stats import kendalltau

from .copulas import (
    CLAYTON_THETA_MAX,
    CopulaSpec,
    copula_logdensity,
    theta_to_tau,
    tau_to_theta,
)
from .errors import DomainError, LikelihoodEvaluationError
from .likelihood import (
    KHS_CDF_CLAMP,
    LogLikResult,
    ModelSpec,
    _MixedEvaluator,
    _study_arrays,
    loglik_countermonotonic,
    loglik_khs,
    loglik_sarmanov,
)
from .margins import MarginSpec, StudyRecord
from .quadrature import DEFAULT_NQ, QuadRule, gauss_legendre

__all__ = ["FitOptions", "FitResult", "fit", "fit_countermonotonic", "standard_errors"]

_CBRT_EPS = float(np.finfo(float).eps) ** (1.0 / 3.0)

# clamps applied when mapping unconstrained coordinates back to the domain
_P_CLIP = 1e-10
_SIGMA_LO, _SIGMA_HI = 1e-8, 1e8
_RHO_CLIP = 1.0 - 1e-12
_FRANK_THETA_CLIP = 500.0
_CLAYTON_THETA_LO = 1e-12

PARAM_NAMES = {
    "normal": ("pi1", "pi2", "sigma1", "sigma2"),
    "beta": ("pi1", "pi2", "gamma1", "gamma2"),
}


@dataclass
class FitOptions:
    """Optimizer controls; defaults follow the package-wide conventions."""

    nq: int = DEFAULT_NQ
    gtol: float = 1e-5
    xtol: float = 1e-9
    max_iter: int = 500
    parameterization: str = "transformed"  # "transformed" or "bounded"
    boundary_tau: float = 0.97
    compute_se: bool = True


@dataclass
class FitResult:
    """Maximum-likelihood fit of one model variant.

    estimates holds (pi1, pi2, scale1, scale2, theta) on the original
    scale; for a countermonotonic fit the theta slot is NaN and tau_hat is
    -1 with no dependence standard error.  `unconstrained` retains the
    free-dependence fit whenever a boundary refit replaced it.
    """

    model: ModelSpec
    estimates: np.ndarray
    param_names: tuple[str, ...]
    tau_hat: float
    se: np.ndarray | None
    tau_se: float | None
    cov: np.ndarray | None
    loglik: LogLikResult
    converged: bool
    boundary: bool
    iterations: int
    start: np.ndarray
    message: str
    unconstrained: "FitResult | None" = None


# ---------------------------------------------------------------------------
# numerical derivatives
# ---------------------------------------------------------------------------


def _fd_steps(x: np.ndarray) -> np.ndarray:
    return _CBRT_EPS * np.maximum(1.0, np.abs(x))


def _central_grad(f, x: np.ndarray) -> np.ndarray:
    h = _fd_steps(x)
    g = np.empty_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h[j]
        g[j] = (f(x + e) - f(x - e)) / (2.0 * h[j])
    return g


def _central_hessian(f, x: np.ndarray) -> np.ndarray:
    p = len(x)
    h = _fd_steps(x)
    f0 = f(x)
    hess = np.empty((p, p))
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        hess[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / (h[i] * h[i])
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = h[j]
            hess[i, j] = hess[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return hess


def standard_errors(loglik_fn, params: np.ndarray):
    """Standard errors from the numerically observed information.

    Computes the central-difference Hessian of `loglik_fn` at `params`
    (original scale), checks that the observed information -H is symmetric
    positive definite, and returns (se, cov) with cov the inverse
    information.  Returns (None, None) when the information is not positive
    definite (near-boundary or flat likelihood).
    """
    params = np.asarray(params, dtype=float)
    hess = _central_hessian(loglik_fn, params)
    info = -0.5 * (hess + hess.T)
    try:
        eigvals = np.linalg.eigvalsh(info)
    except np.linalg.LinAlgError:
        return None, None
    if np.any(eigvals <= 0.0) or not np.all(np.isfinite(eigvals)):
        return None, None
    cov = np.linalg.inv(info)
    return np.sqrt(np.diag(cov)), cov


# ---------------------------------------------------------------------------
# parameter transforms
# ---------------------------------------------------------------------------


def _dep_kind(template: ModelSpec) -> str:
    if template.variant == "sarmanov":
        return "sarmanov"
    return template.copula.family


def _to_unconstrained(params: np.ndarray, template: ModelSpec) -> np.ndarray:
    z = np.empty_like(params)
    z[0] = logit(params[0])
    z[1] = logit(params[1])
    for j, kind in ((2, template.margin1.kind), (3, template.margin2.kind)):
        z[j] = math.log(params[j]) if kind == "normal" else logit(params[j])
    if len(params) == 5:
        dep = _dep_kind(template)
        if dep == "bvn":
            z[4] = math.atanh(np.clip(params[4], -_RHO_CLIP, _RHO_CLIP))
        elif dep == "clayton":
            z[4] = math.log(max(params[4], _CLAYTON_THETA_LO))
        else:
            z[4] = params[4]
    return z


def _from_unconstrained(z: np.ndarray, template: ModelSpec) -> np.ndarray:
    p = np.empty_like(z)
    p[0] = np.clip(expit(z[0]), _P_CLIP, 1.0 - _P_CLIP)
    p[1] = np.clip(expit(z[1]), _P_CLIP, 1.0 - _P_CLIP)
    for j, kind in ((2, template.margin1.kind), (3, template.margin2.kind)):
        if kind == "normal":
            p[j] = np.clip(np.exp(z[j]), _SIGMA_LO, _SIGMA_HI)
        else:
            p[j] = np.clip(expit(z[j]), _P_CLIP, 1.0 - _P_CLIP)
    if len(z) == 5:
        dep = _dep_kind(template)
        if dep == "bvn":
            p[4] = np.clip(math.tanh(z[4]), -_RHO_CLIP, _RHO_CLIP)
        elif dep == "clayton":
            p[4] = np.clip(np.exp(z[4]), _CLAYTON_THETA_LO, CLAYTON_THETA_MAX)
        elif dep == "frank":
            p[4] = np.clip(z[4], -_FRANK_THETA_CLIP, _FRANK_THETA_CLIP)
        else:
            p[4] = z[4]
    return p


def _bounds(template: ModelSpec, n_params: int):
    unit = (1e-6, 1.0 - 1e-6)
    scale = lambda kind: (1e-6, 50.0) if kind == "normal" else unit
    bounds = [unit, unit, scale(template.margin1.kind), scale(template.margin2.kind)]
    if n_params == 5:
        dep = _dep_kind(template)
        if dep == "bvn":
            bounds.append((-1.0 + 1e-9, 1.0 - 1e-9))
        elif dep == "clayton":
            bounds.append((_CLAYTON_THETA_LO, CLAYTON_THETA_MAX))
        elif dep == "frank":
            bounds.append((-_FRANK_THETA_CLIP, _FRANK_THETA_CLIP))
        else:
            bounds.append((-100.0, 100.0))
    return bounds


# ---------------------------------------------------------------------------
# starting values
# ---------------------------------------------------------------------------


def _sample_tau(data: list[StudyRecord]) -> float:
    """Kendall's tau of the continuity-corrected empirical logits."""
    y1, n1, y2, n2 = _study_arrays(data)
    l1 = logit((y1 + 0.5) / (n1 + 1.0))
    l2 = logit((y2 + 0.5) / (n2 + 1.0))
    tau = kendalltau(l1, l2).statistic
    if not np.isfinite(tau):
        tau = 0.0
    return float(tau)


def _start_values(data: list[StudyRecord], template: ModelSpec) -> np.ndarray:
    y1, n1, y2, n2 = _study_arrays(data)
    pi1 = float(np.clip(np.sum(y1) / np.sum(n1), 0.01, 0.99))
    pi2 = float(np.clip(np.sum(y2) / np.sum(n2), 0.01, 0.99))
    s1 = 1.0 if template.margin1.kind == "normal" else 0.1
    s2 = 1.0 if template.margin2.kind == "normal" else 0.1
    if template.variant == "countermonotonic":
        return np.array([pi1, pi2, s1, s2])
    if template.variant == "sarmanov":
        return np.array([pi1, pi2, s1, s2, 0.0])
    tau = _sample_tau(data)
    family = template.copula.family
    rotation = template.copula.rotation
    if family == "bvn":
        theta0 = math.sin(math.pi * np.clip(tau, -0.95, 0.95) / 2.0)
    elif family == "frank":
        tau_c = float(np.clip(tau, -0.85, 0.85))
        if abs(tau_c) < 0.012:
            tau_c = 0.05 if tau_c >= 0 else -0.05
        theta0 = tau_to_theta("frank", 0, tau_c).theta
    else:
        if rotation in (90, 270):
            tau_c = float(np.clip(tau, -0.95, -0.02))
        else:
            tau_c = float(np.clip(tau, 0.02, 0.95))
        theta0 = tau_to_theta("clayton", rotation, tau_c).theta
    return np.array([pi1, pi2, s1, s2, theta0])


# ---------------------------------------------------------------------------
# objective construction
# ---------------------------------------------------------------------------


class _KhsEvaluator:
    """Workspace for repeated KHS evaluations over one dataset.

    The beta-binomial pmf over each group's full support is rebuilt every
    iteration, but the log binomial coefficients and gamma-function ladders
    reduce to one cumulative sum of logs per distinct group size.
    """

    def __init__(self, data: list[StudyRecord]):
        self.y1, self.n1, self.y2, self.n2 = _study_arrays(data)
        self.groups1 = self._index(self.n1)
        self.groups2 = self._index(self.n2)

    @staticmethod
    def _index(sizes: np.ndarray):
        groups = []
        for n_val in np.unique(sizes):
            n = int(n_val)
            log_fact = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, n + 1)))))
            logcomb = log_fact[-1] - log_fact - log_fact[::-1]
            groups.append((n, np.flatnonzero(sizes == n_val), logcomb))
        return groups

    @staticmethod
    def _ladder(a: float, n: int) -> np.ndarray:
        # gammaln(a + k) - gammaln(a) for k = 0..n via the telescoping product
        return np.concatenate(([0.0], np.cumsum(np.log(a + np.arange(n, dtype=float)))))

    def _side(self, y, groups, pi: float, gamma: float):
        total = 1.0 / gamma - 1.0
        a, b = pi * total, (1.0 - pi) * total
        h = np.empty(len(y))
        logpmf = np.empty(len(y))
        for n, idx, logcomb in groups:
            # log h(y) = logC(n,y) + [lgamma(y+a)-lgamma(a)]
            #          + [lgamma(n-y+b)-lgamma(b)] - [lgamma(n+a+b)-lgamma(a+b)]
            la = self._ladder(a, n)
            lb = self._ladder(b, n)
            log_bb = logcomb + la + lb[::-1] - self._ladder(a + b, n)[-1]
            cdf = np.minimum(np.cumsum(np.exp(log_bb)), 1.0)
            yi = y[idx].astype(int)
            h[idx] = cdf[yi]
            logpmf[idx] = log_bb[yi]
        return h, logpmf

    def per_study(self, m1: MarginSpec, m2: MarginSpec, cspec: CopulaSpec) -> np.ndarray:
        h1, lp1 = self._side(self.y1, self.groups1, m1.pi, m1.scale)
        h2, lp2 = self._side(self.y2, self.groups2, m2.pi, m2.scale)
        h1 = np.clip(h1, KHS_CDF_CLAMP, 1.0 - KHS_CDF_CLAMP)
        h2 = np.clip(h2, KHS_CDF_CLAMP, 1.0 - KHS_CDF_CLAMP)
        return copula_logdensity(h1, h2, cspec) + lp1 + lp2


def _model_at(template: ModelSpec, params: np.ndarray) -> ModelSpec:
    m1 = MarginSpec(template.margin1.kind, float(params[0]), float(params[2]))
    m2 = MarginSpec(template.margin2.kind, float(params[1]), float(params[3]))
    if template.variant == "sarmanov":
        return ModelSpec(m1, m2, None, "sarmanov", sarmanov_theta=float(params[4]))
    if template.variant == "countermonotonic":
        return ModelSpec(m1, m2, None, "countermonotonic")
    cop = CopulaSpec(template.copula.family, float(params[4]), template.copula.rotation)
    return ModelSpec(m1, m2, cop, template.variant)


def _make_loglik_fn(data: list[StudyRecord], template: ModelSpec, rule: QuadRule):
    """Original-scale log-likelihood callable; -inf on invalid parameters."""
    if template.variant == "copula_mixed":
        ev = _MixedEvaluator(data, rule)

        def fn(params: np.ndarray) -> float:
            try:
                model = _model_at(template, params)
                return float(np.sum(ev.per_study(model.margin1, model.margin2, model.copula)))
            except (DomainError, LikelihoodEvaluationError, FloatingPointError):
                return -np.inf

        return fn
    if template.variant == "khs":
        kev = _KhsEvaluator(data)

        def fn(params: np.ndarray) -> float:
            try:
                model = _model_at(template, params)
                return float(np.sum(kev.per_study(model.margin1, model.margin2, model.copula)))
            except (DomainError, LikelihoodEvaluationError, FloatingPointError):
                return -np.inf

        return fn
    if template.variant == "sarmanov":

        def fn(params: np.ndarray) -> float:
            try:
                return loglik_sarmanov(
                    data, params[0], params[1], params[2], params[3], params[4]
                ).total
            except (DomainError, LikelihoodEvaluationError, FloatingPointError):
                return -np.inf

        return fn
    if template.variant == "countermonotonic":
        ev = _MixedEvaluator(data, rule)

        def fn(params: np.ndarray) -> float:
            try:
                m1 = MarginSpec(template.margin1.kind, float(params[0]), float(params[2]))
                m2 = MarginSpec(template.margin2.kind, float(params[1]), float(params[3]))
                return float(np.sum(ev.per_study_countermonotonic(m1, m2)))
            except (DomainError, LikelihoodEvaluationError, FloatingPointError):
                return -np.inf

        return fn
    raise DomainError(f"unknown variant {template.variant!r}")


def _optimize(loglik_fn, start: np.ndarray, template: ModelSpec, options: FitOptions):
    if options.parameterization == "transformed":

        def objective(z: np.ndarray) -> float:
            value = loglik_fn(_from_unconstrained(z, template))
            return np.inf if not np.isfinite(value) else -value

        z0 = _to_unconstrained(start, template)
        res = minimize(
            objective,
            z0,
            jac=lambda z: _central_grad(objective, z),
            method="BFGS",
            options={"gtol": options.gtol, "maxiter": options.max_iter, "xrtol": options.xtol},
        )
        params = _from_unconstrained(res.x, template)
    elif options.parameterization == "bounded":

        def objective(p: np.ndarray) -> float:
            value = loglik_fn(p)
            return np.inf if not np.isfinite(value) else -value

        res = minimize(
            objective,
            start,
            jac=lambda p: _central_grad(objective, p),
            method="L-BFGS-B",
            bounds=_bounds(template, len(start)),
            options={
                "gtol": options.gtol,
                "ftol": 1e-13,
                "maxls": 60,
                "maxiter": options.max_iter,
            },
        )
        params = np.asarray(res.x, dtype=float)
    else:
        raise DomainError(f"unknown parameterization {options.parameterization!r}")
    grad_norm = float(np.max(np.abs(res.jac))) if res.jac is not None else np.inf
    converged = bool(res.success or grad_norm <= options.gtol)
    return params, converged, int(res.nit), str(res.message)


def _loglik_result_at(data, template: ModelSpec, params: np.ndarray, rule: QuadRule) -> LogLikResult:
    model = _model_at(template, params)
    if model.variant == "copula_mixed":
        from .likelihood import loglik_copula_mixed

        return loglik_copula_mixed(data, model, rule)
    if model.variant == "khs":
        return loglik_khs(data, model)
    if model.variant == "sarmanov":
        return loglik_sarmanov(data, params[0], params[1], params[2], params[3], params[4])
    return loglik_countermonotonic(data, model.margin1, model.margin2, rule)


def _tau_and_se(template: ModelSpec, theta: float, theta_se: float | None):
    if template.variant == "sarmanov":
        return float("nan"), None
    spec = CopulaSpec(template.copula.family, theta, template.copula.rotation)
    tau = theta_to_tau(spec)
    if theta_se is None or not np.isfinite(theta_se):
        return tau, None
    h = _fd_steps(np.array([theta]))[0]
    hi = theta + h
    lo = theta - h
    if template.copula.family == "bvn":
        hi, lo = min(hi, 1.0), max(lo, -1.0)
    elif template.copula.family == "clayton":
        lo = max(lo, 0.0)
    dtau = (
        theta_to_tau(CopulaSpec(template.copula.family, hi, template.copula.rotation))
        - theta_to_tau(CopulaSpec(template.copula.family, lo, template.copula.rotation))
    ) / (hi - lo)
    return tau, abs(dtau) * theta_se


def fit(data: list[StudyRecord], template: ModelSpec, options: FitOptions | None = None) -> FitResult:
    """Fit a model variant by maximum likelihood.

    The template's margin kinds, copula family/rotation, and variant select
    the model; its parameter values are ignored (starting values come from
    pooled proportions and the sample Kendall tau of the empirical logits).
    A fit whose tau estimate falls below -0.97 is refit with the
    countermonotonic copula; both results are retained.
    """
    options = options or FitOptions()
    if template.variant == "countermonotonic":
        return fit_countermonotonic(data, template.margin1, template.margin2, options)
    n_studies = len(data)
    if n_studies < 2:
        raise DomainError(f"need at least 2 studies to fit, got {n_studies}")
    if n_studies < 5:
        warnings.warn(
            f"only {n_studies} studies: estimates and standard errors will be fragile",
            stacklevel=2,
        )
    rule = gauss_legendre(options.nq)
    start = _start_values(data, template)
    loglik_fn = _make_loglik_fn(data, template, rule)
    params, converged, iterations, message = _optimize(loglik_fn, start, template, options)

    theta_hat = float(params[4])
    tau_hat, _ = _tau_and_se(template, theta_hat, None)

    if template.variant == "copula_mixed" and tau_hat < -options.boundary_tau:
        unconstrained = _assemble(
            data, template, params, rule, loglik_fn, converged, iterations, message,
            options, boundary=True, compute_se=False,
        )
        refit = fit_countermonotonic(data, template.margin1, template.margin2, options)
        return replace(refit, unconstrained=unconstrained)

    boundary = template.variant == "copula_mixed" and abs(tau_hat) > options.boundary_tau
    return _assemble(
        data, template, params, rule, loglik_fn, converged, iterations, message,
        options, boundary=boundary, compute_se=options.compute_se and converged and not boundary,
    )


def _assemble(
    data,
    template: ModelSpec,
    params: np.ndarray,
    rule: QuadRule,
    loglik_fn,
    converged: bool,
    iterations: int,
    message: str,
    options: FitOptions,
    boundary: bool,
    compute_se: bool,
) -> FitResult:
    se = cov = None
    theta_se = None
    if compute_se:
        se, cov = standard_errors(loglik_fn, params)
        if se is not None and len(se) == 5:
            theta_se = float(se[4])
    tau_hat, tau_se = _tau_and_se(template, float(params[4]), theta_se)
    names = (
        "pi1",
        "pi2",
        PARAM_NAMES[template.margin1.kind][2],
        PARAM_NAMES[template.margin2.kind][3],
        "theta",
    )
    return FitResult(
        model=_model_at(template, params),
        estimates=np.asarray(params, dtype=float),
        param_names=names,
        tau_hat=tau_hat,
        se=se,
        tau_se=tau_se,
        cov=cov,
        loglik=_loglik_result_at(data, template, params, rule),
        converged=converged,
        boundary=boundary,
        iterations=iterations,
        start=_start_values(data, template),
        message=message,
    )


def fit_countermonotonic(
    data: list[StudyRecord],
    margin1: MarginSpec,
    margin2: MarginSpec,
    options: FitOptions | None = None,
) -> FitResult:
    """Fit the margins with dependence fixed at the Frechet lower bound.

    Maximizes the single-integral likelihood along v = 1 - u over the four
    univariate parameters; tau is reported as -1 with no dependence SE.
    """
    options = options or FitOptions()
    if len(data) < 5:
        warnings.warn(
            f"only {len(data)} studies: the countermonotonic fit is under-identified",
            stacklevel=2,
        )
    template = ModelSpec(margin1, margin2, None, "countermonotonic")
    rule = gauss_legendre(options.nq)
    start4 = _start_values(data, template)[:4]
    loglik_fn = _make_loglik_fn(data, template, rule)
    params4, converged, iterations, message = _optimize(loglik_fn, start4, template, options)

    se = cov = None
    if options.compute_se and converged:
        se4, cov = standard_errors(loglik_fn, params4)
        if se4 is not None:
            se = np.append(se4, np.nan)
    params = np.append(params4, np.nan)
    names = (
        "pi1",
        "pi2",
        PARAM_NAMES[margin1.kind][2],
        PARAM_NAMES[margin2.kind][3],
        "theta",
    )
    return FitResult(
        model=_model_at(template, params),
        estimates=params,
        param_names=names,
        tau_hat=-1.0,
        se=se,
        tau_se=None,
        cov=cov,
        loglik=loglik_countermonotonic(
            data,
            MarginSpec(margin1.kind, float(params[0]), float(params[2])),
            MarginSpec(margin2.kind, float(params[1]), float(params[3])),
            rule,
        ),
        converged=converged,
        boundary=True,
        iterations=iterations,
        start=np.append(start4, np.nan),
        message=message,
    )
