"""SROC curves, summary points with regions, and Vuong model comparison.

Curve conventions: quantile-regression curves and density contours are
returned in ROC orientation, i.e. points (1 - specificity, sensitivity);
the summary operating point is the pair (sensitivity, specificity).

The quantile regression curve of sensitivity on specificity solves
C(u1 | u2; theta) = q for u1 at each grid specificity (conditioning on the
*second* copula argument, hence the argument-swapped spec), then maps u1
back through the sensitivity margin's quantile.  A fit at the
countermonotonic boundary has a single deterministic curve: all quantile
levels coincide with x1 = F1^{-1}(1 - F2(x2)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit, ndtr
from scipy.stats import chi2
from skimage import measure

from .copulas import CopulaSpec, copula_logdensity, inv_cond_cdf, swapped
from .errors import DegenerateComparisonError, DomainError
from .estimation import FitResult
from .likelihood import LogLikResult
from .margins import MarginSpec, latent_probability, margin_cdf, margin_logpdf

__all__ = [
    "CurveSet",
    "VuongResult",
    "quantile_curve",
    "glmm_sroc",
    "predictive_contours",
    "summary_point_region",
    "vuong_test",
    "build_curve_set",
    "DEFAULT_QUANTILES",
    "DEFAULT_LEVELS",
]

DEFAULT_QUANTILES = (0.01, 0.5, 0.99)
DEFAULT_LEVELS = (0.5, 0.95)
DEFAULT_GRID_SIZE = 200
DEFAULT_RESOLUTION = 400


def default_grid(size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """Equally spaced conditioning values in [0.005, 0.995]."""
    return np.linspace(0.005, 0.995, size)


@dataclass
class VuongResult:
    """Non-nested comparison sqrt(N) Dbar / s ~ N(0, 1); positive favors model 2."""

    statistic: float
    p_value: float
    dbar: float
    s: float


@dataclass
class CurveSet:
    """Quantile curves, summary point, and regions for one fitted model."""

    quantile_curves: dict[float, np.ndarray]
    direction: str
    summary_point: tuple[float, float]
    confidence_region: np.ndarray | None
    predictive_contours: dict[float, list[np.ndarray]] = field(default_factory=dict)
    boundary: bool = False


def _is_boundary_fit(fit: FitResult) -> bool:
    return fit.model.variant == "countermonotonic"


def _fit_margins(fit: FitResult) -> tuple[MarginSpec, MarginSpec]:
    return fit.model.margin1, fit.model.margin2


def quantile_curve(
    fit: FitResult,
    q: float,
    grid: np.ndarray | None = None,
    direction: str = "x1_on_x2",
) -> np.ndarray:
    """Quantile regression curve at level q, in ROC orientation.

    For direction "x1_on_x2" the grid holds specificity values and the
    curve solves the conditional-quantile equation of sensitivity given
    specificity; "x2_on_x1" conditions the other way around (the points are
    then ordered by the sensitivity grid).
    """
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {q}")
    if direction not in ("x1_on_x2", "x2_on_x1"):
        raise DomainError(f"unknown direction {direction!r}")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if np.any(grid <= 0.0) or np.any(grid >= 1.0):
        raise DomainError("curve grid values must lie in (0, 1)")
    m1, m2 = _fit_margins(fit)
    if _is_boundary_fit(fit):
        # countermonotonic: u1 = 1 - u2 for every q
        if direction == "x1_on_x2":
            x1 = latent_probability(1.0 - margin_cdf(grid, m2), m1)
            return np.column_stack((1.0 - grid, x1))
        x2 = latent_probability(1.0 - margin_cdf(grid, m1), m2)
        return np.column_stack((1.0 - x2, grid))
    spec = fit.model.copula
    if direction == "x1_on_x2":
        u2 = margin_cdf(grid, m2)
        u1 = inv_cond_cdf(q, u2, swapped(spec))
        x1 = latent_probability(u1, m1)
        return np.column_stack((1.0 - grid, x1))
    u1 = margin_cdf(grid, m1)
    u2 = inv_cond_cdf(q, u1, spec)
    x2 = latent_probability(u2, m2)
    return np.column_stack((1.0 - x2, grid))


def glmm_sroc(fit: FitResult, grid: np.ndarray | None = None) -> np.ndarray:
    """SROC line of the GLMM: conditional mean on the logit scale.

    logit(x1) = [logit(pi1) - rho logit(pi2) s1/s2] + rho logit(x2) s1/s2,
    mapped through the inverse logit; coincides with the q = 0.5 quantile
    curve for the BVN/normal model.
    """
    m1, m2 = _fit_margins(fit)
    if m1.kind != "normal" or m2.kind != "normal":
        raise DomainError("glmm_sroc requires normal margins")
    if fit.model.copula is None or fit.model.copula.family != "bvn":
        raise DomainError("glmm_sroc requires the BVN copula")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    rho = fit.model.copula.theta
    s1, s2 = m1.scale, m2.scale
    if s2 == 0.0:
        raise DomainError("sigma2 must be positive")
    line = (logit(m1.pi) - rho * logit(m2.pi) * s1 / s2) + rho * logit(grid) * s1 / s2
    return np.column_stack((1.0 - grid, expit(line)))


def _joint_logdensity_grid(fit: FitResult, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Random-effects log density of (sensitivity, specificity) at cell centers."""
    m1, m2 = _fit_margins(fit)
    spec = fit.model.copula
    x = (np.arange(resolution) + 0.5) / resolution
    u1 = margin_cdf(x, m1)
    u2 = margin_cdf(x, m2)
    eps = 1e-14
    u1 = np.clip(u1, eps, 1.0 - eps)
    u2 = np.clip(u2, eps, 1.0 - eps)
    logc = copula_logdensity(u1[:, None], u2[None, :], spec)
    logd = logc + margin_logpdf(x, m1)[:, None] + margin_logpdf(x, m2)[None, :]
    return x, logd


def predictive_contours(
    fit: FitResult,
    levels: tuple[float, ...] = DEFAULT_LEVELS,
    resolution: int = DEFAULT_RESOLUTION,
) -> dict[float, list[np.ndarray]]:
    """Highest-density regions of the fitted random-effects distribution.

    For each level p, finds the density threshold whose super-level set
    carries probability mass p (grid-cell summation at the given
    resolution) and returns the threshold's contour loops in ROC
    orientation.  Loops are explicitly closed (first point == last point).
    """
    if _is_boundary_fit(fit):
        raise DomainError(
            "boundary (countermonotonic) fit has a degenerate joint density; "
            "use quantile_curve for its single deterministic curve"
        )
    for p in levels:
        if not 0.0 < p < 1.0:
            raise DomainError(f"contour level must lie in (0, 1), got {p}")
    x, logd = _joint_logdensity_grid(fit, resolution)
    dens = np.exp(logd)
    cell = 1.0 / (resolution * resolution)
    flat = np.sort(dens.ravel())[::-1]
    cum = np.cumsum(flat) * cell
    out: dict[float, list[np.ndarray]] = {}
    for p in levels:
        k = int(np.searchsorted(cum, p))
        k = min(k, len(flat) - 1)
        threshold = flat[k]
        mass = cum[k]
        if abs(mass - p) > 0.01:
            raise DomainError(
                f"contour mass calibration off by {abs(mass - p):.3f} at level {p}; "
                "increase the resolution"
            )
        loops = []
        for coords in measure.find_contours(dens, threshold):
            sens = (coords[:, 0] + 0.5) / resolution
            fpr = 1.0 - (coords[:, 1] + 0.5) / resolution
            loop = np.column_stack((fpr, sens))
            if not np.allclose(loop[0], loop[-1]):
                loop = np.vstack((loop, loop[:1]))
            loops.append(loop)
        out[p] = loops
    return out


def summary_point_region(fit: FitResult, coverage: float):
    """Summary operating point (sensitivity, specificity) with a Wald ellipse.

    The ellipse comes from the (pi1, pi2) block of the inverse observed
    information at the chi-square(2) quantile of the requested coverage,
    truncated to the unit square; it is returned as a closed loop in
    (sensitivity, specificity) coordinates, or None when standard errors
    are unavailable.
    """
    if not 0.0 <= coverage < 1.0:
        raise DomainError(f"coverage must lie in [0, 1), got {coverage}")
    point = (float(fit.estimates[0]), float(fit.estimates[1]))
    if fit.cov is None:
        return point, None
    block = np.asarray(fit.cov)[:2, :2]
    try:
        chol = np.linalg.cholesky(block)
    except np.linalg.LinAlgError:
        return point, None
    radius = math.sqrt(chi2.ppf(coverage, df=2))
    t = np.linspace(0.0, 2.0 * math.pi, 181)
    circle = np.vstack((np.cos(t), np.sin(t)))
    pts = np.asarray(point)[:, None] + radius * (chol @ circle)
    loop = np.clip(pts.T, 0.0, 1.0)
    return point, loop


def vuong_test(ll1: LogLikResult, ll2: LogLikResult) -> VuongResult:
    """Vuong statistic for two models evaluated on the same study list.

    D_i is the per-study log-likelihood difference (model 2 minus model 1),
    the statistic is sqrt(N) Dbar / s with s the sample standard deviation
    (divisor N-1), and the p-value is two-sided standard normal.
    """
    d = np.asarray(ll2.per_study, dtype=float) - np.asarray(ll1.per_study, dtype=float)
    if len(ll1.per_study) != len(ll2.per_study):
        raise DomainError(
            f"model log-likelihoods cover {len(ll1.per_study)} vs {len(ll2.per_study)} studies"
        )
    n = len(d)
    if n < 2:
        raise DomainError("Vuong test needs at least 2 studies")
    dbar = float(np.mean(d))
    s = float(np.std(d, ddof=1))
    if s == 0.0:
        raise DegenerateComparisonError(
            "identical per-study contributions; models are indistinguishable on these data"
        )
    statistic = math.sqrt(n) * dbar / s
    p_value = 2.0 * float(ndtr(-abs(statistic)))
    return VuongResult(statistic=statistic, p_value=p_value, dbar=dbar, s=s)


def build_curve_set(
    fit: FitResult,
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES,
    levels: tuple[float, ...] = DEFAULT_LEVELS,
    grid: np.ndarray | None = None,
    direction: str = "x1_on_x2",
    coverage: float = 0.95,
    resolution: int = DEFAULT_RESOLUTION,
) -> CurveSet:
    """Assemble quantile curves, summary point/region, and contours."""
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    boundary = _is_boundary_fit(fit)
    curves = {float(q): quantile_curve(fit, q, grid, direction) for q in quantiles}
    point, region = summary_point_region(fit, coverage)
    contours: dict[float, list[np.ndarray]] = {}
    if not boundary:
        contours = predictive_contours(fit, levels, resolution)
    return CurveSet(
        quantile_curves=curves,
        direction=direction,
        summary_point=point,
        confidence_region=region,
        predictive_contours=contours,
        boundary=boundary,
    )
