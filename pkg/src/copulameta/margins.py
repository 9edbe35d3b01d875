"""Random-effects margins and within-study count distributions.

Two marginal families for the latent accuracy pair are supported:

* ``"normal"`` -- normal on the logit scale with mean logit(pi) and
  standard deviation sigma (the GLMM margin);
* ``"beta"`` -- Beta in the mean/dispersion parameterization (pi, gamma),
  where alpha = pi (1/gamma - 1) and beta = (1 - pi)(1/gamma - 1).

Within a study the counts are binomial given the latent probability; the
beta margin integrates to an exact beta-binomial marginal, implemented here
in log space so group sizes up to 1e4 stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import (
    betainc,
    betaincinv,
    betaln,
    expit,
    gammaln,
    logit,
    ndtr,
    ndtri,
    xlog1py,
    xlogy,
)

from .errors import DomainError

__all__ = [
    "MarginSpec",
    "StudyRecord",
    "beta_shape",
    "latent_probability",
    "margin_cdf",
    "margin_logpdf",
    "binomial_logpmf",
    "betabinomial_logpmf",
    "betabinomial_cdf",
]

MARGIN_KINDS = ("normal", "beta")

_TINY = 1e-300
_ONE_MINUS = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class MarginSpec:
    """Marginal random-effects distribution for one accuracy component.

    kind  : "normal" (normal on the logit scale) or "beta"
    pi    : mean parameter in (0, 1)
    scale : sigma > 0 for kind "normal"; dispersion gamma in (0, 1) for "beta"
    """

    kind: str
    pi: float
    scale: float

    def __post_init__(self) -> None:
        if self.kind not in MARGIN_KINDS:
            raise DomainError(f"unknown margin kind {self.kind!r}")
        if not 0.0 < self.pi < 1.0:
            raise DomainError(f"margin pi must lie in (0, 1), got {self.pi}")
        if self.kind == "normal":
            if not self.scale > 0.0:
                raise DomainError(f"normal margin sigma must be > 0, got {self.scale}")
        elif not 0.0 < self.scale < 1.0:
            raise DomainError(
                f"beta margin gamma must lie in (0, 1), got {self.scale} "
                "(gamma -> 0 is the degenerate point-mass limit)"
            )


@dataclass(frozen=True)
class StudyRecord:
    """One study's 2x2 table: y1/n1 for the diseased group (true positives),
    y2/n2 for the non-diseased group (true negatives)."""

    y1: int
    n1: int
    y2: int
    n2: int

    def __post_init__(self) -> None:
        for name, value in (("y1", self.y1), ("n1", self.n1), ("y2", self.y2), ("n2", self.n2)):
            if int(value) != value:
                raise DomainError(f"study counts must be integers, got {name}={value}")
        if self.n1 < 1 or self.n2 < 1:
            raise DomainError(f"group sizes must be >= 1, got n1={self.n1}, n2={self.n2}")
        if not 0 <= self.y1 <= self.n1:
            raise DomainError(f"need 0 <= y1 <= n1, got y1={self.y1}, n1={self.n1}")
        if not 0 <= self.y2 <= self.n2:
            raise DomainError(f"need 0 <= y2 <= n2, got y2={self.y2}, n2={self.n2}")


def beta_shape(pi: float, gamma: float) -> tuple[float, float]:
    """Shape parameters (alpha, beta) of Beta(pi, gamma).

    alpha = pi (1/gamma - 1) and beta = (1 - pi)(1/gamma - 1), so that the
    mean is pi and the dispersion 1/(alpha + beta + 1) is gamma exactly.
    """
    if not 0.0 < pi < 1.0:
        raise DomainError(f"pi must lie in (0, 1), got {pi}")
    if not 0.0 < gamma < 1.0:
        raise DomainError(
            f"gamma must lie in (0, 1), got {gamma} "
            "(gamma -> 0 degenerates to a point mass at pi)"
        )
    total = 1.0 / gamma - 1.0
    return pi * total, (1.0 - pi) * total


def _check_open_unit(name, u):
    a = np.asarray(u, dtype=float)
    if np.any(a <= 0.0) or np.any(a >= 1.0):
        raise DomainError(f"{name} requires u in the open interval (0, 1)")
    return a


def _scalar_like(value, *inputs):
    if all(np.isscalar(x) or np.ndim(x) == 0 for x in inputs):
        return float(value)
    return value


def latent_probability(u, margin: MarginSpec):
    """Latent sensitivity/specificity at uniform quantile u.

    Beta margins return the Beta(pi, gamma) quantile; normal margins return
    inverse-logit of the N(logit(pi), sigma^2) quantile.  Strictly
    increasing in u.
    """
    a = _check_open_unit("latent_probability", u)
    if margin.kind == "beta":
        alpha, beta = beta_shape(margin.pi, margin.scale)
        out = betaincinv(alpha, beta, a)
    else:
        out = expit(logit(margin.pi) + margin.scale * ndtri(a))
    # extreme shapes can round the quantile onto 0 or 1; keep the open-interval contract
    out = np.clip(out, _TINY, _ONE_MINUS)
    return _scalar_like(out, u)


def margin_cdf(x, margin: MarginSpec):
    """Marginal cdf of the latent probability, F(x; margin) for x in (0, 1)."""
    a = _check_open_unit("margin_cdf", x)
    if margin.kind == "beta":
        alpha, beta = beta_shape(margin.pi, margin.scale)
        out = betainc(alpha, beta, a)
    else:
        out = ndtr((logit(a) - logit(margin.pi)) / margin.scale)
    return _scalar_like(out, x)


def margin_logpdf(x, margin: MarginSpec):
    """Log marginal density of the latent probability on (0, 1)."""
    a = _check_open_unit("margin_logpdf", x)
    if margin.kind == "beta":
        alpha, beta = beta_shape(margin.pi, margin.scale)
        out = xlogy(alpha - 1.0, a) + xlog1py(beta - 1.0, -a) - betaln(alpha, beta)
    else:
        z = (logit(a) - logit(margin.pi)) / margin.scale
        out = (
            -0.5 * z * z
            - 0.5 * np.log(2.0 * np.pi)
            - np.log(margin.scale)
            - np.log(a)
            - np.log1p(-a)
        )
    return _scalar_like(out, x)


def binomial_logpmf(y, n, p):
    """log Binomial(n, p) pmf at y, via log-gamma; p in {0, 1} uses 0*log0=0."""
    ya = np.asarray(y, dtype=float)
    na = np.asarray(n, dtype=float)
    pa = np.asarray(p, dtype=float)
    if np.any(ya < 0) or np.any(ya > na):
        raise DomainError("binomial_logpmf requires 0 <= y <= n")
    if np.any(pa < 0.0) or np.any(pa > 1.0):
        raise DomainError("binomial_logpmf requires p in [0, 1]")
    out = (
        gammaln(na + 1.0)
        - gammaln(ya + 1.0)
        - gammaln(na - ya + 1.0)
        + xlogy(ya, pa)
        + xlog1py(na - ya, -pa)
    )
    return _scalar_like(out, y, n, p)


def _betabinomial_logpmf_shapes(y, n, alpha, beta):
    return (
        gammaln(n + 1.0)
        - gammaln(y + 1.0)
        - gammaln(n - y + 1.0)
        + betaln(y + alpha, n - y + beta)
        - betaln(alpha, beta)
    )


def betabinomial_logpmf(y, n, pi: float, gamma: float):
    """log Beta-Binomial(n, pi, gamma) pmf at y (mean n*pi)."""
    ya = np.asarray(y, dtype=float)
    na = np.asarray(n, dtype=float)
    if np.any(ya < 0) or np.any(ya > na):
        raise DomainError("betabinomial_logpmf requires 0 <= y <= n")
    alpha, beta = beta_shape(pi, gamma)
    return _scalar_like(_betabinomial_logpmf_shapes(ya, na, alpha, beta), y, n)


def betabinomial_cdf(y, n, pi: float, gamma: float):
    """Beta-Binomial(n, pi, gamma) cdf at y: cumulative sum of the pmf."""
    ya = np.asarray(y)
    na = np.asarray(n)
    if np.any(ya < 0) or np.any(ya > na):
        raise DomainError("betabinomial_cdf requires 0 <= y <= n")
    alpha, beta = beta_shape(pi, gamma)
    ya, na = np.broadcast_arrays(ya, na)
    flat_y = np.atleast_1d(ya).ravel()
    flat_n = np.atleast_1d(na).ravel()
    out = np.empty(flat_y.shape, dtype=float)
    for n_val in np.unique(flat_n):
        support = np.arange(int(n_val) + 1, dtype=float)
        pmf = np.exp(_betabinomial_logpmf_shapes(support, float(n_val), alpha, beta))
        cdf = np.minimum(np.cumsum(pmf), 1.0)
        sel = flat_n == n_val
        out[sel] = cdf[flat_y[sel].astype(int)]
    out = out.reshape(ya.shape)
    return _scalar_like(out, y, n)
