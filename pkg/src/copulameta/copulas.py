"""Parametric bivariate copula families: BVN, Frank, and Clayton with rotations.

Each family provides the joint cdf C(u1, u2; theta), the density
c(u1, u2; theta), the conditional cdf C(v|u; theta) = dC(u, v)/du (always
conditioning on the *first* argument), its inverse, and conversions between
the dependence parameter theta and Kendall's tau.

Negative dependence for the Clayton family is obtained by reflecting one
uniform coordinate: rotation 90 reflects the first coordinate and rotation
270 the second, so

    c_90(u1, u2)  = c(1 - u1, u2),      c_270(u1, u2) = c(u1, 1 - u2),
    c_180(u1, u2) = c(1 - u1, 1 - u2).

Frank with theta < 0 is evaluated through the same reflection applied to
Frank with |theta| (an exact identity for this family), which keeps every
exponential argument negative and the formulas stable for large |theta|.

All functions are pure, accept scalars or numpy arrays for the uniform
arguments, and are safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

from .errors import DomainError, NumericOverflowError

__all__ = [
    "CopulaSpec",
    "copula_cdf",
    "copula_density",
    "copula_logdensity",
    "cond_cdf",
    "inv_cond_cdf",
    "theta_to_tau",
    "tau_to_theta",
    "swapped",
    "is_independence",
]

FAMILIES = ("bvn", "frank", "clayton")
ROTATIONS = (0, 90, 180, 270)

# Guards below which a family is evaluated as the independence copula, and
# the Clayton cap beyond which powers overflow (tau > 0.9998; the
# comonotonic/countermonotonic special case in `estimation` takes over).
FRANK_INDEP_EPS = 1e-5
CLAYTON_INDEP_EPS = 1e-7
CLAYTON_THETA_MAX = 1e4
FRANK_TAU_SERIES_EPS = 1e-3
FRANK_THETA_BRACKET = 35.0

_EPS = np.finfo(float).eps
_ONE_MINUS = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class CopulaSpec:
    """A copula family with rotation and dependence parameter.

    family : one of "bvn", "frank", "clayton"
    theta  : dependence parameter; bvn in [-1, 1], frank in (-inf, inf) with
             0 the independence limit, clayton in [0, 1e4] with 0 the
             independence limit
    rotation : 0/90/180/270; only meaningful for clayton (bvn and frank are
             fixed at 0 and model negative dependence through theta's sign)
    """

    family: str
    theta: float
    rotation: int = 0

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise DomainError(f"unknown copula family {self.family!r}")
        if self.rotation not in ROTATIONS:
            raise DomainError(f"rotation must be one of {ROTATIONS}, got {self.rotation}")
        if not np.isfinite(self.theta):
            raise DomainError(f"theta must be finite, got {self.theta}")
        if self.family == "bvn":
            if self.rotation != 0:
                raise DomainError("bvn copula does not take a rotation")
            if not -1.0 <= self.theta <= 1.0:
                raise DomainError(f"bvn theta must lie in [-1, 1], got {self.theta}")
        elif self.family == "frank":
            if self.rotation != 0:
                raise DomainError("frank copula does not take a rotation")
        else:
            if self.theta < 0.0:
                raise DomainError(
                    f"clayton theta must be >= 0 (rotate for negative dependence), got {self.theta}"
                )
            if self.theta > CLAYTON_THETA_MAX:
                raise DomainError(
                    f"clayton theta {self.theta} exceeds the {CLAYTON_THETA_MAX:g} overflow guard"
                )


def is_independence(spec: CopulaSpec) -> bool:
    """True when theta is at (or numerically below) the independence limit."""
    if spec.family == "bvn":
        return spec.theta == 0.0
    if spec.family == "frank":
        return abs(spec.theta) < FRANK_INDEP_EPS
    return spec.theta < CLAYTON_INDEP_EPS


def swapped(spec: CopulaSpec) -> CopulaSpec:
    """Spec of the copula with its two arguments exchanged.

    BVN and Frank are exchangeable; exchanging arguments of a 90-rotated
    Clayton yields the 270-rotation and vice versa.
    """
    if spec.family == "clayton" and spec.rotation in (90, 270):
        return CopulaSpec(spec.family, spec.theta, 360 - spec.rotation)
    return spec


# ---------------------------------------------------------------------------
# Bivariate normal cdf (Drezner-Wesolowsky/Genz quadrature scheme)
# ---------------------------------------------------------------------------

_GL_HALF = {n: np.polynomial.legendre.leggauss(n) for n in (6, 12, 20)}


def _bvn_upper(h, k, r: float):
    """P(X > h, Y > k) for standard bivariate normal; vectorized in h, k."""
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    h, k = np.broadcast_arrays(h, k)
    h = h.copy()
    k = k.copy()
    if r == 0.0:
        return ndtr(-h) * ndtr(-k)
    if r == 1.0:
        return ndtr(-np.maximum(h, k))
    if r == -1.0:
        return np.maximum(ndtr(-k) - ndtr(h), 0.0)
    if abs(r) < 0.3:
        x, w = _GL_HALF[6]
    elif abs(r) < 0.75:
        x, w = _GL_HALF[12]
    else:
        x, w = _GL_HALF[20]
    hk = h * k
    if abs(r) < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = math.asin(r)
        sn = np.sin(asr * (x + 1.0) / 2.0)
        terms = np.exp((sn * hk[..., None] - hs[..., None]) / (1.0 - sn * sn))
        bvn = terms @ w * asr / (4.0 * math.pi)
        return bvn + ndtr(-h) * ndtr(-k)
    # |r| in [0.925, 1): Genz's asymptotic expansion plus correction quadrature
    if r < 0.0:
        k = -k
        hk = -hk
    a_sq = (1.0 - r) * (1.0 + r)
    a = math.sqrt(a_sq)
    bs = (h - k) ** 2
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 16.0
    asr0 = -(bs / a_sq + hk) / 2.0
    bvn = np.where(
        asr0 > -100.0,
        a
        * np.exp(asr0)
        * (1.0 - c * (bs - a_sq) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a_sq * a_sq / 5.0),
        0.0,
    )
    b = np.sqrt(bs)
    sp = math.sqrt(2.0 * math.pi) * ndtr(-b / a)
    bvn = bvn - np.where(
        -hk < 100.0,
        np.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0),
        0.0,
    )
    ah = a / 2.0
    xs = (ah * (x + 1.0)) ** 2
    rs = np.sqrt(1.0 - xs)
    asr1 = -(bs[..., None] / xs + hk[..., None]) / 2.0
    sp1 = 1.0 + c[..., None] * xs * (1.0 + d[..., None] * xs)
    ep1 = np.exp(-hk[..., None] * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
    with np.errstate(over="ignore", invalid="ignore"):
        quad_terms = np.where(asr1 > -100.0, np.exp(asr1) * (ep1 - sp1), 0.0)
    bvn = bvn + ah * (quad_terms @ w)
    bvn = -bvn / (2.0 * math.pi)
    if r > 0.0:
        return bvn + ndtr(-np.maximum(h, k))
    bvn = -bvn
    return bvn + np.where(k > h, ndtr(k) - ndtr(h), 0.0)


def _bvn_cdf_z(z1, z2, rho: float):
    """Standard BVN cdf at (z1, z2) with correlation rho."""
    return _bvn_upper(-np.asarray(z1, dtype=float), -np.asarray(z2, dtype=float), rho)


# ---------------------------------------------------------------------------
# Base families on positive/native dependence.  All take interior uniforms.
# ---------------------------------------------------------------------------


def _bvn_base_cdf(u1, u2, rho):
    return _bvn_cdf_z(ndtri(u1), ndtri(u2), rho)


def _bvn_base_logdensity(u1, u2, rho):
    z1 = ndtri(u1)
    z2 = ndtri(u2)
    om = 1.0 - rho * rho
    return -0.5 * math.log(om) - (rho * rho * (z1 * z1 + z2 * z2) - 2.0 * rho * z1 * z2) / (
        2.0 * om
    )


def _bvn_base_cond(v, u, rho):
    if abs(rho) == 1.0:
        # degenerate: mass on v = u (rho=1) or v = 1-u (rho=-1)
        v = np.asarray(v, dtype=float)
        u = np.asarray(u, dtype=float)
        edge = v >= u if rho > 0 else v >= 1.0 - u
        return np.where(edge, 1.0, 0.0)
    return ndtr((ndtri(v) - rho * ndtri(u)) / math.sqrt(1.0 - rho * rho))


def _bvn_base_inv(q, u, rho):
    return ndtr(math.sqrt(1.0 - rho * rho) * ndtri(q) + rho * ndtri(u))


def _frank_base_cdf(u1, u2, th):
    return -np.log1p(np.expm1(-th * u1) * np.expm1(-th * u2) / np.expm1(-th)) / th


def _frank_base_logdensity(u1, u2, th):
    # denominator written as a sum of exponentials to avoid cancellation
    den = np.exp(-th * u1) + np.exp(-th * u2) - np.exp(-th) - np.exp(-th * (u1 + u2))
    return math.log(th) + np.log(-np.expm1(-th)) - th * (u1 + u2) - 2.0 * np.log(den)


def _frank_base_cond(v, u, th):
    # (e^{-th u} - e^{-th(u+v)}) / (e^{-th u} + e^{-th v} - e^{-th} - e^{-th(u+v)}):
    # every term is a plain exponential, so no cancellation at large theta
    euv = np.exp(-th * (u + v))
    eu = np.exp(-th * u)
    den = eu + np.exp(-th * v) - np.exp(-th) - euv
    return (eu - euv) / den


def _frank_base_inv(q, u, th):
    a = (1.0 / q - 1.0) * np.exp(-th * u)
    return -(np.log(a + np.exp(-th)) - np.log1p(a)) / th


def _clayton_log_s(u, v, th):
    """log(u^-th + v^-th - 1), evaluated stably for large th."""
    a = -th * np.log(u)
    b = -th * np.log(v)
    m = np.maximum(a, b)
    return m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))


def _clayton_base_cdf(u1, u2, th):
    return np.exp(-_clayton_log_s(u1, u2, th) / th)


def _clayton_base_logdensity(u1, u2, th):
    log_s = _clayton_log_s(u1, u2, th)
    return math.log1p(th) - (th + 1.0) * (np.log(u1) + np.log(u2)) - (2.0 + 1.0 / th) * log_s


def _clayton_base_cond(v, u, th):
    log_s = _clayton_log_s(u, v, th)
    return np.exp(-(th + 1.0) * np.log(u) - (1.0 + 1.0 / th) * log_s)


def _clayton_base_inv(q, u, th):
    a = np.log(np.expm1(-th / (1.0 + th) * np.log(q)))
    log_bracket = np.logaddexp(a - th * np.log(u), 0.0)
    return np.exp(-log_bracket / th)


_BASE = {
    "bvn": (_bvn_base_cdf, _bvn_base_logdensity, _bvn_base_cond, _bvn_base_inv),
    "frank": (_frank_base_cdf, _frank_base_logdensity, _frank_base_cond, _frank_base_inv),
    "clayton": (_clayton_base_cdf, _clayton_base_logdensity, _clayton_base_cond, _clayton_base_inv),
}


def _dispatch(spec: CopulaSpec):
    """Resolve (base ops, effective theta, effective rotation) for a spec.

    Frank theta < 0 maps onto the 90-rotation of Frank(|theta|); theta at
    the independence guard maps onto the independence copula.
    """
    if is_independence(spec):
        return None, 0.0, 0
    if spec.family == "frank" and spec.theta < 0.0:
        return _BASE["frank"], -spec.theta, 90
    return _BASE[spec.family], spec.theta, spec.rotation


def _as_interior(name, *arrays):
    out = []
    for arr in arrays:
        a = np.asarray(arr, dtype=float)
        if np.any(a <= 0.0) or np.any(a >= 1.0):
            raise DomainError(f"{name} requires arguments in the open interval (0, 1)")
        out.append(a)
    return out


def _scalar_like(value, *inputs):
    if all(np.isscalar(x) or np.ndim(x) == 0 for x in inputs):
        return float(value)
    return value


def copula_cdf(u1, u2, spec: CopulaSpec):
    """Joint cdf C(u1, u2; spec) for u1, u2 in [0, 1].

    Satisfies the Frechet bounds max(u1+u2-1, 0) <= C <= min(u1, u2) and the
    uniform-margin identities C(u, 1) = u, C(1, u) = u.
    """
    a1 = np.asarray(u1, dtype=float)
    a2 = np.asarray(u2, dtype=float)
    if np.any(a1 < 0.0) or np.any(a1 > 1.0) or np.any(a2 < 0.0) or np.any(a2 > 1.0):
        raise DomainError("copula_cdf requires arguments in [0, 1]")
    a1, a2 = np.broadcast_arrays(a1, a2)
    base, th, rot = _dispatch(spec)
    # boundary values are exact; evaluate the formula on the interior only
    interior = (a1 > 0.0) & (a1 < 1.0) & (a2 > 0.0) & (a2 < 1.0)
    x1 = np.where(interior, a1, 0.5)
    x2 = np.where(interior, a2, 0.5)
    if base is None:
        inner = x1 * x2
    else:
        cdf0 = base[0]
        if rot == 0:
            inner = cdf0(x1, x2, th)
        elif rot == 90:
            inner = x2 - cdf0(1.0 - x1, x2, th)
        elif rot == 180:
            inner = x1 + x2 - 1.0 + cdf0(1.0 - x1, 1.0 - x2, th)
        else:
            inner = x1 - cdf0(x1, 1.0 - x2, th)
    out = np.where(interior, inner, np.minimum(a1, a2) * (a1 > 0.0) * (a2 > 0.0))
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError(f"copula_cdf overflowed for {spec}")
    return _scalar_like(out, u1, u2)


def copula_logdensity(u1, u2, spec: CopulaSpec):
    """log c(u1, u2; spec) on the open square (0, 1)^2."""
    a1, a2 = _as_interior("copula_logdensity", u1, u2)
    a1, a2 = np.broadcast_arrays(a1, a2)
    base, th, rot = _dispatch(spec)
    if base is None:
        out = np.zeros_like(a1)
    else:
        logdens0 = base[1]
        if rot == 0:
            out = logdens0(a1, a2, th)
        elif rot == 90:
            out = logdens0(1.0 - a1, a2, th)
        elif rot == 180:
            out = logdens0(1.0 - a1, 1.0 - a2, th)
        else:
            out = logdens0(a1, 1.0 - a2, th)
    if np.any(np.isnan(out)) or np.any(out == np.inf):
        raise NumericOverflowError(
            f"copula_logdensity overflowed for {spec} (theta={spec.theta})"
        )
    return _scalar_like(out, u1, u2)


def copula_density(u1, u2, spec: CopulaSpec):
    """Copula density c(u1, u2; spec) = d2 C / du1 du2 on (0, 1)^2."""
    return _scalar_like(np.exp(copula_logdensity(u1, u2, spec)), u1, u2)


def cond_cdf(v, u, spec: CopulaSpec):
    """Conditional cdf C(v | u; spec) = dC(u, v)/du for interior u, v."""
    av, au = _as_interior("cond_cdf", v, u)
    av, au = np.broadcast_arrays(av, au)
    base, th, rot = _dispatch(spec)
    if base is None:
        out = av.copy()
    else:
        cond0 = base[2]
        if rot == 0:
            out = cond0(av, au, th)
        elif rot == 90:
            out = cond0(av, 1.0 - au, th)
        elif rot == 180:
            out = 1.0 - cond0(1.0 - av, 1.0 - au, th)
        else:
            out = 1.0 - cond0(1.0 - av, au, th)
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError(f"cond_cdf overflowed for {spec}")
    return _scalar_like(np.clip(out, 0.0, 1.0), v, u)


def inv_cond_cdf(q, u, spec: CopulaSpec):
    """Inverse conditional cdf: the v solving C(v | u; spec) = q.

    The closed form of each family is used; outputs are clipped into the
    open interval so that downstream quantile transforms stay defined.
    """
    aq, au = _as_interior("inv_cond_cdf", q, u)
    aq, au = np.broadcast_arrays(aq, au)
    base, th, rot = _dispatch(spec)
    if base is None:
        out = aq.copy()
    else:
        inv0 = base[3]
        if rot == 0:
            out = inv0(aq, au, th)
        elif rot == 90:
            out = inv0(aq, 1.0 - au, th)
        elif rot == 180:
            out = 1.0 - inv0(1.0 - aq, 1.0 - au, th)
        else:
            out = 1.0 - inv0(1.0 - aq, au, th)
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError(
            f"inv_cond_cdf overflowed for {spec} (theta={spec.theta}); "
            "inputs outside the family's stable range"
        )
    return _scalar_like(np.clip(out, _EPS, _ONE_MINUS), q, u)


# ---------------------------------------------------------------------------
# Kendall's tau conversions
# ---------------------------------------------------------------------------


def _debye1(theta: float) -> float:
    """First Debye function D1(theta) = (1/theta) int_0^theta t/(e^t - 1) dt."""
    integral, _ = quad(lambda t: t / math.expm1(t) if t != 0.0 else 1.0, 0.0, theta)
    return integral / theta


def _frank_tau(theta: float) -> float:
    if abs(theta) < FRANK_TAU_SERIES_EPS:
        return theta / 9.0
    sign = 1.0 if theta > 0 else -1.0
    th = abs(theta)
    return sign * (1.0 - 4.0 / th * (1.0 - _debye1(th)))


def theta_to_tau(spec: CopulaSpec) -> float:
    """Kendall's tau implied by the copula parameter.

    bvn: tau = (2/pi) arcsin(theta); frank: the Debye-integral form;
    clayton: theta/(theta+2), negated for rotations 90 and 270.
    """
    if spec.family == "bvn":
        return 2.0 / math.pi * math.asin(spec.theta)
    if spec.family == "frank":
        return _frank_tau(spec.theta)
    tau = spec.theta / (spec.theta + 2.0)
    return -tau if spec.rotation in (90, 270) else tau


def tau_to_theta(family: str, rotation: int, tau: float) -> CopulaSpec:
    """Copula spec whose parameter reproduces the requested Kendall's tau."""
    if not -1.0 <= tau <= 1.0:
        raise DomainError(f"tau must lie in [-1, 1], got {tau}")
    if family == "bvn":
        if rotation != 0:
            raise DomainError("bvn copula does not take a rotation")
        return CopulaSpec("bvn", math.sin(math.pi * tau / 2.0))
    if family == "frank":
        if rotation != 0:
            raise DomainError("frank copula does not take a rotation")
        if abs(tau) < FRANK_TAU_SERIES_EPS / 9.0:
            return CopulaSpec("frank", 9.0 * tau)
        limit = _frank_tau(FRANK_THETA_BRACKET)
        if abs(tau) > limit:
            raise DomainError(
                f"frank |tau| = {abs(tau):.4f} exceeds the invertible range "
                f"(|tau| <= {limit:.4f} on the theta bracket [-35, 35])"
            )
        theta = brentq(
            lambda t: _frank_tau(t) - tau,
            -FRANK_THETA_BRACKET,
            FRANK_THETA_BRACKET,
            xtol=1e-12,
            rtol=8.9e-16,
        )
        return CopulaSpec("frank", theta)
    if family == "clayton":
        if rotation not in ROTATIONS:
            raise DomainError(f"rotation must be one of {ROTATIONS}, got {rotation}")
        negative = rotation in (90, 270)
        if negative and tau > 0.0:
            raise DomainError(f"clayton rotation {rotation} requires tau <= 0, got {tau}")
        if not negative and tau < 0.0:
            raise DomainError(f"clayton rotation {rotation} requires tau >= 0, got {tau}")
        if abs(tau) >= 1.0:
            raise DomainError("clayton |tau| = 1 is the Frechet boundary; not parameterizable")
        theta = 2.0 * abs(tau) / (1.0 - abs(tau))
        if theta > CLAYTON_THETA_MAX:
            raise DomainError(
                f"clayton |tau| = {abs(tau):.5f} maps above the theta guard {CLAYTON_THETA_MAX:g}"
            )
        return CopulaSpec("clayton", theta, rotation)
    raise DomainError(f"unknown copula family {family!r}")
