import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate
from scipy.stats import multivariate_normal

from copulameta import (
    CopulaSpec,
    DomainError,
    cond_cdf,
    copula_cdf,
    copula_density,
    inv_cond_cdf,
    swapped,
    tau_to_theta,
    theta_to_tau,
)
from copulameta.quadrature import gauss_legendre

ALL_SPECS = [
    CopulaSpec("bvn", -0.63),
    CopulaSpec("bvn", 0.4),
    CopulaSpec("frank", 4.2),
    CopulaSpec("frank", -7.0),
    CopulaSpec("clayton", 2.3, 0),
    CopulaSpec("clayton", 2.3, 90),
    CopulaSpec("clayton", 0.8, 180),
    CopulaSpec("clayton", 5.0, 270),
]


# ---------------------------------------------------------------------------
# construction / domain errors
# ---------------------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(DomainError):
        CopulaSpec("bvn", 1.2)
    with pytest.raises(DomainError):
        CopulaSpec("clayton", -0.5)
    with pytest.raises(DomainError):
        CopulaSpec("clayton", 2e4)
    with pytest.raises(DomainError):
        CopulaSpec("frank", 1.0, rotation=90)
    with pytest.raises(DomainError):
        CopulaSpec("gumbel", 1.0)
    with pytest.raises(DomainError):
        CopulaSpec("clayton", 1.0, rotation=45)


def test_density_open_interval_contract():
    spec = CopulaSpec("bvn", 0.3)
    with pytest.raises(DomainError):
        copula_density(0.0, 0.5, spec)
    with pytest.raises(DomainError):
        cond_cdf(1.0, 0.5, spec)
    with pytest.raises(DomainError):
        inv_cond_cdf(0.5, 0.0, spec)
    with pytest.raises(DomainError):
        copula_cdf(-0.1, 0.5, spec)


# ---------------------------------------------------------------------------
# cdf values
# ---------------------------------------------------------------------------


def test_cdf_uniform_margin_boundaries():
    for spec in ALL_SPECS:
        assert_allclose(copula_cdf(0.3, 1.0, spec), 0.3, atol=1e-14)
        assert_allclose(copula_cdf(1.0, 0.42, spec), 0.42, atol=1e-14)
        assert copula_cdf(0.0, 0.7, spec) == 0.0
        assert copula_cdf(1.0, 1.0, spec) == 1.0


def test_cdf_independence_product():
    assert_allclose(copula_cdf(0.5, 0.5, CopulaSpec("bvn", 0.0)), 0.25, rtol=1e-14)
    assert_allclose(copula_cdf(0.3, 0.8, CopulaSpec("frank", 0.0)), 0.24, rtol=1e-12)


def test_clayton_cdf_closed_form():
    # Archimedean closed form at (0.4, 0.7), theta = 2
    expected = (0.4**-2 + 0.7**-2 - 1.0) ** -0.5
    assert_allclose(copula_cdf(0.4, 0.7, CopulaSpec("clayton", 2.0)), expected, rtol=1e-12)


def test_clayton_cdf_against_density_integral():
    spec = CopulaSpec("clayton", 2.0)
    value, err = integrate.dblquad(
        lambda v, u: copula_density(u, v, spec), 1e-10, 0.4, 1e-10, 0.7, epsabs=1e-10
    )
    assert err < 1e-8
    assert_allclose(copula_cdf(0.4, 0.7, spec), value, atol=1e-8)


def test_bvn_cdf_accuracy_contract():
    # >= 1e-10 agreement with an independent bivariate-normal cdf
    rng = np.random.default_rng(5)
    from scipy.special import ndtri

    for _ in range(60):
        u1, u2 = rng.uniform(0.01, 0.99, 2)
        rho = rng.uniform(-0.999, 0.999)
        ref = multivariate_normal(mean=[0, 0], cov=[[1, rho], [rho, 1]]).cdf(
            [ndtri(u1), ndtri(u2)]
        )
        assert_allclose(copula_cdf(u1, u2, CopulaSpec("bvn", rho)), ref, atol=1e-10)


def test_frechet_bounds_grid():
    grid = np.linspace(0.02, 0.98, 50)
    u1, u2 = np.meshgrid(grid, grid)
    lower = np.maximum(u1 + u2 - 1.0, 0.0)
    upper = np.minimum(u1, u2)
    sweep = ALL_SPECS + [
        CopulaSpec("bvn", -0.99),
        CopulaSpec("bvn", 0.99),
        CopulaSpec("frank", 20.0),
        CopulaSpec("frank", -20.0),
        CopulaSpec("clayton", 30.0, 0),
        CopulaSpec("clayton", 30.0, 90),
        CopulaSpec("clayton", 0.05, 270),
    ]
    for spec in sweep:
        c = copula_cdf(u1, u2, spec)
        assert np.all(c >= lower - 1e-12), spec
        assert np.all(c <= upper + 1e-12), spec


# ---------------------------------------------------------------------------
# density
# ---------------------------------------------------------------------------


def test_density_independence():
    assert_allclose(copula_density(0.3, 0.8, CopulaSpec("bvn", 0.0)), 1.0, rtol=1e-14)
    # Frank below the independence guard
    assert_allclose(copula_density(0.5, 0.5, CopulaSpec("frank", 1e-7)), 1.0, rtol=1e-14)
    assert_allclose(copula_density(0.2, 0.6, CopulaSpec("clayton", 1e-9)), 1.0, rtol=1e-14)


def test_clayton90_density_rotation_identity():
    base = CopulaSpec("clayton", 1.0)
    rot = CopulaSpec("clayton", 1.0, 90)
    assert_allclose(
        copula_density(0.2, 0.9, rot), copula_density(1.0 - 0.2, 0.9, base), rtol=1e-13
    )


@pytest.mark.parametrize("rotation,map_", [(90, lambda u, v: (1 - u, v)),
                                           (180, lambda u, v: (1 - u, 1 - v)),
                                           (270, lambda u, v: (u, 1 - v))])
def test_rotation_identities_on_grid(rotation, map_):
    grid = np.linspace(0.05, 0.95, 21)
    u1, u2 = np.meshgrid(grid, grid)
    base = CopulaSpec("clayton", 2.3)
    rot = CopulaSpec("clayton", 2.3, rotation)
    m1, m2 = map_(u1, u2)
    assert_allclose(copula_density(u1, u2, rot), copula_density(m1, m2, base), atol=1e-12)


@pytest.mark.parametrize(
    "spec",
    [
        CopulaSpec("bvn", -0.45),
        CopulaSpec("bvn", 0.3),
        CopulaSpec("frank", 4.2),
        CopulaSpec("frank", -7.0),
        CopulaSpec("frank", -20.0),
        CopulaSpec("clayton", 0.1, 0),
        CopulaSpec("clayton", 0.1, 90),
        CopulaSpec("clayton", 0.1, 180),
        CopulaSpec("clayton", 0.1, 270),
    ],
)
def test_density_integrates_to_one(spec):
    # the 60-point rule resolves the density wherever it is bounded-ish;
    # tail-dependent corners (clayton at large theta, |rho| near 1) have an
    # integrable O(1/u) spike a fixed rule cannot capture at 1e-6 -- those
    # are covered by the rectangle-mass identity below
    rule = gauss_legendre(60)
    u1 = rule.nodes[:, None]
    u2 = rule.nodes[None, :]
    total = rule.weights @ copula_density(u1, u2, spec) @ rule.weights
    assert_allclose(total, 1.0, atol=1e-6)


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_density_mass_matches_cdf_rectangles(spec):
    # integral of the density over [a,b]^2 equals the cdf rectangle mass
    a, b = 0.02, 0.98
    x, w = np.polynomial.legendre.leggauss(60)
    t = a + (b - a) * (x + 1) / 2
    ww = w * (b - a) / 2
    mass_gl = ww @ copula_density(t[:, None], t[None, :], spec) @ ww
    mass_cdf = (
        copula_cdf(b, b, spec)
        - copula_cdf(a, b, spec)
        - copula_cdf(b, a, spec)
        + copula_cdf(a, a, spec)
    )
    assert_allclose(mass_gl, mass_cdf, atol=1e-8)


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_density_matches_cdf_second_differences(spec):
    grid = np.linspace(0.15, 0.85, 8)
    h = 5e-5
    for u in grid:
        for v in grid:
            num = (
                copula_cdf(u + h, v + h, spec)
                - copula_cdf(u + h, v - h, spec)
                - copula_cdf(u - h, v + h, spec)
                + copula_cdf(u - h, v - h, spec)
            ) / (4.0 * h * h)
            assert_allclose(copula_density(u, v, spec), num, atol=1e-5)


# ---------------------------------------------------------------------------
# conditionals
# ---------------------------------------------------------------------------


def test_cond_cdf_trivials():
    assert_allclose(cond_cdf(0.7, 0.4, CopulaSpec("bvn", 0.0)), 0.7, rtol=1e-14)
    assert_allclose(cond_cdf(0.5, 0.5, CopulaSpec("bvn", 0.5)), 0.5, atol=1e-14)


def test_frank_cond_cdf_finite_difference():
    spec = CopulaSpec("frank", 4.0)
    h = 1e-6
    num = (copula_cdf(0.3 + h, 0.6, spec) - copula_cdf(0.3 - h, 0.6, spec)) / (2 * h)
    assert_allclose(cond_cdf(0.6, 0.3, spec), num, atol=1e-8)


def test_cond_cdf_monotone_in_v():
    v = np.linspace(0.01, 0.99, 200)
    for spec in ALL_SPECS:
        c = cond_cdf(v, 0.37, spec)
        assert np.all(np.diff(c) > -1e-14), spec


def test_inv_cond_trivials():
    assert_allclose(inv_cond_cdf(0.25, 0.8, CopulaSpec("bvn", 0.0)), 0.25, rtol=1e-14)
    assert_allclose(inv_cond_cdf(0.5, 0.5, CopulaSpec("bvn", 0.5)), 0.5, atol=1e-14)


def test_clayton_inv_cond_closed_form():
    expected = ((0.3 ** (-2.0 / 3.0) - 1.0) * 0.6**-2 + 1.0) ** -0.5
    assert_allclose(inv_cond_cdf(0.3, 0.6, CopulaSpec("clayton", 2.0)), expected, rtol=1e-12)


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_cond_inv_roundtrip(spec):
    rng = np.random.default_rng(11)
    q, u = rng.uniform(1e-3, 1 - 1e-3, (2, 10_000))
    v = inv_cond_cdf(q, u, spec)
    assert np.all((v > 0) & (v < 1))
    assert_allclose(cond_cdf(v, u, spec), q, atol=1e-10)


def test_roundtrip_with_random_theta():
    rng = np.random.default_rng(23)
    for family, rotation, lo, hi in [
        ("bvn", 0, -0.98, 0.98),
        ("frank", 0, -25.0, 25.0),
        ("clayton", 0, 0.05, 15.0),
        ("clayton", 90, 0.05, 15.0),
        ("clayton", 180, 0.05, 15.0),
        ("clayton", 270, 0.05, 15.0),
    ]:
        for _ in range(5):
            theta = rng.uniform(lo, hi)
            if family == "frank" and abs(theta) < 0.1:
                theta = 0.5
            spec = CopulaSpec(family, theta, rotation)
            q, u = rng.uniform(1e-3, 1 - 1e-3, (2, 2000))
            assert_allclose(cond_cdf(inv_cond_cdf(q, u, spec), u, spec), q, atol=1e-10)


def test_swapped_specs():
    assert swapped(CopulaSpec("clayton", 2.0, 90)) == CopulaSpec("clayton", 2.0, 270)
    assert swapped(CopulaSpec("clayton", 2.0, 270)) == CopulaSpec("clayton", 2.0, 90)
    assert swapped(CopulaSpec("clayton", 2.0, 180)) == CopulaSpec("clayton", 2.0, 180)
    assert swapped(CopulaSpec("bvn", -0.5)) == CopulaSpec("bvn", -0.5)
    # exchanging arguments of the 90-rotation gives the 270-rotation
    spec = CopulaSpec("clayton", 1.7, 90)
    assert_allclose(
        copula_cdf(0.3, 0.8, spec), copula_cdf(0.8, 0.3, swapped(spec)), rtol=1e-13
    )


# ---------------------------------------------------------------------------
# tau conversions
# ---------------------------------------------------------------------------


def _debye_gl(theta, n=200):
    # independent oracle: high-order Gauss-Legendre on the Debye integrand
    x, w = np.polynomial.legendre.leggauss(n)
    t = (x + 1) / 2 * theta
    f = np.where(t == 0.0, 1.0, t / np.expm1(t))
    return float(np.sum(w * f) * theta / 2) / theta


def test_theta_to_tau_values():
    assert theta_to_tau(CopulaSpec("bvn", 0.0)) == 0.0
    assert_allclose(theta_to_tau(CopulaSpec("clayton", 2.0, 0)), 0.5, rtol=1e-14)
    assert_allclose(theta_to_tau(CopulaSpec("clayton", 2.0, 90)), -0.5, rtol=1e-14)
    assert_allclose(theta_to_tau(CopulaSpec("clayton", 2.0, 270)), -0.5, rtol=1e-14)
    expected = 1.0 - 4.0 / 5.0 * (1.0 - _debye_gl(5.0))
    assert_allclose(theta_to_tau(CopulaSpec("frank", 5.0)), expected, atol=1e-10)
    # odd in theta
    assert_allclose(
        theta_to_tau(CopulaSpec("frank", -5.0)), -theta_to_tau(CopulaSpec("frank", 5.0)), rtol=1e-12
    )


def test_tau_to_theta_values():
    assert_allclose(tau_to_theta("bvn", 0, -0.5).theta, np.sin(-0.25 * np.pi), rtol=1e-14)
    assert_allclose(tau_to_theta("clayton", 270, -0.5).theta, 2.0, rtol=1e-12)
    frank = tau_to_theta("frank", 0, -0.5)
    assert_allclose(theta_to_tau(frank), -0.5, atol=1e-10)


def test_tau_roundtrip_sweep():
    for family, rotation, taus in [
        ("bvn", 0, np.linspace(-0.95, 0.95, 21)),
        ("frank", 0, np.linspace(-0.85, 0.85, 21)),
        ("clayton", 0, np.linspace(0.02, 0.9, 15)),
        ("clayton", 90, -np.linspace(0.02, 0.9, 15)),
        ("clayton", 180, np.linspace(0.02, 0.9, 15)),
        ("clayton", 270, -np.linspace(0.02, 0.9, 15)),
    ]:
        for tau in taus:
            spec = tau_to_theta(family, rotation, float(tau))
            assert_allclose(theta_to_tau(spec), tau, atol=1e-8)


def test_tau_to_theta_sign_errors():
    with pytest.raises(DomainError):
        tau_to_theta("clayton", 90, 0.3)
    with pytest.raises(DomainError):
        tau_to_theta("clayton", 0, -0.3)
    with pytest.raises(DomainError):
        tau_to_theta("frank", 0, 0.95)
    # Frank tau = 0 maps to the independence limit
    assert tau_to_theta("frank", 0, 0.0).theta == 0.0
