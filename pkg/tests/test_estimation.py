import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from copulameta import (
    CopulaSpec,
    DomainError,
    FitOptions,
    MarginSpec,
    ModelSpec,
    StudyRecord,
    fit,
    fit_countermonotonic,
    gauss_legendre,
    generate_meta_dataset,
    loglik_khs,
    standard_errors,
    tau_to_theta,
)
from copulameta.estimation import _KhsEvaluator, _make_loglik_fn, _start_values

from conftest import generate_studies

BETA_C270 = ModelSpec(
    MarginSpec("beta", 0.5, 0.1), MarginSpec("beta", 0.5, 0.1), CopulaSpec("clayton", 1.0, 270)
)
TRUE_BETA_C270 = ModelSpec(
    MarginSpec("beta", 0.7, 0.2), MarginSpec("beta", 0.9, 0.1), tau_to_theta("clayton", 270, -0.5)
)


def test_standard_errors_quadratic_case():
    scales = np.array([0.5, 2.0, 3.0])

    def loglik(x):
        return -0.5 * float(np.sum((x / scales) ** 2))

    se, cov = standard_errors(loglik, np.zeros(3))
    assert_allclose(se, scales, rtol=1e-6)
    assert_allclose(cov, np.diag(scales**2), atol=1e-6)


def test_standard_errors_non_positive_definite():
    se, cov = standard_errors(lambda x: float(x[0] ** 2 - x[1] ** 2), np.zeros(2))
    assert se is None and cov is None


def test_fit_recovers_truth_large_sample():
    rng = np.random.default_rng(100)
    data = list(generate_meta_dataset(5000, TRUE_BETA_C270, rng).studies)
    res = fit(data, BETA_C270)
    assert res.converged and not res.boundary
    truth = np.array([0.7, 0.9, 0.2, 0.1])
    # within 2 asymptotic SEs of the truth at N = 5000
    assert np.all(np.abs(res.estimates[:4] - truth) <= 2.0 * res.se[:4])
    assert abs(res.tau_hat - (-0.5)) <= 2.0 * res.tau_se
    assert res.loglik.total == pytest.approx(np.sum(res.loglik.per_study))


def test_fit_monotone_improvement_and_start_reporting():
    rng = np.random.default_rng(3)
    data = generate_studies(25, TRUE_BETA_C270, rng)
    res = fit(data, BETA_C270)
    rule = gauss_legendre(15)
    ll_fn = _make_loglik_fn(data, BETA_C270, rule)
    assert res.loglik.total >= ll_fn(res.start) - 1e-9
    assert res.start.shape == (5,)


def test_fit_degenerate_separation_no_crash():
    data = [StudyRecord(n, n, m, m) for n, m in [(40, 55), (61, 33), (52, 48), (45, 50), (38, 62)]]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = fit(data, BETA_C270)
    # perfect scores are a separation case: anything but a crash is allowed
    assert res.estimates[0] > 0.9 and res.estimates[1] > 0.9


def test_fit_boundary_triggers_countermonotonic_refit():
    rng = np.random.default_rng(17)
    true = ModelSpec(
        MarginSpec("beta", 0.75, 0.15), MarginSpec("beta", 0.85, 0.12), None, "countermonotonic"
    )
    data = list(generate_meta_dataset(30, true, rng).studies)
    res = fit(data, ModelSpec(
        MarginSpec("normal", 0.5, 1.0), MarginSpec("normal", 0.5, 1.0), CopulaSpec("bvn", -0.5)
    ))
    assert res.boundary
    assert res.tau_hat == -1.0
    assert res.model.variant == "countermonotonic"
    assert res.unconstrained is not None
    assert res.unconstrained.tau_hat < -0.97
    assert np.isnan(res.estimates[4])
    # margin estimates stay interpretable
    assert abs(res.estimates[0] - 0.75) < 0.1
    assert abs(res.estimates[1] - 0.85) < 0.1
    # dependence SE is omitted at the boundary
    assert res.tau_se is None


def test_fit_countermonotonic_direct():
    rng = np.random.default_rng(18)
    true = ModelSpec(
        MarginSpec("beta", 0.75, 0.15), MarginSpec("beta", 0.85, 0.12), None, "countermonotonic"
    )
    data = list(generate_meta_dataset(40, true, rng).studies)
    res = fit_countermonotonic(data, MarginSpec("beta", 0.5, 0.1), MarginSpec("beta", 0.5, 0.1))
    assert res.boundary and res.converged
    assert res.tau_hat == -1.0
    assert abs(res.estimates[0] - 0.75) < 0.08
    assert abs(res.estimates[1] - 0.85) < 0.08


def test_countermonotonic_worse_than_independence_on_independent_data():
    rng = np.random.default_rng(21)
    true = ModelSpec(
        MarginSpec("beta", 0.7, 0.2), MarginSpec("beta", 0.85, 0.15), CopulaSpec("bvn", 0.0)
    )
    data = list(generate_meta_dataset(40, true, rng).studies)
    counter = fit_countermonotonic(data, MarginSpec("beta", 0.5, 0.1), MarginSpec("beta", 0.5, 0.1))
    free = fit(data, BETA_C270)
    assert counter.converged
    assert counter.loglik.total < free.loglik.total


def test_fit_countermonotonic_single_study_no_crash():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = fit_countermonotonic(
            [StudyRecord(12, 20, 30, 40)], MarginSpec("beta", 0.5, 0.1), MarginSpec("beta", 0.5, 0.1)
        )
    assert (not res.converged) or res.se is None or np.nanmax(res.se) > 0.2


def test_fit_requires_two_studies():
    with pytest.raises(DomainError):
        fit([StudyRecord(3, 10, 8, 10)], BETA_C270)


def test_fit_warns_below_five_studies():
    rng = np.random.default_rng(5)
    data = generate_studies(3, TRUE_BETA_C270, rng)
    with pytest.warns(UserWarning, match="studies"):
        fit(data, BETA_C270, FitOptions(compute_se=False))


def test_reparameterization_invariance():
    rng = np.random.default_rng(8)
    data = generate_studies(30, TRUE_BETA_C270, rng)
    res_t = fit(data, BETA_C270, FitOptions(parameterization="transformed", compute_se=False))
    res_b = fit(data, BETA_C270, FitOptions(parameterization="bounded", compute_se=False))
    assert_allclose(res_t.loglik.total, res_b.loglik.total, atol=1e-6)

    normal_bvn = ModelSpec(
        MarginSpec("normal", 0.5, 1.0), MarginSpec("normal", 0.5, 1.0), CopulaSpec("bvn", -0.3)
    )
    res_t = fit(data, normal_bvn, FitOptions(parameterization="transformed", compute_se=False))
    res_b = fit(data, normal_bvn, FitOptions(parameterization="bounded", compute_se=False))
    assert_allclose(res_t.loglik.total, res_b.loglik.total, atol=1e-6)


def test_component_swap_symmetry():
    rng = np.random.default_rng(12)
    true = ModelSpec(
        MarginSpec("normal", 0.7, 1.1), MarginSpec("normal", 0.85, 0.9), CopulaSpec("bvn", -0.45)
    )
    data = generate_studies(30, true, rng)
    swapped_data = [StudyRecord(s.y2, s.n2, s.y1, s.n1) for s in data]
    template = ModelSpec(
        MarginSpec("normal", 0.5, 1.0), MarginSpec("normal", 0.5, 1.0), CopulaSpec("bvn", -0.3)
    )
    res = fit(data, template, FitOptions(compute_se=False))
    res_sw = fit(swapped_data, template, FitOptions(compute_se=False))
    assert_allclose(res.loglik.total, res_sw.loglik.total, atol=1e-6)
    assert_allclose(res.estimates[[1, 0, 3, 2]], res_sw.estimates[:4], atol=1e-4)
    assert_allclose(res.estimates[4], res_sw.estimates[4], atol=1e-4)


@pytest.mark.slow
def test_se_scaling_stabilizes():
    results = {}
    for n_studies in (500, 2000):
        rng = np.random.default_rng(55)
        data = list(generate_meta_dataset(n_studies, TRUE_BETA_C270, rng).studies)
        res = fit(data, BETA_C270)
        assert res.converged and res.se is not None
        results[n_studies] = res.se[:2] * np.sqrt(n_studies)
    ratio = results[500] / results[2000]
    assert np.all((ratio > 0.75) & (ratio < 1.33))


def test_comonotonic_side_flagged_without_refit():
    rng = np.random.default_rng(19)
    n_studies = 30
    u = rng.uniform(0.02, 0.98, n_studies)
    m1 = MarginSpec("beta", 0.6, 0.15)
    m2 = MarginSpec("beta", 0.75, 0.15)
    from copulameta import latent_probability

    data = []
    for ui in u:
        n = int(rng.integers(40, 120))
        n1 = max(int(rng.binomial(n, 0.43)), 1)
        n2 = max(n - n1, 1)
        x1 = float(latent_probability(ui, m1))
        x2 = float(latent_probability(ui, m2))  # comonotonic: same latent quantile
        data.append(
            StudyRecord(int(np.clip(round(n1 * x1), 0, n1)), n1, int(np.clip(round(n2 * x2), 0, n2)), n2)
        )
    res = fit(data, ModelSpec(m1, m2, CopulaSpec("bvn", 0.5)))
    assert res.boundary
    assert res.tau_hat > 0.97
    assert res.model.variant == "copula_mixed"  # no countermonotonic refit on this side


def test_khs_evaluator_matches_public_likelihood():
    rng = np.random.default_rng(23)
    data = generate_studies(20, TRUE_BETA_C270, rng)
    model = ModelSpec(
        MarginSpec("beta", 0.68, 0.18), MarginSpec("beta", 0.88, 0.12),
        CopulaSpec("clayton", 1.7, 270), "khs",
    )
    fast = _KhsEvaluator(data).per_study(model.margin1, model.margin2, model.copula)
    ref = loglik_khs(data, model)
    assert_allclose(fast, ref.per_study, atol=1e-10)


def test_sarmanov_fit_runs():
    rng = np.random.default_rng(29)
    data = generate_studies(30, TRUE_BETA_C270, rng)
    template = ModelSpec(MarginSpec("beta", 0.5, 0.1), MarginSpec("beta", 0.5, 0.1), None, "sarmanov")
    res = fit(data, template)
    assert res.converged
    assert np.isnan(res.tau_hat)  # no Kendall tau for the Sarmanov parameter
    assert res.model.variant == "sarmanov"


def test_start_values_reasonable():
    rng = np.random.default_rng(40)
    data = generate_studies(30, TRUE_BETA_C270, rng)
    start = _start_values(data, BETA_C270)
    assert 0.5 < start[0] < 0.9
    assert 0.75 < start[1] < 0.99
    assert start[4] > 0  # clayton theta start positive
