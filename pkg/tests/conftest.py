"""Shared fixtures and corpus builders for the test suite."""

import numpy as np
import pytest

from copulameta import (
    CopulaSpec,
    MarginSpec,
    ModelSpec,
    StudyRecord,
    inv_cond_cdf,
    latent_probability,
    tau_to_theta,
)

# (family, rotation) -> sign of the dependence the family models here
FAMILY_SIGNS = {
    ("bvn", 0): -1,
    ("frank", 0): -1,
    ("clayton", 0): 1,
    ("clayton", 90): -1,
    ("clayton", 180): 1,
    ("clayton", 270): -1,
}


def spec_for(family: str, rotation: int, tau_abs: float) -> CopulaSpec:
    return tau_to_theta(family, rotation, FAMILY_SIGNS[(family, rotation)] * tau_abs)


def central_dataset(spec: CopulaSpec, kind: str, pis, scales, n_lo=60, n_hi=110, size=8):
    """Deterministic dataset in the central regime of the model.

    Study accuracy ratios trend around the margin means with the
    concordance sign of the copula; group sizes are moderate.  This is the
    regime in which the 15-node rule reproduces log-likelihoods to four
    decimal places (tail-extreme studies -- perfect arms at large n, joint
    tail discordant pairs -- do not satisfy that claim and are excluded by
    construction).
    """
    sign = -1 if spec.theta < 0 or spec.rotation in (90, 270) else 1
    d1 = np.linspace(-0.03, 0.03, size)
    d2 = -d1 if sign < 0 else d1
    ns = np.linspace(n_lo, n_hi, size).astype(int)
    studies = []
    for a, b, n in zip(pis[0] + d1, pis[1] + 0.75 * d2, ns):
        n1 = int(round(n * 0.43))
        n2 = n - n1
        studies.append(StudyRecord(int(round(n1 * a)), n1, int(round(n2 * b)), n2))
    model = ModelSpec(
        MarginSpec(kind, pis[0], scales[0]), MarginSpec(kind, pis[1], scales[1]), spec
    )
    return studies, model


def quadrature_corpus():
    """The 50-case corpus behind the nq=15 vs nq=30 four-decimal claim."""
    cases = []
    for (family, rotation), sign in FAMILY_SIGNS.items():
        for kind in ("beta", "normal"):
            scales = (0.2, 0.15) if kind == "beta" else (1.0, 1.0)
            for tau_abs in (0.3, 0.45):
                for shift in (0.0, 0.02):
                    spec = spec_for(family, rotation, tau_abs)
                    pis = (0.68 + shift, 0.80 - shift)
                    cases.append(central_dataset(spec, kind, pis, scales))
    for kind, scales in (("beta", (0.2, 0.15)), ("normal", (1.0, 1.0))):
        cases.append(central_dataset(CopulaSpec("bvn", 0.0), kind, (0.7, 0.8), scales))
    assert len(cases) == 50
    return cases


def generate_studies(n_studies, model, rng, n_lo=30, n_hi=120, prevalence=0.43):
    """Small standalone generator used by tests that predate the simulation
    module (keeps those oracles independent of it)."""
    studies = []
    for _ in range(n_studies):
        n = int(rng.integers(n_lo, n_hi + 1))
        n1 = min(max(int(rng.binomial(n, prevalence)), 1), n - 1)
        n2 = n - n1
        u1 = float(np.clip(rng.uniform(), 1e-12, 1 - 1e-12))
        w = float(np.clip(rng.uniform(), 1e-12, 1 - 1e-12))
        u2 = float(inv_cond_cdf(w, u1, model.copula))
        x1 = float(latent_probability(u1, model.margin1))
        x2 = float(latent_probability(u2, model.margin2))
        y1 = int(np.clip(np.round(n1 * x1), 0, n1))
        y2 = int(np.clip(np.round(n2 * x2), 0, n2))
        studies.append(StudyRecord(y1, n1, y2, n2))
    return studies


@pytest.fixture(scope="session")
def corpus():
    return quadrature_corpus()
