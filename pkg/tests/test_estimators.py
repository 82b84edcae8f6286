"""Tests for the Luo/Wan, QE, BC and MLN estimators."""
import math

import numpy as np
import pytest
from scipy import special

from metamed.exceptions import EstimationError, InputError, ParameterDomainError
from metamed.models.schemas import DistFamily, Method, QuantileSummary, Scenario
from metamed.services.distributions import FittedDistribution, moments
from metamed.services.estimators import (
    ESTIMATORS,
    admissible_families,
    bc_estimate,
    bc_residual,
    estimate,
    luo_mean,
    luo_wan_estimate,
    mln_estimate,
    mln_loglik,
    naive_se,
    qe_estimate,
    qe_objective,
    wan_sd,
)
from tests.conftest import exact_summary

LN_MEAN = math.exp(5 + 0.25 ** 2 / 2)
LN_SD = LN_MEAN * math.sqrt(math.expm1(0.0625))


# --- Luo / Wan ---

def test_luo_mean_symmetric_inputs():
    assert luo_mean(QuantileSummary(scenario=Scenario.S2, n=37, q1=-2.0, q2=0.0, q3=2.0)) == pytest.approx(0.0)
    assert luo_mean(QuantileSummary(scenario=Scenario.S1, n=50, q_min=0.0, q2=5.0, q_max=10.0)) == pytest.approx(5.0)


def test_luo_mean_s2_weights():
    s = QuantileSummary(scenario=Scenario.S2, n=100, q1=1.0, q2=2.0, q3=4.0)
    w = 0.7 + 0.39 / 100
    assert luo_mean(s) == pytest.approx(w * 2.5 + (1 - w) * 2.0)


def test_luo_mean_s3_weights():
    n = 64
    s = QuantileSummary(scenario=Scenario.S3, n=n, q_min=0.0, q1=1.0, q2=2.0, q3=4.0, q_max=9.0)
    w1 = 2.2 / (2.2 + n ** 0.75)
    w2 = 0.7 - 0.72 / n ** 0.55
    assert luo_mean(s) == pytest.approx(w1 * 4.5 + w2 * 2.5 + (1 - w1 - w2) * 2.0)


def test_wan_sd_s2_limit():
    z = special.ndtri(0.75)
    s = QuantileSummary(scenario=Scenario.S2, n=10 ** 6, q1=-z, q2=0.0, q3=z)
    assert wan_sd(s) == pytest.approx(1.0, abs=1e-5)


def test_wan_sd_s3_averages_terms():
    n = 80
    s = QuantileSummary(scenario=Scenario.S3, n=n, q_min=1.0, q1=3.0, q2=4.0, q3=5.5, q_max=9.0)
    range_term = 8.0 / (2 * special.ndtri((n - 0.375) / (n + 0.25)))
    iqr_term = 2.5 / (2 * special.ndtri((0.75 * n - 0.125) / (n + 0.25)))
    assert wan_sd(s) == pytest.approx((range_term + iqr_term) / 2)


def test_wan_sd_degenerate_is_zero():
    assert wan_sd(QuantileSummary(scenario=Scenario.S2, n=20, q1=3.0, q2=3.0, q3=3.0)) == 0.0
    with pytest.raises(InputError):
        wan_sd(QuantileSummary(scenario=Scenario.S2, n=1, q1=1.0, q2=2.0, q3=3.0))


def test_luo_wan_estimate_fits_normal():
    e = luo_wan_estimate(QuantileSummary(scenario=Scenario.S2, n=100, q1=1.0, q2=2.0, q3=4.0))
    assert e.method is Method.LUO_WAN
    assert e.fitted.family is DistFamily.NORMAL
    assert e.fitted.params == (e.mean, e.sd)


# --- QE ---

def test_qe_exact_standard_normal_quartiles():
    z = 0.6744897501960817
    e = qe_estimate(QuantileSummary(scenario=Scenario.S2, n=1000, q1=-z, q2=0.0, q3=z))
    assert e.diagnostics["selected"] == "normal"
    assert e.mean == pytest.approx(0.0, abs=1e-6)
    assert e.sd == pytest.approx(1.0, rel=1e-4)
    assert e.diagnostics["families"]["normal"]["objective"] < 1e-10


@pytest.mark.parametrize("scenario", list(Scenario))
@pytest.mark.parametrize("n", [50, 1000])
def test_qe_location_scale_recovery(normal_5_1, scenario, n):
    e = qe_estimate(exact_summary(normal_5_1, n, scenario))
    assert e.mean == pytest.approx(5.0, rel=1e-3)
    assert e.sd == pytest.approx(1.0, rel=1e-3)


def test_qe_exact_lognormal(lognormal_5_025):
    e = qe_estimate(exact_summary(lognormal_5_025, 1000, Scenario.S2))
    assert e.mean == pytest.approx(LN_MEAN, rel=1e-3)
    assert e.sd == pytest.approx(LN_SD, rel=1e-3)


def test_qe_objective_is_locally_optimal(lognormal_5_025):
    s = exact_summary(lognormal_5_025, 200, Scenario.S3)
    e = qe_estimate(s)
    best = qe_objective(s, e.fitted.family, e.fitted.params)
    rng = np.random.default_rng(3)
    for _ in range(100):
        mu = rng.uniform(3.0, 7.0)
        sigma = rng.uniform(0.05, 1.0)
        assert best <= qe_objective(s, DistFamily.LOGNORMAL, (mu, sigma)) + 1e-12


def test_qe_admissibility():
    negative = QuantileSummary(scenario=Scenario.S2, n=50, q1=-1.0, q2=0.5, q3=2.0)
    assert admissible_families(negative) == [DistFamily.NORMAL]
    unit = QuantileSummary(scenario=Scenario.S2, n=50, q1=0.2, q2=0.3, q3=0.5)
    assert DistFamily.BETA in admissible_families(unit)
    wide = QuantileSummary(scenario=Scenario.S2, n=50, q1=2.0, q2=3.0, q3=5.0)
    assert DistFamily.BETA not in admissible_families(wide)
    assert DistFamily.GAMMA in admissible_families(wide)


def test_qe_selects_candidate_family():
    s = QuantileSummary(scenario=Scenario.S1, n=50, q_min=100.0, q2=150.0, q_max=260.0)
    e = qe_estimate(s)
    assert e.fitted.family.value in {"normal", "lognormal", "gamma", "beta", "weibull"}
    assert e.diagnostics["selected"] == e.fitted.family.value
    assert e.sd > 0


# --- BC ---

def test_bc_symmetric_quartiles_give_lambda_one():
    e = bc_estimate(QuantileSummary(scenario=Scenario.S2, n=200, q1=45.0, q2=50.0, q3=55.0))
    assert e.diagnostics["lambda"] == pytest.approx(1.0, abs=1e-6)
    assert e.mean == pytest.approx(50.0, rel=1e-6)


@pytest.mark.parametrize("scenario", [Scenario.S1, Scenario.S2, Scenario.S3])
def test_bc_lambda_on_exact_quantiles(lognormal_5_025, scenario):
    normal = FittedDistribution(DistFamily.NORMAL, (50.0, 5.0))
    assert bc_estimate(exact_summary(normal, 1000, scenario)).diagnostics["lambda"] == pytest.approx(1.0, abs=0.05)
    e = bc_estimate(exact_summary(lognormal_5_025, 1000, scenario))
    assert e.diagnostics["lambda"] == pytest.approx(0.0, abs=0.05)


def test_bc_lognormal_mean(lognormal_5_025):
    e = bc_estimate(exact_summary(lognormal_5_025, 1000, Scenario.S2))
    assert e.mean == pytest.approx(LN_MEAN, rel=0.02)
    assert e.fitted.family is DistFamily.BOXCOX_NORMAL


def test_bc_residual_vanishes_at_solution(lognormal_5_025):
    s = exact_summary(lognormal_5_025, 500, Scenario.S1)
    e = bc_estimate(s)
    assert bc_residual(s, e.diagnostics["lambda"]) == pytest.approx(0.0, abs=1e-9)


def test_bc_requires_positive_quantiles():
    with pytest.raises(ParameterDomainError, match="positive"):
        bc_estimate(QuantileSummary(scenario=Scenario.S2, n=50, q1=-1.0, q2=1.0, q3=2.0))


def test_bc_requires_spread():
    with pytest.raises(EstimationError):
        bc_estimate(QuantileSummary(scenario=Scenario.S2, n=50, q1=2.0, q2=2.0, q3=2.0))


# --- MLN ---

def test_mln_normal_quartiles(normal_5_1):
    e = mln_estimate(exact_summary(normal_5_1, 250, Scenario.S2))
    assert e.mean == pytest.approx(5.0, rel=0.02)
    assert e.sd == pytest.approx(1.0, rel=0.1)


def test_mln_lognormal_moments(lognormal_5_025):
    e = mln_estimate(exact_summary(lognormal_5_025, 1000, Scenario.S3))
    assert e.mean == pytest.approx(LN_MEAN, rel=0.02)
    assert e.sd == pytest.approx(LN_SD, rel=0.05)


def test_mln_lambda_maximizes_profile(lognormal_5_025):
    s = exact_summary(lognormal_5_025, 400, Scenario.S1)
    e = mln_estimate(s)
    best = mln_loglik(s, e.diagnostics["lambda"])
    for lam in np.linspace(-3.0, 3.0, 41):
        assert best >= mln_loglik(s, lam) - 1e-6


def test_mln_requires_positive_quantiles():
    with pytest.raises(ParameterDomainError):
        mln_estimate(QuantileSummary(scenario=Scenario.S1, n=50, q_min=0.0, q2=1.0, q_max=2.0))


# --- skewed past lognormal (lambda < 0) ---

SKEWED_S2 = QuantileSummary(scenario=Scenario.S2, n=65, q1=60.2, q2=125.0, q3=290.5)


@pytest.mark.parametrize("method", [Method.BC, Method.MLN])
def test_negative_lambda_gives_finite_moments(method):
    e = estimate(SKEWED_S2, method)
    assert e.diagnostics["lambda"] < 0
    assert SKEWED_S2.q2 < e.mean < 20 * SKEWED_S2.q3
    assert math.isfinite(e.sd) and e.sd > 0
    assert e.diagnostics["dropped_mass"] < 1e-3
    assert moments(e.fitted) == pytest.approx((e.mean, e.sd), rel=1e-9)


def test_mln_negative_lambda_matches_reported_fit():
    assert mln_estimate(SKEWED_S2).diagnostics["lambda"] == pytest.approx(-0.173, abs=0.02)


# --- scale equivariance and dispatch ---

@pytest.mark.parametrize("method", [Method.BC, Method.MLN])
def test_scale_equivariance(method):
    s = QuantileSummary(scenario=Scenario.S2, n=120, q1=12.0, q2=20.0, q3=41.0)
    scaled = s.replace_values([7.5 * v for v in s.values()])
    a, b = estimate(s, method), estimate(scaled, method)
    assert b.mean == pytest.approx(7.5 * a.mean, rel=1e-5)
    assert b.sd == pytest.approx(7.5 * a.sd, rel=1e-5)


def test_estimate_dispatch():
    s = QuantileSummary(scenario=Scenario.S2, n=100, q1=1.0, q2=2.0, q3=4.0)
    assert set(ESTIMATORS) == set(Method)
    assert estimate(s, "luo_wan").method is Method.LUO_WAN


def test_fitted_moments_match_estimate(lognormal_5_025):
    s = exact_summary(lognormal_5_025, 300, Scenario.S2)
    for method in (Method.QE, Method.BC, Method.MLN):
        e = estimate(s, method)
        mean, sd = moments(e.fitted)
        assert (mean, sd) == pytest.approx((e.mean, e.sd), rel=1e-9)


def test_naive_se():
    e = luo_wan_estimate(QuantileSummary(scenario=Scenario.S2, n=100, q1=1.0, q2=2.0, q3=4.0))
    assert naive_se(e, 100) * 10 == pytest.approx(e.sd)
    with pytest.raises(InputError):
        naive_se(e, 0)
