"""Tests for distribution families and the Box-Cox pair."""
import math

import numpy as np
import pytest
from scipy import special

from metamed.config import settings
from metamed.exceptions import InputError, ParameterDomainError
from metamed.models.schemas import DistFamily, DistSpec
from metamed.services.distributions import (
    FittedDistribution,
    boxcox,
    boxcox_inv,
    boxcox_normal_moments,
    boxcox_window,
    cdf,
    moments,
    quantile,
    sample,
)
from metamed.services.parallel import substream

FAMILIES = [
    FittedDistribution(DistFamily.NORMAL, (5.0, 1.0)),
    FittedDistribution(DistFamily.LOGNORMAL, (5.0, 0.25)),
    FittedDistribution(DistFamily.LOGNORMAL, (5.0, 1.0)),
    FittedDistribution(DistFamily.GAMMA, (2.0, 3.0)),
    FittedDistribution(DistFamily.BETA, (2.0, 5.0)),
    FittedDistribution(DistFamily.WEIBULL, (1.5, 4.0)),
    FittedDistribution(DistFamily.HALFNORMAL, (10.0,)),
    FittedDistribution(DistFamily.BOXCOX_NORMAL, (0.5, 3.0, 0.4)),
]
PROBS = np.array([0.001, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 0.999])


@pytest.mark.parametrize("d", FAMILIES, ids=lambda d: d.label())
def test_cdf_inverts_quantile(d):
    x = quantile(d, PROBS)
    assert np.all(np.diff(x) > 0)
    np.testing.assert_allclose(cdf(d, x), PROBS, atol=1e-8)


def test_known_values():
    assert cdf(FittedDistribution(DistFamily.NORMAL, (0.0, 1.0)), 0.0) == pytest.approx(0.5)
    ln = FittedDistribution(DistFamily.LOGNORMAL, (5.0, 0.25))
    assert cdf(ln, math.exp(5)) == pytest.approx(0.5)
    assert quantile(ln, 0.5) == pytest.approx(148.4131591, rel=1e-9)
    assert quantile(FittedDistribution(DistFamily.NORMAL, (0.0, 1.0)), 0.75) == pytest.approx(0.6744897502, abs=1e-9)


def test_gamma_cdf_matches_numerical_integration():
    from scipy import integrate

    d = FittedDistribution(DistFamily.GAMMA, (2.0, 3.0))
    value, _ = integrate.quad(lambda t: t * math.exp(-t / 3.0) / 9.0, 0.0, 1.0)
    assert cdf(d, 1.0) == pytest.approx(value, abs=1e-12)


def test_cdf_support_edges():
    d = FittedDistribution(DistFamily.GAMMA, (2.0, 3.0))
    assert cdf(d, -1.0) == 0.0
    assert cdf(d, math.inf) == pytest.approx(1.0)
    hn = FittedDistribution(DistFamily.HALFNORMAL, (10.0,))
    assert quantile(hn, 1e-12) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_quantile_rejects_probability_outside_unit_interval(p):
    with pytest.raises(ParameterDomainError):
        quantile(FAMILIES[0], p)


def test_invalid_parameters_rejected():
    with pytest.raises(ParameterDomainError, match="positive"):
        FittedDistribution(DistFamily.GAMMA, (0.0, 1.0))
    with pytest.raises(ParameterDomainError, match="parameter"):
        FittedDistribution(DistFamily.NORMAL, (0.0,))
    with pytest.raises(ParameterDomainError):
        FittedDistribution(DistFamily.NORMAL, (0.0, math.inf))
    # location parameters may be negative
    FittedDistribution(DistFamily.LOGNORMAL, (-2.0, 0.5))


def test_spec_roundtrip():
    spec = DistSpec(family="weibull", params=[1.5, 4.0])
    d = FittedDistribution.from_spec(spec)
    assert d.to_spec() == spec
    assert d.label() == "weibull(1.5, 4)"


def test_lognormal_moments():
    mean, sd = moments(FittedDistribution(DistFamily.LOGNORMAL, (5.0, 0.25)))
    assert mean == pytest.approx(math.exp(5.03125), rel=1e-12)
    assert sd == pytest.approx(mean * math.sqrt(math.exp(0.0625) - 1))
    assert sd == pytest.approx(38.9, abs=0.05)
    assert moments(FittedDistribution(DistFamily.NORMAL, (5.0, 1.0))) == (5.0, 1.0)


def test_halfnormal_is_parametrized_by_mean():
    mean, _ = moments(FittedDistribution(DistFamily.HALFNORMAL, (10.0,)))
    assert mean == 10.0


@pytest.mark.parametrize("d", FAMILIES, ids=lambda d: d.label())
def test_sample_moments_match(d):
    x = sample(d, 200_000, substream(7, 1))
    mean, sd = moments(d)
    assert abs(x.mean() - mean) < 5 * sd / math.sqrt(x.size)
    assert x.std(ddof=1) == pytest.approx(sd, rel=0.06)


def test_sample_is_reproducible():
    d = FAMILIES[1]
    a = sample(d, 50, substream(123, 4))
    b = sample(d, 50, substream(123, 4))
    c = sample(d, 50, substream(123, 5))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sample_normal_mean():
    x = sample(FittedDistribution(DistFamily.NORMAL, (0.0, 1.0)), 100_000, substream(1))
    assert abs(x.mean()) < 0.02


@pytest.mark.parametrize("n", [0, -3, 2.5])
def test_sample_rejects_bad_size(n):
    with pytest.raises(InputError):
        sample(FAMILIES[0], n, substream(0))


# --- Box-Cox ---

def test_boxcox_values():
    assert boxcox(1.0, 2.0) == pytest.approx(1.0)
    assert boxcox(0.0, 2.0) == pytest.approx(math.log(2))
    assert boxcox(1e-8, 2.0) == pytest.approx(math.log(2), abs=1e-6)


@pytest.mark.parametrize("lam", [-2.0, -1.0, 0.0, 0.5, 1.0, 2.0])
def test_boxcox_roundtrip_and_monotone(lam):
    x = np.linspace(0.1, 20.0, 200)
    y = boxcox(lam, x)
    assert np.all(np.diff(y) > 0)
    np.testing.assert_allclose(boxcox_inv(lam, y), x, rtol=1e-10)


def test_boxcox_domain_errors():
    with pytest.raises(ParameterDomainError):
        boxcox(0.5, np.array([1.0, 0.0]))
    with pytest.raises(ParameterDomainError):
        boxcox_inv(1.0, -2.0)
    # lambda = 0 inverts everywhere
    assert boxcox_inv(0.0, -50.0) == pytest.approx(math.exp(-50.0))


def _central_normal(tail):
    u = special.ndtri(1 - tail)
    return u, 1 - 2 * tail


def test_boxcox_normal_moments_log_branch():
    # lognormal moments over the central window of the normal
    u, mass = _central_normal(settings.boxcox_tail)
    mu, s = 5.0, 0.25
    m1 = math.exp(mu + s * s / 2) * (special.ndtr(u - s) - special.ndtr(-u - s)) / mass
    m2 = math.exp(2 * mu + 2 * s * s) * (special.ndtr(u - 2 * s) - special.ndtr(-u - 2 * s)) / mass
    mean, sd, dropped = boxcox_normal_moments(0.0, mu, s)
    assert mean == pytest.approx(m1, rel=1e-8)
    assert sd == pytest.approx(math.sqrt(m2 - m1 * m1), rel=1e-6)
    assert mean == pytest.approx(math.exp(5.03125), rel=1e-3)
    assert dropped == 0.0


def test_boxcox_normal_moments_identity_branch():
    u, mass = _central_normal(settings.boxcox_tail)
    mean, sd, dropped = boxcox_normal_moments(1.0, 5.0, 1.0)
    assert mean == pytest.approx(6.0, abs=1e-6)
    assert sd == pytest.approx(math.sqrt(1 - 2 * u * math.exp(-u * u / 2) / math.sqrt(2 * math.pi) / mass), abs=1e-6)
    assert dropped < 1e-8


def test_boxcox_normal_reports_dropped_mass():
    # half of Normal(-1, 1) lies below the lambda = 1 domain edge at -1
    _, _, dropped = boxcox_normal_moments(1.0, -1.0, 1.0)
    assert dropped == pytest.approx(0.5)


def test_boxcox_normal_moments_negative_lambda():
    d = FittedDistribution(DistFamily.BOXCOX_NORMAL, (-0.173, 3.27, 0.503))
    mean, sd, dropped = boxcox_normal_moments(*d.params)
    assert math.isfinite(mean) and math.isfinite(sd)
    # midpoint rule over the quantile function of the same law
    grid = (np.arange(200_000) + 0.5) / 200_000
    x = quantile(d, grid)
    assert mean == pytest.approx(x.mean(), rel=1e-3)
    assert sd == pytest.approx(x.std(), rel=1e-2)
    assert dropped < 1e-5


def test_negative_lambda_mean_grows_as_the_trim_shrinks(monkeypatch):
    params = (-0.173, 3.27, 0.503)
    wide, _, _ = boxcox_normal_moments(*params)
    monkeypatch.setattr(settings, "boxcox_tail", 1e-6)
    narrow, _, _ = boxcox_normal_moments(*params)
    assert math.isfinite(narrow)
    assert narrow > wide


def test_boxcox_normal_too_little_domain_mass():
    with pytest.raises(ParameterDomainError, match="too little"):
        boxcox_normal_moments(1.0, -20.0, 1.0)


def test_negative_lambda_samples_stay_inside_window():
    lam, mu, sigma = -0.173, 3.27, 0.503
    x = sample(FittedDistribution(DistFamily.BOXCOX_NORMAL, (lam, mu, sigma)), 50_000, substream(11, 2))
    _, hi, _ = boxcox_window(lam, mu, sigma)
    top = boxcox_inv(lam, mu + sigma * special.ndtri(hi))
    assert np.all(np.isfinite(x))
    assert x.max() <= top * (1 + 1e-9)
    assert x.min() > 0
