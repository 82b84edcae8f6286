"""Parametric families, the Box-Cox transform pair and seeded sampling.

Parametrizations:
    normal          (mu, sigma)
    lognormal       (meanlog, sdlog)
    gamma           (shape, scale)
    beta            (a, b)
    weibull         (shape, scale)
    halfnormal      (mean,)              scale = mean * sqrt(pi / 2)
    boxcox_normal   (lambda, mu, sigma)  Normal(mu, sigma) on the Box-Cox scale,
                                         restricted to lambda * y + 1 > 0 and trimmed
                                         to the central 1 - 2*tail of that mass
"""
import logging
import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy import integrate, special

from metamed.config import settings
from metamed.exceptions import InputError, ParameterDomainError
from metamed.models.schemas import DistFamily, DistSpec

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

ARITY = {
    DistFamily.NORMAL: 2,
    DistFamily.LOGNORMAL: 2,
    DistFamily.GAMMA: 2,
    DistFamily.BETA: 2,
    DistFamily.WEIBULL: 2,
    DistFamily.HALFNORMAL: 1,
    DistFamily.BOXCOX_NORMAL: 3,
}

# Index of the location-like parameter, which may be any real.
_FREE_PARAMS = {
    DistFamily.NORMAL: (0,),
    DistFamily.LOGNORMAL: (0,),
    DistFamily.BOXCOX_NORMAL: (0, 1),
}

HALFNORMAL_SCALE = math.sqrt(math.pi / 2)
MIN_DOMAIN_MASS = 1e-8
QUAD_RTOL = 1e-10
_INV_SQRT_2PI = 1.0 / math.sqrt(2 * math.pi)


@dataclass(frozen=True)
class FittedDistribution:
    family: DistFamily
    params: Tuple[float, ...]

    def __post_init__(self):
        family = DistFamily(self.family)
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "params", params)
        if len(params) != ARITY[family]:
            raise ParameterDomainError(
                f"{family.value} takes {ARITY[family]} parameter(s), got {len(params)}"
            )
        if not all(math.isfinite(p) for p in params):
            raise ParameterDomainError(f"{family.value} parameters must be finite: {params}")
        free = _FREE_PARAMS.get(family, ())
        for i, p in enumerate(params):
            if i not in free and p <= 0:
                raise ParameterDomainError(
                    f"{family.value} parameter {i} must be positive, got {p}"
                )

    @classmethod
    def from_spec(cls, spec: DistSpec) -> "FittedDistribution":
        return cls(spec.family, tuple(spec.params))

    def to_spec(self) -> DistSpec:
        return DistSpec(family=self.family, params=list(self.params))

    def label(self) -> str:
        return self.to_spec().label()


# --- Box-Cox ---

def boxcox(lam: float, x: ArrayLike) -> ArrayLike:
    """g_lambda(x) = (x**lambda - 1) / lambda, log(x) at lambda = 0."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ParameterDomainError("Box-Cox transform needs strictly positive values")
    out = special.boxcox(x, lam)
    return float(out) if out.ndim == 0 else out


def boxcox_inv(lam: float, y: ArrayLike) -> ArrayLike:
    y = np.asarray(y, dtype=float)
    if lam != 0 and np.any(~(lam * y + 1 > 0)):
        raise ParameterDomainError(
            f"Box-Cox inverse undefined where lambda*y + 1 <= 0 (lambda={lam})"
        )
    out = special.inv_boxcox(y, lam)
    return float(out) if out.ndim == 0 else out


def boxcox_bounds(lam: float) -> Tuple[float, float]:
    """Transformed-scale interval on which the inverse exists."""
    if lam > 0:
        return -1.0 / lam, math.inf
    if lam < 0:
        return -math.inf, -1.0 / lam
    return -math.inf, math.inf


def _std_bounds(lam: float, mu: float, sigma: float) -> Tuple[float, float]:
    lo, hi = boxcox_bounds(lam)
    return (lo - mu) / sigma, (hi - mu) / sigma


def boxcox_window(lam: float, mu: float, sigma: float) -> Tuple[float, float, float]:
    """Normal probabilities (p_lo, p_hi) bounding the Box-Cox normal, and the dropped mass.

    The window is the central 1 - 2*settings.boxcox_tail of the normal mass inside
    lambda*z + 1 > 0; dropped is the normal mass outside that region.
    """
    a, b = _std_bounds(lam, mu, sigma)
    pa, pb = float(special.ndtr(a)), float(special.ndtr(b))
    if not pb - pa > MIN_DOMAIN_MASS:
        raise ParameterDomainError(
            f"Box-Cox domain holds too little normal mass (lambda={lam}, mu={mu}, sigma={sigma})"
        )
    trim = settings.boxcox_tail * (pb - pa)
    return pa + trim, pb - trim, float(special.ndtr(a) + special.ndtr(-b))


# --- Core evaluation ---

def family_ppf(family: DistFamily, params: Tuple[float, ...], p: ArrayLike) -> np.ndarray:
    """Vectorized inverse CDF without argument checks (hot path for fitting)."""
    p = np.asarray(p, dtype=float)
    if family is DistFamily.NORMAL:
        mu, sigma = params
        return mu + sigma * special.ndtri(p)
    if family is DistFamily.LOGNORMAL:
        mu, s = params
        return np.exp(mu + s * special.ndtri(p))
    if family is DistFamily.GAMMA:
        k, theta = params
        return theta * special.gammaincinv(k, p)
    if family is DistFamily.BETA:
        a, b = params
        return special.betaincinv(a, b, p)
    if family is DistFamily.WEIBULL:
        k, scale = params
        return scale * (-np.log1p(-p)) ** (1.0 / k)
    if family is DistFamily.HALFNORMAL:
        (mean,) = params
        return mean * HALFNORMAL_SCALE * math.sqrt(2.0) * special.erfinv(p)
    if family is DistFamily.BOXCOX_NORMAL:
        lam, mu, sigma = params
        lo, hi, _ = boxcox_window(lam, mu, sigma)
        z = mu + sigma * special.ndtri(lo + p * (hi - lo))
        return special.inv_boxcox(z, lam)
    raise ParameterDomainError(f"unsupported family {family}")


def _cdf(family: DistFamily, params: Tuple[float, ...], x: np.ndarray) -> np.ndarray:
    if family is DistFamily.NORMAL:
        mu, sigma = params
        return special.ndtr((x - mu) / sigma)

    positive = x > 0
    safe = np.where(positive, x, 1.0)
    if family is DistFamily.LOGNORMAL:
        mu, s = params
        out = special.ndtr((np.log(safe) - mu) / s)
    elif family is DistFamily.GAMMA:
        k, theta = params
        out = special.gammainc(k, safe / theta)
    elif family is DistFamily.WEIBULL:
        k, scale = params
        out = -np.expm1(-((safe / scale) ** k))
    elif family is DistFamily.HALFNORMAL:
        scale = params[0] * HALFNORMAL_SCALE
        out = special.erf(safe / (scale * math.sqrt(2.0)))
    elif family is DistFamily.BETA:
        a, b = params
        inside = np.clip(safe, 0.0, 1.0)
        out = np.where(x >= 1, 1.0, special.betainc(a, b, inside))
    elif family is DistFamily.BOXCOX_NORMAL:
        lam, mu, sigma = params
        lo, hi, _ = boxcox_window(lam, mu, sigma)
        with np.errstate(over="ignore", invalid="ignore"):
            u = (special.boxcox(np.where(np.isinf(safe), 1.0, safe), lam) - mu) / sigma
        out = np.clip((special.ndtr(u) - lo) / (hi - lo), 0.0, 1.0)
        out = np.where(np.isposinf(x), 1.0, out)
    else:
        raise ParameterDomainError(f"unsupported family {family}")
    return np.where(positive, out, 0.0)


def cdf(d: FittedDistribution, x: ArrayLike) -> ArrayLike:
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)):
        raise ParameterDomainError("cdf argument is NaN")
    out = _cdf(d.family, d.params, arr)
    return float(out) if out.ndim == 0 else out


def quantile(d: FittedDistribution, p: ArrayLike) -> ArrayLike:
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0) & (arr < 1))):
        raise ParameterDomainError("quantile needs 0 < p < 1")
    out = family_ppf(d.family, d.params, arr)
    return float(out) if out.ndim == 0 else out


def _window_integral(fn, lo: float, hi: float) -> float:
    value, _ = integrate.quad(
        lambda u: fn(u) * math.exp(-0.5 * u * u) * _INV_SQRT_2PI,
        lo, hi, epsabs=0.0, epsrel=QUAD_RTOL, limit=200,
    )
    return float(value)


def boxcox_normal_moments(lam: float, mu: float, sigma: float) -> Tuple[float, float, float]:
    """Mean and SD of the Box-Cox normal by adaptive quadrature over its window.

    Integrates on the standard-normal scale between the window bounds, so the result
    stays finite for lambda < 0, where the untrimmed mean diverges at the domain edge.
    Returns (mean, sd, dropped_mass).
    """
    lo, hi, dropped = boxcox_window(lam, mu, sigma)
    u_lo, u_hi = float(special.ndtri(lo)), float(special.ndtri(hi))
    norm = hi - lo

    def back(u: float) -> float:
        return float(special.inv_boxcox(mu + sigma * u, lam))

    mean = _window_integral(back, u_lo, u_hi) / norm
    var = _window_integral(lambda u: (back(u) - mean) ** 2, u_lo, u_hi) / norm
    if not (math.isfinite(mean) and math.isfinite(var)):
        raise ParameterDomainError(
            f"Box-Cox normal moments not finite (lambda={lam}, mu={mu}, sigma={sigma})"
        )
    return mean, math.sqrt(max(var, 0.0)), dropped


def moments(d: FittedDistribution) -> Tuple[float, float]:
    """Closed-form (mean, sd); the Box-Cox normal uses quadrature over its window."""
    family, params = d.family, d.params
    if family is DistFamily.NORMAL:
        return params[0], params[1]
    if family is DistFamily.LOGNORMAL:
        mu, s = params
        mean = math.exp(mu + s * s / 2)
        return mean, mean * math.sqrt(math.expm1(s * s))
    if family is DistFamily.GAMMA:
        k, theta = params
        return k * theta, math.sqrt(k) * theta
    if family is DistFamily.BETA:
        a, b = params
        total = a + b
        return a / total, math.sqrt(a * b / (total * total * (total + 1)))
    if family is DistFamily.WEIBULL:
        k, scale = params
        g1 = special.gamma(1 + 1 / k)
        g2 = special.gamma(1 + 2 / k)
        return scale * g1, scale * math.sqrt(max(g2 - g1 * g1, 0.0))
    if family is DistFamily.HALFNORMAL:
        (mean,) = params
        scale = mean * HALFNORMAL_SCALE
        return mean, scale * math.sqrt(1 - 2 / math.pi)
    if family is DistFamily.BOXCOX_NORMAL:
        mean, sd, _ = boxcox_normal_moments(*params)
        return mean, sd
    raise ParameterDomainError(f"unsupported family {family}")


def sample(d: FittedDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n i.i.d. values; reproducible for a given generator state."""
    if int(n) != n or n < 1:
        raise InputError(f"sample size must be a positive integer, got {n}")
    n = int(n)
    family, params = d.family, d.params
    if family is DistFamily.NORMAL:
        return rng.normal(params[0], params[1], n)
    if family is DistFamily.LOGNORMAL:
        return rng.lognormal(params[0], params[1], n)
    if family is DistFamily.GAMMA:
        return rng.gamma(params[0], params[1], n)
    if family is DistFamily.BETA:
        return rng.beta(params[0], params[1], n)
    if family is DistFamily.WEIBULL:
        return params[1] * rng.weibull(params[0], n)
    if family is DistFamily.HALFNORMAL:
        return np.abs(rng.normal(0.0, params[0] * HALFNORMAL_SCALE, n))
    if family is DistFamily.BOXCOX_NORMAL:
        return family_ppf(family, params, rng.uniform(size=n))
    raise ParameterDomainError(f"unsupported family {family}")
