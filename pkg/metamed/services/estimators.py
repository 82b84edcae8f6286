"""Mean/SD estimators from quantile summaries.

luo_mean and wan_sd are the closed-form building blocks. qe_estimate fits candidate
families by least squares on the reported quantiles; bc_estimate and mln_estimate pick a
Box-Cox power, estimate a normal on the transformed scale and back-transform.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Tuple

import numpy as np
from scipy import optimize, special

from metamed.config import settings
from metamed.exceptions import EstimationError, InputError, ParameterDomainError
from metamed.models.schemas import DistFamily, Method, QuantileSummary, Scenario
from metamed.services.distributions import (
    FittedDistribution,
    boxcox,
    boxcox_normal_moments,
    family_ppf,
    moments,
)

logger = logging.getLogger(__name__)

QE_CANDIDATES = (
    DistFamily.NORMAL,
    DistFamily.LOGNORMAL,
    DistFamily.GAMMA,
    DistFamily.BETA,
    DistFamily.WEIBULL,
)
QE_TOL = 1e-8
LAMBDA_XTOL = 1e-10
_PENALTY = 1e100
_LOG_BOUND = 20.0  # box for log-scale parameters
_JITTER = ((0.0, 0.0), (0.25, -0.25), (-0.25, 0.25))
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class MeanSdEstimate:
    mean: float
    sd: float
    method: Method
    fitted: FittedDistribution
    diagnostics: Dict[str, Any] = field(default_factory=dict, compare=False, hash=False)


# --- Luo / Wan ---

def luo_mean(s: QuantileSummary) -> float:
    n = s.n
    if s.scenario is Scenario.S1:
        w = 4.0 / (4.0 + n ** 0.75)
        return w * (s.q_min + s.q_max) / 2 + (1 - w) * s.q2
    if s.scenario is Scenario.S2:
        w = 0.7 + 0.39 / n
        return w * (s.q1 + s.q3) / 2 + (1 - w) * s.q2
    w1 = 2.2 / (2.2 + n ** 0.75)
    w2 = 0.7 - 0.72 / n ** 0.55
    return w1 * (s.q_min + s.q_max) / 2 + w2 * (s.q1 + s.q3) / 2 + (1 - w1 - w2) * s.q2


def _range_divisor(n: int) -> float:
    return 2 * special.ndtri((n - 0.375) / (n + 0.25))


def _iqr_divisor(n: int) -> float:
    return 2 * special.ndtri((0.75 * n - 0.125) / (n + 0.25))


def wan_sd(s: QuantileSummary) -> float:
    if s.n < 2:
        raise InputError("Wan SD needs n >= 2")
    if s.scenario is Scenario.S1:
        return float((s.q_max - s.q_min) / _range_divisor(s.n))
    if s.scenario is Scenario.S2:
        return float((s.q3 - s.q1) / _iqr_divisor(s.n))
    range_term = (s.q_max - s.q_min) / _range_divisor(s.n)
    iqr_term = (s.q3 - s.q1) / _iqr_divisor(s.n)
    return float((range_term + iqr_term) / 2)


def luo_wan_estimate(s: QuantileSummary) -> MeanSdEstimate:
    mean, sd = luo_mean(s), wan_sd(s)
    if not sd > 0:
        raise EstimationError("reported quantiles have no spread", {"sd": sd})
    return MeanSdEstimate(mean, sd, Method.LUO_WAN, FittedDistribution(DistFamily.NORMAL, (mean, sd)))


# --- QE ---

def qe_targets(s: QuantileSummary) -> Tuple[np.ndarray, np.ndarray]:
    """Probabilities and values of the reported quantiles."""
    probs = {"q_min": 1.0 / s.n, "q1": 0.25, "q2": 0.5, "q3": 0.75, "q_max": 1.0 - 1.0 / s.n}
    return np.array([probs[name] for name in s.fields()]), np.array(s.values())


def _objective_scale(q: np.ndarray) -> float:
    spread = float(q[-1] - q[0])
    return spread if spread > 0 else max(float(np.abs(q).max()), 1.0)


def _objective(family, params, p, q, scale) -> float:
    with np.errstate(all="ignore"):
        fitted = family_ppf(family, params, p)
    if not np.all(np.isfinite(fitted)):
        return _PENALTY
    return float(np.sum(((fitted - q) / scale) ** 2))


def qe_objective(s: QuantileSummary, family: DistFamily, params: Tuple[float, ...]) -> float:
    """Sum of squared quantile residuals, scaled by the reported spread."""
    p, q = qe_targets(s)
    return _objective(family, tuple(params), p, q, _objective_scale(q))


def admissible_families(s: QuantileSummary) -> List[DistFamily]:
    q = np.array(s.values())
    positive = bool(np.all(q > 0))
    unit = bool(np.all((q > 0) & (q < 1)))
    out = []
    for family in QE_CANDIDATES:
        if family in (DistFamily.LOGNORMAL, DistFamily.GAMMA, DistFamily.WEIBULL) and not positive:
            continue
        if family is DistFamily.BETA and not unit:
            continue
        out.append(family)
    return out


def _location_family(family: DistFamily) -> bool:
    return family in (DistFamily.NORMAL, DistFamily.LOGNORMAL)


def _to_params(family: DistFamily, theta) -> Tuple[float, float]:
    if _location_family(family):
        return float(theta[0]), math.exp(theta[1])
    return math.exp(theta[0]), math.exp(theta[1])


def _clip_theta(family: DistFamily, theta: np.ndarray) -> np.ndarray:
    lo = np.array([-np.inf if _location_family(family) else -_LOG_BOUND, -_LOG_BOUND])
    hi = np.array([np.inf if _location_family(family) else _LOG_BOUND, _LOG_BOUND])
    return np.clip(theta, lo, hi)


def _to_theta(family: DistFamily, params) -> np.ndarray:
    if _location_family(family):
        theta = np.array([params[0], math.log(params[1])])
    else:
        theta = np.log(np.asarray(params, dtype=float))
    return _clip_theta(family, theta)


def _start_params(family: DistFamily, s: QuantileSummary, p, q) -> Tuple[float, float]:
    """Method-of-moments start from Luo/Wan on the raw quantiles."""
    m = luo_mean(s)
    sd = wan_sd(s)
    if not sd > 0:
        sd = max(abs(m) * 1e-3, 1e-6)
    z = special.ndtri(p)

    if family is DistFamily.NORMAL:
        slope, intercept = np.polyfit(z, q, 1)
        return (float(intercept), float(slope)) if slope > 0 else (m, sd)
    if family is DistFamily.LOGNORMAL:
        slope, intercept = np.polyfit(z, np.log(q), 1)
        if slope > 0:
            return float(intercept), float(slope)
        s2 = math.log1p((sd / m) ** 2)
        return math.log(m) - s2 / 2, math.sqrt(s2)
    if family is DistFamily.GAMMA:
        return (m / sd) ** 2, sd * sd / m
    if family is DistFamily.BETA:
        c = m * (1 - m) / (sd * sd) - 1
        if not c > 0:
            c = 2.0
        return m * c, (1 - m) * c
    if family is DistFamily.WEIBULL:
        k = min(max((sd / m) ** -1.086, 0.1), 50.0)
        return k, m / special.gamma(1 + 1 / k)
    raise ParameterDomainError(f"{family.value} is not a QE candidate")


def _fit_family(family: DistFamily, s: QuantileSummary, restarts: int):
    p, q = qe_targets(s)
    scale = _objective_scale(q)
    theta0 = _to_theta(family, _start_params(family, s, p, q))
    step = np.array([math.exp(theta0[1]) if _location_family(family) else 1.0, 1.0])
    if _location_family(family):
        bounds = [(None, None), (-_LOG_BOUND, _LOG_BOUND)]
    else:
        bounds = [(-_LOG_BOUND, _LOG_BOUND), (-_LOG_BOUND, _LOG_BOUND)]

    def fn(theta):
        return _objective(family, _to_params(family, theta), p, q, scale)

    best = None
    for r in range(max(1, restarts)):
        jitter = np.array(_JITTER[r % len(_JITTER)]) * (1 + r // len(_JITTER))
        start = _clip_theta(family, theta0 + jitter * step)
        res = optimize.minimize(
            fn,
            start,
            method="Nelder-Mead",
            bounds=bounds,
            options={"xatol": QE_TOL, "fatol": QE_TOL, "maxiter": 2000, "maxfev": 4000},
        )
        if best is None or res.fun < best.fun:
            best = res
    return _to_params(family, best.x), float(best.fun), bool(best.success)


def qe_estimate(s: QuantileSummary, restarts: int = 0) -> MeanSdEstimate:
    """Fit each admissible candidate by quantile least squares and keep the best fit."""
    if s.scenario in (Scenario.S1, Scenario.S3) and s.n < 5:
        raise InputError("QE needs n >= 5 when extremes are reported")
    restarts = restarts or settings.qe_restarts

    fits: Dict[DistFamily, Tuple[Tuple[float, float], float]] = {}
    report: Dict[str, Any] = {}
    for family in admissible_families(s):
        try:
            params, value, converged = _fit_family(family, s, restarts)
            FittedDistribution(family, params)
        except (ArithmeticError, ValueError) as exc:
            report[family.value] = {"error": str(exc)}
            continue
        if not value < _PENALTY:
            report[family.value] = {"error": "objective not finite"}
            continue
        fits[family] = (params, value)
        report[family.value] = {"objective": value, "converged": converged}

    if not fits:
        raise EstimationError("no candidate family could be fitted", {"families": report})

    family = min(fits, key=lambda f: fits[f][1])
    fitted = FittedDistribution(family, fits[family][0])
    mean, sd = moments(fitted)
    logger.debug("QE selected %s (objective=%.3g)", family.value, fits[family][1])
    return MeanSdEstimate(
        mean, sd, Method.QE, fitted, {"selected": family.value, "families": report}
    )


# --- Box-Cox lambda search ---

@dataclass(frozen=True)
class LambdaFit:
    lam: float
    criterion: float
    at_boundary: bool = False


def _lambda_grid() -> np.ndarray:
    return np.linspace(-settings.lambda_bound, settings.lambda_bound, settings.lambda_grid)


def _minimize_lambda(fn: Callable[[float], float], what: str) -> LambdaFit:
    """Grid scan, then bounded Brent refinement around the best grid point."""
    grid = _lambda_grid()
    values = np.array([fn(lam) for lam in grid])
    values[~np.isfinite(values)] = np.inf
    if not np.isfinite(values).any():
        raise EstimationError(f"{what} is not finite anywhere on the lambda grid")
    i = int(np.argmin(values))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(fn, bounds=(lo, hi), method="bounded", options={"xatol": LAMBDA_XTOL})
    lam, value = (float(res.x), float(res.fun)) if res.fun <= values[i] else (float(grid[i]), float(values[i]))
    return LambdaFit(lam, value, abs(abs(lam) - settings.lambda_bound) < 1e-6)


def _skew_residual(g_lo: float, g_mid: float, g_hi: float) -> float:
    return (g_hi + g_lo - 2 * g_mid) / (g_hi - g_lo)


def _check_positive(s: QuantileSummary, method: str) -> None:
    if any(v <= 0 for v in s.values()):
        raise ParameterDomainError(f"{method} needs strictly positive quantiles, got {s.values()}")


def _check_spread(s: QuantileSummary) -> None:
    values = s.values()
    if values[-1] <= values[0] or (s.q1 is not None and s.q3 <= s.q1):
        raise EstimationError("reported quantiles have no spread", {"quantiles": values})


def bc_residual(s: QuantileSummary, lam: float) -> float:
    """Equidistance residual on the Box-Cox scale, normalized by the transformed spread.

    S1/S2: skewness of the three transformed points (zero at the solution).
    S3: sum of the squared quartile and min/max residuals.
    """
    g = dict(zip(s.fields(), boxcox(lam, np.array(s.values()))))
    if s.scenario is Scenario.S1:
        return float(_skew_residual(g["q_min"], g["q2"], g["q_max"]))
    if s.scenario is Scenario.S2:
        return float(_skew_residual(g["q1"], g["q2"], g["q3"]))
    quartile = _skew_residual(g["q1"], g["q2"], g["q3"])
    extremes = _skew_residual(g["q_min"], g["q2"], g["q_max"])
    return float(quartile ** 2 + extremes ** 2)


def _solve_equidistance(s: QuantileSummary) -> LambdaFit:
    grid = _lambda_grid()
    r = np.array([bc_residual(s, lam) for lam in grid])

    roots = []
    for i in range(len(grid) - 1):
        a, b = r[i], r[i + 1]
        if not (np.isfinite(a) and np.isfinite(b)):
            continue
        if a == 0:
            roots.append(float(grid[i]))
        elif a * b < 0:
            roots.append(
                optimize.brentq(lambda lam: bc_residual(s, lam), grid[i], grid[i + 1], xtol=1e-12, rtol=1e-15)
            )
    if r[-1] == 0:
        roots.append(float(grid[-1]))
    if roots:
        lam = min(roots, key=lambda v: abs(v - 1.0))
        return LambdaFit(lam, 0.0)

    ends = [(abs(r[0]), grid[0]), (abs(r[-1]), grid[-1])]
    ends = [(v, lam) for v, lam in ends if np.isfinite(v)]
    if not ends:
        raise EstimationError("equidistance residual not finite on the lambda grid")
    value, lam = min(ends)
    logger.warning("No Box-Cox root in [-%g, %g]; using boundary lambda=%g", settings.lambda_bound, settings.lambda_bound, lam)
    return LambdaFit(float(lam), float(value), at_boundary=True)


def _back_transform(method: Method, lam: float, mu: float, sigma: float, diagnostics) -> MeanSdEstimate:
    mean, sd, dropped = boxcox_normal_moments(lam, mu, sigma)
    fitted = FittedDistribution(DistFamily.BOXCOX_NORMAL, (lam, mu, sigma))
    diagnostics = {**diagnostics, "mu": mu, "sigma": sigma, "dropped_mass": dropped}
    return MeanSdEstimate(mean, sd, method, fitted, diagnostics)


def bc_estimate(s: QuantileSummary) -> MeanSdEstimate:
    _check_positive(s, "BC")
    _check_spread(s)
    if s.scenario is Scenario.S3:
        fit = _minimize_lambda(lambda lam: bc_residual(s, lam), "BC criterion")
    else:
        fit = _solve_equidistance(s)

    t = s.replace_values(boxcox(fit.lam, np.array(s.values())))
    mu, sigma = luo_mean(t), wan_sd(t)
    if not sigma > 0:
        raise EstimationError("zero spread on the Box-Cox scale", {"lambda": fit.lam})
    return _back_transform(
        Method.BC, fit.lam, mu, sigma,
        {"lambda": fit.lam, "lambda_at_boundary": fit.at_boundary},
    )


# --- MLN ---

def _log_normal_interval(a: float, b: float) -> float:
    """log(Phi(b) - Phi(a)) evaluated in the tail that keeps precision."""
    if not b > a:
        return -math.inf
    if a > 0:
        a, b = -b, -a
    la, lb = special.log_ndtr(a), special.log_ndtr(b)
    return float(lb + np.log1p(-np.exp(la - lb)))


def mln_loglik(s: QuantileSummary, lam: float, mu: float = None, sigma: float = None) -> float:
    """Order-statistic log-likelihood of the reported quantiles under a Box-Cox normal.

    Without mu/sigma, Luo/Wan estimates on the transformed quantiles are plugged in.
    Densities carry the Box-Cox Jacobian so values are comparable across lambda.
    """
    q = np.array(s.values())
    z = boxcox(lam, q)
    if mu is None or sigma is None:
        t = s.replace_values(z)
        mu, sigma = luo_mean(t), wan_sd(t)
    if not sigma > 0:
        return -math.inf

    u = (z - mu) / sigma
    n = s.n
    log_density = (
        float(np.sum(-0.5 * u * u)) - len(u) * (math.log(sigma) + _HALF_LOG_2PI)
        + (lam - 1) * float(np.sum(np.log(q)))
    )
    if s.scenario is Scenario.S1:
        body = (n / 2 - 1) * (_log_normal_interval(u[0], u[1]) + _log_normal_interval(u[1], u[2]))
    elif s.scenario is Scenario.S2:
        body = (
            (n / 4) * float(special.log_ndtr(u[0]))
            + (n / 4 - 1) * (_log_normal_interval(u[0], u[1]) + _log_normal_interval(u[1], u[2]))
            + (n / 4) * float(special.log_ndtr(-u[2]))
        )
    else:
        body = (n / 4 - 1) * sum(_log_normal_interval(u[i], u[i + 1]) for i in range(4))
    total = body + log_density
    return total if not math.isnan(total) else -math.inf


def mln_estimate(s: QuantileSummary) -> MeanSdEstimate:
    _check_positive(s, "MLN")
    if s.n < 5:
        raise InputError("MLN needs n >= 5")

    # 1. lambda from the profile with plug-in transformed-scale estimates
    fit = _minimize_lambda(lambda lam: -mln_loglik(s, lam), "MLN likelihood")
    lam = fit.lam

    # 2. conditional MLE of (mu, sigma), parametrized relative to the plug-in values
    t = s.replace_values(boxcox(lam, np.array(s.values())))
    mu0, sigma0 = luo_mean(t), wan_sd(t)
    if not sigma0 > 0:
        raise EstimationError("zero spread on the Box-Cox scale", {"lambda": lam})

    def nll(theta):
        value = mln_loglik(s, lam, mu0 + sigma0 * theta[0], sigma0 * math.exp(theta[1]))
        return -value if math.isfinite(value) else _PENALTY

    res = optimize.minimize(
        nll, np.zeros(2), method="Nelder-Mead",
        options={"xatol": LAMBDA_XTOL, "fatol": 1e-12, "maxiter": 4000},
    )
    plug_in = nll(np.zeros(2))
    refined = bool(res.fun <= plug_in)
    a, b = (res.x if refined else (0.0, 0.0))
    mu, sigma = mu0 + sigma0 * a, sigma0 * math.exp(b)
    if not refined:
        logger.warning("MLN conditional MLE did not improve on plug-in values (lambda=%g)", lam)
    return _back_transform(
        Method.MLN, lam, mu, sigma,
        {"lambda": lam, "lambda_at_boundary": fit.at_boundary, "loglik": -fit.criterion,
         "mle_refined": refined},
    )


ESTIMATORS: Dict[Method, Callable[[QuantileSummary], MeanSdEstimate]] = {
    Method.QE: qe_estimate,
    Method.BC: bc_estimate,
    Method.MLN: mln_estimate,
    Method.LUO_WAN: luo_wan_estimate,
}


def estimate(s: QuantileSummary, method: Method) -> MeanSdEstimate:
    return ESTIMATORS[Method(method)](s)


def naive_se(e: MeanSdEstimate, n: int) -> float:
    """sd / sqrt(n): the SE a sample mean would have."""
    if n < 1:
        raise InputError("naive SE needs n >= 1")
    return e.sd / math.sqrt(n)
