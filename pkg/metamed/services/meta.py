"""Common- and random-effects meta-analysis.

Within-study variances are treated as known. tau^2 is estimated by REML (Fisher scoring
started from DerSimonian-Laird), its CI by the Q-profile method, and the pooled mean's CI
by the Wald method.
"""
import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import optimize, stats

from metamed.exceptions import ConvergenceError, InputError
from metamed.models.schemas import EffectModel, EstimateWithSE, MetaResult, StudyInput

logger = logging.getLogger(__name__)

REML_TOL = 1e-8
REML_MAX_ITER = 100
MAX_HALVINGS = 30
QPROFILE_XTOL = 1e-12


@dataclass(frozen=True)
class Tau2Interval:
    lo: float
    hi: float
    degenerate: bool = False  # Q(0) below the lower chi-square quantile


@dataclass(frozen=True)
class RemlFit:
    tau2: float
    iterations: int
    trace: Tuple[float, ...]


def _arrays(studies: Sequence[StudyInput]) -> Tuple[np.ndarray, np.ndarray]:
    if len(studies) < 2:
        raise InputError(f"meta-analysis needs at least 2 studies, got {len(studies)}")
    y = np.array([s.y for s in studies], dtype=float)
    v = np.array([s.se for s in studies], dtype=float) ** 2
    return y, v


def pool(studies: Sequence[StudyInput], tau2: float = 0.0) -> Tuple[float, float]:
    """Inverse-variance weighted mean and its SE; tau2 = 0 is the common-effect model."""
    if tau2 < 0:
        raise InputError("tau2 must be nonnegative")
    y, v = _arrays(studies)
    w = 1.0 / (v + tau2)
    return float(np.sum(w * y) / np.sum(w)), float(np.sum(w) ** -0.5)


def q_generalized(studies: Sequence[StudyInput], tau2: float) -> float:
    """Sum of (y_k - mu(tau2))^2 / (se_k^2 + tau2)."""
    y, v = _arrays(studies)
    return _q_gen(y, v, tau2)


def _q_gen(y: np.ndarray, v: np.ndarray, tau2: float) -> float:
    w = 1.0 / (v + tau2)
    mu = np.sum(w * y) / np.sum(w)
    return float(np.sum(w * (y - mu) ** 2))


def dl_tau2(studies: Sequence[StudyInput]) -> float:
    """DerSimonian-Laird moment estimate, truncated at 0."""
    y, v = _arrays(studies)
    w = 1.0 / v
    q = _q_gen(y, v, 0.0)
    c = np.sum(w) - np.sum(w ** 2) / np.sum(w)
    return float(max(0.0, (q - (len(y) - 1)) / c))


def reml_loglik(y: np.ndarray, v: np.ndarray, tau2: float) -> float:
    """Restricted log-likelihood up to an additive constant."""
    w = 1.0 / (v + tau2)
    sw = np.sum(w)
    mu = np.sum(w * y) / sw
    return float(-0.5 * (np.sum(np.log(v + tau2)) + math.log(sw) + np.sum(w * (y - mu) ** 2)))


def reml_fit(studies: Sequence[StudyInput], tol: float = REML_TOL, max_iter: int = REML_MAX_ITER) -> RemlFit:
    y, v = _arrays(studies)
    tau2 = dl_tau2(studies)
    trace = [tau2]
    for it in range(1, max_iter + 1):
        w = 1.0 / (v + tau2)
        sw, sw2 = np.sum(w), np.sum(w ** 2)
        mu = np.sum(w * y) / sw
        tr_p = sw - sw2 / sw
        ypy = np.sum((w * (y - mu)) ** 2)
        tr_pp = sw2 - 2 * np.sum(w ** 3) / sw + (sw2 / sw) ** 2
        step = float((ypy - tr_p) / tr_pp)

        ll_old = reml_loglik(y, v, tau2)
        proposal = max(0.0, tau2 + step)
        for _ in range(MAX_HALVINGS):
            if reml_loglik(y, v, proposal) >= ll_old - 1e-12 * (1 + abs(ll_old)):
                break
            step /= 2
            proposal = max(0.0, tau2 + step)

        delta = proposal - tau2
        tau2 = proposal
        trace.append(tau2)
        if abs(delta) < tol:
            return RemlFit(tau2, it, tuple(trace))

    raise ConvergenceError(f"REML did not converge in {max_iter} iterations", trace)


def reml_tau2(studies: Sequence[StudyInput]) -> float:
    return reml_fit(studies).tau2


def tau2_ci_qprofile(studies: Sequence[StudyInput], level: float = 0.95) -> Tau2Interval:
    """Bounds where the generalized Q statistic meets the chi-square(K-1) quantiles."""
    y, v = _arrays(studies)
    df = len(y) - 1
    alpha = 1 - level
    chi_hi = float(stats.chi2.ppf(1 - alpha / 2, df))  # defines the lower bound
    chi_lo = float(stats.chi2.ppf(alpha / 2, df))  # defines the upper bound
    q0 = _q_gen(y, v, 0.0)

    if q0 < chi_lo:
        return Tau2Interval(0.0, 0.0, degenerate=True)

    cap = 100 * float(np.max(v)) + 100 * float(np.var(y, ddof=1))
    for _ in range(60):
        if _q_gen(y, v, cap) < chi_lo:
            break
        cap *= 2
    else:
        raise ConvergenceError("Q-profile upper bound not bracketed", [cap])

    def solve(target: float) -> float:
        return optimize.bisect(
            lambda t: _q_gen(y, v, t) - target, 0.0, cap, xtol=QPROFILE_XTOL, rtol=1e-14, maxiter=500
        )

    hi = solve(chi_lo) if q0 > chi_lo else 0.0
    lo = solve(chi_hi) if q0 > chi_hi else 0.0
    return Tau2Interval(lo, hi)


def typical_variance(studies: Sequence[StudyInput]) -> float:
    """(K-1) sum(w) / ((sum w)^2 - sum(w^2)), w = 1/se^2."""
    _, v = _arrays(studies)
    w = 1.0 / v
    denom = np.sum(w) ** 2 - np.sum(w ** 2)
    if denom <= 0:
        raise InputError("typical within-study variance is undefined for these weights")
    return float((len(w) - 1) * np.sum(w) / denom)


def i_squared(studies: Sequence[StudyInput], tau2: float) -> float:
    if tau2 < 0:
        raise InputError("tau2 must be nonnegative")
    s2 = typical_variance(studies)
    return float(tau2 / (tau2 + s2))


def wald_ci_mu(mu: float, se: float, level: float = 0.95) -> Tuple[float, float]:
    if not se > 0:
        raise InputError("Wald CI needs se > 0")
    z = float(stats.norm.ppf(1 - (1 - level) / 2))
    return mu - z * se, mu + z * se


def difference_of_means(g1: EstimateWithSE, g2: EstimateWithSE, label: str = "") -> StudyInput:
    """Group 1 minus group 2 for independent groups."""
    return StudyInput(y=g1.mean - g2.mean, se=math.hypot(g1.se, g2.se), label=label)


def random_effects(studies: Sequence[StudyInput], level: float = 0.95) -> MetaResult:
    y, v = _arrays(studies)
    fit = reml_fit(studies)
    mu, se = pool(studies, fit.tau2)
    ci = tau2_ci_qprofile(studies, level)
    w = 1.0 / (v + fit.tau2)
    q0 = _q_gen(y, v, 0.0)
    df = len(y) - 1
    logger.info("Random-effects fit: K=%d tau2=%.4g mu=%.4g (%d iterations)", len(y), fit.tau2, mu, fit.iterations)
    return MetaResult(
        model=EffectModel.RANDOM,
        k=len(y),
        level=level,
        mu_pool=mu,
        se_pool=se,
        mu_ci=wald_ci_mu(mu, se, level),
        tau2=fit.tau2,
        tau2_ci=(ci.lo, ci.hi),
        tau2_ci_degenerate=ci.degenerate,
        i2=i_squared(studies, fit.tau2),
        typical_var=typical_variance(studies),
        q_stat=q0,
        q_df=df,
        q_pvalue=float(stats.chi2.sf(q0, df)),
        weights=[float(x) for x in w / np.sum(w)],
        labels=[s.label for s in studies],
        iterations=fit.iterations,
    )


def common_effect(studies: Sequence[StudyInput], level: float = 0.95) -> MetaResult:
    y, v = _arrays(studies)
    mu, se = pool(studies, 0.0)
    w = 1.0 / v
    q0 = _q_gen(y, v, 0.0)
    df = len(y) - 1
    return MetaResult(
        model=EffectModel.COMMON,
        k=len(y),
        level=level,
        mu_pool=mu,
        se_pool=se,
        mu_ci=wald_ci_mu(mu, se, level),
        tau2=0.0,
        tau2_ci=(0.0, 0.0),
        i2=0.0,
        typical_var=typical_variance(studies),
        q_stat=q0,
        q_df=df,
        q_pvalue=float(stats.chi2.sf(q0, df)),
        weights=[float(x) for x in w / np.sum(w)],
        labels=[s.label for s in studies],
    )


def meta_analyze(studies: Sequence[StudyInput], model: EffectModel = EffectModel.RANDOM, level: float = 0.95) -> MetaResult:
    if EffectModel(model) is EffectModel.COMMON:
        return common_effect(studies, level)
    return random_effects(studies, level)
