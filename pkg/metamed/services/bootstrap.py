"""Parametric bootstrap SEs and the Monte Carlo true-SE oracle."""
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from metamed.exceptions import (
    BootstrapInstabilityError,
    InputError,
    MetamedError,
    OracleUnreliableError,
)
from metamed.models.schemas import BootstrapConfig, Method, QuantileSummary, Scenario
from metamed.services.distributions import FittedDistribution, sample
from metamed.services.estimators import MeanSdEstimate, estimate
from metamed.services.parallel import map_indexed, substream
from metamed.services.summaries import extract_summary

logger = logging.getLogger(__name__)

Statistic = Callable[[np.ndarray], float]

ORACLE_MAX_FAILURE = 0.05
ORACLE_MIN_REPS = 100


@dataclass(frozen=True)
class BootstrapResult:
    se: float
    replicates: Tuple[float, ...]  # successful replicate estimates, in replicate order
    n_failed: int
    B: int

    @property
    def diagnostics(self) -> Dict[str, Any]:
        quartiles = (
            [float(v) for v in np.quantile(self.replicates, [0.25, 0.5, 0.75])]
            if self.replicates else []
        )
        return {
            "B": self.B,
            "n_failed": self.n_failed,
            "n_ok": len(self.replicates),
            "replicate_quartiles": quartiles,
        }


def _safe(statistic: Statistic, x: np.ndarray) -> Optional[float]:
    try:
        value = float(statistic(x))
    except (MetamedError, ValueError, ArithmeticError) as exc:
        logger.debug("Replicate failed: %s", exc)
        return None
    return value if math.isfinite(value) else None


def estimator_statistic(scenario: Scenario, method: Method) -> Statistic:
    """Raw sample -> summary of `scenario` -> full estimator -> mean."""
    def statistic(x: np.ndarray) -> float:
        return estimate(extract_summary(x, scenario), method).mean
    return statistic


def parametric_bootstrap(
    fitted: FittedDistribution,
    n: int,
    statistic: Statistic,
    cfg: BootstrapConfig,
    workers: int = 0,
) -> BootstrapResult:
    """SD of `statistic` over cfg.B samples of size n drawn from `fitted`."""

    def replicate(b: int) -> Optional[float]:
        return _safe(statistic, sample(fitted, n, substream(cfg.seed, b)))

    results = map_indexed(replicate, cfg.B, workers, prefix="bootstrap")
    ok = [v for v in results if v is not None]
    n_failed = cfg.B - len(ok)
    se = float(np.std(ok, ddof=1)) if len(ok) >= 2 else math.nan
    result = BootstrapResult(se=se, replicates=tuple(ok), n_failed=n_failed, B=cfg.B)

    if len(ok) < cfg.min_success_fraction * cfg.B or len(ok) < 2:
        raise BootstrapInstabilityError(
            f"only {len(ok)} of {cfg.B} bootstrap replicates succeeded",
            result.diagnostics,
        )
    if n_failed:
        logger.info("Bootstrap dropped %d of %d failed replicates", n_failed, cfg.B)
    return result


def bootstrap_se(
    s: QuantileSummary,
    method: Method,
    cfg: BootstrapConfig,
    fit: Optional[MeanSdEstimate] = None,
    workers: int = 0,
) -> BootstrapResult:
    """Bootstrap SE of a method's mean estimate.

    Each replicate draws n values from the fitted model, recomputes the same scenario's
    summary and reruns the full estimator (QE model selection included). Pass `fit`
    to reuse an estimate already computed on `s`.
    """
    fit = fit or estimate(s, method)
    return parametric_bootstrap(
        fit.fitted, s.n, estimator_statistic(s.scenario, method), cfg, workers=workers
    )


def true_se_oracle(
    dist: FittedDistribution,
    n: int,
    scenario: Scenario,
    method: Optional[Method],
    reps: int,
    seed: int,
    statistic: Optional[Statistic] = None,
    workers: int = 0,
) -> float:
    """Monte Carlo SD of the estimator over `reps` fresh datasets from `dist`.

    `statistic` replaces the summary-based estimator (for example np.mean).
    """
    if reps < ORACLE_MIN_REPS:
        raise InputError(f"oracle needs at least {ORACLE_MIN_REPS} reps, got {reps}")
    if statistic is None:
        if method is None:
            raise InputError("oracle needs a method or a statistic")
        statistic = estimator_statistic(scenario, method)

    def replicate(i: int) -> Optional[float]:
        return _safe(statistic, sample(dist, n, substream(seed, i)))

    results: List[Optional[float]] = map_indexed(replicate, reps, workers, prefix="oracle")
    ok = [v for v in results if v is not None]
    failure_rate = 1 - len(ok) / reps
    if failure_rate > ORACLE_MAX_FAILURE:
        raise OracleUnreliableError(
            f"estimator failed on {failure_rate:.1%} of oracle datasets",
            {"reps": reps, "n_failed": reps - len(ok)},
        )
    se = float(np.std(ok, ddof=1))
    logger.debug("True SE for %s n=%d %s: %.6g", dist.label(), n, getattr(method, "value", "statistic"), se)
    return se
