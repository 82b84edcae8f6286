"""Study-level and meta-analytic simulation cells.

Study cells compare naive and bootstrap SEs of each estimator with its Monte Carlo true
SE. Meta cells pool simulated two-type study collections (median-reporting and
mean-reporting) with each method and SE variant and score the pooled mean, tau^2 and I^2.
Every replicate uses its own seeded substream, so results do not depend on worker count.
"""
import logging
import math
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from metamed.config import settings
from metamed.exceptions import ConvergenceError, EstimationError, MetamedError
from metamed.models.schemas import (
    DistFamily,
    DistSpec,
    MetaMetricRow,
    MetaSimConfig,
    Method,
    Scenario,
    SeVariant,
    SimCellResult,
    StudyInput,
    StudyMetricRow,
    StudySimConfig,
)
from metamed.services.bootstrap import bootstrap_se, true_se_oracle
from metamed.services.distributions import FittedDistribution, moments, sample
from metamed.services.estimators import estimate, naive_se
from metamed.services.meta import random_effects
from metamed.services.parallel import derive_seed, map_indexed, substream
from metamed.services.summaries import extract_summary

logger = logging.getLogger(__name__)

CONTROL = "sample_mean"
REML_FAILURE_LIMIT = 0.01  # cells with more non-converged REML fits are flagged
MAX_REDRAWS = 100

# substream keys
_DATA, _ORACLE, _BOOT = 0, 1, 2


def study_cell_id(cfg: StudySimConfig) -> str:
    return cfg.cell_id or f"study-{cfg.dist.family.value}-{'-'.join(f'{p:g}' for p in cfg.dist.params)}-n{cfg.n}-{cfg.scenario.value}"


def meta_cell_id(cfg: MetaSimConfig) -> str:
    return cfg.cell_id or f"meta-K{cfg.k}-p{cfg.p:.3g}-{cfg.scenario.value}"


def median_reporting_count(k: int, p: float) -> int:
    """ceil(p*K), tolerant of floating error (K=9, p=1/3 -> 3)."""
    return min(k, max(0, math.ceil(p * k - 1e-9)))


# --- Study-level cells ---

def _pct_errors(values: List[float], truth: float) -> Dict[str, Optional[float]]:
    if not values:
        return {"median_pct_err": None, "mean_pct_err": None, "rmse": None, "mean_se_hat": None}
    arr = np.asarray(values)
    pct = (arr - truth) / truth * 100
    return {
        "median_pct_err": float(np.median(pct)),
        "mean_pct_err": float(np.mean(pct)),
        "rmse": float(np.sqrt(np.mean((arr - truth) ** 2))),
        "mean_se_hat": float(np.mean(arr)),
    }


def run_study_cell(cfg: StudySimConfig, workers: int = 0) -> SimCellResult:
    dist = FittedDistribution.from_spec(cfg.dist)
    workers = workers or settings.workers
    cell_id = study_cell_id(cfg)
    logger.info("Study cell %s: %d reps, oracle %d", cell_id, cfg.reps, cfg.oracle_reps)

    # 1. True SEs
    true_se = {
        m: true_se_oracle(dist, cfg.n, cfg.scenario, m, cfg.oracle_reps, derive_seed(cfg.seed, _ORACLE, j), workers=workers)
        for j, m in enumerate(cfg.methods)
    }

    # 2. Replicates
    def one_rep(i: int) -> Dict[str, Any]:
        x = sample(dist, cfg.n, substream(cfg.seed, _DATA, i))
        s = extract_summary(x, cfg.scenario)
        record: Dict[str, Any] = {"rep": i}
        for j, m in enumerate(cfg.methods):
            try:
                fit = estimate(s, m)
            except (MetamedError, ValueError, ArithmeticError):
                record[m.value] = None
                continue
            boot = None
            if cfg.with_bootstrap:
                boot_cfg = cfg.bootstrap.model_copy(update={"seed": derive_seed(cfg.seed, _BOOT, i, j)})
                try:
                    boot = bootstrap_se(s, m, boot_cfg, fit=fit, workers=1).se
                except EstimationError:
                    boot = None
            record[m.value] = (naive_se(fit, cfg.n), boot)
        if cfg.include_control:
            record[CONTROL] = float(np.std(x, ddof=1) / math.sqrt(cfg.n))
        return record

    records = map_indexed(one_rep, cfg.reps, workers, prefix="study-sim")

    # 3. Metrics
    rows: List[StudyMetricRow] = []
    for m in cfg.methods:
        pairs = [r[m.value] for r in records if r[m.value] is not None]
        naive = [p[0] for p in pairs]
        rows.append(StudyMetricRow(
            method=m.value, se_variant=SeVariant.NAIVE, true_se=true_se[m],
            n_ok=len(naive), n_failed=cfg.reps - len(naive), **_pct_errors(naive, true_se[m]),
        ))
        if cfg.with_bootstrap:
            boot = [p[1] for p in pairs if p[1] is not None]
            rows.append(StudyMetricRow(
                method=m.value, se_variant=SeVariant.BOOTSTRAP, true_se=true_se[m],
                n_ok=len(boot), n_failed=cfg.reps - len(boot), **_pct_errors(boot, true_se[m]),
            ))
    if cfg.include_control:
        analytic = moments(dist)[1] / math.sqrt(cfg.n)
        control = [r[CONTROL] for r in records]
        rows.append(StudyMetricRow(
            method=CONTROL, se_variant=SeVariant.NAIVE, true_se=analytic,
            n_ok=len(control), **_pct_errors(control, analytic),
        ))

    kept = []
    if cfg.keep_records:
        for r in records:
            for m in cfg.methods:
                pair = r[m.value]
                kept.append({
                    "rep": r["rep"], "method": m.value,
                    "naive_se": pair[0] if pair else None,
                    "bootstrap_se": pair[1] if pair else None,
                })

    return SimCellResult(
        cell_id=cell_id,
        kind="study",
        config=cfg.model_dump(mode="json"),
        study_rows=rows,
        diagnostics={
            "sigma_over_sqrt_n": moments(dist)[1] / math.sqrt(cfg.n),
            "true_se": {m.value: v for m, v in true_se.items()},
        },
        records=kept,
    )


def illustrative_example(reps: int = 200, oracle_reps: int = 10_000, seed: int = 0, workers: int = 0) -> SimCellResult:
    """Naive SEs of QE/BC/MLN against their true SEs for LogNormal(5, 0.25^2), n=1000, S1."""
    cfg = StudySimConfig(
        cell_id="illustrative",
        dist=DistSpec(family=DistFamily.LOGNORMAL, params=[5.0, 0.25]),
        n=1000,
        scenario=Scenario.S1,
        reps=reps,
        oracle_reps=oracle_reps,
        with_bootstrap=False,
        keep_records=True,
        seed=seed,
    )
    return run_study_cell(cfg, workers=workers)


# --- Meta-analytic cells ---

def _mean_variance(dist: FittedDistribution, n_range: Tuple[int, int]) -> float:
    """E[sigma^2 / n] over n ~ DUnif(n_range)."""
    ns = np.arange(n_range[0], n_range[1] + 1)
    return float(moments(dist)[1] ** 2 * np.mean(1.0 / ns))


def true_i2_oracle(cfg: MetaSimConfig, method: Method, se_variant: SeVariant = SeVariant.BOOTSTRAP, workers: int = 0) -> float:
    """tau^2 / (tau^2 + E[v]) with E[v] averaged over study sizes and reporting types.

    The target depends on the estimator, not on how its SE is estimated, so se_variant
    does not change the value. Median-reporting variances come from true_se_oracle on a
    grid of study sizes; n * SE^2 is interpolated linearly between grid points.
    """
    base = FittedDistribution.from_spec(cfg.base_dist)
    share = median_reporting_count(cfg.k, cfg.p) / cfg.k
    v_mean = _mean_variance(base, cfg.n_range)

    v_median = 0.0
    if share > 0:
        lo, hi = cfg.n_range
        grid = np.unique(np.round(np.linspace(lo, hi, cfg.oracle_n_points)).astype(int))
        scaled = []
        for g, n in enumerate(grid):
            se = true_se_oracle(
                base, int(n), cfg.scenario, method, cfg.oracle_reps,
                derive_seed(cfg.seed, _ORACLE, list(Method).index(Method(method)), g), workers=workers,
            )
            scaled.append(n * se * se)
        ns = np.arange(lo, hi + 1)
        v_median = float(np.mean(np.interp(ns, grid, scaled) / ns))

    expected_v = (1 - share) * v_mean + share * v_median
    return cfg.tau2_true / (cfg.tau2_true + expected_v)


def _study_input(y: float, se: float, label: str) -> Optional[StudyInput]:
    """None when the estimate or its SE cannot enter a meta-analysis (non-finite, zero SE)."""
    try:
        return StudyInput(y=y, se=se, label=label)
    except ValidationError:
        return None


def _simulate_studies(cfg: MetaSimConfig, base: FittedDistribution, i: int):
    """One replicate: per-study data plus which studies report medians."""
    rng = substream(cfg.seed, _DATA, i)
    k = cfg.k
    gammas = rng.normal(0.0, math.sqrt(cfg.tau2_true), k)
    ns = rng.integers(cfg.n_range[0], cfg.n_range[1] + 1, size=k)
    flags = np.zeros(k, dtype=bool)
    flags[: median_reporting_count(k, cfg.p)] = True
    flags = rng.permutation(flags)

    data, redraws = [], 0
    for kk in range(k):
        x = sample(base, int(ns[kk]), rng) + gammas[kk]
        while flags[kk] and x.min() <= 0:
            redraws += 1
            if redraws > MAX_REDRAWS:
                raise EstimationError("too many nonpositive redraws for median-reporting studies")
            x = sample(base, int(ns[kk]), rng) + gammas[kk]
        data.append(x)
    return data, flags, redraws


def run_meta_cell(cfg: MetaSimConfig, workers: int = 0) -> SimCellResult:
    base = FittedDistribution.from_spec(cfg.base_dist)
    workers = workers or settings.workers
    cell_id = meta_cell_id(cfg)
    true_mu = moments(base)[0]
    any_median = median_reporting_count(cfg.k, cfg.p) > 0
    combos = [(m, v) for m in cfg.methods for v in cfg.se_variants]
    logger.info("Meta cell %s: %d reps, %d method/SE combinations", cell_id, cfg.reps, len(combos))

    def one_rep(i: int) -> Dict[str, Any]:
        data, flags, redraws = _simulate_studies(cfg, base, i)
        inputs: Dict[Tuple[Method, SeVariant], Optional[List[StudyInput]]] = {c: [] for c in combos}
        for kk, x in enumerate(data):
            n = x.size
            if not flags[kk]:
                study = _study_input(float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(n)), str(kk))
                for c in combos:
                    if inputs[c] is not None:
                        inputs[c] = None if study is None else inputs[c] + [study]
                continue
            s = extract_summary(x, cfg.scenario)
            for j, m in enumerate(cfg.methods):
                try:
                    fit = estimate(s, m)
                except (MetamedError, ValueError, ArithmeticError):
                    for v in cfg.se_variants:
                        inputs[(m, v)] = None
                    continue
                for v in cfg.se_variants:
                    if inputs[(m, v)] is None:
                        continue
                    if v is SeVariant.NAIVE:
                        se = naive_se(fit, n)
                    else:
                        boot_cfg = cfg.bootstrap.model_copy(update={"seed": derive_seed(cfg.seed, _BOOT, i, kk, j)})
                        try:
                            se = bootstrap_se(s, m, boot_cfg, fit=fit, workers=1).se
                        except EstimationError:
                            inputs[(m, v)] = None
                            continue
                    study = _study_input(fit.mean, se, str(kk))
                    if study is None:
                        logger.debug("Replicate %d study %d: unusable %s/%s estimate", i, kk, m.value, v.value)
                        inputs[(m, v)] = None
                    else:
                        inputs[(m, v)].append(study)

        outcome: Dict[str, Any] = {"rep": i, "redraws": redraws, "fits": {}, "reml_failed": []}
        for c, studies in inputs.items():
            if studies is None:
                outcome["fits"][c] = None
                continue
            try:
                res = random_effects(studies, cfg.level)
            except ConvergenceError:
                outcome["reml_failed"].append(c)
                outcome["fits"][c] = None
                continue
            outcome["fits"][c] = (res.mu_pool, res.mu_ci, res.tau2, res.tau2_ci, res.i2)
        return outcome

    records = map_indexed(one_rep, cfg.reps, workers, prefix="meta-sim")

    # true I^2 per method (identical for every method when no study reports medians)
    true_i2: Dict[Method, float] = {}
    for m in cfg.methods:
        if not any_median and true_i2:
            true_i2[m] = next(iter(true_i2.values()))
        else:
            true_i2[m] = true_i2_oracle(cfg, m, workers=workers)

    rows: List[MetaMetricRow] = []
    reml_failures = 0
    for c in combos:
        m, v = c
        fits = [r["fits"][c] for r in records if r["fits"][c] is not None]
        failed_reml = sum(1 for r in records if c in r["reml_failed"])
        reml_failures = max(reml_failures, failed_reml)
        row = MetaMetricRow(
            method=m.value, se_variant=v, true_mu=true_mu, true_tau2=cfg.tau2_true,
            true_i2=true_i2[m], n_ok=len(fits), n_failed=cfg.reps - len(fits),
        )
        if len(fits) >= 2:
            mu = np.array([f[0] for f in fits])
            mu_ci = np.array([f[1] for f in fits])
            tau2 = np.array([f[2] for f in fits])
            tau2_ci = np.array([f[3] for f in fits])
            i2 = np.array([f[4] for f in fits])
            row = row.model_copy(update={
                "bias_mu": float(np.mean(mu) - true_mu),
                "var_mu": float(np.var(mu, ddof=1)),
                "cov_mu": float(np.mean((mu_ci[:, 0] <= true_mu) & (true_mu <= mu_ci[:, 1]))),
                "bias_tau2": float(np.mean(tau2) - cfg.tau2_true),
                "var_tau2": float(np.var(tau2, ddof=1)),
                "cov_tau2": float(np.mean((tau2_ci[:, 0] <= cfg.tau2_true) & (cfg.tau2_true <= tau2_ci[:, 1]))),
                "bias_i2": float(np.mean(i2) - true_i2[m]),
                "median_bias_i2": float(np.median(i2) - true_i2[m]),
            })
        rows.append(row)

    flagged = reml_failures > REML_FAILURE_LIMIT * cfg.reps
    if flagged:
        logger.warning("Cell %s: REML failed in %d of %d reps", cell_id, reml_failures, cfg.reps)
    return SimCellResult(
        cell_id=cell_id,
        kind="meta",
        config=cfg.model_dump(mode="json"),
        meta_rows=rows,
        diagnostics={
            "median_reporting": median_reporting_count(cfg.k, cfg.p),
            "redraws": int(sum(r["redraws"] for r in records)),
            "reml_failures": reml_failures,
        },
        flagged=flagged,
    )
