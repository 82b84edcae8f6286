"""Two-group application: tie-breaking, screening, per-group estimation and meta-analysis."""
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

from metamed.config import settings
from metamed.exceptions import EstimationError, InputError
from metamed.models.schemas import (
    ApplicationReport,
    BootstrapConfig,
    EstimateWithSE,
    GroupSummary,
    MeanSdSummary,
    OutcomeReport,
    QuantileSummary,
    RunConfig,
    ScreeningLogEntry,
    SeVariant,
    StudyRow,
    TwoGroupSummary,
)
from metamed.services.bootstrap import bootstrap_se
from metamed.services.estimators import estimate, naive_se
from metamed.services.meta import difference_of_means, meta_analyze
from metamed.services.parallel import derive_seed
from metamed.services.summaries import break_ties, screen_study

logger = logging.getLogger(__name__)

GroupEstimates = Dict[SeVariant, EstimateWithSE]


def _untie(t: TwoGroupSummary) -> TwoGroupSummary:
    groups = [break_ties(g) if isinstance(g, QuantileSummary) else g for g in (t.group1, t.group2)]
    return t.model_copy(update={"group1": groups[0], "group2": groups[1]})


def estimate_group(
    g: GroupSummary,
    cfg: RunConfig,
    seed: int,
    workers: int = 0,
) -> GroupEstimates:
    """Mean and SE of one group under each requested SE variant.

    Mean/SD groups use the sample mean and sd/sqrt(n) for every variant.
    """
    if isinstance(g, MeanSdSummary):
        se = g.sd / math.sqrt(g.n)
        return {
            v: EstimateWithSE(mean=g.mean, se=se, variant=v, sd=g.sd, n=g.n)
            for v in cfg.se_variants
        }

    fit = estimate(g, cfg.method)
    out: GroupEstimates = {}
    for v in cfg.se_variants:
        if v is SeVariant.NAIVE:
            se = naive_se(fit, g.n)
        else:
            boot_cfg = BootstrapConfig(B=cfg.B, seed=seed, min_success_fraction=settings.bootstrap_min_success)
            se = bootstrap_se(g, cfg.method, boot_cfg, fit=fit, workers=workers).se
        out[v] = EstimateWithSE(mean=fit.mean, se=se, variant=v, method=cfg.method, sd=fit.sd, n=g.n)
    return out


def run_application(
    records: Sequence[TwoGroupSummary],
    cfg: RunConfig,
    workers: int = 0,
) -> ApplicationReport:
    """Screen, estimate and pool every outcome in `records`.

    Bootstrap seeds derive from (cfg.seed, record index, group), so a study's SEs do
    not depend on which other studies were screened out.
    """
    screening: List[ScreeningLogEntry] = []
    by_outcome: Dict[str, List[Tuple[TwoGroupSummary, GroupEstimates, GroupEstimates]]] = {}
    order: List[str] = []

    for index, record in enumerate(records):
        if record.outcome not in by_outcome:
            by_outcome[record.outcome] = []
            order.append(record.outcome)

        try:
            t = _untie(record)
        except InputError as exc:
            logger.info("Dropping %s (%s): %s", record.study_id, record.outcome, exc)
            screening.append(ScreeningLogEntry(study_id=record.study_id, outcome=record.outcome, reason="ties"))
            continue

        decision = screen_study(t, min_n=cfg.min_n, skew_cap=cfg.skew_cap)
        if not decision.keep:
            logger.info("Screened out %s (%s): %s", t.study_id, t.outcome, decision.reason)
            screening.append(ScreeningLogEntry(
                study_id=t.study_id, outcome=t.outcome, reason=decision.reason,
                group=decision.group, value=decision.value,
            ))
            continue

        current_group = 1
        try:
            e1 = estimate_group(t.group1, cfg, derive_seed(cfg.seed, index, 1), workers)
            current_group = 2
            e2 = estimate_group(t.group2, cfg, derive_seed(cfg.seed, index, 2), workers)
        except (EstimationError, InputError) as exc:
            logger.warning("Estimation failed for %s group %d: %s", t.study_id, current_group, exc)
            screening.append(ScreeningLogEntry(
                study_id=t.study_id, outcome=t.outcome, reason="estimation-failed", group=current_group,
            ))
            continue
        by_outcome[t.outcome].append((t, e1, e2))

    outcomes: List[OutcomeReport] = []
    for outcome in order:
        kept = by_outcome[outcome]
        for v in cfg.se_variants:
            outcomes.append(_pool_outcome(outcome, v, kept, cfg))

    logger.info(
        "Application finished: %d outcome(s), %d study(ies) dropped",
        len(order), len(screening),
    )
    return ApplicationReport(run_config=cfg, outcomes=outcomes, screening=screening)


def _pool_outcome(
    outcome: str,
    variant: SeVariant,
    kept: List[Tuple[TwoGroupSummary, GroupEstimates, GroupEstimates]],
    cfg: RunConfig,
) -> OutcomeReport:
    if len(kept) < cfg.min_studies:
        notice = f"skipped: {len(kept)} usable studies, need at least {cfg.min_studies}"
        logger.warning("Outcome %r %s", outcome, notice)
        return OutcomeReport(outcome=outcome, variant=variant, n_studies=len(kept), notice=notice)

    studies = [difference_of_means(e1[variant], e2[variant], label=t.study_id) for t, e1, e2 in kept]
    result = meta_analyze(studies, cfg.model, cfg.level)
    rows = [
        StudyRow(
            study_id=t.study_id, outcome=outcome, variant=variant,
            y=s.y, se=s.se, weight=w,
            mean1=e1[variant].mean, se1=e1[variant].se,
            mean2=e2[variant].mean, se2=e2[variant].se,
        )
        for (t, e1, e2), s, w in zip(kept, studies, result.weights)
    ]
    return OutcomeReport(outcome=outcome, variant=variant, n_studies=len(kept), meta=result, studies=rows)


def i2_comparison(report: ApplicationReport) -> Dict[str, Dict[str, Optional[float]]]:
    """outcome -> {variant: I^2} for the outcomes that were pooled."""
    table: Dict[str, Dict[str, Optional[float]]] = {}
    for o in report.outcomes:
        table.setdefault(o.outcome, {})[o.variant.value] = o.meta.i2 if o.meta else None
    return table
