"""Quantile summaries: extraction from raw samples, Bowley skewness, tie-breaking and screening."""
import logging
from typing import Sequence

import numpy as np

from metamed.exceptions import DegenerateIQRError, InputError
from metamed.models.schemas import (
    SCENARIO_FIELDS,
    QuantileSummary,
    Scenario,
    ScreeningDecision,
    TwoGroupSummary,
)

logger = logging.getLogger(__name__)

MIN_SAMPLE = 5
TIE_FACTOR = 1.025  # tied quantile is raised by 2.5%
MAX_TIE_STEPS = 1000


def extract_summary(data: Sequence[float], scenario: Scenario) -> QuantileSummary:
    """Summarize a raw sample the way a study report would.

    Quartiles and median use linear interpolation between order statistics at
    position 1 + (n - 1) * p, so the median of an even-sized sample is the mean
    of the two central values.
    """
    x = np.asarray(data, dtype=float).ravel()
    if x.size < MIN_SAMPLE:
        raise InputError(f"need at least {MIN_SAMPLE} observations, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InputError("sample contains non-finite values")

    q1, q2, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    available = {
        "q_min": float(x.min()),
        "q1": float(q1),
        "q2": float(q2),
        "q3": float(q3),
        "q_max": float(x.max()),
    }
    scenario = Scenario(scenario)
    picked = {name: available[name] for name in SCENARIO_FIELDS[scenario]}
    return QuantileSummary(scenario=scenario, n=int(x.size), **picked)


def bowley_skewness(s: QuantileSummary) -> float:
    if s.q1 is None or s.q2 is None or s.q3 is None:
        raise InputError("Bowley skewness needs q1, median and q3")
    iqr = s.q3 - s.q1
    if iqr <= 0:
        raise DegenerateIQRError("q3 equals q1; Bowley skewness undefined")
    return (s.q3 + s.q1 - 2 * s.q2) / iqr


def _raise_value(value: float, scale: float) -> float:
    if value > 0:
        return value * TIE_FACTOR
    if value < 0:
        return value + (TIE_FACTOR - 1) * abs(value)
    return (TIE_FACTOR - 1) * scale


def break_ties(s: QuantileSummary) -> QuantileSummary:
    """Make present quantiles strictly increasing.

    Walks upward through the present quantiles; whenever one does not exceed its
    predecessor it is raised by 2.5% (repeatedly if needed), so adjustments cascade
    outward toward q_max.
    """
    values = s.values()
    if all(v == values[0] for v in values) and values[0] == 0:
        raise InputError("all quantiles are zero; ties cannot be broken")
    if all(b > a for a, b in zip(values, values[1:])):
        return s

    scale = max(abs(v) for v in values)
    for i in range(1, len(values)):
        steps = 0
        while values[i] <= values[i - 1]:
            values[i] = _raise_value(values[i], scale)
            steps += 1
            if steps > MAX_TIE_STEPS:
                raise InputError(f"could not break ties in {s.values()}")
    logger.debug("Broke ties: %s -> %s", s.values(), values)
    return s.replace_values(values)


def screen_study(
    t: TwoGroupSummary, min_n: int = 10, skew_cap: float = 0.75
) -> ScreeningDecision:
    """Keep/drop decision; only quantile-reporting groups are screened."""
    groups = [(1, t.group1), (2, t.group2)]
    quantile_groups = [(g, s) for g, s in groups if isinstance(s, QuantileSummary)]

    for g, s in quantile_groups:
        if s.n < min_n:
            return ScreeningDecision(keep=False, reason="small-sample", group=g, value=float(s.n))

    for g, s in quantile_groups:
        if s.q1 is None or s.q3 is None:
            continue
        if s.q3 <= s.q1:
            return ScreeningDecision(keep=False, reason="degenerate-iqr", group=g)
        skew = bowley_skewness(s)
        if skew > skew_cap:
            return ScreeningDecision(keep=False, reason="skewness", group=g, value=skew)

    return ScreeningDecision(keep=True)
