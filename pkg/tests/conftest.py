"""Test fixtures."""
import os

# Small worker pools under test
os.environ.setdefault("METAMED_THREADS", "2")

import math
from pathlib import Path

import pytest

from metamed.models.schemas import DistFamily, QuantileSummary, Scenario, StudyInput
from metamed.services.distributions import FittedDistribution, quantile

DATA_DIR = Path(__file__).resolve().parent.parent / "metamed" / "data"

# IL-6 differences of means (patients minus controls) with naive and bootstrap SEs
IL6_ROWS = [
    ("Wang", 65, 274, 155.12, 35.46, 49.52),
    ("Wu", 44, 40, 5.46, 0.97, 1.02),
    ("Li", 15, 87, 142.37, 116.86, 106.50),
    ("Chen", 113, 161, 100.76, 15.49, 20.95),
    ("Tu", 25, 149, 16.65, 73.17, 180.89),
    ("Sun", 121, 123, 80.47, 39.34, 37.64),
    ("Chen", 81, 337, 2.63, 0.55, 0.63),
    ("Zhou", 54, 137, 5.20, 0.82, 0.90),
    ("Fan", 47, 26, 5.18, 0.79, 0.85),
    ("Xu", 28, 117, 26.82, 12.79, 15.25),
]

MEAN_SD_HEADER = "study_id,outcome,group,n,mean,sd,min,q1,median,q3,max\n"


def exact_summary(dist: FittedDistribution, n: int, scenario: Scenario) -> QuantileSummary:
    """Population quantiles at the probabilities the estimators target."""
    probs = {"q_min": 1.0 / n, "q1": 0.25, "q2": 0.5, "q3": 0.75, "q_max": 1.0 - 1.0 / n}
    fields = {
        Scenario.S1: ("q_min", "q2", "q_max"),
        Scenario.S2: ("q1", "q2", "q3"),
        Scenario.S3: ("q_min", "q1", "q2", "q3", "q_max"),
    }[scenario]
    return QuantileSummary(scenario=scenario, n=n, **{f: float(quantile(dist, probs[f])) for f in fields})


@pytest.fixture
def normal_5_1():
    return FittedDistribution(DistFamily.NORMAL, (5.0, 1.0))


@pytest.fixture
def lognormal_5_025():
    return FittedDistribution(DistFamily.LOGNORMAL, (5.0, 0.25))


@pytest.fixture
def il6_naive():
    return [StudyInput(y=r[3], se=r[4], label=r[0]) for r in IL6_ROWS]


@pytest.fixture
def il6_bootstrap():
    return [StudyInput(y=r[3], se=r[5], label=r[0]) for r in IL6_ROWS]


@pytest.fixture
def mean_sd_csv(tmp_path):
    """Eight studies, every group reporting mean/sd."""
    lines = [MEAN_SD_HEADER]
    for k in range(8):
        m1 = 20.0 + 1.5 * k + (k % 3)
        m2 = 15.0 + 0.5 * k
        lines.append(f"S{k},CRP,1,{40 + 5 * k},{m1},{4 + 0.3 * k},,,,,\n")
        lines.append(f"S{k},CRP,2,{50 + 3 * k},{m2},{3.5 + 0.2 * k},,,,,\n")
    path = tmp_path / "crp.csv"
    path.write_text("".join(lines), encoding="utf-8")
    return path


@pytest.fixture
def il6_csv():
    return DATA_DIR / "il6_example.csv"


def lognormal_mean(mu: float, s: float) -> float:
    return math.exp(mu + s * s / 2)
