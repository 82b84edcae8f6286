"""Tests for loading two-group study CSVs."""
import pytest

from metamed.exceptions import InputError
from metamed.models.schemas import MeanSdSummary, QuantileSummary, Scenario
from metamed.services.study_loader import load_study_csv
from tests.conftest import MEAN_SD_HEADER


def write_csv(tmp_path, *rows):
    path = tmp_path / "studies.csv"
    path.write_text(MEAN_SD_HEADER + "".join(r + "\n" for r in rows), encoding="utf-8")
    return path


def test_load_bundled_il6_example(il6_csv):
    records = load_study_csv(il6_csv)
    assert len(records) == 10
    assert {r.outcome for r in records} == {"IL-6"}
    first = records[0]
    assert first.study_id == "Wang2020"
    assert isinstance(first.group1, QuantileSummary)
    assert first.group1.scenario is Scenario.S2
    assert (first.group1.n, first.group2.n) == (65, 274)
    s1 = [r.study_id for r in records if r.group1.scenario is Scenario.S1]
    assert s1 == ["Li2020", "Chen2020a", "Tu2020", "Sun2020"]


def test_scenario_inferred_from_columns(tmp_path):
    path = write_csv(
        tmp_path,
        "A,CRP,1,40,,,1,,4,,20",
        "A,CRP,2,45,,,0.5,1,3,6,15",
        "B,CRP,1,30,12.5,3,,,,,",
        "B,CRP,2,31,,,,2,3,5,",
    )
    a, b = load_study_csv(path)
    assert a.group1.scenario is Scenario.S1
    assert (a.group1.q_min, a.group1.q2, a.group1.q_max) == (1.0, 4.0, 20.0)
    assert a.group2.scenario is Scenario.S3
    assert isinstance(b.group1, MeanSdSummary)
    assert b.group1.sd == 3.0
    assert b.group2.scenario is Scenario.S2


def test_groups_may_appear_in_any_order(tmp_path):
    path = write_csv(tmp_path, "A,CRP,2,45,10,2,,,,,", "A,CRP,1,40,12,2,,,,,")
    (record,) = load_study_csv(path)
    assert record.group1.mean == 12.0


def test_outcomes_kept_apart(tmp_path):
    path = write_csv(
        tmp_path,
        "A,CRP,1,40,12,2,,,,,", "A,CRP,2,45,10,2,,,,,",
        "A,IL-6,1,40,5,1,,,,,", "A,IL-6,2,45,4,1,,,,,",
    )
    assert [r.outcome for r in load_study_csv(path)] == ["CRP", "IL-6"]


def test_errors_report_line_numbers(tmp_path):
    path = write_csv(
        tmp_path,
        "A,CRP,1,40,12,2,,,,,",
        "A,CRP,2,abc,10,2,,,,,",
        "B,CRP,1,40,,,,5,3,8,",
        "B,CRP,2,40,10,2,,,,,",
    )
    with pytest.raises(InputError) as info:
        load_study_csv(path)
    # the failed rows also leave A without group 2 and B without group 1
    assert info.value.lines == [2, 3, 4, 5]
    message = str(info.value)
    assert "line 3" in message and "not a number" in message
    assert "line 4" in message and "out of order" in message


def test_mixed_mean_and_quantiles_rejected(tmp_path):
    path = write_csv(tmp_path, "A,CRP,1,40,12,2,,1,2,3,", "A,CRP,2,45,10,2,,,,,")
    with pytest.raises(InputError, match="both mean/sd and quantiles"):
        load_study_csv(path)


@pytest.mark.parametrize("row, fragment", [
    ("A,CRP,1,40,12,,,,,,", "together"),
    ("A,CRP,1,40,,,1,2,,,", "no reporting scenario"),
    ("A,CRP,1,40.5,12,2,,,,,", "whole number"),
    ("A,CRP,3,40,12,2,,,,,", "must be 1 or 2"),
    (",CRP,1,40,12,2,,,,,", "empty study_id"),
])
def test_row_level_errors(tmp_path, row, fragment):
    path = write_csv(tmp_path, row, "A,CRP,2,45,10,2,,,,,")
    with pytest.raises(InputError, match=fragment):
        load_study_csv(path)


def test_duplicate_and_missing_groups(tmp_path):
    path = write_csv(
        tmp_path,
        "A,CRP,1,40,12,2,,,,,", "A,CRP,1,41,12,2,,,,,", "A,CRP,2,45,10,2,,,,,",
        "B,CRP,1,40,12,2,,,,,",
    )
    with pytest.raises(InputError) as info:
        load_study_csv(path)
    message = str(info.value)
    assert "duplicate group 1" in message and "first on line 2" in message
    assert "lacks group 2" in message
    assert info.value.lines == [3, 5]


def test_missing_columns_and_file(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("study_id,group,n\nA,1,10\n", encoding="utf-8")
    with pytest.raises(InputError, match="outcome"):
        load_study_csv(path)
    with pytest.raises(InputError, match="not found"):
        load_study_csv(tmp_path / "nope.csv")
