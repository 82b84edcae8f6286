"""Load two-group study summaries from CSV."""
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import pandas as pd
from pydantic import ValidationError

from metamed.exceptions import InputError
from metamed.models.schemas import (
    SCENARIO_FIELDS,
    GroupSummary,
    MeanSdSummary,
    QuantileSummary,
    TwoGroupSummary,
)

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("study_id", "outcome", "group", "n")
OPTIONAL_COLUMNS = ("mean", "sd", "min", "q1", "median", "q3", "max")
# CSV column -> QuantileSummary field
QUANTILE_COLUMNS = {"min": "q_min", "q1": "q1", "median": "q2", "q3": "q3", "max": "q_max"}


def _number(raw: str, column: str) -> Optional[float]:
    text = raw.strip()
    if not text:
        return None
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{column}={raw!r} is not a number") from None
    if not math.isfinite(value):
        raise ValueError(f"{column}={raw!r} is not finite")
    return value


def _parse_group(row: Dict[str, str]) -> GroupSummary:
    """One CSV row -> MeanSdSummary or the QuantileSummary its columns imply."""
    n_value = _number(row["n"], "n")
    if n_value is None or n_value != int(n_value):
        raise ValueError(f"n={row['n']!r} must be a whole number")
    n = int(n_value)

    values = {col: _number(row.get(col, ""), col) for col in OPTIONAL_COLUMNS}
    has_mean = values["mean"] is not None or values["sd"] is not None
    quantiles = {QUANTILE_COLUMNS[c]: values[c] for c in QUANTILE_COLUMNS if values[c] is not None}

    if has_mean and quantiles:
        raise ValueError("row reports both mean/sd and quantiles")
    if has_mean:
        if values["mean"] is None or values["sd"] is None:
            raise ValueError("mean and sd must be given together")
        return MeanSdSummary(mean=values["mean"], sd=values["sd"], n=n)

    present = set(quantiles)
    for scenario, fields in SCENARIO_FIELDS.items():
        if present == set(fields):
            return QuantileSummary(scenario=scenario, n=n, **quantiles)
    raise ValueError(
        f"quantile columns {sorted(present) or 'none'} match no reporting scenario"
    )


def read_study_frame(df: pd.DataFrame) -> List[TwoGroupSummary]:
    """Pair group 1 and group 2 rows into TwoGroupSummary records.

    All rows are checked before raising, so one InputError lists every bad line.
    Line numbers count the header as line 1.
    """
    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise InputError(f"missing required columns: {', '.join(missing)}")
    df = df.fillna("")

    errors: List[Tuple[int, str]] = []
    groups: Dict[Tuple[str, str], Dict[int, Tuple[int, GroupSummary]]] = {}

    for idx, raw in enumerate(df.to_dict(orient="records")):
        line = idx + 2
        row = {k: str(v) for k, v in raw.items()}
        study_id, outcome = row["study_id"].strip(), row["outcome"].strip()
        if not study_id:
            errors.append((line, "empty study_id"))
            continue
        if row["group"].strip() not in ("1", "2"):
            errors.append((line, f"group={row['group']!r} must be 1 or 2"))
            continue
        group = int(row["group"].strip())
        try:
            summary = _parse_group(row)
        except ValidationError as exc:
            errors.append((line, exc.errors()[0]["msg"]))
            continue
        except ValueError as exc:
            errors.append((line, str(exc)))
            continue

        slot = groups.setdefault((study_id, outcome), {})
        if group in slot:
            errors.append((line, f"duplicate group {group} for study {study_id!r} outcome {outcome!r} (first on line {slot[group][0]})"))
            continue
        slot[group] = (line, summary)

    records: List[TwoGroupSummary] = []
    for (study_id, outcome), slot in groups.items():
        if set(slot) != {1, 2}:
            line = min(entry[0] for entry in slot.values())
            errors.append((line, f"study {study_id!r} outcome {outcome!r} lacks group {({1, 2} - set(slot)).pop()}"))
            continue
        records.append(TwoGroupSummary(
            study_id=study_id, outcome=outcome, group1=slot[1][1], group2=slot[2][1],
        ))

    if errors:
        errors.sort()
        detail = "; ".join(f"line {line}: {msg}" for line, msg in errors)
        raise InputError(f"{len(errors)} unparseable row(s): {detail}", lines=[line for line, _ in errors])

    logger.info("Loaded %d two-group studies across %d outcome(s)", len(records), len({r.outcome for r in records}))
    return records


def load_study_csv(path: Union[str, Path]) -> List[TwoGroupSummary]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InputError(f"could not parse {path}: {exc}") from exc
    df.columns = [c.strip() for c in df.columns]
    return read_study_frame(df)
