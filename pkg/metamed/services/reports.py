"""Tabular views of simulation and application results, and their CSV/JSON files.

CSV files carry full precision; human-readable rounding happens in the CLI formatter.
"""
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import pandas as pd

from metamed.models.schemas import ApplicationReport, ScreeningLogEntry, SimCellResult, StudyRow

logger = logging.getLogger(__name__)

STUDY_METRICS = ("median_pct_err", "mean_pct_err", "rmse")
META_METRICS = ("bias_mu", "cov_mu", "bias_tau2", "cov_tau2", "bias_i2", "median_bias_i2")


def _cell_settings(result: SimCellResult) -> Dict[str, object]:
    """Config columns echoed into every row of a cell's table."""
    c = result.config
    if result.kind == "study":
        dist = c["dist"]
        return {
            "dist": f"{dist['family']}({', '.join(f'{p:g}' for p in dist['params'])})",
            "n": c["n"],
            "scenario": c["scenario"],
            "reps": c["reps"],
        }
    return {
        "K": c["k"],
        "p": round(c["p"], 4),
        "scenario": c["scenario"],
        "tau2_true": c["tau2_true"],
        "reps": c["reps"],
    }


def cell_frame(result: SimCellResult) -> pd.DataFrame:
    """One row per (method, SE variant) with the cell id and config echo."""
    rows = result.study_rows if result.kind == "study" else result.meta_rows
    head = {"cell_id": result.cell_id, **_cell_settings(result)}
    return pd.DataFrame([{**head, **row.model_dump(mode="json")} for row in rows])


def combined_frame(results: Sequence[SimCellResult], kind: str) -> pd.DataFrame:
    """Wide table, one row per cell, one column per metric x method x SE variant."""
    metrics = STUDY_METRICS if kind == "study" else META_METRICS
    records = []
    for result in results:
        if result.kind != kind:
            continue
        row: Dict[str, object] = {"cell_id": result.cell_id, **_cell_settings(result)}
        if kind == "meta":
            row["flagged"] = result.flagged
        for m in (result.study_rows if kind == "study" else result.meta_rows):
            for metric in metrics:
                row[f"{metric}:{m.method}/{m.se_variant.value}"] = getattr(m, metric)
        records.append(row)
    return pd.DataFrame(records)


def write_cell(result: SimCellResult, out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{result.cell_id}.csv"
    json_path = out / f"{result.cell_id}.json"
    cell_frame(result).to_csv(csv_path, index=False)
    json_path.write_text(result.model_dump_json(indent=2), encoding="utf-8")
    logger.info("Wrote %s and %s", csv_path, json_path)
    return csv_path, json_path


# --- Application reports ---

def outcome_frame(report: ApplicationReport) -> pd.DataFrame:
    records = []
    for o in report.outcomes:
        row: Dict[str, object] = {"outcome": o.outcome, "variant": o.variant.value, "k": o.n_studies}
        if o.meta is not None:
            m = o.meta
            row.update({
                "model": m.model.value,
                "mu_pool": m.mu_pool,
                "se_pool": m.se_pool,
                "mu_ci_lo": m.mu_ci[0],
                "mu_ci_hi": m.mu_ci[1],
                "tau2": m.tau2,
                "tau2_ci_lo": m.tau2_ci[0],
                "tau2_ci_hi": m.tau2_ci[1],
                "i2": m.i2,
                "q_stat": m.q_stat,
                "q_pvalue": m.q_pvalue,
            })
        row["notice"] = o.notice or ""
        records.append(row)
    return pd.DataFrame(records)


def study_frame(report: ApplicationReport) -> pd.DataFrame:
    rows = [s.model_dump(mode="json") for o in report.outcomes for s in o.studies]
    return pd.DataFrame(rows, columns=list(StudyRow.model_fields))


def screening_frame(report: ApplicationReport) -> pd.DataFrame:
    rows = [e.model_dump() for e in report.screening]
    return pd.DataFrame(rows, columns=list(ScreeningLogEntry.model_fields))


def write_application(report: ApplicationReport, out_dir: Union[str, Path]) -> List[Path]:
    """outcomes.csv, studies.csv, screening.csv and report.json under `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "outcomes.csv", out / "studies.csv", out / "screening.csv", out / "report.json"]
    outcome_frame(report).to_csv(paths[0], index=False)
    study_frame(report).to_csv(paths[1], index=False)
    screening_frame(report).to_csv(paths[2], index=False)
    paths[3].write_text(report.model_dump_json(indent=2), encoding="utf-8")
    logger.info("Wrote application report to %s", out)
    return paths


def read_study_table(path: Union[str, Path]) -> List[StudyRow]:
    """Re-ingest a studies.csv written by write_application."""
    df = pd.read_csv(path, float_precision="round_trip", dtype={"study_id": str, "outcome": str})
    df["outcome"] = df["outcome"].fillna("")
    return [StudyRow(**row) for row in df.to_dict(orient="records")]
