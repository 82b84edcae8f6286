"""Plain-text and markdown formatting for CLI output."""
from __future__ import annotations

import math
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from metamed.models.schemas import ApplicationReport, SimulationPlan
from metamed.services.pipeline import i2_comparison
from metamed.services.simharness import median_reporting_count, meta_cell_id, study_cell_id

DECIMALS = 2


def _cell(value: Any, decimals: int = DECIMALS) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "yes" if value else ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return f"{value:.{decimals}f}"
    return str(value)


def format_table(rows: Sequence[Dict[str, Any]], columns: Optional[List[str]] = None) -> str:
    """Aligned ASCII table; numbers right-aligned with 2 decimals."""
    if not rows:
        return "(no rows)"
    columns = columns or list(rows[0])
    cells = [[_cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    numeric = [all(isinstance(r.get(c), (int, float)) or r.get(c) is None for r in rows) for c in columns]

    def fmt(values: List[str]) -> str:
        return "  ".join(
            v.rjust(w) if num else v.ljust(w) for v, w, num in zip(values, widths, numeric)
        ).rstrip()

    header = fmt(columns)
    lines = [header, "-" * len(header)]
    lines.extend(fmt(row) for row in cells)
    return "\n".join(lines)


def format_markdown(rows: Sequence[Dict[str, Any]], columns: Optional[List[str]] = None) -> str:
    if not rows:
        return "_no rows_"
    columns = columns or list(rows[0])
    lines = [
        "| " + " | ".join(columns) + " |",
        "|" + "|".join("---" for _ in columns) + "|",
    ]
    for r in rows:
        lines.append("| " + " | ".join(_cell(r.get(c)) for c in columns) + " |")
    return "\n".join(lines)


def frame_rows(df: pd.DataFrame) -> List[Dict[str, Any]]:
    """DataFrame -> list of dicts with NaN as None."""
    return [
        {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in rec.items()}
        for rec in df.to_dict(orient="records")
    ]


def render(rows: Sequence[Dict[str, Any]], fmt: str, columns: Optional[List[str]] = None) -> str:
    if fmt == "markdown":
        return format_markdown(rows, columns)
    return format_table(rows, columns)


def format_estimate(result: Dict[str, Any], fmt: str) -> str:
    """Single-study estimate: one row of numbers plus the diagnostics."""
    row = {k: result[k] for k in ("method", "mean", "sd", "naive_se", "bootstrap_se", "model")}
    out = render([row], fmt)
    diag = result.get("diagnostics") or {}
    if diag and fmt != "markdown":
        out += "\n\nDiagnostics:\n" + "\n".join(f"  {k}: {_diag(v)}" for k, v in diag.items())
    return out


def _diag(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, dict):
        return ", ".join(f"{k}={_diag(v)}" for k, v in value.items())
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_diag(v) for v in value) + "]"
    return str(value)


OUTCOME_COLUMNS = ["outcome", "variant", "k", "mu_pool", "mu_ci_lo", "mu_ci_hi", "tau2", "i2", "notice"]
STUDY_COLUMNS = ["outcome", "variant", "study_id", "y", "se", "weight_pct"]


def format_application(report: ApplicationReport, outcomes: pd.DataFrame, studies: pd.DataFrame, fmt: str) -> str:
    """Per-outcome pooled results, per-study weights, I^2 comparison and screening log."""
    cfg = report.run_config
    sections = [
        f"Method: {cfg.method.value}  model: {cfg.model.value}  seed: {cfg.seed}  B: {cfg.B}",
    ]

    rows = frame_rows(outcomes)
    for r in rows:
        r["i2"] = None if r.get("i2") is None else r["i2"] * 100
    columns = [c for c in OUTCOME_COLUMNS if c in outcomes.columns]
    sections.append(render(rows, fmt, columns) if rows else "(no outcomes)")

    study_rows = frame_rows(studies)
    for r in study_rows:
        r["weight_pct"] = r["weight"] * 100
    if study_rows:
        sections.append("Study weights (%):\n" + render(
            [{c: r[c] for c in STUDY_COLUMNS} for r in study_rows], fmt
        ))

    if len({o.variant for o in report.outcomes}) > 1:
        comparison = [
            {"outcome": outcome, **{f"i2_{v}": None if i2 is None else i2 * 100 for v, i2 in by_variant.items()}}
            for outcome, by_variant in i2_comparison(report).items()
        ]
        sections.append("I^2 (%) by SE variant:\n" + render(comparison, fmt))

    if report.screening:
        sections.append("Screened out:\n" + render([e.model_dump() for e in report.screening], fmt))
    return "\n\n".join(sections)


def format_plan(plan: SimulationPlan) -> str:
    """Dry-run listing of planned cells and replicate counts."""
    rows: List[Dict[str, Any]] = []
    for c in plan.study_cells:
        boot = c.reps * c.bootstrap.B * len(c.methods) if c.with_bootstrap else 0
        rows.append({
            "cell": study_cell_id(c), "kind": "study", "reps": c.reps,
            "oracle_reps": c.oracle_reps * len(c.methods), "bootstrap_fits": boot,
        })
    for c in plan.meta_cells:
        m = median_reporting_count(c.k, c.p)
        boot = c.reps * m * c.bootstrap.B * len(c.methods) if "bootstrap" in {v.value for v in c.se_variants} else 0
        oracle = c.oracle_reps * c.oracle_n_points * len(c.methods) if m else 0
        rows.append({
            "cell": meta_cell_id(c), "kind": "meta", "reps": c.reps,
            "oracle_reps": oracle, "bootstrap_fits": boot,
        })
    total = sum(r["reps"] for r in rows)
    return format_table(rows) + f"\n\n{len(rows)} cell(s), {total} replicate(s) planned"
