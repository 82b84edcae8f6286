"""Subcommand handlers for the metamed CLI."""
from __future__ import annotations

import json
import logging
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from argparse import Namespace
from pathlib import Path
from typing import Any, Dict, List

from pydantic import ValidationError

from metamed.config import settings
from metamed.exceptions import ConfigError, InputError
from metamed.models.schemas import (
    BootstrapConfig,
    EffectModel,
    Method,
    QuantileSummary,
    RunConfig,
    SeVariant,
    SimCellResult,
    SimulationPlan,
)
from metamed.services import reports
from metamed.services.bootstrap import bootstrap_se
from metamed.services.estimators import estimate, naive_se
from metamed.services.pipeline import run_application
from metamed.services.simharness import run_meta_cell, run_study_cell
from metamed.services.study_loader import QUANTILE_COLUMNS, load_study_csv
from metamed.services.summaries import break_ties

from ._formatter import format_application, format_estimate, format_plan, frame_rows, render

logger = logging.getLogger(__name__)

# --q1 style flag -> QuantileSummary field
FLAG_FIELDS = {"min": "q_min", "q1": "q1", "median": "q2", "q3": "q3", "max": "q_max"}


def _se_variants(choice: str) -> List[SeVariant]:
    if choice == "both":
        return [SeVariant.NAIVE, SeVariant.BOOTSTRAP]
    return [SeVariant(choice)]


# --- estimate ---

def _summary_from_json(text: str) -> QuantileSummary:
    try:
        data: Dict[str, Any] = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON input: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError("JSON input must be an object")
    # accept CSV-style names (min/median/max) as well as field names
    for col, field in QUANTILE_COLUMNS.items():
        if col in data and col != field:
            data[field] = data.pop(col)
    if isinstance(data.get("scenario"), str):
        data["scenario"] = data["scenario"].upper()
    return QuantileSummary(**data)


def _summary_from_flags(args: Namespace) -> QuantileSummary:
    if args.scenario is None or args.n is None:
        raise InputError("--scenario and --n are required unless --json-input is given")
    values = {
        field: getattr(args, flag) for flag, field in FLAG_FIELDS.items() if getattr(args, flag) is not None
    }
    return QuantileSummary(scenario=args.scenario.upper(), n=args.n, **values)


def handle_estimate(args: Namespace) -> None:
    if args.json_input:
        text = sys.stdin.read() if args.json_input == "-" else Path(args.json_input).read_text(encoding="utf-8")
        summary = _summary_from_json(text)
    else:
        summary = _summary_from_flags(args)
    summary = break_ties(summary)
    method = Method(args.method)

    fit = estimate(summary, method)
    boot = bootstrap_se(
        summary, method, BootstrapConfig(B=args.B, seed=args.seed, min_success_fraction=settings.bootstrap_min_success),
        fit=fit,
    )
    result = {
        "method": method.value,
        "scenario": summary.scenario.value,
        "n": summary.n,
        "mean": fit.mean,
        "sd": fit.sd,
        "naive_se": naive_se(fit, summary.n),
        "bootstrap_se": boot.se,
        "model": fit.fitted.label(),
        "B": args.B,
        "seed": args.seed,
        "diagnostics": {**fit.diagnostics, "bootstrap": boot.diagnostics},
    }

    if args.format == "json":
        print(json.dumps(result, indent=2, default=str))
    elif args.format == "csv":
        keys = ["method", "scenario", "n", "mean", "sd", "naive_se", "bootstrap_se", "model", "B", "seed"]
        print(",".join(keys))
        print(",".join(repr(result[k]) if isinstance(result[k], float) else str(result[k]) for k in keys))
    else:
        print(format_estimate(result, args.format))


# --- meta ---

def handle_meta(args: Namespace) -> None:
    cfg = RunConfig(
        method=Method(args.method),
        se_variants=_se_variants(args.se),
        B=args.B,
        seed=args.seed,
        min_n=args.min_n,
        skew_cap=args.skew_cap,
        min_studies=args.min_studies,
        model=EffectModel(args.model),
        level=args.level,
        output_format=args.format,
    )
    records = load_study_csv(args.csv)
    report = run_application(records, cfg)

    if args.out:
        paths = reports.write_application(report, args.out)
        logger.info("Report files: %s", ", ".join(str(p) for p in paths))

    if args.format == "json":
        print(report.model_dump_json(indent=2))
    elif args.format == "csv":
        print(reports.outcome_frame(report).to_csv(index=False), end="")
    else:
        print(format_application(
            report, reports.outcome_frame(report), reports.study_frame(report), args.format,
        ))


# --- simulate ---

def load_plan(path: Path) -> SimulationPlan:
    """Parse a TOML or JSON simulation config; every problem is a ConfigError."""
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = tomllib.loads(text) if path.suffix.lower() == ".toml" else json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    try:
        return SimulationPlan.model_validate(data)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors()
        )
        raise ConfigError(f"invalid simulation config: {problems}") from exc


def handle_simulate(args: Namespace) -> None:
    plan = load_plan(Path(args.config))
    if not plan.study_cells and not plan.meta_cells:
        logger.warning("Simulation plan %s names no cells; nothing to do", args.config)
        print("No cells to run.")
        return

    if args.dry_run:
        print(format_plan(plan))
        return

    out = Path(args.out)
    results: List[SimCellResult] = []
    for cfg in plan.study_cells:
        results.append(run_study_cell(cfg))
        reports.write_cell(results[-1], out)
    for cfg in plan.meta_cells:
        results.append(run_meta_cell(cfg))
        reports.write_cell(results[-1], out)

    sections = []
    for kind in ("study", "meta"):
        frame = reports.combined_frame(results, kind)
        if frame.empty:
            continue
        frame.to_csv(out / f"combined_{kind}.csv", index=False)
        rows = frame_rows(frame)
        (out / f"combined_{kind}.md").write_text(render(rows, "markdown") + "\n", encoding="utf-8")
        sections.append(render(rows, args.format))

    flagged = [r.cell_id for r in results if r.flagged]
    if flagged:
        print(f"Warning: REML failures above threshold in {', '.join(flagged)}", file=sys.stderr)
    print("\n\n".join(sections))
    print(f"\nWrote {len(results)} cell result(s) to {out}")
