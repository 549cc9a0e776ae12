import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from typing import List, Optional

# ==========================================================
# LOGGING CONFIG
# ==========================================================
from config import DEFAULT_CONFIG, DEFAULT_SEED, LOG_LEVEL, REPORT_DIR

logging.basicConfig(
    level=LOG_LEVEL,
    format="%(asctime)s - %(levelname)s - %(message)s",
    handlers=[logging.StreamHandler()],
)

import numpy as np
import pandas as pd
import pydantic
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

# ==========================================================
# INTERNAL MODULES
# ==========================================================
try:
    from errors import ConfigError, MultidivError
    from models import RunConfig, RunReport, TaskResult, TaskSpec
    from tasks import BUILTIN_CHECKS, Workspace, run_task
    logging.info("✅ Core modules imported successfully")
except Exception as e:
    logging.error(f"❌ Failed to import core modules: {e}", exc_info=True)
    raise

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2

FAMILIES = {
    "check": [
        "check-algebra", "check-lemma1", "check-aux", "check-leibniz",
        "check-agreement", "check-cartan", "check-stokes",
    ],
    "div": ["div"],
    "weakdiv": ["weakdiv"],
    "surface": ["surface"],
    "lemma3": ["lemma3"],
    "theorem2": ["theorem2", "lift"],
    "restriction": ["restriction"],
    "corollary": ["corollary"],
}

console = Console(stderr=True)


# ==========================================================
# CONFIG
# ==========================================================
def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"config {path} violates the schema:\n{e}")
    logging.info(f"[CONFIG] loaded {path} ({len(config.tasks)} task(s))")
    return config


def config_digest(config: RunConfig, seed: int) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(f"{canonical}|seed={seed}".encode("utf-8")).hexdigest()


def library_versions() -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.VERSION,
    }


def select_tasks(config: RunConfig, command: str) -> List[TaskSpec]:
    if command == "run":
        return list(config.tasks)
    selected = [t for t in config.tasks if t.kind in FAMILIES[command]]
    if not selected and command == "check":
        logging.info("[CONFIG] no check tasks declared, running the built-in random suites")
        selected = [TaskSpec(kind=kind) for kind in BUILTIN_CHECKS]
    return selected


# ==========================================================
# RUN
# ==========================================================
def run(config: RunConfig, command: str, seed: int, points: Optional[int] = None, tol: Optional[float] = None,
        timings: bool = False) -> RunReport:
    tasks = select_tasks(config, command)
    if not tasks:
        raise ConfigError("no tasks")
    try:
        ws = Workspace(config, seed, points=points, tolerance=tol)
    except ConfigError:
        raise
    except MultidivError as e:
        raise ConfigError(f"cannot build the declared objects: {e}")
    results: List[TaskResult] = []
    elapsed = {}
    for index, task in enumerate(tasks):
        started = time.perf_counter()
        results.append(run_task(ws, task, index))
        elapsed[results[-1].name] = round(time.perf_counter() - started, 3)
        logging.info(f"[TASK] {results[-1].name} took {elapsed[results[-1].name]:.2f}s")
    return RunReport(
        config_digest=config_digest(config, seed),
        seed=seed,
        versions=library_versions(),
        tasks=results,
        passed=all(r.passed for r in results),
        timings=elapsed if timings else None,
    )


# ==========================================================
# OUTPUT
# ==========================================================
def report_frame(report: RunReport) -> pd.DataFrame:
    """Flat table of everything tabular in a report."""
    rows = []
    for task in report.tasks:
        base = {"task": task.name, "kind": task.kind, "passed": task.passed, "tolerance": task.tolerance}
        for identity in task.identities:
            rows.append({**base, "quantity": identity.identity, "value": identity.max_rel_residual,
                         "error": identity.max_abs_residual, "r": None})
        for weak in task.weak:
            rows.append({**base, "quantity": f"weak[{weak.witness}]", "value": weak.residual,
                         "error": weak.error_estimate, "r": None})
        if task.surface is not None:
            s = task.surface
            for r, value, error in zip(s.r_values, s.values, s.errors):
                rows.append({**base, "quantity": s.quantity, "value": value, "error": error, "r": r})
            rows.append({**base, "quantity": f"{s.quantity} (r→0)", "value": s.extrapolated,
                         "error": s.extrapolation_error, "r": 0.0})
        if task.theorem is not None:
            th = task.theorem
            rows.append({**base, "quantity": "lhs", "value": th.lhs, "error": th.lhs_error, "r": None})
            for r, value, error in zip(th.r_values, th.rhs_values, th.rhs_errors):
                rows.append({**base, "quantity": "rhs", "value": value, "error": error, "r": r})
            rows.append({**base, "quantity": "rhs (r→0)", "value": th.rhs_extrapolated,
                         "error": th.rhs_extrapolation_error, "r": 0.0})
            if th.ambient_lift_mismatch is not None:
                rows.append({**base, "quantity": "ambient lift mismatch", "value": th.ambient_lift_mismatch,
                             "error": None, "r": None})
        if task.table is not None:
            frame = pd.DataFrame(task.table.values, columns=task.table.columns)
            coords = pd.DataFrame(task.table.points, columns=[f"x{i}" for i in range(len(task.table.points[0]))])
            frame["residual"] = task.table.residuals or None
            for record in pd.concat([coords, frame], axis=1).to_dict("records"):
                rows.append({**base, "quantity": "div", **record})
        if task.error is not None:
            rows.append({**base, "quantity": "error", "value": None, "error": None, "r": None, "message": task.error})
    return pd.DataFrame(rows)


def render(report: RunReport, fmt: str) -> str:
    if fmt == "csv":
        return report_frame(report).to_csv(index=False)
    return report.model_dump_json(indent=2) + "\n"


def write_output(text: str, out: Optional[str], command: str, digest: str, fmt: str) -> str:
    if out == "-":
        sys.stdout.write(text)
        return "-"
    if out is None:
        os.makedirs(REPORT_DIR, exist_ok=True)
        out = os.path.join(REPORT_DIR, f"{command}-{digest[:12]}.{fmt}")
        sys.stdout.write(text)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(text)
    logging.info(f"[REPORT] written to {out}")
    return out


def print_summary(report: RunReport):
    table = Table(title=f"multidiv · seed {report.seed}")
    table.add_column("task")
    table.add_column("kind")
    table.add_column("result")
    table.add_column("tolerance", justify="right")
    table.add_column("detail")
    for task in report.tasks:
        if task.error:
            detail = task.error
        elif task.identities:
            detail = f"max rel residual {max(i.max_rel_residual for i in task.identities):.2e}"
        elif task.weak:
            detail = f"max weak residual {max(w.residual for w in task.weak):.2e}"
        elif task.surface is not None:
            detail = f"σ → {task.surface.extrapolated} (direct {task.surface.direct:.10g})"
        elif task.theorem is not None:
            detail = f"|lhs − rhs| = {task.theorem.difference}"
        elif task.table is not None:
            detail = f"{len(task.table.points)} points, oracle deviation {task.table.oracle_deviation}"
        else:
            detail = ""
        verdict = "[green]passed[/green]" if task.passed else "[red]violated[/red]"
        table.add_row(task.name, task.kind, verdict, f"{task.tolerance:.1e}" if task.tolerance else "", detail)
    console.print(table)


# ==========================================================
# CLI
# ==========================================================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multidiv", description="Divergence of multivector fields and surface measures")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ["check", *[f for f in FAMILIES if f != "check"], "run"]:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", default=DEFAULT_CONFIG)
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--points", type=int, default=None)
        cmd.add_argument("--tol", type=float, default=None)
        cmd.add_argument("--format", choices=["json", "csv"], default="json")
        cmd.add_argument("--out", default=None, help="report path, '-' for stdout only")
        cmd.add_argument("--timings", action="store_true", help="include wall-clock times in the report")
    sub.add_parser("schema")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        sys.stdout.write(json.dumps(RunConfig.model_json_schema(), indent=2) + "\n")
        return EXIT_OK

    try:
        config = load_config(args.config)
        seed = args.seed if args.seed is not None else (config.seed if config.seed is not None else DEFAULT_SEED)
        report = run(config, args.command, seed, args.points, args.tol, args.timings)
    except ConfigError as e:
        logging.error(f"❌ [CONFIG] {e}")
        return EXIT_CONFIG
    except Exception as e:
        logging.error(f"❌ [TASK] unexpected failure: {e}", exc_info=True)
        raise

    write_output(render(report, args.format), args.out, args.command, report.config_digest, args.format)
    print_summary(report)
    return EXIT_OK if report.passed else EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
