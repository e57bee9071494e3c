"""
This module normalizes the output of verification experiments (reports or errors)
and prepares the summary table and report files.
"""

from pathlib import Path
from typing import Dict, List, Union

import pandas as pd

from core.logger.logger import setup_logger
from core.verify import CheckReport

logger = setup_logger(__name__)

SUMMARY_COLUMNS = ["experiment", "check", "status", "passed", "tolerance", "measured", "notes"]

ExperimentOutcome = Union[List[CheckReport], Dict[str, str]]


def middleware(results: Dict[str, ExperimentOutcome]) -> Dict[str, List[CheckReport]]:
    """
    Converts every experiment outcome into a list of CheckReports. An experiment that raised
    (recorded as {"status": "error", "error": ...}) becomes a single failed report.

    Raises:
        TypeError: on an outcome of unknown type.
    """
    logger.debug(f"Starting middleware with {len(results)} experiments")
    processed: Dict[str, List[CheckReport]] = {}
    for name, outcome in results.items():
        if isinstance(outcome, list) and all(isinstance(r, CheckReport) for r in outcome):
            processed[name] = outcome
        elif isinstance(outcome, dict) and outcome.get("status") == "error":
            processed[name] = [CheckReport(name=name, passed=False, notes=f"error: {outcome.get('error')}")]
        else:
            logger.warning(f"Middleware received unsupported outcome for {name}: {type(outcome)}")
            raise TypeError(f"Unsupported outcome for {name}: {type(outcome)}")
    return processed


def summary_table(reports: Dict[str, List[CheckReport]]) -> pd.DataFrame:
    """One row per check, sorted by experiment name for a stable column and row order."""
    rows = []
    for experiment in sorted(reports):
        for report in reports[experiment]:
            measured = ";".join(f"{k}={v:.6g}" for k, v in report.measured)
            rows.append((experiment, report.name, "pass" if report.passed else "fail", report.passed,
                         report.tolerance, measured, report.notes))
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def write_reports(reports: Dict[str, List[CheckReport]], out_dir: Union[str, Path]) -> Path:
    """Writes reports/<experiment>/<check>.toml and summary.csv; returns the summary path."""
    out_dir = Path(out_dir)
    for experiment, items in reports.items():
        for k, report in enumerate(items):
            report.save(out_dir / "reports" / experiment / f"{k:02d}_{report.name}.toml")
    summary = out_dir / "summary.csv"
    summary.parent.mkdir(parents=True, exist_ok=True)
    summary_table(reports).to_csv(summary, index=False)
    logger.info(f"Wrote summary of {sum(len(v) for v in reports.values())} checks to {summary}")
    return summary
