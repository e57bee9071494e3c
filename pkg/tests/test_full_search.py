import os
import sys
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from core import full_search
from core.config import load_config
from core.full_search import (
    SCALES,
    exp_algebra,
    exp_asymptotics,
    exp_barenblatt_1d,
    exp_barenblatt_2d,
    exp_comparison,
    exp_concentration,
    exp_lambda,
    exp_selfsim,
    exp_smoothing,
    run_suite,
)
from core.middleware.middleware import middleware, summary_table, write_reports
from core.verify import CheckReport


def passing(scale, rng):
    return [CheckReport(name="ok", passed=True, measured=[("draw", float(rng.uniform()))])]


def failing(scale, rng):
    raise RuntimeError("boom")


class TestMiddleware:
    """Normalization of experiment outcomes."""

    def test_error_becomes_failed_report(self):
        """Test an error outcome turns into one failed report."""
        processed = middleware({"broken": {"status": "error", "error": "boom"}})
        report = processed["broken"][0]
        assert not report.passed
        assert "boom" in report.notes

    def test_unsupported_outcome(self):
        """Test unknown outcome types are refused."""
        with pytest.raises(TypeError, match="Unsupported"):
            middleware({"odd": 42})

    def test_summary_and_files(self, tmp_path):
        """Test the summary table is sorted by experiment and every report is written."""
        reports = {
            "zeta": [CheckReport(name="a", passed=True, measured=[("x", 1.0)])],
            "alpha": [CheckReport(name="b", passed=False), CheckReport(name="c", passed=True)],
        }
        table = summary_table(reports)
        assert list(table["experiment"]) == ["alpha", "alpha", "zeta"]
        assert list(table["status"]) == ["fail", "pass", "pass"]
        summary = write_reports(reports, tmp_path)
        assert len(pd.read_csv(summary)) == 3
        assert (tmp_path / "reports" / "alpha" / "01_c.toml").exists()


class TestRunSuite:
    """Suite execution."""

    def test_unknown_suite(self):
        """Test an unknown suite name is refused."""
        with pytest.raises(ValueError, match="Unknown suite"):
            run_suite("nonexistent")

    @pytest.mark.parametrize("use_async", [True, False])
    def test_errors_are_collected(self, use_async):
        """Test a raising experiment does not stop the others."""
        with patch.dict(full_search.EXPERIMENTS, {"fine": passing, "broken": failing}), \
                patch.dict(full_search.SUITES, {"tiny": ("quick", ["fine", "broken"])}):
            reports = run_suite("tiny", use_async=use_async)
        assert reports["fine"][0].passed
        assert not reports["broken"][0].passed
        assert "boom" in reports["broken"][0].notes

    def test_seeded_draws_are_reproducible(self):
        """Test the same seed gives the same random draws, threaded or not."""
        with patch.dict(full_search.EXPERIMENTS, {"fine": passing}), \
                patch.dict(full_search.SUITES, {"tiny": ("quick", ["fine"])}):
            first = run_suite("tiny", seed=7)
            second = run_suite("tiny", seed=7, use_async=False)
            other = run_suite("tiny", seed=8)
        assert first["fine"][0].measured == second["fine"][0].measured
        assert first["fine"][0].measured != other["fine"][0].measured

    @patch.dict(os.environ, {"APLAB_THREADS": "2"})
    def test_thread_count_from_environment(self):
        """Test the worker count is read from APLAB_THREADS."""
        assert load_config(None, {"command": "verify"}).threads == 2

    @patch.dict(os.environ, {}, clear=True)
    def test_thread_count_default(self):
        """Test no environment variable leaves the worker count unset."""
        assert load_config(None, {"command": "verify"}).threads is None


class TestExperiments:
    """Experiments of the quick suite at reduced scale."""

    def test_algebra(self):
        """Test the exponent identities hold on random admissible vectors."""
        reports = exp_algebra(SCALES["quick"], np.random.default_rng(0))
        assert all(r.passed for r in reports), [r.name for r in reports if not r.passed]

    def test_lambda(self):
        """Test the symmetrization constant is 1 for the Laplacian."""
        assert exp_lambda(SCALES["quick"], np.random.default_rng(0))[0].passed

    @pytest.mark.parametrize("experiment", [exp_barenblatt_1d, exp_barenblatt_2d, exp_smoothing, exp_comparison,
                                            exp_concentration, exp_selfsim, exp_asymptotics])
    def test_pde_experiment_passes(self, experiment):
        """Test every report of a PDE experiment passes at the reduced scale."""
        reports = experiment(SCALES["quick"], np.random.default_rng(0))
        failed = {r.name: r.measured for r in reports if not r.passed}
        assert not failed

    def test_quick_suite_covers_every_experiment(self):
        """Test the quick suite runs the PDE experiments too."""
        assert set(full_search.SUITES["quick"][1]) == set(full_search.EXPERIMENTS)

    @pytest.mark.slow
    def test_quick_suite_runs(self, tmp_path):
        """Test every experiment of the quick suite completes without raising."""
        reports = run_suite("quick")
        assert set(reports) == set(full_search.SUITES["quick"][1])
        errors = [r.notes for items in reports.values() for r in items if r.notes.startswith("error")]
        assert not errors
        assert write_reports(reports, tmp_path).exists()


if __name__ == "__main__":
    pytest.main([__file__])
