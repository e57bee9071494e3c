"""
Dispatches an ExperimentConfig to the matching computation and writes its artifacts.
"""

from pathlib import Path
from typing import Any, Dict, List

import numpy as np
from pydantic import BaseModel

from core.config import ExperimentConfig, dump_config
from core.exponents import region_scan
from core.full_search import run_suite, verify_trajectory
from core.grid import Field, TensorGrid, load_field, save_field
from core.logger.logger import setup_logger
from core.middleware.middleware import summary_table, write_reports
from core.profiles import (
    LowerBarrier,
    OrthotropicProfile,
    UpperBarrier,
    barenblatt_solution,
    calibrate_orthotropic,
    eval_isotropic_barenblatt,
    eval_lower_barrier,
    eval_orthotropic,
    eval_truncated_barrier,
    eval_upper_barrier,
    very_singular,
)
from core.solver import (
    RescaledConfig,
    SolverError,
    gaussian_bump,
    evolve,
    load_trajectory,
    rescaled_evolve,
    save_trajectory,
    steady_profile,
)
from core.verify import check_positivity_and_tails
from core.visualizer import diagnostics_table, exponent_table, history_table, profile_table, region_table, write_table

logger = setup_logger(__name__)


class RunResult(BaseModel):
    status: int = 0
    artifacts: List[Path] = []
    summary: Dict[str, Any] = {}


def _orthotropic(config: ExperimentConfig) -> OrthotropicProfile:
    exp = config.exponents.vector
    if not exp.is_orthotropic:
        raise ValueError("this operation needs equal exponents p_i = p")
    if config.profile.M is not None:
        return calibrate_orthotropic(exp.N, exp.p[0], config.profile.M)
    return OrthotropicProfile(N=exp.N, p=exp.p[0], C0=config.profile.C0 or 1.0)


def _profile_function(config: ExperimentConfig):
    """Vectorized evaluator of the configured profile and whether it is singular at the origin."""
    exp = config.exponents.vector
    section = config.profile
    if section.kind == "orthotropic":
        profile = _orthotropic(config)
        return (lambda y: eval_orthotropic(profile, y)), False
    if section.kind == "isotropic":
        return (lambda y: eval_isotropic_barenblatt(exp.N, exp.p[0], section.C0 or 1.0, y)), False
    if section.kind == "upper":
        barrier = UpperBarrier.build(exp, Fstar=section.Fstar)
        if section.Fstar is not None:
            return (lambda y: eval_truncated_barrier(barrier, y)), False
        return (lambda y: eval_upper_barrier(barrier, y)), True
    if section.kind == "lower":
        theta = section.theta or [1.0] * exp.N
        barrier = LowerBarrier.build(exp, section.gamma_exp, theta)
        return (lambda y: eval_lower_barrier(barrier, y)), False
    if section.kind == "very_singular":
        if not exp.is_orthotropic:
            raise ValueError("very singular solutions need equal exponents")
        return (lambda y: very_singular(exp.p[0], exp.N, y, section.t, section.k)), True
    raise ValueError(f"Unknown profile kind {section.kind}")


def _initial_datum(config: ExperimentConfig, grid: TensorGrid) -> Field:
    section = config.profile
    M = section.M or 1.0
    if section.initial == "barenblatt":
        profile = _orthotropic(config)
        values = np.asarray(barenblatt_solution(profile, grid.centers(), section.t)).reshape(grid.shape)
        return Field(grid=grid, values=values, time_stamp=section.t)
    if section.initial == "file":
        if section.path is None:
            raise ValueError("profile.initial = 'file' needs profile.path")
        return load_field(section.path)
    x = grid.centers()
    if section.shift is not None:
        x = x - np.asarray(section.shift, dtype=float)
    if section.initial == "square":
        values = (np.max(np.abs(x), axis=-1) <= section.width).astype(float)
    else:
        values = np.exp(-np.sum(x * x, axis=-1) / (2.0 * section.width ** 2))
    values = values.reshape(grid.shape)
    return Field(grid=grid, values=values * M / (values.sum() * grid.cell_volume), time_stamp=0.0)


def _checkpoint(exc: SolverError, out: Path) -> None:
    if exc.trajectory is not None:
        path = save_trajectory(exc.trajectory, out / "checkpoint")
        logger.error(f"Solver failed at t={exc.time}; last good state saved to {path}")


def run(config: ExperimentConfig) -> RunResult:
    """
    Runs one experiment command and writes its artifacts below config.out.

    Returns:
        RunResult: status 0 on success (status 1 for a verify run with failed checks),
                   written artifact paths and a small summary.

    Raises:
        ValueError: if the configuration violates a precondition.
        SolverError: if the solver fails; the last good state is checkpointed first.
    """
    logger.info(f"Starting run: command={config.command}")
    logger.debug(f"Parameters: {config.model_dump(exclude_none=True)}")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = [dump_config(config, out / "config.toml")]
    summary: Dict[str, Any] = {}
    status = 0

    if config.command == "exponents":
        table = exponent_table(config.exponents.vector, config.exponents.m)
        artifacts.append(write_table(table, out / "exponents.csv"))
        summary = {str(q): v for q, v in zip(table["quantity"], table["value"])}

    elif config.command == "profile":
        fn, singular = _profile_function(config)
        table = profile_table(fn, config.exponents.N, config.profile.extent, config.profile.samples,
                              skip_origin=singular)
        artifacts.append(write_table(table, out / f"profile_{config.profile.kind}.csv"))
        summary = {"rows": len(table)}

    elif config.command == "evolve":
        grid = config.grid.build(config.exponents.N)
        u0 = _initial_datum(config, grid)
        try:
            traj = evolve(u0, config.solver.T, config.solver.step_config(), config.exponents.vector,
                          record_every=config.solver.record_every)
        except SolverError as exc:
            _checkpoint(exc, out)
            raise
        artifacts.append(save_trajectory(traj, out / "trajectory"))
        artifacts.append(write_table(history_table(traj), out / "history.csv"))
        artifacts.append(write_table(diagnostics_table(traj), out / "diagnostics.csv"))
        summary = {"steps": len(traj.diagnostics) - 1, "final_time": traj.times[-1]}

    elif config.command == "rescaled":
        grid = config.grid.build(config.exponents.N)
        rcfg = RescaledConfig.build(config.exponents.vector, tau_step=config.solver.tau_step,
                                    t0=config.solver.t0, tau_max=config.solver.tau_max,
                                    boundary=config.solver.boundary)
        v0 = _initial_datum(config, grid) if config.profile.initial != "bump" else gaussian_bump(
            grid, config.profile.M or 1.0, config.profile.width)
        try:
            traj = rescaled_evolve(v0, config.solver.tau_end, rcfg, config.solver.step_config(),
                                   record_every=config.solver.record_every)
        except SolverError as exc:
            _checkpoint(exc, out)
            raise
        artifacts.append(save_trajectory(traj, out / "trajectory"))
        artifacts.append(write_table(history_table(traj), out / "history.csv"))
        artifacts.append(write_table(diagnostics_table(traj), out / "diagnostics.csv"))
        summary = {"steps": len(traj.diagnostics) - 1, "final_tau": traj.times[-1]}

    elif config.command == "selfsim":
        grid = config.grid.build(config.exponents.N)
        rcfg = RescaledConfig.build(config.exponents.vector, tau_step=config.solver.tau_step,
                                    tau_max=config.solver.tau_max, boundary=config.solver.boundary)
        try:
            profile = steady_profile(config.profile.M, rcfg, config.solver.step_config(), grid,
                                     stop_tol=config.solver.stop_tol)
        except SolverError as exc:
            _checkpoint(exc, out)
            raise
        artifacts.append(save_field(profile, out / "steady_profile.csv"))
        tails = check_positivity_and_tails(profile, config.exponents.vector)
        artifacts.append(tails.save(out / "tails.toml"))
        summary = dict(tails.measured)

    elif config.command == "region":
        scan = region_scan(config.region.lo, config.region.hi, config.region.n)
        table = region_table(scan)
        artifacts.append(write_table(table, out / "region.csv"))
        summary = table["label"].value_counts().to_dict()

    elif config.command == "verify":
        if config.trajectory is not None:
            if config.exponents is None:
                raise ValueError("verifying a stored trajectory needs an [exponents] section")
            reports = verify_trajectory(load_trajectory(config.trajectory), config.exponents.p)
        else:
            reports = run_suite(config.suite, seed=config.seed, threads=config.threads)
        artifacts.append(write_reports(reports, out))
        table = summary_table(reports)
        summary = {"checks": len(table), "failed": int((~table["passed"]).sum())}
        status = 0 if summary["failed"] == 0 else 1

    else:
        logger.warning(f"Unknown command {config.command}")
        raise ValueError(f"Unknown command '{config.command}'")

    return RunResult(status=status, artifacts=artifacts, summary=summary)
