"""
Command-line front end of the anisotropic fast-diffusion laboratory.

    python aplab.py exponents --N 2 --p 1.5,1.5
    python aplab.py region --out out/region
    python aplab.py verify --suite quick
"""

import sys
from typing import Any, Callable, Dict, List, Optional

import click

from core.api import run
from core.config import DEFAULT_SEED, load_config
from core.logger.logger import setup_logger, view_logs
from core.solver import SolverError

logger = setup_logger(__name__)

EXIT_CHECKS_FAILED = 1
EXIT_INVALID_CONFIG = 2
EXIT_SOLVER_FAILURE = 3


def _floats(value: Optional[str]) -> Optional[List[float]]:
    if value is None:
        return None
    try:
        return [float(x) for x in value.split(",") if x.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got '{value}'")


def _ints(value: Optional[str]) -> Optional[List[int]]:
    values = _floats(value)
    return None if values is None else [int(x) for x in values]


def _execute(command: str, config_path: Optional[str], overrides: Dict[str, Any]) -> None:
    overrides = {"command": command, **overrides}
    try:
        config = load_config(config_path, overrides)
        result = run(config)
    except SolverError as e:
        click.echo(f"solver failure: {e}", err=True)
        sys.exit(EXIT_SOLVER_FAILURE)
    except ValueError as e:
        click.echo(f"invalid configuration: {e}", err=True)
        sys.exit(EXIT_INVALID_CONFIG)

    for key, value in result.summary.items():
        click.echo(f"{key} = {value}")
    for path in result.artifacts:
        click.echo(f"wrote {path}")
    if result.status:
        sys.exit(EXIT_CHECKS_FAILED)


def common_options(func: Callable) -> Callable:
    func = click.option("--seed", type=int, default=None, help=f"Seed for randomized checks (default {DEFAULT_SEED}).")(func)
    func = click.option("--out", type=click.Path(), default=None, help="Output directory.")(func)
    func = click.option("--config", "config_path", type=click.Path(), default=None, help="TOML experiment file.")(func)
    return func


def exponent_options(func: Callable) -> Callable:
    func = click.option("--m", default=None, help="Comma-separated m_i (doubly nonlinear rows).")(func)
    func = click.option("--p", default=None, help="Comma-separated exponents p_i.")(func)
    func = click.option("--N", "N", type=int, default=None, help="Dimension.")(func)
    return func


def grid_options(func: Callable) -> Callable:
    func = click.option("--n", "n", default=None, help="Cell counts n_i (odd), one value or one per axis.")(func)
    func = click.option("--L", "L", default=None, help="Half-widths L_i, one value or one per axis.")(func)
    return func


def _exponent_overrides(N, p, m) -> Dict[str, Any]:
    section = {"N": N if N is not None else (len(_floats(p)) if p else None), "p": _floats(p), "m": _floats(m)}
    return {"exponents": section} if any(v is not None for v in section.values()) else {}


def _grid_overrides(L, n) -> Dict[str, Any]:
    section = {"L": _floats(L), "n": _ints(n)}
    return {"grid": section} if any(v is not None for v in section.values()) else {}


def _base(out, seed) -> Dict[str, Any]:
    return {"out": out, "seed": seed}


@click.group()
def cli():
    """Anisotropic p-Laplacian fast-diffusion laboratory."""


@cli.command()
@common_options
@exponent_options
def exponents(config_path, out, seed, N, p, m):
    """Exponent table: pbar, p_c, alpha, sigma_i, beta_i, mu, Lambda and the conditions."""
    _execute("exponents", config_path, {**_base(out, seed), **_exponent_overrides(N, p, m)})


@cli.command()
@common_options
@exponent_options
@click.option("--kind", type=click.Choice(["orthotropic", "isotropic", "upper", "lower", "very_singular"]),
              default=None)
@click.option("--C0", "C0", type=float, default=None)
@click.option("--M", "M", type=float, default=None, help="Target mass (orthotropic).")
@click.option("--extent", type=float, default=None)
@click.option("--samples", type=int, default=None)
def profile(config_path, out, seed, N, p, m, kind, C0, M, extent, samples):
    """Tabulates a closed-form profile or barrier along the axes and the diagonal."""
    section = {"kind": kind, "C0": C0, "M": M, "extent": extent, "samples": samples}
    _execute("profile", config_path, {**_base(out, seed), **_exponent_overrides(N, p, m), "profile": section})


@cli.command()
@common_options
@exponent_options
@grid_options
@click.option("--h", type=float, default=None, help="Time step.")
@click.option("--T", "T", type=float, default=None, help="Final time.")
@click.option("--initial", type=click.Choice(["barenblatt", "bump", "square", "file"]), default=None)
@click.option("--M", "M", type=float, default=None)
def evolve(config_path, out, seed, N, p, m, L, n, h, T, initial, M):
    """Runs the implicit scheme and checkpoints the trajectory."""
    _execute("evolve", config_path, {**_base(out, seed), **_exponent_overrides(N, p, m), **_grid_overrides(L, n),
                                     "solver": {"h": h, "T": T}, "profile": {"initial": initial, "M": M}})


@cli.command()
@common_options
@exponent_options
@grid_options
@click.option("--tau-step", type=float, default=None)
@click.option("--tau-end", type=float, default=None)
@click.option("--M", "M", type=float, default=None)
def rescaled(config_path, out, seed, N, p, m, L, n, tau_step, tau_end, M):
    """Runs the rescaled drift-diffusion flow."""
    _execute("rescaled", config_path, {**_base(out, seed), **_exponent_overrides(N, p, m),
                                       **_grid_overrides(L, n),
                                       "solver": {"tau_step": tau_step, "tau_end": tau_end},
                                       "profile": {"M": M}})


@cli.command()
@common_options
@exponent_options
@grid_options
@click.option("--M", "M", type=float, default=None)
@click.option("--tau-step", type=float, default=None)
@click.option("--stop-tol", type=float, default=None)
def selfsim(config_path, out, seed, N, p, m, L, n, M, tau_step, stop_tol):
    """Computes the self-similar profile of mass M and fits its tails."""
    _execute("selfsim", config_path, {**_base(out, seed), **_exponent_overrides(N, p, m), **_grid_overrides(L, n),
                                      "solver": {"tau_step": tau_step, "stop_tol": stop_tol},
                                      "profile": {"M": M}})


@cli.command()
@common_options
@click.option("--lo", type=float, default=None)
@click.option("--hi", type=float, default=None)
@click.option("--n", "n", type=int, default=None)
def region(config_path, out, seed, lo, hi, n):
    """Classifies the (p1, p2) plane for N = 2."""
    _execute("region", config_path, {**_base(out, seed), "region": {"lo": lo, "hi": hi, "n": n}})


@cli.command()
@common_options
@exponent_options
@click.option("--suite", default=None, help="quick, orthotropic-acceptance, anisotropic-acceptance, acceptance.")
@click.option("--trajectory", type=click.Path(), default=None, help="Stored trajectory directory to check.")
def verify(config_path, out, seed, N, p, m, suite, trajectory):
    """Runs a verification suite, or the generic checks on a stored trajectory."""
    _execute("verify", config_path, {**_base(out, seed), **_exponent_overrides(N, p, m),
                                     "suite": suite, "trajectory": trajectory})


@cli.command()
@click.option("--tail", type=int, default=None, help="Show only the last lines.")
def logs(tail):
    """Shows the newest log file."""
    click.echo(view_logs(tail))


if __name__ == "__main__":
    cli()
