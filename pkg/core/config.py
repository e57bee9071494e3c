"""
Experiment configuration: typed sections validated with pydantic, loaded from TOML
files and overridden by command-line flags.
"""

import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import toml
from pydantic import BaseModel, Field, model_validator

from core.exponents import ExponentVector, check_conditions
from core.grid import TensorGrid
from core.logger.logger import setup_logger
from core.solver import StepConfig

logger = setup_logger(__name__)

DEFAULT_SEED = 20240521

Command = Literal["exponents", "profile", "evolve", "rescaled", "selfsim", "region", "verify"]


class ExponentSection(BaseModel):
    N: int = Field(ge=1)
    p: List[float]
    m: Optional[List[float]] = None

    @model_validator(mode="after")
    def _lengths(self) -> "ExponentSection":
        ExponentVector(N=self.N, p=tuple(self.p))
        if self.m is not None and len(self.m) != self.N:
            raise ValueError(f"expected {self.N} values of m, got {len(self.m)}")
        return self

    @property
    def vector(self) -> ExponentVector:
        return ExponentVector(N=self.N, p=tuple(self.p))


class GridSection(BaseModel):
    L: List[float]
    n: List[int]

    def build(self, N: int) -> TensorGrid:
        L = self.L * N if len(self.L) == 1 else self.L
        n = self.n * N if len(self.n) == 1 else self.n
        return TensorGrid(N=N, L=tuple(L), n=tuple(n))


class SolverSection(BaseModel):
    h: float = Field(default=0.01, gt=0)
    eps: Optional[float] = Field(default=None, ge=0)
    newton_tol: float = Field(default=1e-8, gt=0)
    max_iters: int = Field(default=50, ge=1)
    growth: float = Field(default=1.0, ge=1.0)
    h_max: Optional[float] = Field(default=None, gt=0)
    T: Optional[float] = Field(default=None, gt=0)
    tau_end: Optional[float] = Field(default=None, gt=0)
    tau_step: float = Field(default=0.05, gt=0)
    tau_max: float = Field(default=60.0, gt=0)
    t0: float = Field(default=0.0, ge=0)
    boundary: Literal["zero_flux", "dirichlet"] = "zero_flux"
    stop_tol: float = Field(default=1e-4, gt=0)
    record_every: int = Field(default=1, ge=1)

    def step_config(self) -> StepConfig:
        return StepConfig(h=self.h, eps=self.eps, newton_tol=self.newton_tol, max_iters=self.max_iters,
                          growth=self.growth, h_max=self.h_max)


class ProfileSection(BaseModel):
    """Profile data; `initial` selects the initial datum of evolution runs."""

    kind: Literal["orthotropic", "isotropic", "upper", "lower", "very_singular"] = "orthotropic"
    C0: Optional[float] = Field(default=None, gt=0)
    M: Optional[float] = Field(default=None, gt=0)
    t: float = Field(default=1.0, gt=0)
    k: float = Field(default=1.0, gt=0)
    gamma_exp: float = Field(default=4.0, gt=0)
    theta: Optional[List[float]] = None
    Fstar: Optional[float] = Field(default=None, gt=0)
    extent: float = Field(default=10.0, gt=0)
    samples: int = Field(default=201, ge=3)
    initial: Literal["barenblatt", "bump", "square", "file"] = "bump"
    width: float = Field(default=1.0, gt=0)
    shift: Optional[List[float]] = None
    path: Optional[Path] = None


class RegionSection(BaseModel):
    lo: float = 1.0
    hi: float = Field(default=2.5, gt=1.0)
    n: int = Field(default=150, ge=2)


class ExperimentConfig(BaseModel):
    command: Command
    exponents: Optional[ExponentSection] = None
    grid: Optional[GridSection] = None
    solver: SolverSection = SolverSection()
    profile: ProfileSection = ProfileSection()
    region: RegionSection = RegionSection()
    suite: str = "quick"
    trajectory: Optional[Path] = None
    out: Path = Path("out")
    seed: int = Field(default=DEFAULT_SEED, ge=0)

    @model_validator(mode="after")
    def _preconditions(self) -> "ExperimentConfig":
        needs_exponents = self.command in ("exponents", "profile", "evolve", "rescaled", "selfsim")
        if needs_exponents and self.exponents is None:
            raise ValueError(f"command '{self.command}' needs an [exponents] section")
        if self.command in ("evolve", "rescaled", "selfsim"):
            if self.grid is None:
                raise ValueError(f"command '{self.command}' needs a [grid] section")
            self.grid.build(self.exponents.N)
        if self.command == "evolve" and self.solver.T is None:
            raise ValueError("command 'evolve' needs solver.T")
        if self.command == "rescaled" and self.solver.tau_end is None:
            raise ValueError("command 'rescaled' needs solver.tau_end")
        if self.command in ("rescaled", "selfsim"):
            report = check_conditions(self.exponents.vector)
            if not (report.H1 and report.H2 and report.H3):
                raise ValueError(f"rescaled flow needs H1, H2, H3; got H1={report.H1} H2={report.H2} H3={report.H3}")
        if self.command == "selfsim" and self.profile.M is None:
            raise ValueError("command 'selfsim' needs profile.M")
        return self

    @property
    def threads(self) -> Optional[int]:
        value = os.getenv("APLAB_THREADS")
        return int(value) if value else None


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        elif isinstance(value, dict):
            merged[key] = _merge({}, value)
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Reads a TOML experiment file (optional) and applies overrides on top.

    Raises:
        ValueError: if the file is missing or the merged configuration is invalid.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            logger.warning(f"Config file {path} not found")
            raise ValueError(f"Config file {path} not found")
        data = toml.load(path)
        logger.debug(f"Loaded config file {path}: {data}")
    merged = _merge(data, overrides or {})
    return ExperimentConfig.model_validate(merged)


def dump_config(config: ExperimentConfig, path: Union[str, Path]) -> Path:
    """Writes the effective configuration next to the artifacts."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = config.model_dump(mode="json", exclude_none=True)
    with open(path, "w", encoding="utf-8") as fh:
        toml.dump(data, fh)
    return path
