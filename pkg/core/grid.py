"""
Tensor-product grids on origin-centered boxes and cell-centered fields: midpoint
quadrature, decreasing rearrangement, Schwarz symmetrization on the same grid,
the mass-concentration order and field (de)serialization.
"""

import math
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import toml
from pydantic import BaseModel, ConfigDict, Field as PydanticField, field_validator, model_validator
from scipy.interpolate import RegularGridInterpolator

from core.logger.logger import setup_logger

logger = setup_logger(__name__)

ANALYTIC_TOL = 1e-9


class TensorGrid(BaseModel):
    """Box prod_i [-L_i, L_i] split into n_i cells per axis, n_i odd so one cell is centered at 0."""

    model_config = ConfigDict(frozen=True)

    N: int = PydanticField(ge=1)
    L: Tuple[float, ...]
    n: Tuple[int, ...]

    @field_validator("L")
    @classmethod
    def _positive_widths(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(not math.isfinite(x) or x <= 0 for x in value):
            raise ValueError("every half-width L_i must be finite and > 0")
        return value

    @field_validator("n")
    @classmethod
    def _odd_counts(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        for ni in value:
            if ni < 3 or ni % 2 == 0:
                raise ValueError(f"cell counts must be odd and >= 3, got {ni}")
        return value

    @model_validator(mode="after")
    def _dimensions(self) -> "TensorGrid":
        if len(self.L) != self.N or len(self.n) != self.N:
            raise ValueError(f"L and n must have {self.N} entries")
        return self

    @classmethod
    def cube(cls, N: int, L: float, n: int) -> "TensorGrid":
        return cls(N=N, L=(float(L),) * N, n=(int(n),) * N)

    @property
    def h(self) -> Tuple[float, ...]:
        return tuple(2.0 * Li / ni for Li, ni in zip(self.L, self.n))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.n)

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def center_index(self) -> Tuple[int, ...]:
        return tuple(ni // 2 for ni in self.n)

    def axis(self, i: int) -> np.ndarray:
        """Cell centers along axis i; the middle one is exactly 0."""
        offsets = np.arange(self.n[i]) - self.n[i] // 2
        return offsets * self.h[i]

    def mesh(self) -> List[np.ndarray]:
        return np.meshgrid(*[self.axis(i) for i in range(self.N)], indexing="ij")

    def centers(self) -> np.ndarray:
        """All cell centers as an (size, N) array in C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)

    def squared_radius(self) -> np.ndarray:
        """|x|^2 per cell from integer offsets, so mirror cells tie exactly."""
        r2 = np.zeros(self.shape)
        for i, m in enumerate(np.meshgrid(*[np.arange(ni) - ni // 2 for ni in self.n], indexing="ij")):
            r2 = r2 + (m.astype(float) ** 2) * self.h[i] ** 2
        return r2

    def interior_mask(self, margin: int) -> np.ndarray:
        """Cells at least `margin` cells away from every face of the box."""
        mask = np.zeros(self.shape, dtype=bool)
        slices = tuple(slice(margin, ni - margin) for ni in self.n)
        mask[slices] = True
        return mask


class Field(BaseModel):
    """Cell-centered values on a TensorGrid, optionally stamped with a time."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: TensorGrid
    values: np.ndarray
    time_stamp: Optional[float] = PydanticField(default=None, ge=0)
    solution: bool = True

    @field_validator("values", mode="before")
    @classmethod
    def _frozen_array(cls, value) -> np.ndarray:
        values = np.array(value, dtype=float)
        values.setflags(write=False)
        return values

    @model_validator(mode="after")
    def _check_values(self) -> "Field":
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values have shape {self.values.shape}, grid expects {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        if self.solution and np.any(self.values < 0.0):
            raise ValueError(f"solution fields must be nonnegative (min={self.values.min():.3e})")
        return self

    @classmethod
    def zeros(cls, grid: TensorGrid, time_stamp: Optional[float] = None) -> "Field":
        return cls(grid=grid, values=np.zeros(grid.shape), time_stamp=time_stamp)

    @classmethod
    def sample(cls, grid: TensorGrid, fn: Callable[[np.ndarray], np.ndarray],
               time_stamp: Optional[float] = None) -> "Field":
        """Evaluates a vectorized function of (M, N) points at every cell center."""
        values = np.asarray(fn(grid.centers()), dtype=float).reshape(grid.shape)
        return cls(grid=grid, values=values, time_stamp=time_stamp)

    def with_values(self, values: np.ndarray, time_stamp: Optional[float] = None) -> "Field":
        return Field(grid=self.grid, values=np.reshape(values, self.grid.shape),
                     time_stamp=time_stamp, solution=self.solution)


def integrate(f: Field) -> float:
    """Midpoint rule: sum of values times the cell volume."""
    return float(np.sum(f.values) * f.grid.cell_volume)


def lq_norm(f: Field, q: float) -> float:
    """
    Discrete L^q norm, q in [1, inf]; q = inf gives max |value|.

    Raises:
        ValueError: if q < 1.
    """
    if q < 1:
        logger.warning(f"lq_norm called with q={q}")
        raise ValueError(f"q must be >= 1, got {q}")
    a = np.abs(f.values)
    if math.isinf(q):
        return float(a.max())
    return float((np.sum(a ** q) * f.grid.cell_volume) ** (1.0 / q))


class ConcentrationCurve(BaseModel):
    """
    Running integral s -> int_0^s u*(sigma) dsigma at the cumulative cell volumes.
    Both arrays start at 0; `levels` holds the step values of u*.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    volumes: np.ndarray
    masses: np.ndarray
    levels: np.ndarray

    @property
    def total_mass(self) -> float:
        return float(self.masses[-1])

    def at(self, s: Union[float, np.ndarray]) -> np.ndarray:
        # Exact: the running integral of a step function is piecewise linear
        return np.interp(s, self.volumes, self.masses)


def decreasing_rearrangement(f: Field) -> ConcentrationCurve:
    """Sorts cell values in descending order over cumulative volumes."""
    vol = f.grid.cell_volume
    levels = np.sort(f.values.ravel())[::-1]
    volumes = vol * np.arange(levels.size + 1, dtype=float)
    masses = np.concatenate([[0.0], np.cumsum(levels) * vol])
    return ConcentrationCurve(volumes=volumes, masses=masses, levels=levels)


def schwarz_symmetrize(f: Field) -> Field:
    """
    Radially decreasing rearrangement onto the same grid: cells ranked by distance from
    the origin (ties by lexicographic cell index) receive the values in descending order.
    """
    r2 = f.grid.squared_radius().ravel()
    order = np.lexsort((np.arange(r2.size), r2))
    sorted_values = np.sort(f.values.ravel())[::-1]
    out = np.empty_like(sorted_values)
    out[order] = sorted_values
    return f.with_values(out.reshape(f.grid.shape), time_stamp=f.time_stamp)


def concentration_leq(f: Field, g: Field, tol: float = ANALYTIC_TOL) -> bool:
    """f is less concentrated than g: every cumulative mass of f is <= that of g + tol."""
    cf = decreasing_rearrangement(f)
    cg = decreasing_rearrangement(g)
    s = np.union1d(cf.volumes, cg.volumes)
    gap = cf.at(s) - cg.at(s)
    worst = float(gap.max())
    logger.debug(f"concentration_leq: worst excess {worst:.3e} (tol={tol:.1e})")
    return worst <= tol


def concentration_excess(f: Field, g: Field) -> float:
    """Largest excess of the curve of f over that of g (<= 0 when f is less concentrated)."""
    cf = decreasing_rearrangement(f)
    cg = decreasing_rearrangement(g)
    s = np.union1d(cf.volumes, cg.volumes)
    return float(np.max(cf.at(s) - cg.at(s)))


def ssni_defect(f: Field) -> float:
    """Largest violation of mirror symmetry or of nonincrease in |x_i| along grid lines."""
    v = f.values
    worst = 0.0
    for i in range(f.grid.N):
        worst = max(worst, float(np.max(np.abs(v - np.flip(v, axis=i)))))
        c = f.grid.n[i] // 2
        outer = np.take(v, np.arange(c, f.grid.n[i]), axis=i)
        worst = max(worst, float(np.max(np.diff(outer, axis=i), initial=0.0)))
    return worst


def is_ssni(f: Field, tol: float = ANALYTIC_TOL) -> bool:
    """Separately symmetric and nonincreasing in each |x_i|, up to tol."""
    return ssni_defect(f) <= tol


def reflect(f: Field, axis: int) -> np.ndarray:
    """Values of f at the mirror image x -> (.., -x_axis, ..)."""
    return np.flip(f.values, axis=axis)


def resample(f: Field, target: TensorGrid, scale: Sequence[float], factor: float = 1.0,
             time_stamp: Optional[float] = None) -> Field:
    """
    Returns factor * f(scale_i * y_i) on the target grid by multilinear interpolation;
    points outside the source box get 0.
    """
    interp = RegularGridInterpolator(
        tuple(f.grid.axis(i) for i in range(f.grid.N)), f.values,
        method="linear", bounds_error=False, fill_value=0.0,
    )
    pts = target.centers() * np.asarray(scale, dtype=float)
    values = np.maximum(factor * interp(pts), 0.0).reshape(target.shape)
    return Field(grid=target, values=values, time_stamp=time_stamp)


def _header(f: Field) -> dict:
    return {
        "N": f.grid.N,
        "n": list(f.grid.n),
        "L": list(f.grid.L),
        "t": f.time_stamp if f.time_stamp is not None else "",
        "solution": f.solution,
    }


def save_field(f: Field, path: Union[str, Path]) -> Path:
    """
    Writes a field as CSV (`#` header lines, one value per row in C order) or as
    little-endian float64 `.bin` with a `.toml` header sidecar.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _header(f)
    if path.suffix == ".bin":
        f.values.astype("<f8").ravel().tofile(path)
        with open(path.with_suffix(".toml"), "w", encoding="utf-8") as fh:
            toml.dump(header, fh)
    elif path.suffix == ".csv":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# N = {header['N']}\n")
            fh.write(f"# n = {','.join(str(x) for x in header['n'])}\n")
            fh.write(f"# L = {','.join(repr(x) for x in header['L'])}\n")
            fh.write(f"# t = {header['t']}\n")
            fh.write(f"# solution = {str(header['solution']).lower()}\n")
            pd.DataFrame({"value": f.values.ravel()}).to_csv(fh, index=False, float_format="%.17g")
    else:
        raise ValueError(f"Unsupported field format: {path.suffix} (use .csv or .bin)")
    logger.debug(f"Saved field to {path}")
    return path


def _solution_flag(header: dict) -> bool:
    value = header.get("solution", True)
    return value if isinstance(value, bool) else str(value).strip().lower() != "false"


def _grid_from_header(header: dict) -> Tuple[TensorGrid, Optional[float]]:
    grid = TensorGrid(N=int(header["N"]), L=tuple(float(x) for x in header["L"]),
                      n=tuple(int(x) for x in header["n"]))
    t = header.get("t", "")
    return grid, (float(t) if t not in ("", None) else None)


def load_field(path: Union[str, Path]) -> Field:
    """Reads a field written by save_field."""
    path = Path(path)
    if path.suffix == ".bin":
        header = toml.load(path.with_suffix(".toml"))
        grid, t = _grid_from_header(header)
        values = np.fromfile(path, dtype="<f8").reshape(grid.shape)
        return Field(grid=grid, values=values, time_stamp=t, solution=_solution_flag(header))
    if path.suffix == ".csv":
        header = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                key, _, value = line[1:].partition("=")
                header[key.strip()] = value.strip()
        header["n"] = header["n"].split(",")
        header["L"] = header["L"].split(",")
        grid, t = _grid_from_header(header)
        values = pd.read_csv(path, comment="#", float_precision="round_trip")["value"].to_numpy(dtype=float)
        return Field(grid=grid, values=values.reshape(grid.shape), time_stamp=t,
                     solution=_solution_flag(header))
    raise ValueError(f"Unsupported field format: {path.suffix} (use .csv or .bin)")
