"""
Implicit time discretization of u_t = sum_i (|u_{x_i}|^{p_i-2} u_{x_i})_{x_i} on a truncated box
with homogeneous Dirichlet data. Every backward-Euler step minimizes the strictly convex
discrete energy

    E(u) = vol * [ h * sum_i sum_edges e_eps(D_i u) + 1/2 * |u - u_prev - h f|^2 ],

with e_eps(s) = ((s^2 + eps^2)^{p/2} - eps^p)/p the antiderivative of the regularized flux,
by Newton's method with an Armijo backtracking line search on E.

The module also carries the isotropic companion U_t = Lambda Delta_pbar U and the rescaled
drift-diffusion flow whose steady states are self-similar profiles.
"""

import itertools
import math
from functools import reduce
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla
import toml
from pydantic import BaseModel, ConfigDict, Field as PydanticField, model_validator

from core.exponents import (
    ExponentLike,
    ExponentVector,
    SelfSimilarExponents,
    _as_exponents,
    check_conditions,
    selfsim_exponents,
)
from core.grid import Field, TensorGrid, integrate, is_ssni, load_field, resample, save_field, ssni_defect
from core.logger.logger import setup_logger

logger = setup_logger(__name__)

# Floor for s^2 + eps^2 inside Hessian weights when eps = 0
_TINY = 1e-30

Boundary = Literal["dirichlet", "zero_flux"]

# Mirror asymmetry left by the sparse solves sits far below this
PROFILE_SSNI_TOL = 1e-9


class SolverError(RuntimeError):
    """Raised when a step or an evolution fails to converge."""

    def __init__(self, message: str, residual: Optional[float] = None,
                 iterations: Optional[int] = None, time: Optional[float] = None,
                 trajectory: Optional["Trajectory"] = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.time = time
        self.trajectory = trajectory


class SteadyStateError(SolverError):
    """The rescaled flow did not settle within its tau budget, or settled off-target."""

    def __init__(self, message: str, increment: Optional[float] = None, **kwargs):
        super().__init__(message, **kwargs)
        self.increment = increment


class LineSearch(BaseModel):
    armijo: float = PydanticField(default=1e-4, gt=0, lt=0.5)
    shrink: float = PydanticField(default=0.5, gt=0, lt=1)
    min_step: float = PydanticField(default=1e-10, gt=0)


class StepConfig(BaseModel):
    """
    Parameters of one implicit step and of the time march.

    eps=None links the flux regularization to the grid: eps = min_i h_i.
    growth > 1 multiplies the time step after every step, up to h_max.
    """

    h: float = PydanticField(gt=0)
    eps: Optional[float] = PydanticField(default=None, ge=0)
    newton_tol: float = PydanticField(default=1e-8, gt=0)
    max_iters: int = PydanticField(default=50, ge=1)
    line_search: LineSearch = LineSearch()
    growth: float = PydanticField(default=1.0, ge=1.0)
    h_max: Optional[float] = PydanticField(default=None, gt=0)
    linear_solver: Literal["direct", "cg"] = "direct"

    def resolve_eps(self, grid: TensorGrid) -> float:
        return min(grid.h) if self.eps is None else self.eps


class StepDiagnostics(BaseModel):
    time: float
    step: float
    energy: float
    reg_energy: float
    iterations: int
    residual: float
    clipped: float = 0.0
    increment: Optional[float] = None


class Trajectory(BaseModel):
    """Recorded fields of a run; diagnostics hold one entry per step (the first is the initial state)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    times: List[float]
    fields: List[Field]
    diagnostics: List[StepDiagnostics] = []
    config: Dict[str, Any] = {}

    @model_validator(mode="after")
    def _consistent(self) -> "Trajectory":
        if len(self.times) != len(self.fields):
            raise ValueError("times and fields must have the same length")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")
        return self

    @property
    def grid(self) -> TensorGrid:
        return self.fields[0].grid

    @property
    def final(self) -> Field:
        return self.fields[-1]

    def energies(self) -> np.ndarray:
        return np.array([d.energy for d in self.diagnostics])

    def at(self, t: float) -> Field:
        """Recorded field closest to time t."""
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.fields[k]


class RescaledConfig(BaseModel):
    """
    Data of the rescaled flow v(y,tau) = (t+t0)^alpha u(x,t), y_i = x_i (t+t0)^{-sigma_i alpha},
    tau = log(t+t0).

    boundary="zero_flux" closes the box, so the flow conserves mass exactly; "dirichlet" sets
    v = 0 outside it and the box drains.
    """

    exponents: ExponentVector
    ss: SelfSimilarExponents
    tau_step: float = PydanticField(gt=0)
    t0: float = PydanticField(default=0.0, ge=0)
    tau_max: float = PydanticField(default=60.0, gt=0)
    mass_tol: float = PydanticField(default=0.02, gt=0)
    boundary: Boundary = "zero_flux"

    @model_validator(mode="after")
    def _positive_scaling(self) -> "RescaledConfig":
        if self.ss.alpha <= 0:
            raise ValueError("alpha must be > 0 (H2)")
        if any(s <= 0 for s in self.ss.sigma):
            raise ValueError("every sigma_i must be > 0 (H3)")
        return self

    @classmethod
    def build(cls, p: ExponentLike, tau_step: float, **kwargs) -> "RescaledConfig":
        exp = _as_exponents(p)
        return cls(exponents=exp, ss=selfsim_exponents(exp), tau_step=tau_step, **kwargs)


def regularized_flux(s, p: float, eps: float):
    """
    s (s^2 + eps^2)^{(p-2)/2}; with eps = 0 the exact flux |s|^{p-2} s, taking 0 at s = 0.
    """
    s = np.asarray(s, dtype=float)
    if p <= 1:
        raise ValueError(f"p must be > 1, got {p}")
    if eps == 0:
        a = np.abs(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(a > 0, np.sign(s) * a ** (p - 1.0), 0.0)
    else:
        out = s * (s * s + eps * eps) ** ((p - 2.0) / 2.0)
    return out if out.ndim else float(out)


def _flux_energy(s: np.ndarray, p: float, eps: float) -> np.ndarray:
    return ((s * s + eps * eps) ** (p / 2.0) - eps ** p) / p


def _flux_derivative(s: np.ndarray, p: float, eps: float) -> np.ndarray:
    r2 = np.maximum(s * s + eps * eps, _TINY)
    return r2 ** ((p - 4.0) / 2.0) * ((p - 1.0) * s * s + eps * eps)


def _boundary_faces(n: int, boundary: Boundary) -> slice:
    """Faces carrying a flux: all n+1 with Dirichlet ghosts, the n-1 interior ones with zero flux."""
    return slice(0, n + 1) if boundary == "dirichlet" else slice(1, n)


def _difference_1d(n: int, h: float, boundary: Boundary = "dirichlet") -> sparse.csr_matrix:
    """Forward differences over the faces; Dirichlet ghost cells outside the box equal 0."""
    full = ((sparse.eye(n + 1, n, k=0) - sparse.eye(n + 1, n, k=-1)) / h).tocsr()
    return full[_boundary_faces(n, boundary), :]


def _embed(mat: sparse.spmatrix, axis: int, n: Sequence[int]) -> sparse.csr_matrix:
    ops = [sparse.identity(nj, format="csr") for nj in n]
    ops[axis] = mat
    return reduce(lambda a, b: sparse.kron(a, b, format="csr"), ops)


def _face_coordinates(grid: TensorGrid, axis: int) -> np.ndarray:
    """Coordinate y_axis of every face normal to `axis`, flattened over the face grid."""
    n = grid.n[axis]
    faces = (np.arange(n + 1) - n / 2.0) * grid.h[axis]
    shape = list(grid.shape)
    shape[axis] = n + 1
    expand = [1] * grid.N
    expand[axis] = n + 1
    return np.broadcast_to(faces.reshape(expand), shape).ravel()


def _outer_cell_1d(grid: TensorGrid, axis: int) -> sparse.csr_matrix:
    """Selects, for every face, the neighbouring cell farther from the origin (ghost = 0)."""
    n = grid.n[axis]
    rows, cols = [], []
    for e in range(n + 1):
        outer = e if e - n / 2.0 > 0 else e - 1
        if 0 <= outer < n:
            rows.append(e)
            cols.append(outer)
    return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n + 1, n))


class AnisotropicOperator:
    """Discrete sum_i (1/p_i) |D_i u|^{p_i} and its regularized derivatives (per unit cell volume)."""

    def __init__(self, grid: TensorGrid, p: Sequence[float], eps: float, boundary: Boundary = "dirichlet"):
        if len(p) != grid.N:
            raise ValueError(f"expected {grid.N} exponents, got {len(p)}")
        self.grid = grid
        self.p = tuple(p)
        self.eps = eps
        self.boundary = boundary
        self.D = [_embed(_difference_1d(grid.n[i], grid.h[i], boundary), i, grid.n) for i in range(grid.N)]
        self.DT = [D.T.tocsr() for D in self.D]

    def energy(self, u: np.ndarray) -> float:
        return float(sum(np.sum(_flux_energy(D @ u, pi, self.eps)) for D, pi in zip(self.D, self.p)))

    def gradient(self, u: np.ndarray) -> np.ndarray:
        return sum(DT @ regularized_flux(D @ u, pi, self.eps) for D, DT, pi in zip(self.D, self.DT, self.p))

    def hessian(self, u: np.ndarray) -> sparse.csr_matrix:
        return sum(DT @ sparse.diags(_flux_derivative(D @ u, pi, self.eps)) @ D
                   for D, DT, pi in zip(self.D, self.DT, self.p)).tocsr()

    def functional(self, u: np.ndarray) -> float:
        return float(sum(np.sum(np.abs(D @ u) ** pi) / pi for D, pi in zip(self.D, self.p)))


class IsotropicOperator:
    """
    Lambda/p sum_cells |grad u|^p, the cell gradient taken from the 2^N choices of forward and
    backward one-sided differences and averaged over them. For p = 2 this is the 5-point Laplacian.
    """

    def __init__(self, grid: TensorGrid, p: float, Lambda: float, eps: float):
        if p <= 1 or Lambda <= 0:
            raise ValueError("isotropic operator needs p > 1 and Lambda > 0")
        self.grid = grid
        self.p = p
        self.Lambda = Lambda
        self.eps = eps
        forward, backward = [], []
        for i in range(grid.N):
            d1 = _difference_1d(grid.n[i], grid.h[i])
            forward.append(_embed(d1[1:, :], i, grid.n))
            backward.append(_embed(d1[:-1, :], i, grid.n))
        self.stencils = [[(forward if c else backward)[i] for i, c in enumerate(combo)]
                         for combo in itertools.product((1, 0), repeat=grid.N)]
        self.weight = Lambda / len(self.stencils)

    def _gradients(self, u: np.ndarray):
        for A in self.stencils:
            g = [Ai @ u for Ai in A]
            yield A, g, sum(gi * gi for gi in g)

    def energy(self, u: np.ndarray) -> float:
        p, eps = self.p, self.eps
        total = sum(np.sum(((r2 + eps * eps) ** (p / 2.0) - eps ** p) / p) for _, _, r2 in self._gradients(u))
        return float(self.weight * total)

    def gradient(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        for A, g, r2 in self._gradients(u):
            w = np.maximum(r2 + self.eps ** 2, _TINY) ** ((self.p - 2.0) / 2.0)
            if self.eps == 0:
                w = np.where(r2 > 0, w, 0.0)
            for Ai, gi in zip(A, g):
                out += Ai.T @ (w * gi)
        return self.weight * out

    def hessian(self, u: np.ndarray) -> sparse.csr_matrix:
        p = self.p
        total = sparse.csr_matrix((u.size, u.size))
        for A, g, r2 in self._gradients(u):
            r2e = np.maximum(r2 + self.eps ** 2, _TINY)
            w = r2e ** ((p - 2.0) / 2.0)
            c2 = (p - 2.0) * r2e ** ((p - 4.0) / 2.0)
            for i, Ai in enumerate(A):
                for j, Aj in enumerate(A):
                    diag = c2 * g[i] * g[j] + (w if i == j else 0.0)
                    total = total + Ai.T @ sparse.diags(diag) @ Aj
        return (self.weight * total).tocsr()

    def functional(self, u: np.ndarray) -> float:
        return float(self.weight * sum(np.sum(r2 ** (self.p / 2.0)) / self.p for _, _, r2 in self._gradients(u)))


Operator = Union[AnisotropicOperator, IsotropicOperator]


def energy_functional(u: Field, p: ExponentLike) -> float:
    """J(u) = sum_i (1/p_i) int |D_i u|^{p_i}."""
    exp = _as_exponents(p)
    op = AnisotropicOperator(u.grid, exp.p, 0.0)
    return op.functional(u.values.ravel()) * u.grid.cell_volume


def _linear_solve(A: sparse.csr_matrix, b: np.ndarray, method: str) -> np.ndarray:
    if method == "cg":
        precond = sparse.diags(1.0 / A.diagonal())
        x, info = spla.cg(A, b, rtol=1e-12, maxiter=10 * b.size, M=precond)
        if info != 0:
            return np.full_like(b, np.nan)
        return x
    return spla.spsolve(A.tocsc(), b)


def _minimize_step(op: Operator, b: np.ndarray, h: float, vol: float, cfg: StepConfig,
                   u_init: np.ndarray) -> Tuple[np.ndarray, int, float]:
    """Newton with Armijo backtracking on E; Jacobi-scaled gradient steps when Newton fails."""
    ls = cfg.line_search

    def E(u: np.ndarray) -> float:
        return vol * (h * op.energy(u) + 0.5 * float(np.sum((u - b) ** 2)))

    def G(u: np.ndarray) -> np.ndarray:
        return h * op.gradient(u) + (u - b)

    def backtrack(u: np.ndarray, g: np.ndarray, res: float, direction: np.ndarray):
        if not np.all(np.isfinite(direction)):
            return None
        e0 = E(u)
        slope = vol * float(g @ direction)
        if slope >= 0:
            return None
        t = 1.0
        while t >= ls.min_step:
            trial = u + t * direction
            e1 = E(trial)
            if e1 <= e0 + ls.armijo * t * slope:
                return trial
            # Energy differences below rounding: fall back to the optimality residual
            if e1 - e0 <= 1e-13 * max(1.0, abs(e0)) and np.max(np.abs(G(trial))) < res:
                return trial
            t *= ls.shrink
        return None

    u = u_init.copy()
    identity = sparse.identity(u.size, format="csr")
    res = float("inf")
    for it in range(cfg.max_iters + 1):
        g = G(u)
        res = float(np.max(np.abs(g))) if g.size else 0.0
        if res <= cfg.newton_tol:
            return u, it, res
        if it == cfg.max_iters:
            break
        H = identity + h * op.hessian(u)
        nxt = backtrack(u, g, res, _linear_solve(H, -g, cfg.linear_solver))
        if nxt is None:
            logger.debug(f"Newton direction rejected at iteration {it}, residual {res:.3e}")
            nxt = backtrack(u, g, res, -g / H.diagonal())
        if nxt is None:
            raise SolverError(f"Line search failed with residual {res:.3e}", residual=res, iterations=it)
        u = nxt
    raise SolverError(f"No convergence in {cfg.max_iters} iterations (residual {res:.3e})",
                      residual=res, iterations=cfg.max_iters)


def _implicit_step(op: Operator, u_prev: Field, h: float, cfg: StepConfig,
                   f: Optional[Field]) -> Tuple[np.ndarray, int, float, float]:
    prev = u_prev.values.ravel()
    b = prev + h * f.values.ravel() if f is not None else prev
    u, iters, res = _minimize_step(op, b, h, u_prev.grid.cell_volume, cfg, prev)
    clipped = float(max(0.0, -u.min())) if u.size else 0.0
    return np.maximum(u, 0.0), iters, res, clipped


def elliptic_step(u_prev: Field, h: float, p: ExponentLike, eps: Optional[float] = None,
                  f: Optional[Field] = None, cfg: Optional[StepConfig] = None) -> Field:
    """
    One implicit step: the minimizer of the discrete energy E, i.e. the solution of
    u - h sum_i (flux_eps(u_{x_i}))_{x_i} = u_prev + h f with u = 0 outside the box.

    Args:
        u_prev: previous state.
        h: time step.
        p: exponents p_i.
        eps: flux regularization; defaults to cfg.eps, then min_i h_i.
        f: optional source field.
        cfg: Newton and line-search parameters.

    Returns:
        Field: the new state; the optimality residual is at most cfg.newton_tol.

    Raises:
        SolverError: if Newton does not converge within cfg.max_iters.
    """
    exp = _as_exponents(p)
    cfg = cfg or StepConfig(h=h)
    eps = cfg.resolve_eps(u_prev.grid) if eps is None else eps
    op = AnisotropicOperator(u_prev.grid, exp.p, eps)
    u, iters, res, _ = _implicit_step(op, u_prev, h, cfg, f)
    logger.debug(f"elliptic_step: {iters} iterations, residual {res:.3e}")
    t = None if u_prev.time_stamp is None else u_prev.time_stamp + h
    return u_prev.with_values(u, time_stamp=t)


def step_residual(u: Field, u_prev: Field, h: float, p: ExponentLike, eps: float,
                  f: Optional[Field] = None) -> float:
    """Max-norm of the discrete optimality system of an implicit step."""
    exp = _as_exponents(p)
    op = AnisotropicOperator(u.grid, exp.p, eps)
    b = u_prev.values.ravel() + (h * f.values.ravel() if f is not None else 0.0)
    return float(np.max(np.abs(h * op.gradient(u.values.ravel()) + u.values.ravel() - b)))


def _march(u0: Field, T: float, cfg: StepConfig, op: Operator, f: Optional[Field],
           record_every: int, label: str) -> Trajectory:
    t = u0.time_stamp or 0.0
    if T <= t:
        logger.warning(f"{label}: final time {T} not after start {t}")
        raise ValueError(f"Final time T={T} must exceed the start time {t}")
    vol = u0.grid.cell_volume
    echo = {"label": label, **cfg.model_dump(exclude_none=True)}

    u = u0.values.ravel().copy()
    times, fields = [t], [u0.with_values(u, time_stamp=t)]
    diagnostics = [StepDiagnostics(time=t, step=0.0, energy=op.functional(u) * vol,
                                   reg_energy=op.energy(u) * vol, iterations=0, residual=0.0)]
    h = cfg.h
    k = 0
    while t < T - 1e-12 * max(1.0, abs(T)):
        step = min(h, T - t)
        prev = u0.with_values(u, time_stamp=t)
        try:
            u, iters, res, clipped = _implicit_step(op, prev, step, cfg, f)
        except SolverError as exc:
            logger.error(f"{label}: step failed at t={t + step:.6g}: {exc}")
            partial = Trajectory(times=times, fields=fields, diagnostics=diagnostics, config=echo)
            raise SolverError(f"{label} failed at t={t + step:.6g}: {exc}", residual=exc.residual,
                              iterations=exc.iterations, time=t + step, trajectory=partial) from exc
        t += step
        k += 1
        diagnostics.append(StepDiagnostics(time=t, step=step, energy=op.functional(u) * vol,
                                           reg_energy=op.energy(u) * vol, iterations=iters,
                                           residual=res, clipped=clipped))
        logger.debug(f"{label}: t={t:.6g} iterations={iters} residual={res:.3e}")
        if k % record_every == 0 or t >= T - 1e-12 * max(1.0, abs(T)):
            times.append(t)
            fields.append(u0.with_values(u, time_stamp=t))
        h = min(h * cfg.growth, cfg.h_max or math.inf)
    if times[-1] < t:
        times.append(t)
        fields.append(u0.with_values(u, time_stamp=t))

    logger.info(f"{label}: reached t={t:.6g} in {k} steps")
    return Trajectory(times=times, fields=fields, diagnostics=diagnostics, config=echo)


def evolve(u0: Field, T: float, cfg: StepConfig, p: ExponentLike, f: Optional[Field] = None,
           record_every: int = 1) -> Trajectory:
    """
    Runs the implicit scheme from u0 (at u0.time_stamp, default 0) up to the absolute time T.

    Raises:
        ValueError: on mismatched dimensions or T not after the start time.
        SolverError: with the failing time and the trajectory computed so far.
    """
    exp = _as_exponents(p)
    logger.info("Starting evolve")
    logger.debug(f"Parameters: p={exp.p}, T={T}, grid={u0.grid.n}, h={cfg.h}")
    if exp.N != u0.grid.N:
        raise ValueError(f"exponents have N={exp.N}, grid has N={u0.grid.N}")
    op = AnisotropicOperator(u0.grid, exp.p, cfg.resolve_eps(u0.grid))
    return _march(u0, T, cfg, op, f, record_every, "evolve")


def isotropic_evolve(u0: Field, T: float, cfg: StepConfig, pbar: float, Lambda: float,
                     f: Optional[Field] = None, record_every: int = 1) -> Trajectory:
    """Implicit scheme for the symmetrized problem U_t = Lambda Delta_pbar U."""
    logger.info("Starting isotropic_evolve")
    logger.debug(f"Parameters: pbar={pbar}, Lambda={Lambda}, T={T}, grid={u0.grid.n}")
    op = IsotropicOperator(u0.grid, pbar, Lambda, cfg.resolve_eps(u0.grid))
    return _march(u0, T, cfg, op, f, record_every, "isotropic_evolve")


def drift_matrix(grid: TensorGrid, ss: SelfSimilarExponents) -> sparse.csr_matrix:
    """
    sum_i D_i^T diag(alpha sigma_i y_face) U_i: minus the upwind divergence of the drift
    alpha sigma_i (y_i v), U_i taking the cell farther from the origin at every face.
    """
    terms = []
    for i in range(grid.N):
        D = _embed(_difference_1d(grid.n[i], grid.h[i]), i, grid.n)
        U = _embed(_outer_cell_1d(grid, i), i, grid.n)
        y = _face_coordinates(grid, i)
        terms.append(D.T @ sparse.diags(ss.alpha * ss.sigma[i] * y) @ U)
    return sum(terms).tocsr()


def _rescaled_step(op: AnisotropicOperator, drift: sparse.csr_matrix, v_prev: np.ndarray,
                   dtau: float, cfg: StepConfig) -> Tuple[np.ndarray, int, float]:
    """Damped Newton on the nonsymmetric residual, backtracking on its norm."""
    ls = cfg.line_search
    identity = sparse.identity(v_prev.size, format="csr")

    def R(v: np.ndarray) -> np.ndarray:
        return v - v_prev + dtau * (op.gradient(v) + drift @ v)

    v = v_prev.copy()
    res = float("inf")
    for it in range(cfg.max_iters + 1):
        r = R(v)
        norm = float(np.linalg.norm(r))
        res = float(np.max(np.abs(r)))
        if res <= cfg.newton_tol:
            return v, it, res
        if it == cfg.max_iters:
            break
        J = identity + dtau * (op.hessian(v) + drift)
        direction = spla.spsolve(J.tocsc(), -r)
        if not np.all(np.isfinite(direction)):
            raise SolverError("Singular Jacobian in rescaled step", residual=res, iterations=it)
        t = 1.0
        while t >= ls.min_step:
            trial = v + t * direction
            if np.linalg.norm(R(trial)) <= (1.0 - ls.armijo * t) * norm:
                break
            t *= ls.shrink
        else:
            raise SolverError(f"Line search failed with residual {res:.3e}", residual=res, iterations=it)
        v = trial
    raise SolverError(f"No convergence in {cfg.max_iters} iterations (residual {res:.3e})",
                      residual=res, iterations=cfg.max_iters)


def rescaled_evolve(v0: Field, tau_end: float, rcfg: RescaledConfig, cfg: StepConfig,
                    tau0: float = 0.0, record_every: int = 1) -> Trajectory:
    """
    Implicit scheme for v_tau = sum_i [(|v_{y_i}|^{p_i-2} v_{y_i})_{y_i} + alpha sigma_i (y_i v)_{y_i}]
    with step rcfg.tau_step; trajectory times are the tau values.
    """
    logger.info("Starting rescaled_evolve")
    logger.debug(f"Parameters: p={rcfg.exponents.p}, tau=[{tau0}, {tau_end}], grid={v0.grid.n}")
    if tau_end <= tau0:
        raise ValueError(f"tau_end={tau_end} must exceed tau0={tau0}")
    traj, _ = _rescaled_march(v0, rcfg, cfg, tau0, tau_end, None, record_every)
    return traj


def _rescaled_march(v0: Field, rcfg: RescaledConfig, cfg: StepConfig, tau0: float, tau_end: float,
                    stop: Optional[float], record_every: int) -> Tuple[Trajectory, Optional[float]]:
    grid = v0.grid
    if rcfg.exponents.N != grid.N:
        raise ValueError(f"exponents have N={rcfg.exponents.N}, grid has N={grid.N}")
    vol = grid.cell_volume
    op = AnisotropicOperator(grid, rcfg.exponents.p, cfg.resolve_eps(grid), rcfg.boundary)
    drift = drift_matrix(grid, rcfg.ss)
    echo = {"label": "rescaled_evolve", "tau_step": rcfg.tau_step, "t0": rcfg.t0, "boundary": rcfg.boundary,
            **cfg.model_dump(exclude_none=True)}

    v = v0.values.ravel().copy()
    tau = tau0
    times, fields = [tau], [v0.with_values(v, time_stamp=None)]
    diagnostics = [StepDiagnostics(time=tau, step=0.0, energy=op.functional(v) * vol,
                                   reg_energy=op.energy(v) * vol, iterations=0, residual=0.0)]
    increment = None
    k = 0
    while tau < tau_end - 1e-12:
        dtau = min(rcfg.tau_step, tau_end - tau)
        try:
            new, iters, res = _rescaled_step(op, drift, v, dtau, cfg)
        except SolverError as exc:
            partial = Trajectory(times=times, fields=fields, diagnostics=diagnostics, config=echo)
            raise SolverError(f"rescaled flow failed at tau={tau + dtau:.6g}: {exc}", residual=exc.residual,
                              iterations=exc.iterations, time=tau + dtau, trajectory=partial) from exc
        clipped = float(max(0.0, -new.min()))
        new = np.maximum(new, 0.0)
        increment = float(np.sum(np.abs(new - v)) * vol)
        v = new
        tau += dtau
        k += 1
        diagnostics.append(StepDiagnostics(time=tau, step=dtau, energy=op.functional(v) * vol,
                                           reg_energy=op.energy(v) * vol, iterations=iters,
                                           residual=res, clipped=clipped, increment=increment))
        converged = stop is not None and increment < stop
        if k % record_every == 0 or converged or tau >= tau_end - 1e-12:
            times.append(tau)
            fields.append(v0.with_values(v, time_stamp=None))
        if converged:
            break

    traj = Trajectory(times=times, fields=fields, diagnostics=diagnostics, config=echo)
    return traj, increment


def gaussian_bump(grid: TensorGrid, M: float, width: float = 1.0) -> Field:
    """SSNI bump exp(-|y|^2/(2 width^2)) normalized to grid mass M."""
    values = np.exp(-grid.squared_radius() / (2.0 * width * width))
    return Field(grid=grid, values=values * M / (values.sum() * grid.cell_volume))


def _check_start(v0: Field, M: float, grid: TensorGrid, mass_tol: float) -> None:
    if v0.grid != grid:
        raise ValueError(f"v0 lives on grid {v0.grid.n}, expected {grid.n}")
    if not is_ssni(v0, PROFILE_SSNI_TOL * max(1.0, float(v0.values.max()))):
        raise ValueError(f"v0 is not SSNI (defect {ssni_defect(v0):.3e})")
    mass = integrate(v0)
    if abs(mass - M) > mass_tol * M:
        raise ValueError(f"v0 has mass {mass:.6g}, expected {M} within {mass_tol:.0%}")


def steady_profile(M: float, rcfg: RescaledConfig, cfg: StepConfig, grid: TensorGrid,
                   stop_tol: float = 1e-4, v0: Optional[Field] = None) -> Field:
    """
    Marches the rescaled flow from an SSNI bump of mass M (or from v0) until the per-step L^1
    increment falls below stop_tol * M.

    Raises:
        ValueError: if v0 lives on another grid, is not SSNI, or its mass is off M by more
                    than rcfg.mass_tol.
        SteadyStateError: if rcfg.tau_max is exhausted, or the limit is not SSNI or has lost
                          more than rcfg.mass_tol of its mass.
    """
    logger.info("Starting steady_profile")
    logger.debug(f"Parameters: M={M}, p={rcfg.exponents.p}, grid={grid.n}, stop_tol={stop_tol}")
    if M <= 0:
        raise ValueError(f"Mass must be > 0, got M={M}")
    report = check_conditions(rcfg.exponents)
    if not (report.H1 and report.H2 and report.H3):
        logger.warning(f"steady_profile: conditions H1={report.H1} H2={report.H2} H3={report.H3}")
        raise ValueError("steady_profile requires H1, H2 and H3")

    if v0 is not None:
        _check_start(v0, M, grid, rcfg.mass_tol)
    start = v0 if v0 is not None else gaussian_bump(grid, M)
    traj, increment = _rescaled_march(start, rcfg, cfg, 0.0, rcfg.tau_max, stop_tol * M, record_every=10 ** 9)
    profile = traj.final
    if increment is None or increment >= stop_tol * M:
        raise SteadyStateError(f"No steady state by tau={rcfg.tau_max} (last increment {increment})",
                               increment=increment, time=traj.times[-1], trajectory=traj)

    mass = integrate(profile)
    if abs(mass - M) > rcfg.mass_tol * M:
        raise SteadyStateError(f"Steady profile has mass {mass:.6g}, expected {M} within {rcfg.mass_tol:.0%}",
                               increment=increment, trajectory=traj)
    ssni_tol = max(10.0 * cfg.newton_tol, PROFILE_SSNI_TOL) * max(1.0, float(profile.values.max()))
    if not is_ssni(profile, ssni_tol):
        raise SteadyStateError("Steady profile is not SSNI", increment=increment, trajectory=traj)
    logger.info(f"steady_profile: converged at tau={traj.times[-1]:.4g}, increment {increment:.3e}")
    return profile


def to_rescaled(u: Field, t: float, rcfg: RescaledConfig, target: TensorGrid) -> Tuple[Field, float]:
    """v(y) = (t+t0)^alpha u(y_i (t+t0)^{a_i}) with t0 = rcfg.t0; returns the field and tau = log(t+t0)."""
    ss = rcfg.ss
    s = t + rcfg.t0
    if s <= 0:
        raise ValueError(f"t + t0 must be > 0, got {s}")
    v = resample(u, target, scale=[s ** ai for ai in ss.a], factor=s ** ss.alpha)
    return v, math.log(s)


def from_rescaled(v: Field, tau: float, rcfg: RescaledConfig, target: TensorGrid) -> Tuple[Field, float]:
    """u(x) = e^{-alpha tau} v(x_i e^{-a_i tau}); returns the field and t = e^tau - rcfg.t0."""
    ss = rcfg.ss
    t = math.exp(tau) - rcfg.t0
    if t < 0:
        raise ValueError(f"tau={tau} maps to negative time {t}")
    u = resample(v, target, scale=[math.exp(-ai * tau) for ai in ss.a],
                 factor=math.exp(-ss.alpha * tau), time_stamp=t)
    return u, t


def _toml_safe(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _toml_safe(v) for k, v in value.items() if v is not None}
    if isinstance(value, (list, tuple)):
        return [_toml_safe(v) for v in value if v is not None]
    return value


def save_trajectory(traj: Trajectory, directory: Union[str, Path], fmt: str = "bin") -> Path:
    """Checkpoint: one field file per recorded time plus manifest.toml."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for k, fld in enumerate(traj.fields):
        name = f"field_{k:05d}.{fmt}"
        save_field(fld, directory / name)
        files.append(name)
    manifest = {
        "times": list(traj.times),
        "files": files,
        "config": traj.config,
        "diagnostics": [d.model_dump() for d in traj.diagnostics],
    }
    with open(directory / "manifest.toml", "w", encoding="utf-8") as fh:
        toml.dump(_toml_safe(manifest), fh)
    logger.info(f"Saved trajectory with {len(files)} fields to {directory}")
    return directory


def load_trajectory(directory: Union[str, Path]) -> Trajectory:
    directory = Path(directory)
    manifest = toml.load(directory / "manifest.toml")
    fields = [load_field(directory / name) for name in manifest["files"]]
    return Trajectory(
        times=[float(t) for t in manifest["times"]],
        fields=fields,
        diagnostics=[StepDiagnostics(**d) for d in manifest.get("diagnostics", [])],
        config=manifest.get("config", {}),
    )
