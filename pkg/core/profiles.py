"""
Closed-form profiles of the anisotropic fast-diffusion equation: orthotropic and
isotropic Barenblatt profiles, very singular solutions, the explicit upper and
lower barriers of the stationary profile equation

    sum_i [ (|F_{y_i}|^{p_i-2} F_{y_i})_{y_i} + alpha sigma_i (y_i F)_{y_i} ] = 0,

and a finite-difference check of that equation used for super/subsolution sign checks.

Evaluators accept a single point of shape (N,) or a batch of shape (M, N).
"""

import math
from typing import Callable, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.optimize import brentq
from scipy.special import betaln, gammaln

from core.exponents import (
    ExponentLike,
    SelfSimilarExponents,
    _as_exponents,
    check_conditions,
    critical_exponent,
    selfsim_exponents,
)
from core.grid import TensorGrid
from core.logger.logger import setup_logger

logger = setup_logger(__name__)

PointLike = Union[Sequence[float], np.ndarray]
ProfileFunction = Callable[[np.ndarray], np.ndarray]


def _points(y: PointLike, N: int) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(y, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != N:
        raise ValueError(f"Points must have {N} coordinates, got shape {arr.shape}")
    return arr, single


def _finish(values: np.ndarray, single: bool):
    return float(values[0]) if single else values


class OrthotropicProfile(BaseModel):
    """Explicit Barenblatt profile for p_i = p (fast branch p_c < p < 2, slow branch p > 2)."""

    model_config = ConfigDict(frozen=True)

    N: int = Field(ge=1)
    p: float
    C0: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def _admissible_branch(self) -> "OrthotropicProfile":
        pc = critical_exponent(self.N)
        if not (pc < self.p < 2.0 or self.p > 2.0):
            raise ValueError(f"p={self.p} outside (p_c, 2) U (2, inf) with p_c={pc:.6g}")
        return self

    @property
    def branch(self) -> Literal["fast", "slow"]:
        return "fast" if self.p < 2.0 else "slow"

    @property
    def lambda_iso(self) -> float:
        return self.N * (self.p - 2.0) + self.p

    @property
    def exponents(self) -> SelfSimilarExponents:
        return selfsim_exponents([self.p] * self.N)


def _barenblatt_formula(C0: float, p: float, lam: float, s: np.ndarray) -> np.ndarray:
    """Scalar Barenblatt law in terms of s = sum |y_i|^{p/(p-1)} (or |y|^{p/(p-1)})."""
    coeff = lam ** (-1.0 / (p - 1.0))
    if p < 2.0:
        return (C0 + (2.0 - p) / p * coeff * s) ** (-(p - 1.0) / (2.0 - p))
    base = np.maximum(C0 - (p - 2.0) / p * coeff * s, 0.0)
    return base ** ((p - 1.0) / (p - 2.0))


def eval_orthotropic(profile: OrthotropicProfile, y: PointLike):
    """
    Evaluates the orthotropic profile
    F(y) = (C0 + (2-p)/p lambda^{-1/(p-1)} sum_i |y_i|^{p/(p-1)})^{-(p-1)/(2-p)}
    (positive-part analogue with exponent (p-1)/(p-2) on the slow branch).
    """
    pts, single = _points(y, profile.N)
    s = np.sum(np.abs(pts) ** (profile.p / (profile.p - 1.0)), axis=-1)
    return _finish(_barenblatt_formula(profile.C0, profile.p, profile.lambda_iso, s), single)


def eval_isotropic_barenblatt(N: int, p: float, C0: float, y: PointLike):
    """
    Radial Barenblatt profile of the isotropic p-Laplacian; p = 2 gives the Gaussian kernel.
    """
    pts, single = _points(y, N)
    r = np.sqrt(np.sum(pts * pts, axis=-1))
    if p == 2.0:
        return _finish((4.0 * math.pi) ** (-N / 2.0) * np.exp(-r * r / 4.0), single)
    pc = critical_exponent(N)
    if not (pc < p < 2.0 or p > 2.0):
        logger.warning(f"eval_isotropic_barenblatt: p={p} is not admissible for N={N}")
        raise ValueError(f"p={p} outside (p_c, 2] U (2, inf) with p_c={pc:.6g}")
    if C0 <= 0:
        raise ValueError("C0 must be > 0")
    lam = N * (p - 2.0) + p
    return _finish(_barenblatt_formula(C0, p, lam, r ** (p / (p - 1.0))), single)


def orthotropic_flux_identity(profile: OrthotropicProfile, y: PointLike) -> np.ndarray:
    """
    Residuals |F_{y_i}|^{p-2} F_{y_i} + (alpha/N) y_i F per axis, with the analytic derivative
    of the fast-branch profile. Shape (M, N) for a batch, (N,) for a single point.
    """
    if profile.branch != "fast":
        raise ValueError("flux identity is implemented for the fast branch")
    pts, single = _points(y, profile.N)
    p = profile.p
    s = p / (p - 1.0)
    e = (p - 1.0) / (2.0 - p)
    c = (2.0 - p) / p * profile.lambda_iso ** (-1.0 / (p - 1.0))
    base = profile.C0 + c * np.sum(np.abs(pts) ** s, axis=-1, keepdims=True)
    F = base ** (-e)
    dF = -e * base ** (-e - 1.0) * c * s * np.abs(pts) ** (s - 1.0) * np.sign(pts)
    flux = np.sign(dF) * np.abs(dF) ** (p - 1.0)
    residual = flux + profile.exponents.alpha / profile.N * pts * F
    return residual[0] if single else residual


def barenblatt_solution(profile: OrthotropicProfile, x: PointLike, t: float):
    """
    Self-similar solution B(x,t) = t^{-alpha} F(t^{-alpha/N} x).

    Raises:
        ValueError: if t <= 0.
    """
    if t <= 0:
        logger.warning(f"barenblatt_solution called with t={t}")
        raise ValueError(f"Time must be > 0, got t={t}")
    alpha = profile.exponents.alpha
    pts, single = _points(x, profile.N)
    values = t ** (-alpha) * eval_orthotropic(profile, pts * t ** (-alpha / profile.N))
    return _finish(np.asarray(values), single)


def mass_factor(exp: ExponentLike, k: float) -> float:
    """Mass multiplier k^{mu}, mu = N + 1 - 2N/pbar, of the scaling T_k."""
    exp = _as_exponents(exp)
    if k <= 0:
        raise ValueError(f"Scaling parameter must be > 0, got k={k}")
    return k ** selfsim_exponents(exp).mu


def mass_transform(profile: OrthotropicProfile, k: float) -> OrthotropicProfile:
    """
    T_k[F](y) = k F(k^{(2-p)/p} y). On the explicit profile this is the same law with
    C0 replaced by C0 k^{-(2-p)/(p-1)}.
    """
    if k <= 0:
        raise ValueError(f"Scaling parameter must be > 0, got k={k}")
    new_c0 = profile.C0 * k ** (-(2.0 - profile.p) / (profile.p - 1.0))
    return profile.model_copy(update={"C0": new_c0})


def anisotropic_mass_transform(F: ProfileFunction, exp: ExponentLike, k: float) -> ProfileFunction:
    """T_k[v](y) = k v(k^{beta_1} y_1, ..., k^{beta_N} y_N) with beta_i = (2-p_i)/p_i."""
    exp = _as_exponents(exp)
    if k <= 0:
        raise ValueError(f"Scaling parameter must be > 0, got k={k}")
    beta = (2.0 - exp.array) / exp.array
    scale = k ** beta

    def transformed(y: np.ndarray) -> np.ndarray:
        pts = np.asarray(y, dtype=float)
        return k * np.asarray(F(pts * scale))

    return transformed


def orthotropic_mass(profile: OrthotropicProfile) -> float:
    """
    Exact mass of the orthotropic profile.

    With s = p/(p-1), c = (|2-p|/p) lambda^{-1/(p-1)} and w_i = c |y_i|^s the integral
    reduces to a one-dimensional Beta integral in W = sum w_i.
    """
    N, p = profile.N, profile.p
    s = p / (p - 1.0)
    c = abs(2.0 - p) / p * profile.lambda_iso ** (-1.0 / (p - 1.0))
    b = N / s
    log_simplex = N * math.log(2.0 / s) - b * math.log(c) + N * gammaln(1.0 / s) - gammaln(b)
    if profile.branch == "fast":
        e = (p - 1.0) / (2.0 - p)
        log_radial = betaln(b, e - b)
    else:
        e = (p - 1.0) / (p - 2.0)
        log_radial = betaln(b, e + 1.0)
    unit_mass = math.exp(log_simplex + log_radial)
    k = profile.C0 ** (-(p - 1.0) / (2.0 - p))
    return unit_mass * k ** profile.exponents.mu


def calibrate_orthotropic(N: int, p: float, M: float) -> OrthotropicProfile:
    """Returns the orthotropic profile of mass M by applying T_k to the C0 = 1 profile."""
    if M <= 0:
        raise ValueError(f"Mass must be > 0, got M={M}")
    unit = OrthotropicProfile(N=N, p=p, C0=1.0)
    k = (M / orthotropic_mass(unit)) ** (1.0 / unit.exponents.mu)
    profile = mass_transform(unit, k)
    logger.debug(f"Calibrated orthotropic profile: N={N}, p={p}, M={M}, C0={profile.C0:.6g}")
    return profile


def box_mass(profile: OrthotropicProfile, grid: TensorGrid) -> float:
    """Midpoint mass of the profile sampled on the grid; the part outside the box is dropped."""
    return float(np.sum(eval_orthotropic(profile, grid.centers())) * grid.cell_volume)


def calibrate_orthotropic_on_grid(grid: TensorGrid, p: float, M: float) -> OrthotropicProfile:
    """
    Orthotropic profile whose grid-sampled mass inside the box equals M.

    Heavy tails leave a share of the whole-space mass outside any box, so the returned profile
    has whole-space mass above M; the excess is the truncated mass.
    """
    if M <= 0:
        raise ValueError(f"Mass must be > 0, got M={M}")

    def gap(log_mass: float) -> float:
        return box_mass(calibrate_orthotropic(grid.N, p, math.exp(log_mass)), grid) - M

    lo = hi = math.log(M)
    while gap(lo) > 0:
        lo -= math.log(2.0)
    while gap(hi) < 0:
        hi += math.log(2.0)
    if lo == hi:
        return calibrate_orthotropic(grid.N, p, M)
    profile = calibrate_orthotropic(grid.N, p, math.exp(brentq(gap, lo, hi, xtol=1e-12, rtol=1e-12)))
    logger.debug(f"Box calibration: M={M}, whole-space mass {orthotropic_mass(profile):.6g}, grid={grid.n}")
    return profile


def very_singular(p: float, N: int, x: PointLike, t: float, k: float, separated: bool = False):
    """
    Very singular solution V = k t^{1/(2-p)} (sum |x_i|^{p/(p-1)})^{-(p-1)/(2-p)}, or with
    separated=True the variant V = k t^{1/(2-p)} sum |x_i|^{-p/(2-p)}.

    Raises:
        ValueError: at the singular point x = 0 (any zero coordinate for the separated variant),
                    for t <= 0, or for p outside (p_c, 2).
    """
    pc = critical_exponent(N)
    if not pc < p < 2.0:
        raise ValueError(f"Very singular solutions need p_c < p < 2, got p={p}")
    if t <= 0:
        raise ValueError(f"Time must be > 0, got t={t}")
    pts, single = _points(x, N)
    ax = np.abs(pts)
    if separated:
        if np.any(ax == 0.0):
            logger.warning("very_singular evaluated on a coordinate hyperplane")
            raise ValueError("Singular point: separated very singular solution needs every x_i != 0")
        values = k * t ** (1.0 / (2.0 - p)) * np.sum(ax ** (-p / (2.0 - p)), axis=-1)
    else:
        s = np.sum(ax ** (p / (p - 1.0)), axis=-1)
        if np.any(s == 0.0):
            logger.warning("very_singular evaluated at x = 0")
            raise ValueError("Singular point: very singular solution is undefined at x = 0")
        values = k * t ** (1.0 / (2.0 - p)) * s ** (-(p - 1.0) / (2.0 - p))
    return _finish(values, single)


def _barrier_ratios(p: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return sigma * p / (2.0 - p)


def upper_barrier_gammas(exp: ExponentLike, ss: SelfSimilarExponents) -> Tuple[float, ...]:
    """
    Largest admissible coefficients gamma_i of the upper barrier:

    gamma_i = [ (alpha/N) (min_j sigma_j p_j/(2-p_j) - 1) / (2 (p_i - 1)) (p_i/(2-p_i))^{-p_i} ]^{1/(2-p_i)}

    Raises:
        ValueError: if H1 or H2 fail, or some sigma_i p_i/(2-p_i) <= 1.
    """
    exp = _as_exponents(exp)
    logger.info("Starting upper_barrier_gammas")
    report = check_conditions(exp)
    if not (report.H1 and report.H2):
        logger.warning(f"upper_barrier_gammas: H1={report.H1}, H2={report.H2}")
        raise ValueError("Upper barrier requires H1 and H2")
    p = exp.array
    sigma = np.asarray(ss.sigma)
    ratios = _barrier_ratios(p, sigma)
    if np.any(ratios <= 1.0):
        logger.warning(f"Barrier hypothesis fails: sigma_i p_i/(2-p_i) = {ratios}")
        raise ValueError("Barrier hypothesis fails: need sigma_i p_i/(2-p_i) > 1 for all i")

    bracket = ss.alpha / exp.N * (ratios.min() - 1.0) / (2.0 * (p - 1.0)) * (p / (2.0 - p)) ** (-p)
    gammas = bracket ** (1.0 / (2.0 - p))
    logger.debug(f"gamma_i = {gammas}")
    return tuple(float(g) for g in gammas)


class UpperBarrier(BaseModel):
    """Outer barrier F(y) = (sum gamma_i |y_i|^{p_i/(2-p_i)})^{-1}, optionally truncated at F_*."""

    model_config = ConfigDict(frozen=True)

    gamma: Tuple[float, ...]
    p: Tuple[float, ...]
    alpha: float = Field(gt=0)
    sigma: Tuple[float, ...]
    Fstar: Optional[float] = Field(default=None, gt=0)
    strict: bool = True

    @field_validator("gamma")
    @classmethod
    def _positive(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(g <= 0 for g in value):
            raise ValueError("every gamma_i must be > 0")
        return value

    @model_validator(mode="after")
    def _within_bound(self) -> "UpperBarrier":
        if not self.strict:
            return self
        p = np.asarray(self.p)
        ratios = _barrier_ratios(p, np.asarray(self.sigma))
        if np.any(ratios <= 1.0):
            raise ValueError("need sigma_i p_i/(2-p_i) > 1 for all i")
        bound = (self.alpha / len(p) * (ratios.min() - 1.0) / (2.0 * (p - 1.0))
                 * (p / (2.0 - p)) ** (-p)) ** (1.0 / (2.0 - p))
        if np.any(np.asarray(self.gamma) > bound * (1.0 + 1e-12)):
            raise ValueError(f"gamma exceeds the supersolution bound {bound}")
        return self

    @property
    def N(self) -> int:
        return len(self.p)

    @classmethod
    def build(cls, exp: ExponentLike, Fstar: Optional[float] = None) -> "UpperBarrier":
        exp = _as_exponents(exp)
        ss = selfsim_exponents(exp)
        return cls(gamma=upper_barrier_gammas(exp, ss), p=exp.p, alpha=ss.alpha,
                   sigma=ss.sigma, Fstar=Fstar)


def eval_upper_barrier(b: UpperBarrier, y: PointLike):
    """
    Raises:
        ValueError: at y = 0, where the barrier is singular.
    """
    pts, single = _points(y, b.N)
    p = np.asarray(b.p)
    X = np.sum(np.asarray(b.gamma) * np.abs(pts) ** (p / (2.0 - p)), axis=-1)
    if np.any(X == 0.0):
        logger.warning("eval_upper_barrier evaluated at y = 0")
        raise ValueError("Singular point: the untruncated upper barrier is undefined at y = 0")
    return _finish(1.0 / X, single)


def eval_truncated_barrier(b: UpperBarrier, y: PointLike):
    """G(y) = min{F(y), F_*}; total on R^N."""
    if b.Fstar is None:
        raise ValueError("Truncation level Fstar is not set on this barrier")
    pts, single = _points(y, b.N)
    p = np.asarray(b.p)
    X = np.sum(np.asarray(b.gamma) * np.abs(pts) ** (p / (2.0 - p)), axis=-1)
    with np.errstate(divide="ignore"):
        values = np.where(X > 0.0, 1.0 / np.where(X > 0.0, X, 1.0), np.inf)
    return _finish(np.minimum(values, b.Fstar), single)


def lower_barrier_A0(exp: ExponentLike, ss: SelfSimilarExponents, gamma_exp: float,
                     theta: Sequence[float]) -> float:
    """
    Threshold A_0 above which the lower barrier is a subsolution:

    A_0 = max_i ( N gamma^{p_i-1} (p_i-1)(gamma+1) theta_i^{p_i} / (alpha (gamma max_j sigma_j theta_j - 1)) )
          ^ {1 / (gamma - gamma (p_i - 1) - p_i/theta_i)}

    The maximum runs over every coordinate.

    Raises:
        ValueError: if 1/(gamma theta_i) < (2-p_i)/p_i fails for some i.
    """
    exp = _as_exponents(exp)
    p = exp.array
    th = np.asarray(theta, dtype=float)
    if th.shape != p.shape or np.any(th <= 0.0) or np.any(th > 1.0):
        raise ValueError("theta must hold N values in (0, 1]")
    if gamma_exp <= 0:
        raise ValueError("gamma must be > 0")
    if np.any(1.0 / (gamma_exp * th) >= (2.0 - p) / p):
        logger.warning(f"Lower barrier condition fails for gamma={gamma_exp}, theta={th}")
        raise ValueError("Lower barrier condition 1/(gamma theta_i) < (2-p_i)/p_i fails")

    sigma = np.asarray(ss.sigma)
    drift = gamma_exp * np.max(sigma * th) - 1.0
    if drift <= 0:
        raise ValueError("gamma * max(sigma_i theta_i) must exceed 1")
    base = exp.N * gamma_exp ** (p - 1.0) * (p - 1.0) * (gamma_exp + 1.0) * th ** p / (ss.alpha * drift)
    power = 1.0 / (gamma_exp - gamma_exp * (p - 1.0) - p / th)
    return float(np.max(base ** power))


class LowerBarrier(BaseModel):
    """Lower barrier F(y) = (A + sum |y_i|^{theta_i})^{-gamma}."""

    model_config = ConfigDict(frozen=True)

    gamma_exp: float = Field(gt=0)
    theta: Tuple[float, ...]
    A: float
    A0: float
    p: Tuple[float, ...]

    @model_validator(mode="after")
    def _invariants(self) -> "LowerBarrier":
        p = np.asarray(self.p)
        th = np.asarray(self.theta)
        if np.any(1.0 / (self.gamma_exp * th) >= (2.0 - p) / p):
            raise ValueError("1/(gamma theta_i) < (2-p_i)/p_i must hold for all i")
        if not self.A > self.A0:
            raise ValueError(f"A={self.A} must exceed A0={self.A0}")
        return self

    @property
    def N(self) -> int:
        return len(self.p)

    @classmethod
    def build(cls, exp: ExponentLike, gamma_exp: float, theta: Sequence[float],
              A: Optional[float] = None, factor: float = 1.2) -> "LowerBarrier":
        exp = _as_exponents(exp)
        ss = selfsim_exponents(exp)
        A0 = lower_barrier_A0(exp, ss, gamma_exp, theta)
        return cls(gamma_exp=gamma_exp, theta=tuple(theta), A=factor * A0 if A is None else A,
                   A0=A0, p=exp.p)


def eval_lower_barrier(b: LowerBarrier, y: PointLike):
    pts, single = _points(y, b.N)
    X = b.A + np.sum(np.abs(pts) ** np.asarray(b.theta), axis=-1)
    return _finish(X ** (-b.gamma_exp), single)


def lower_barrier_solution(b: LowerBarrier, ss: SelfSimilarExponents, x: PointLike, t: float):
    """Subsolution in original variables, U(x,t) = t^{-alpha} F(t^{-a_i} x_i)."""
    if t <= 0:
        raise ValueError(f"Time must be > 0, got t={t}")
    pts, single = _points(x, b.N)
    scaled = pts * t ** (-np.asarray(ss.a))
    return _finish(t ** (-ss.alpha) * np.atleast_1d(eval_lower_barrier(b, scaled)), single)


def _fourth_order_derivative(F: ProfileFunction, pts: np.ndarray, axis: int, delta: float) -> np.ndarray:
    shift = np.zeros(pts.shape[-1])
    shift[axis] = delta
    return (-np.asarray(F(pts + 2 * shift)) + 8 * np.asarray(F(pts + shift))
            - 8 * np.asarray(F(pts - shift)) + np.asarray(F(pts - 2 * shift))) / (12.0 * delta)


def stationary_residual(F_eval: ProfileFunction, exp: ExponentLike, ss: SelfSimilarExponents,
                        y: PointLike, h: float) -> float:
    """
    Finite-difference value of sum_i [(|F_{y_i}|^{p_i-2}F_{y_i})_{y_i} + alpha sigma_i (y_i F)_{y_i}] at y.

    The inner derivative uses a fourth-order central stencil of step h/2, the outer one a
    second-order central difference of step h, so the stencil reaches y_i +- 2h.
    A value <= 0 (up to O(h^2)) indicates a supersolution at y, >= 0 a subsolution.

    Args:
        F_eval: vectorized profile, maps an (M, N) array to M values.
        exp: exponents p_i.
        ss: self-similar exponents (alpha, sigma_i).
        y: evaluation point, shape (N,).
        h: outer finite-difference step.

    Raises:
        ValueError: if some |y_i| < 2h (the flux is singular on the coordinate skeleton).
    """
    exp = _as_exponents(exp)
    point = np.asarray(y, dtype=float)
    if point.shape != (exp.N,):
        raise ValueError(f"y must have shape ({exp.N},)")
    if h <= 0:
        raise ValueError("h must be > 0")
    if np.any(np.abs(point) < 2.0 * h):
        logger.warning(f"stationary_residual: point {point} within 2h={2 * h} of a coordinate axis")
        raise ValueError("Point too close to a coordinate axis: need |y_i| >= 2h for every i")

    def F(z: np.ndarray) -> np.ndarray:
        return np.atleast_1d(np.asarray(F_eval(z), dtype=float))

    total = 0.0
    for i, pi in enumerate(exp.p):
        e = np.zeros(exp.N)
        e[i] = h
        side = np.stack([point + e, point - e])
        derivative = _fourth_order_derivative(F, side, i, 0.5 * h)
        flux = np.abs(derivative) ** (pi - 2.0) * derivative if pi != 2.0 else derivative
        flux = np.where(derivative == 0.0, 0.0, flux)
        diffusion = (flux[0] - flux[1]) / (2.0 * h)

        values = F(side)
        drift = ss.alpha * ss.sigma[i] * (side[0, i] * values[0] - side[1, i] * values[1]) / (2.0 * h)
        total += diffusion + drift
    return float(total)
