"""
This module handles the exponent algebra of the anisotropic p-Laplacian
u_t = sum_i (|u_{x_i}|^{p_i-2} u_{x_i})_{x_i}: admissibility conditions,
self-similar exponents, the symmetrization constant Lambda and the exponents
of the doubly nonlinear generalization.
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import gammaln

from core.logger.logger import setup_logger

logger = setup_logger(__name__)

# Margins smaller than this are reported as lying on a condition boundary
BOUNDARY_TOL = 1e-12
IDENTITY_TOL = 1e-12
LAMBDA_MIN_EXCESS = 1e-6


class ExponentVector(BaseModel):
    """Diffusion exponents p_1..p_N of the anisotropic operator."""

    model_config = ConfigDict(frozen=True)

    N: int = Field(ge=1)
    p: Tuple[float, ...]

    @field_validator("p")
    @classmethod
    def _exponents_above_one(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        for pi in value:
            if not math.isfinite(pi) or pi <= 1.0:
                raise ValueError(f"Invalid exponent {pi}: every p_i must be > 1")
        return value

    @model_validator(mode="after")
    def _length_matches_dimension(self) -> "ExponentVector":
        if len(self.p) != self.N:
            raise ValueError(f"Expected {self.N} exponents, got {len(self.p)}")
        return self

    @classmethod
    def of(cls, p: Sequence[float]) -> "ExponentVector":
        return cls(N=len(p), p=tuple(float(x) for x in p))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.p, dtype=float)

    @property
    def is_orthotropic(self) -> bool:
        return all(pi == self.p[0] for pi in self.p)


ExponentLike = Union[ExponentVector, Sequence[float]]


def _as_exponents(exp: ExponentLike) -> ExponentVector:
    if isinstance(exp, ExponentVector):
        return exp
    return ExponentVector.of(exp)


class SelfSimilarExponents(BaseModel):
    """
    Self-similar exponents B(x,t) = t^{-alpha} F(t^{-a_i} x_i), a_i = sigma_i alpha.
    """

    model_config = ConfigDict(frozen=True)

    pbar: float
    pc: float
    alpha: float
    sigma: Tuple[float, ...]
    a: Tuple[float, ...]
    beta: Tuple[float, ...]
    mu: float
    p: Tuple[float, ...]

    @model_validator(mode="after")
    def _check_identities(self) -> "SelfSimilarExponents":
        if abs(sum(self.sigma) - 1.0) > IDENTITY_TOL:
            raise ValueError(f"sum(sigma) = {sum(self.sigma)!r} differs from 1")
        scale = max(1.0, abs(self.alpha) + 1.0)
        for pi, ai in zip(self.p, self.a):
            lhs = self.alpha * (pi - 1.0) + pi * ai
            if abs(lhs - (self.alpha + 1.0)) > IDENTITY_TOL * scale:
                raise ValueError("time-elimination identity alpha(p_i-1)+p_i a_i = alpha+1 violated")
        if abs(self.mu - (1.0 - sum(self.beta))) > IDENTITY_TOL * max(1.0, len(self.p)):
            raise ValueError("mu != 1 - sum(beta)")
        return self

    @property
    def N(self) -> int:
        return len(self.p)


class ConditionReport(BaseModel):
    H1: bool
    H2: bool
    H3: bool
    diagnostics: Dict[str, Union[float, bool, List[float], List[bool]]]


def pbar(exp: ExponentLike) -> float:
    """
    Harmonic mean of the exponents, N / sum_i (1/p_i).

    Raises:
        ValueError: if some p_i <= 1.
    """
    exp = _as_exponents(exp)
    return exp.N / float(np.sum(1.0 / exp.array))


def critical_exponent(N: int) -> float:
    """Critical exponent p_c(N) = 2N/(N+1)."""
    if N < 1:
        logger.warning(f"critical_exponent called with N={N}")
        raise ValueError(f"Dimension must be >= 1, got N={N}")
    return 2.0 * N / (N + 1.0)


def check_conditions(exp: ExponentLike) -> ConditionReport:
    """
    Evaluates the standing assumptions on the exponents.

    H1: 1 < p_i < 2 for all i.
    H2: sum_i 1/p_i < (N+1)/2 (strict; margins within BOUNDARY_TOL count as failure).
    H3: p_i <= (N+1)/N * pbar for all i (non-strict).

    Args:
        exp: exponent vector.

    Returns:
        ConditionReport: flags plus margins and boundary markers in diagnostics.
    """
    exp = _as_exponents(exp)
    logger.debug(f"Parameters: N={exp.N}, p={exp.p}")
    p = exp.array
    N = exp.N
    inv_sum = float(np.sum(1.0 / p))
    pb = N / inv_sum

    h1_each = [bool(1.0 < pi < 2.0) for pi in p]
    h2_margin = (N + 1.0) / 2.0 - inv_sum
    h3_bound = (N + 1.0) / N * pb
    h3_margins = [float(h3_bound - pi) for pi in p]

    h2_boundary = abs(h2_margin) <= BOUNDARY_TOL
    h3_boundary = [abs(m) <= BOUNDARY_TOL for m in h3_margins]

    return ConditionReport(
        H1=all(h1_each),
        H2=bool(h2_margin > BOUNDARY_TOL),
        H3=all(m >= -BOUNDARY_TOL for m in h3_margins),
        diagnostics={
            "pbar": pb,
            "inverse_sum": inv_sum,
            "H1_each": h1_each,
            "H2_margin": float(h2_margin),
            "H2_boundary": bool(h2_boundary),
            "H3_bound": float(h3_bound),
            "H3_margins": h3_margins,
            "H3_boundary": [bool(b) for b in h3_boundary],
        },
    )


def selfsim_exponents(exp: ExponentLike) -> SelfSimilarExponents:
    """
    Computes the self-similar exponents of the fundamental solution.

    alpha = N / (N pbar - 2N + pbar), sigma_i = (N+1) pbar / (N p_i) - 1,
    a_i = sigma_i alpha, beta_i = (2 - p_i)/p_i, mu = N + 1 - 2N/pbar.

    Raises:
        ValueError: when H2 fails, i.e. the denominator of alpha is not positive.
    """
    exp = _as_exponents(exp)
    logger.info("Starting selfsim_exponents")
    logger.debug(f"Parameters: N={exp.N}, p={exp.p}")

    N = exp.N
    p = exp.array
    pb = pbar(exp)
    denominator = N * pb - 2.0 * N + pb
    if denominator <= BOUNDARY_TOL:
        sign = "zero" if abs(denominator) <= BOUNDARY_TOL else "negative"
        logger.warning(f"H2 violated: denominator N*pbar-2N+pbar = {denominator:.3e} ({sign})")
        raise ValueError(
            f"H2 violated: denominator of alpha is {sign} ({denominator:.3e}); "
            "sum(1/p_i) must be < (N+1)/2"
        )

    alpha = N / denominator
    sigma = (N + 1.0) * pb / (N * p) - 1.0
    beta = (2.0 - p) / p

    return SelfSimilarExponents(
        pbar=pb,
        pc=critical_exponent(N),
        alpha=alpha,
        sigma=tuple(float(s) for s in sigma),
        a=tuple(float(s * alpha) for s in sigma),
        beta=tuple(float(b) for b in beta),
        mu=N + 1.0 - 2.0 * N / pb,
        p=exp.p,
    )


def sigma_deviation(exp: ExponentLike) -> np.ndarray:
    """Second form of sigma_i: sigma_i - 1/N = ((N+1)/N) (pbar - p_i)/p_i."""
    exp = _as_exponents(exp)
    p = exp.array
    return (exp.N + 1.0) / exp.N * (pbar(exp) - p) / p


def mass_exponent(exp: ExponentLike) -> float:
    """Exponent mu of the mass-changing scaling T_k: mass factor is k**mu."""
    exp = _as_exponents(exp)
    return exp.N + 1.0 - 2.0 * exp.N / pbar(exp)


def cianchi_lambda(exp: ExponentLike) -> float:
    """
    Constant Lambda of the symmetrized isotropic problem U_t - Lambda Delta_pbar U = g.

    Evaluated in log space with the Gamma function from scipy.special; p_i' = p_i/(p_i-1),
    omega_N = pi^{N/2}/Gamma(1+N/2).

    Raises:
        ValueError: if some p_i < 1 + 1e-6 (the conjugate exponent blows up).
    """
    exp = _as_exponents(exp)
    p = exp.array
    if np.any(p < 1.0 + LAMBDA_MIN_EXCESS):
        logger.warning(f"cianchi_lambda: exponent too close to 1 in {exp.p}")
        raise ValueError(f"Every p_i must be >= 1 + {LAMBDA_MIN_EXCESS} to evaluate Lambda")

    N = exp.N
    pb = pbar(exp)
    pb_conj = pb / (pb - 1.0)
    p_conj = p / (p - 1.0)

    log_prefactor = pb * math.log(2.0) + (pb - 1.0) * math.log(pb - 1.0) - pb * math.log(pb)
    log_product = float(np.sum(np.log(p) / p + np.log(p_conj) / p_conj + gammaln(1.0 + 1.0 / p_conj)))
    log_omega = 0.5 * N * math.log(math.pi) - gammaln(1.0 + 0.5 * N)
    log_bracket = log_product - log_omega - gammaln(1.0 + N / pb_conj)

    return math.exp(log_prefactor + pb / N * log_bracket)


class DnlParameters(BaseModel):
    """
    Exponents of the doubly nonlinear equation u_t = sum_i (|(u^{m_i})_{x_i}|^{p_i-2}(u^{m_i})_{x_i})_{x_i}.
    """

    model_config = ConfigDict(frozen=True)

    p: Tuple[float, ...]
    m: Tuple[float, ...]

    @field_validator("p")
    @classmethod
    def _p_above_one(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(pi <= 1.0 for pi in value):
            raise ValueError("every p_i must be > 1")
        return value

    @field_validator("m")
    @classmethod
    def _m_positive(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(mi <= 0.0 for mi in value):
            raise ValueError("every m_i must be > 0")
        return value

    @model_validator(mode="after")
    def _same_length(self) -> "DnlParameters":
        if len(self.p) != len(self.m):
            raise ValueError("p and m must have the same length")
        return self

    @property
    def N(self) -> int:
        return len(self.p)

    @property
    def pbar(self) -> float:
        return pbar(self.p)

    @property
    def mbar(self) -> float:
        return float(np.mean(self.m))

    @property
    def q(self) -> float:
        # q / pbar = (1/N) sum m_i / p_i
        return self.pbar * float(np.mean(np.asarray(self.m) / np.asarray(self.p)))


class DnlExponents(BaseModel):
    alpha: float
    alpha_positive: bool
    sigma: Optional[Tuple[float, ...]]
    DN2: bool
    DN3: Tuple[bool, ...]


def dnl_exponents(dnl: DnlParameters) -> DnlExponents:
    """
    Self-similar exponents of the doubly nonlinear equation.

    alpha = N / (N (mbar pbar - q - 1) + pbar), sigma_i = (1/p_i)(1/alpha + 1 - m_i (p_i - 1)).
    When DN2 fails alpha is returned with alpha_positive=False and sigma is None.
    """
    logger.info("Starting dnl_exponents")
    logger.debug(f"Parameters: p={dnl.p}, m={dnl.m}")

    N = dnl.N
    pb, mb, q = dnl.pbar, dnl.mbar, dnl.q
    p = np.asarray(dnl.p)
    m = np.asarray(dnl.m)

    denominator = N * (mb * pb - q - 1.0) + pb
    dn2 = bool(mb * pb + pb / N > q + 1.0)
    if abs(denominator) <= BOUNDARY_TOL:
        logger.warning("DN2 boundary: alpha is unbounded")
        return DnlExponents(alpha=math.inf, alpha_positive=False, sigma=None, DN2=False,
                            DN3=tuple(False for _ in range(N)))

    alpha = N / denominator
    if not dn2:
        logger.warning(f"DN2 violated, alpha={alpha:.6g} is not positive")
        return DnlExponents(alpha=alpha, alpha_positive=False, sigma=None, DN2=False,
                            DN3=tuple(False for _ in range(N)))

    sigma = (1.0 / p) * (1.0 / alpha + 1.0 - m * (p - 1.0))
    dn3 = tuple(bool(mi * (pi - 1.0) < 1.0 / alpha + 1.0) for pi, mi in zip(p, m))
    return DnlExponents(
        alpha=alpha,
        alpha_positive=alpha > 0.0,
        sigma=tuple(float(s) for s in sigma),
        DN2=dn2,
        DN3=dn3,
    )


def dnl_identity_residuals(dnl: DnlParameters, result: DnlExponents) -> np.ndarray:
    """Residuals of alpha (m_i (p_i - 1) - 1) + p_i a_i = 1, one per coordinate."""
    if result.sigma is None:
        raise ValueError("sigma is undefined when DN2 fails")
    p = np.asarray(dnl.p)
    m = np.asarray(dnl.m)
    a = result.alpha * np.asarray(result.sigma)
    return result.alpha * (m * (p - 1.0) - 1.0) + p * a - 1.0


class RegionClass(BaseModel):
    p1: float
    p2: float
    H1: bool
    H2: bool
    H3: bool
    hyperbola_margin: float
    label: str


def classify_region(p1: float, p2: float) -> RegionClass:
    """
    Classifies a planar exponent pair.

    H2 is tested through the hyperbola (p1 - 2/3)(p2 - 2/3) > 4/9 and H3 through
    the lines p1 <= 2 p2, p2 <= 2 p1.
    """
    if p1 <= 1.0 or p2 <= 1.0:
        raise ValueError(f"Exponents must be > 1, got ({p1}, {p2})")

    margin = (p1 - 2.0 / 3.0) * (p2 - 2.0 / 3.0) - 4.0 / 9.0
    # same tolerance scale as check_conditions: margin / (p1 p2) * 3/2 is its H2 margin
    h2_margin = 1.5 * margin / (p1 * p2)
    h2 = h2_margin > BOUNDARY_TOL
    h3 = (p1 - 2.0 * p2) <= BOUNDARY_TOL and (p2 - 2.0 * p1) <= BOUNDARY_TOL
    h1 = 1.0 < p1 < 2.0 and 1.0 < p2 < 2.0

    if abs(h2_margin) <= BOUNDARY_TOL:
        label = "boundary"
    elif not h2:
        label = "H2-fail"
    elif not h3:
        label = "H3-fail"
    elif h1:
        label = "admissible-fast"
    else:
        label = "admissible"

    return RegionClass(p1=p1, p2=p2, H1=h1, H2=h2, H3=h3, hyperbola_margin=margin, label=label)


def region_scan(lo: float = 1.0, hi: float = 2.5, n: int = 151) -> List[RegionClass]:
    """Scans the open square (lo, hi)^2 on an n x n lattice, skipping the left/bottom edge."""
    logger.info("Starting region_scan")
    values = np.linspace(lo, hi, n + 1)[1:]
    return [classify_region(float(a), float(b)) for a in values for b in values]
