"""
This module turns qualitative properties of the anisotropic fast-diffusion flow
(mass conservation, L^q decay, contraction, comparison, symmetry, smoothing rate,
barriers, concentration comparison, asymptotic convergence, positivity and tails)
into tolerance-based checks over trajectories and profiles.

Every check returns a CheckReport listing what was measured and the tolerance used.
"""

import math
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import toml
from pydantic import BaseModel, field_validator

from core.exponents import ExponentLike, SelfSimilarExponents, _as_exponents, selfsim_exponents
from core.grid import (
    Field,
    concentration_excess,
    integrate,
    lq_norm,
    reflect,
    schwarz_symmetrize,
    ssni_defect,
)
from core.logger.logger import setup_logger
from core.profiles import (
    UpperBarrier,
    barenblatt_solution,
    calibrate_orthotropic,
    calibrate_orthotropic_on_grid,
    eval_orthotropic,
    eval_truncated_barrier,
)
from core.solver import Trajectory, energy_functional

logger = setup_logger(__name__)

DEFAULT_NEWTON_TOL = 1e-8
MIDDLE_FRACTION = 0.6


class CheckReport(BaseModel):
    name: str
    passed: bool
    measured: List[Tuple[str, float]] = []
    tolerance: float = 0.0
    notes: str = ""

    @field_validator("measured")
    @classmethod
    def _finite(cls, value: List[Tuple[str, float]]) -> List[Tuple[str, float]]:
        for label, x in value:
            if not math.isfinite(x):
                raise ValueError(f"measured value {label}={x} is not finite")
        return value

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "tolerance": self.tolerance,
            "notes": self.notes,
            "measured": {label: value for label, value in self.measured},
        }

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            toml.dump(self.to_dict(), fh)
        return path


def _step_tol(traj: Trajectory, tol: Optional[float]) -> float:
    if tol is not None:
        return tol
    return 10.0 * float(traj.config.get("newton_tol", DEFAULT_NEWTON_TOL))


def _report(name: str, passed: bool, measured, tolerance: float, notes: str = "") -> CheckReport:
    report = CheckReport(name=name, passed=bool(passed), measured=[(k, float(v)) for k, v in measured],
                         tolerance=float(tolerance), notes=notes)
    if passed:
        logger.info(f"{name}: passed")
    else:
        logger.warning(f"{name}: FAILED {report.measured}")
    return report


def fit_slope(x: Sequence[float], y: Sequence[float], middle: float = MIDDLE_FRACTION) -> float:
    """
    Least-squares slope of log y against log x over the middle fraction of the samples.

    Raises:
        ValueError: with fewer than two usable (positive) samples.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    x, y = x[keep], y[keep]
    order = np.argsort(x)
    x, y = x[order], y[order]
    drop = int(round(0.5 * (1.0 - middle) * x.size))
    if x.size - 2 * drop >= 2:
        x, y = x[drop:x.size - drop], y[drop:y.size - drop]
    if x.size < 2:
        raise ValueError("slope fit needs at least two positive samples")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _same_mesh(a: Trajectory, b: Trajectory) -> None:
    if len(a.times) != len(b.times) or not np.allclose(a.times, b.times):
        logger.warning("Trajectories recorded on different time meshes")
        raise ValueError("trajectories must share the time mesh")
    if a.grid != b.grid:
        raise ValueError("trajectories must share the grid")


def _max_increase(seq: Sequence[float]) -> float:
    s = np.asarray(seq, dtype=float)
    return float(np.max(np.diff(s), initial=0.0)) if s.size > 1 else 0.0


def check_mass(traj: Trajectory, tol: float = 0.01) -> CheckReport:
    """Largest relative deviation of the mass from its initial value must not exceed tol."""
    masses = np.array([integrate(f) for f in traj.fields])
    if masses[0] == 0.0:
        return _report("mass", bool(np.all(masses == 0.0)), [("initial_mass", 0.0)], tol,
                       "zero initial mass")
    drift = float(np.max(np.abs(masses - masses[0])) / masses[0])
    return _report("mass", drift <= tol, [("initial_mass", masses[0]), ("final_mass", masses[-1]),
                                          ("max_relative_drift", drift)], tol)


def check_lq_decay(traj: Trajectory, q: float, tol: Optional[float] = None) -> CheckReport:
    """||u(t)||_q nonincreasing in t, each step allowed to grow by tol."""
    tol = _step_tol(traj, tol)
    norms = [lq_norm(f, q) for f in traj.fields]
    growth = _max_increase(norms)
    label = "inf" if math.isinf(q) else f"{q:g}"
    return _report(f"lq_decay_q{label}", growth <= tol,
                   [("initial_norm", norms[0]), ("final_norm", norms[-1]), ("max_step_increase", growth)], tol)


def check_L1_contraction(trajA: Trajectory, trajB: Trajectory, tol: Optional[float] = None) -> CheckReport:
    """||u_A(t) - u_B(t)||_1 nonincreasing in t."""
    _same_mesh(trajA, trajB)
    tol = _step_tol(trajA, tol)
    vol = trajA.grid.cell_volume
    dist = [float(np.sum(np.abs(a.values - b.values)) * vol) for a, b in zip(trajA.fields, trajB.fields)]
    growth = _max_increase(dist)
    return _report("L1_contraction", growth <= tol,
                   [("initial_distance", dist[0]), ("final_distance", dist[-1]), ("max_step_increase", growth)],
                   tol)


def check_l2_t_contraction(trajA: Trajectory, trajB: Trajectory, tol: Optional[float] = None) -> CheckReport:
    """int (u_A(t) - u_B(t))_+^2 nonincreasing in t."""
    _same_mesh(trajA, trajB)
    tol = _step_tol(trajA, tol)
    vol = trajA.grid.cell_volume
    dist = [float(np.sum(np.maximum(a.values - b.values, 0.0) ** 2) * vol)
            for a, b in zip(trajA.fields, trajB.fields)]
    growth = _max_increase(dist)
    return _report("L2_T_contraction", growth <= tol,
                   [("initial_value", dist[0]), ("final_value", dist[-1]), ("max_step_increase", growth)], tol)


def check_order(trajA: Trajectory, trajB: Trajectory, tol: Optional[float] = None) -> CheckReport:
    """u_A(0) <= u_B(0) implies u_A(t) <= u_B(t) + tol at every recorded time."""
    _same_mesh(trajA, trajB)
    tol = _step_tol(trajA, tol)
    initial = float(np.max(trajA.fields[0].values - trajB.fields[0].values))
    worst = max(float(np.max(a.values - b.values)) for a, b in zip(trajA.fields, trajB.fields))
    notes = "" if initial <= 0 else "initial data are not ordered"
    return _report("order", initial <= 0 and worst <= tol,
                   [("initial_violation", max(initial, 0.0)), ("max_violation", max(worst, 0.0))], tol, notes)


def check_energy(traj: Trajectory, p: ExponentLike, tol: Optional[float] = None) -> CheckReport:
    """
    Energy nonincreasing per step, ||u(t)||_2^2 nonincreasing, and the dissipation
    sum_k dt_k ||(u_k - u_{k-1})/dt_k||_2^2 bounded by the initial energy + tol.

    The energy is the regularized one the scheme minimizes when diagnostics are recorded,
    otherwise J(u) = sum_i (1/p_i) int |D_i u|^{p_i} of the recorded fields.
    """
    tol = _step_tol(traj, tol)
    if traj.diagnostics:
        energies = np.array([d.reg_energy for d in traj.diagnostics])
    else:
        energies = np.array([energy_functional(f, p) for f in traj.fields])
    energy_growth = _max_increase(energies)
    l2 = [lq_norm(f, 2) ** 2 for f in traj.fields]
    l2_growth = _max_increase(l2)
    vol = traj.grid.cell_volume
    dissipation = 0.0
    for (t0, a), (t1, b) in zip(zip(traj.times, traj.fields), zip(traj.times[1:], traj.fields[1:])):
        dissipation += float(np.sum((b.values - a.values) ** 2)) * vol / (t1 - t0)
    J0 = float(energies[0])
    passed = energy_growth <= tol and l2_growth <= tol and dissipation <= J0 + tol
    return _report("energy", passed, [("initial_energy", J0), ("final_energy", float(energies[-1])),
                                      ("max_energy_increase", energy_growth), ("max_l2_increase", l2_growth),
                                      ("dissipation", dissipation)], tol)


def check_energy_rate(traj: Trajectory, max_slope: float = -0.8) -> CheckReport:
    """Log-log slope of J(u(t)) against t must not exceed max_slope (J <= C ||u0||_2^2 / t)."""
    times = np.array([d.time for d in traj.diagnostics])
    energies = traj.energies()
    slope = fit_slope(times, energies)
    return _report("energy_rate", slope <= max_slope, [("slope", slope)], max_slope)


def check_smoothing(traj: Trajectory, ss: SelfSimilarExponents, tol: float = 0.1,
                    window: Optional[Tuple[float, float]] = None, t0: Optional[float] = None) -> CheckReport:
    """
    Fits the slope of log ||u(t)||_inf against log t (middle 60% of the window) and compares it
    with -alpha; the constant C_hat = max_t ||u(t)||_inf t^alpha / M^{pbar alpha / N} is reported.

    With t0 set, traj is a rescaled run: its times are tau = log(t + t0) and
    ||u(t)||_inf = e^{-alpha tau} ||v(tau)||_inf. The window is always in t.
    """
    times = np.asarray(traj.times)
    peaks = np.array([lq_norm(f, math.inf) for f in traj.fields])
    if t0 is not None:
        peaks = np.exp(-ss.alpha * times) * peaks
        times = np.exp(times) - t0
    keep = times > 0
    if window is not None:
        keep &= (times >= window[0]) & (times <= window[1])
    slope = fit_slope(times[keep], peaks[keep])
    M = integrate(traj.fields[0])
    exponent = ss.pbar * ss.alpha / ss.N
    c_hat = float(np.max(peaks[keep] * times[keep] ** ss.alpha) / M ** exponent) if M > 0 else 0.0
    deviation = abs(slope + ss.alpha) / ss.alpha
    return _report("smoothing", deviation <= tol, [("slope", slope), ("target", -ss.alpha),
                                                   ("relative_deviation", deviation), ("C_hat", c_hat)], tol)


def check_ssni(traj: Trajectory, tol: Optional[float] = None) -> CheckReport:
    """Every recorded field is separately symmetric and nonincreasing in each |x_i|."""
    tol = _step_tol(traj, tol)
    scale = max(1.0, max(float(f.values.max()) for f in traj.fields))
    defects = [ssni_defect(f) for f in traj.fields]
    worst = max(defects)
    return _report("ssni", worst <= tol * scale, [("initial_defect", defects[0]), ("max_defect", worst)],
                   tol * scale)


def check_aleksandrov(traj: Trajectory, axis: int, tol: Optional[float] = None) -> CheckReport:
    """u(pi x, t) <= u(x, t) + tol on the half-space x_axis > 0, pi the mirror across x_axis = 0."""
    tol = _step_tol(traj, tol)
    grid = traj.grid
    coord = np.meshgrid(*[grid.axis(i) for i in range(grid.N)], indexing="ij")[axis]
    half = coord > 0
    excesses = [float(np.max((reflect(f, axis) - f.values)[half])) for f in traj.fields]
    worst = max(excesses)
    return _report(f"aleksandrov_axis{axis}", worst <= tol,
                   [("initial_excess", max(excesses[0], 0.0)), ("max_excess", max(worst, 0.0))], tol)


def calibrate_fstar(v0: Field, ss: SelfSimilarExponents, c_hat: float, tau1: float = 0.0) -> float:
    """
    Truncation level F_* = max(C_hat M^{pbar alpha/N}, L1 e^{alpha tau1}), with M the mass and L1
    the sup of the rescaled initial datum; C_hat comes from a smoothing fit.
    """
    M = integrate(v0)
    L1 = lq_norm(v0, math.inf)
    return max(c_hat * M ** (ss.pbar * ss.alpha / ss.N), L1 * math.exp(ss.alpha * tau1))


def check_barrier(rescaled_traj: Trajectory, barrier: UpperBarrier, tol: Optional[float] = None) -> CheckReport:
    """v(y, tau) <= min{F(y), F_*} + tol at every recorded tau."""
    tol = _step_tol(rescaled_traj, tol)
    if barrier.Fstar is None:
        raise ValueError("check_barrier needs a truncated barrier (Fstar set)")
    G = np.asarray(eval_truncated_barrier(barrier, rescaled_traj.grid.centers())).reshape(rescaled_traj.grid.shape)
    excesses = [float(np.max(f.values - G)) for f in rescaled_traj.fields]
    worst = max(excesses)
    return _report("barrier", worst <= tol, [("Fstar", barrier.Fstar), ("max_excess", worst)], tol)


def check_concentration(anisoTraj: Trajectory, isoTraj: Trajectory, tol: Optional[float] = None,
                        c: float = 1.0) -> CheckReport:
    """
    u^#(t) less concentrated than U(t) at every recorded time, and ||u(t)||_q <= ||U(t)||_q + tol
    for q in {1, 2, inf}. Default tol = c (max_i h_i + newton_tol) max(1, M).
    """
    _same_mesh(anisoTraj, isoTraj)
    if tol is None:
        M = integrate(anisoTraj.fields[0])
        newton_tol = float(anisoTraj.config.get("newton_tol", DEFAULT_NEWTON_TOL))
        tol = c * (max(anisoTraj.grid.h) + newton_tol) * max(1.0, M)
    worst_curve = -math.inf
    worst_norm = -math.inf
    for u, U in zip(anisoTraj.fields, isoTraj.fields):
        worst_curve = max(worst_curve, concentration_excess(schwarz_symmetrize(u), U))
        for q in (1.0, 2.0, math.inf):
            worst_norm = max(worst_norm, lq_norm(u, q) - lq_norm(U, q))
    passed = worst_curve <= tol and worst_norm <= tol
    return _report("concentration", passed, [("max_curve_excess", worst_curve),
                                             ("max_norm_excess", worst_norm)], tol)


def check_convergence_to_barenblatt(traj: Trajectory, M: float, p: float, factor: float = 3.0,
                                    floor: float = 1e-3, t_min: float = 0.0) -> CheckReport:
    """
    Orthotropic exponents: e1(t) = ||u(t) - B_M(t)||_1 and einf(t) = t^alpha ||u(t) - B_M(t)||_inf.
    Passes when both fall by at least `factor` over the recorded window, or both stay below
    `floor` (relative to M and to t^alpha ||B_M(t)||_inf) throughout.
    """
    grid = traj.grid
    profile = calibrate_orthotropic(grid.N, p, M)
    alpha = profile.exponents.alpha
    centers = grid.centers()
    e1, einf, scale = [], [], []
    for t, u in zip(traj.times, traj.fields):
        if t <= t_min or t <= 0:
            continue
        B = np.asarray(barenblatt_solution(profile, centers, t)).reshape(grid.shape)
        diff = u.values - B
        e1.append(float(np.sum(np.abs(diff)) * grid.cell_volume))
        einf.append(float(t ** alpha * np.max(np.abs(diff))))
        scale.append(float(t ** alpha * np.max(B)))
    if len(e1) < 2:
        raise ValueError("need at least two recorded times after t_min")
    ratio1 = e1[0] / max(e1[-1], 1e-300)
    ratio_inf = einf[0] / max(einf[-1], 1e-300)
    exact = max(e1) <= floor * M and max(np.array(einf) / np.array(scale)) <= floor
    passed = exact or (ratio1 >= factor and ratio_inf >= factor)
    return _report("barenblatt_convergence", passed,
                   [("initial_L1_error", e1[0]), ("final_L1_error", e1[-1]), ("L1_ratio", min(ratio1, 1e300)),
                    ("initial_scaled_Linf_error", einf[0]), ("final_scaled_Linf_error", einf[-1]),
                    ("Linf_ratio", min(ratio_inf, 1e300))], factor)


def _box_profile(grid, p: float, M: float) -> np.ndarray:
    profile = calibrate_orthotropic_on_grid(grid, p, M)
    return np.asarray(eval_orthotropic(profile, grid.centers())).reshape(grid.shape)


def check_rescaled_convergence(rescaled_traj: Trajectory, p: float, M: Optional[float] = None,
                               tau_min: float = 0.0, factor: float = 3.0, floor: float = 1e-3) -> CheckReport:
    """
    Orthotropic exponents, rescaled run: e1(tau) = ||v - F||_1 and einf(tau) = ||v - F||_inf, which
    equal ||u(t) - B_M(t+t0)||_1 and (t+t0)^alpha ||u(t) - B_M(t+t0)||_inf. F is the profile whose mass
    inside the box is M (default: the mass of the first field). Passes when both errors fall by at
    least `factor` over the window tau > tau_min, or both stay below `floor` (relative to M and to
    max F) throughout.
    """
    grid = rescaled_traj.grid
    M = integrate(rescaled_traj.fields[0]) if M is None else M
    F = _box_profile(grid, p, M)
    e1, einf = [], []
    for tau, v in zip(rescaled_traj.times, rescaled_traj.fields):
        if tau <= tau_min:
            continue
        diff = v.values - F
        e1.append(float(np.sum(np.abs(diff)) * grid.cell_volume))
        einf.append(float(np.max(np.abs(diff))))
    if len(e1) < 2:
        raise ValueError("need at least two recorded times after tau_min")
    ratio1 = e1[0] / max(e1[-1], 1e-300)
    ratio_inf = einf[0] / max(einf[-1], 1e-300)
    exact = max(e1) <= floor * M and max(einf) <= floor * float(F.max())
    passed = exact or (ratio1 >= factor and ratio_inf >= factor)
    return _report("barenblatt_convergence", passed,
                   [("initial_L1_error", e1[0]), ("final_L1_error", e1[-1]), ("L1_ratio", min(ratio1, 1e300)),
                    ("initial_scaled_Linf_error", einf[0]), ("final_scaled_Linf_error", einf[-1]),
                    ("Linf_ratio", min(ratio_inf, 1e300))], factor)


def check_mass_mismatch_plateau(rescaled_traj: Trajectory, p: float, M_wrong: float, tau_min: float = 0.0,
                                tol: float = 0.2) -> CheckReport:
    """
    Against the profile of the wrong mass M_wrong, e1(tau) = ||v - F_{M_wrong}||_1 cannot vanish: it
    levels off at the mass gap |M_wrong - M|. Passes when every e1 in the second half of the window
    tau > tau_min lies within tol * gap of the gap.
    """
    grid = rescaled_traj.grid
    M = integrate(rescaled_traj.fields[0])
    F = _box_profile(grid, p, M_wrong)
    gap = abs(float(np.sum(F)) * grid.cell_volume - M)
    taus = np.asarray(rescaled_traj.times)
    keep = taus > tau_min
    if keep.sum() < 2 or gap <= 0:
        raise ValueError("need two recorded times after tau_min and M_wrong != M")
    late = taus >= 0.5 * (taus[keep][0] + taus[keep][-1])
    e1 = np.array([float(np.sum(np.abs(v.values - F)) * grid.cell_volume)
                   for v, k in zip(rescaled_traj.fields, keep & late) if k])
    worst = float(np.max(np.abs(e1 - gap)) / gap)
    return _report("mass_mismatch_plateau", worst <= tol,
                   [("mass_gap", gap), ("final_L1_error", e1[-1]), ("max_relative_offset", worst)], tol)


def _axis_samples(obj: Union[Field, Callable], N: int, axis: int, window: Tuple[float, float],
                  samples: int = 64) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(obj, Field):
        grid = obj.grid
        index = list(grid.center_index)
        index[axis] = slice(grid.n[axis] // 2 + 1, None)
        y = grid.axis(axis)[grid.n[axis] // 2 + 1:]
        v = obj.values[tuple(index)]
    else:
        y = np.logspace(math.log10(window[0]), math.log10(window[1]), samples)
        pts = np.zeros((y.size, N))
        pts[:, axis] = y
        v = np.asarray(obj(pts), dtype=float)
    keep = (y >= window[0]) & (y <= window[1])
    return y[keep], v[keep]


def check_positivity_and_tails(obj: Union[Trajectory, Field, Callable], exp: ExponentLike,
                               margin: int = 2, slack: float = 0.15,
                               tail_window: Optional[Tuple[float, float]] = None) -> CheckReport:
    """
    Trajectory: the interior minimum (cells at least `margin` from the boundary) is > 0 at all t > 0.
    Profile (Field or callable): positivity plus per-axis log-log tail slopes within
    slack * p_i/(2-p_i) of -p_i/(2-p_i) over tail_window.
    """
    exp = _as_exponents(exp)
    if isinstance(obj, Trajectory):
        mask = obj.grid.interior_mask(margin)
        minima = [float(f.values[mask].min()) for t, f in zip(obj.times, obj.fields) if t > 0]
        worst = min(minima) if minima else 0.0
        return _report("positivity", worst > 0, [("min_interior_value", worst)], 0.0)

    measured = []
    passed = True
    if isinstance(obj, Field):
        interior = float(obj.values[obj.grid.interior_mask(margin)].min())
        measured.append(("min_interior_value", interior))
        passed = interior > 0
    for i, pi in enumerate(exp.p):
        target = -pi / (2.0 - pi)
        window = tail_window
        if window is None:
            half = obj.grid.L[i] if isinstance(obj, Field) else 100.0
            window = (0.1 * half, 0.9 * half)
        y, v = _axis_samples(obj, exp.N, i, window)
        slope = fit_slope(y, v)
        measured.extend([(f"slope_axis{i}", slope), (f"target_axis{i}", target)])
        passed = passed and abs(slope - target) <= slack * abs(target)
    return _report("positivity_and_tails", passed, measured, slack)
