import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from core.exponents import selfsim_exponents
from core.grid import Field, TensorGrid, schwarz_symmetrize
from core.profiles import (
    OrthotropicProfile,
    UpperBarrier,
    barenblatt_solution,
    calibrate_orthotropic,
    calibrate_orthotropic_on_grid,
    eval_orthotropic,
    eval_upper_barrier,
)
from core.solver import StepConfig, StepDiagnostics, Trajectory, evolve
from core.verify import (
    CheckReport,
    calibrate_fstar,
    check_aleksandrov,
    check_barrier,
    check_concentration,
    check_convergence_to_barenblatt,
    check_energy,
    check_energy_rate,
    check_L1_contraction,
    check_l2_t_contraction,
    check_lq_decay,
    check_mass,
    check_mass_mismatch_plateau,
    check_order,
    check_positivity_and_tails,
    check_rescaled_convergence,
    check_smoothing,
    check_ssni,
    fit_slope,
)

GRID = TensorGrid.cube(2, 4.5, 9)


def gaussian(scale: float = 1.0, shift=(0.0, 0.0), width: float = 1.0, grid: TensorGrid = GRID) -> np.ndarray:
    x = grid.centers() - np.asarray(shift)
    return scale * np.exp(-np.sum(x * x, axis=-1) / (2.0 * width ** 2)).reshape(grid.shape)


def trajectory(arrays, times=None, grid: TensorGrid = GRID) -> Trajectory:
    times = list(times) if times is not None else [float(k) for k in range(len(arrays))]
    fields = [Field(grid=grid, values=a, time_stamp=t) for a, t in zip(arrays, times)]
    return Trajectory(times=times, fields=fields, config={"newton_tol": 1e-8})


class TestCheckReport:
    """Report container."""

    def test_rejects_nan(self):
        """Test measured values must be finite."""
        with pytest.raises(ValueError, match="not finite"):
            CheckReport(name="x", passed=True, measured=[("value", float("nan"))])

    def test_save(self, tmp_path):
        """Test a report is written as TOML with its measurements."""
        path = CheckReport(name="mass", passed=True, measured=[("drift", 0.001)], tolerance=0.01).save(
            tmp_path / "mass.toml")
        assert "drift = 0.001" in path.read_text()


class TestFitSlope:
    """Log-log slope fits."""

    def test_power_law(self):
        """Test the slope of y = 3 x^{-2} is -2."""
        x = np.logspace(0, 3, 40)
        assert fit_slope(x, 3.0 * x ** -2) == pytest.approx(-2.0, abs=1e-12)

    def test_needs_two_samples(self):
        """Test fewer than two positive samples are refused."""
        with pytest.raises(ValueError, match="two"):
            fit_slope([1.0, 2.0], [1.0, 0.0])


class TestConservationChecks:
    """Mass, norm decay and contraction."""

    def test_mass_constant(self):
        """Test a mass-preserving spreading passes."""
        wide = TensorGrid.cube(2, 12.5, 25)
        traj = trajectory([gaussian(1.0, width=1.0, grid=wide), gaussian(0.25, width=2.0, grid=wide)], grid=wide)
        assert check_mass(traj, tol=1e-3).passed

    def test_mass_lost(self):
        """Test halving the mass fails."""
        traj = trajectory([gaussian(1.0), gaussian(0.5)])
        report = check_mass(traj)
        assert not report.passed
        assert dict(report.measured)["max_relative_drift"] == pytest.approx(0.5)

    def test_lq_decay(self):
        """Test decaying fields pass and growing fields fail."""
        decaying = trajectory([gaussian(1.0), gaussian(0.5), gaussian(0.25)])
        growing = trajectory([gaussian(0.25), gaussian(0.5), gaussian(1.0)])
        for q in (1, 2, math.inf):
            assert check_lq_decay(decaying, q).passed
            assert not check_lq_decay(growing, q).passed

    def test_contractions(self):
        """Test distances shrinking to zero pass, growing ones fail."""
        a = trajectory([gaussian(1.0), gaussian(1.0)])
        b = trajectory([gaussian(2.0), gaussian(1.0)])
        assert check_L1_contraction(a, b).passed
        assert check_l2_t_contraction(b, a).passed
        assert not check_L1_contraction(trajectory([gaussian(1.0), gaussian(1.0)]),
                                        trajectory([gaussian(1.0), gaussian(2.0)])).passed

    def test_mesh_mismatch(self):
        """Test trajectories on different time meshes are refused."""
        a = trajectory([gaussian(1.0), gaussian(1.0)])
        b = trajectory([gaussian(1.0), gaussian(1.0)], times=[0.0, 2.0])
        with pytest.raises(ValueError, match="time mesh"):
            check_L1_contraction(a, b)


class TestOrderAndSymmetry:
    """Comparison, SSNI and reflection checks."""

    def test_order(self):
        """Test ordered data pass and a crossing fails."""
        small = trajectory([gaussian(1.0), gaussian(0.5)])
        large = trajectory([gaussian(2.0), gaussian(1.0)])
        assert check_order(small, large).passed
        report = check_order(large, small)
        assert not report.passed
        assert "not ordered" in report.notes

    def test_ssni(self):
        """Test a centered field passes and a shifted one fails."""
        assert check_ssni(trajectory([gaussian(1.0)])).passed
        assert not check_ssni(trajectory([gaussian(1.0, shift=(1.0, 0.0))])).passed

    def test_aleksandrov(self):
        """Test mass on the positive side passes, on the negative side fails."""
        assert check_aleksandrov(trajectory([gaussian(1.0, shift=(1.0, 0.0))]), axis=0).passed
        assert not check_aleksandrov(trajectory([gaussian(1.0, shift=(-1.0, 0.0))]), axis=0).passed


class TestEnergyChecks:
    """Energy monotonicity and decay rate."""

    def test_energy_on_run(self):
        """Test a computed run passes the energy check and its reversal fails."""
        grid = TensorGrid.cube(2, 4.5, 9)
        u0 = Field(grid=grid, values=gaussian(1.0, grid=grid), time_stamp=0.0)
        traj = evolve(u0, 0.4, StepConfig(h=0.1), [1.5, 1.5])
        assert check_energy(traj, [1.5, 1.5]).passed
        backwards = Trajectory(times=traj.times, fields=list(reversed(traj.fields)), config=traj.config)
        assert not check_energy(backwards, [1.5, 1.5]).passed

    def test_energy_rate(self):
        """Test J ~ 1/t passes a slope bound of -0.8 and J ~ t^{-1/2} fails it."""
        times = np.linspace(0.0, 10.0, 41)

        def run(power):
            diagnostics = [StepDiagnostics(time=t, step=0.25, energy=(t + 1e-3) ** power, reg_energy=0.0,
                                           iterations=1, residual=0.0) for t in times]
            return trajectory([gaussian(1.0)], times=[0.0]).model_copy(update={"diagnostics": diagnostics})

        assert check_energy_rate(run(-1.0)).passed
        assert not check_energy_rate(run(-0.5)).passed


class TestSmoothingAndBarrier:
    """Smoothing rate, F_* calibration and barrier comparison."""

    def test_smoothing_exact_rate(self):
        """Test a field decaying like t^{-alpha} reproduces the slope -alpha."""
        ss = selfsim_exponents([1.5, 1.5])
        times = [1.0, 2.0, 4.0, 8.0, 16.0]
        traj = trajectory([gaussian(t ** -ss.alpha) for t in times], times=times)
        report = check_smoothing(traj, ss)
        assert report.passed
        assert dict(report.measured)["slope"] == pytest.approx(-4.0, abs=1e-10)

    def test_smoothing_wrong_rate(self):
        """Test a field decaying like t^{-1} fails for alpha = 4."""
        ss = selfsim_exponents([1.5, 1.5])
        times = [1.0, 2.0, 4.0, 8.0, 16.0]
        assert not check_smoothing(trajectory([gaussian(1.0 / t) for t in times], times=times), ss).passed

    def test_calibrate_fstar(self):
        """Test F_* is at least the initial supremum."""
        ss = selfsim_exponents([1.4, 1.8])
        v0 = Field(grid=GRID, values=gaussian(3.0))
        assert calibrate_fstar(v0, ss, c_hat=0.0) == pytest.approx(3.0)

    def test_barrier(self):
        """Test a field under min{F, F_*} passes and one above F_* fails."""
        barrier = UpperBarrier.build([1.4, 1.8], Fstar=1.0)
        below = trajectory([gaussian(0.5, width=0.3)])
        above = trajectory([gaussian(2.0, width=0.3)])
        assert check_barrier(below, barrier).passed
        assert not check_barrier(above, barrier).passed

    def test_barrier_needs_truncation(self):
        """Test the untruncated barrier is refused."""
        with pytest.raises(ValueError, match="Fstar"):
            check_barrier(trajectory([gaussian(1.0)]), UpperBarrier.build([1.4, 1.8]))


class TestConcentrationCheck:
    """Comparison with the symmetrized isotropic problem."""

    def test_symmetrized_copy_passes(self):
        """Test a trajectory against its own symmetrization passes."""
        arrays = [gaussian(1.0, shift=(1.0, 0.5)), gaussian(0.5, shift=(1.0, 0.5), width=1.4)]
        aniso = trajectory(arrays)
        iso = Trajectory(times=aniso.times, fields=[schwarz_symmetrize(f) for f in aniso.fields],
                         config=aniso.config)
        assert check_concentration(aniso, iso).passed

    def test_spread_companion_fails(self):
        """Test a much less concentrated companion fails."""
        aniso = trajectory([gaussian(1.0, width=0.5)])
        iso = trajectory([gaussian(1.0 / 16.0, width=2.0)])
        assert not check_concentration(aniso, iso, tol=1e-6).passed


class TestAsymptotics:
    """Convergence to the Barenblatt solution, positivity and tails."""

    def test_exact_barenblatt(self):
        """Test sampled Barenblatt solutions pass and the wrong mass does not."""
        grid = TensorGrid.cube(2, 10.5, 21)
        profile = calibrate_orthotropic(2, 1.5, 1.0)
        times = [1.0, 2.0, 3.0]
        arrays = [np.asarray(barenblatt_solution(profile, grid.centers(), t)).reshape(grid.shape) for t in times]
        traj = trajectory(arrays, times=times, grid=grid)
        assert check_convergence_to_barenblatt(traj, 1.0, 1.5).passed
        assert not check_convergence_to_barenblatt(traj, 1.5, 1.5).passed

    def test_positivity_of_trajectory(self):
        """Test positive fields pass and a vanishing interior fails."""
        assert check_positivity_and_tails(trajectory([gaussian(1.0), gaussian(0.5)]), [1.5, 1.5]).passed
        empty = trajectory([gaussian(1.0), np.zeros(GRID.shape)])
        assert not check_positivity_and_tails(empty, [1.5, 1.5]).passed

    def test_tails_of_profiles(self):
        """Test the orthotropic profile and upper barrier decay like |y|^{-3}; a Gaussian does not."""
        p = [1.5, 1.5]
        profile = OrthotropicProfile(N=2, p=1.5)
        barrier = UpperBarrier.build(p)
        assert check_positivity_and_tails(lambda y: eval_orthotropic(profile, y), p).passed
        assert check_positivity_and_tails(lambda y: eval_upper_barrier(barrier, y), p).passed
        narrow = lambda y: np.exp(-0.01 * np.sum(np.asarray(y) ** 2, axis=-1))
        assert not check_positivity_and_tails(narrow, p, tail_window=(1.0, 20.0)).passed


class TestMovingFrame:
    """Checks on rescaled trajectories, whose times are tau values."""

    grid = TensorGrid.cube(2, 10.5, 21)

    def relaxing(self):
        F = np.asarray(eval_orthotropic(calibrate_orthotropic_on_grid(self.grid, 1.5, 1.0),
                                        self.grid.centers())).reshape(self.grid.shape)
        G = gaussian(1.0, width=2.0, grid=self.grid)
        G = G / (G.sum() * self.grid.cell_volume)
        taus = [0.0, 0.5, 1.0, 1.5]
        arrays = [(1.0 - c) * F + c * G for c in (0.5 * math.exp(-3.0 * tau) for tau in taus)]
        return trajectory(arrays, times=taus, grid=self.grid), F, G

    def test_rescaled_convergence(self):
        """Test a run relaxing onto the box profile passes and the wrong mass does not."""
        traj, _, _ = self.relaxing()
        assert check_rescaled_convergence(traj, 1.5).passed
        assert not check_rescaled_convergence(traj, 1.5, M=1.5).passed

    def test_mass_mismatch_plateau(self):
        """Test the wrong-mass error levels off at the mass gap."""
        traj, _, _ = self.relaxing()
        report = check_mass_mismatch_plateau(traj, 1.5, 1.5)
        assert report.passed
        assert dict(report.measured)["mass_gap"] == pytest.approx(0.5, rel=1e-6)

    def test_mass_mismatch_without_plateau(self):
        """Test a run that never approaches any profile fails the plateau check."""
        G = gaussian(1.0, grid=self.grid)
        G = G / (G.sum() * self.grid.cell_volume)
        stuck = trajectory([G, G, G], times=[0.0, 1.0, 2.0], grid=self.grid)
        assert not check_mass_mismatch_plateau(stuck, 1.5, 1.5).passed

    def test_smoothing_in_rescaled_time(self):
        """Test a frozen profile in the frame decays like t^{-alpha} in original time."""
        _, F, _ = self.relaxing()
        taus = [math.log(t) for t in (1.5, 2.0, 3.0, 4.0, 6.0, 8.0)]
        frozen = trajectory([F] * len(taus), times=taus, grid=self.grid)
        report = check_smoothing(frozen, selfsim_exponents([1.5, 1.5]), t0=0.0)
        assert report.passed
        assert dict(report.measured)["slope"] == pytest.approx(-4.0, abs=1e-9)


if __name__ == "__main__":
    pytest.main([__file__])
