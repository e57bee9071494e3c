import math
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate as quadrature

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from core.exponents import selfsim_exponents
from core.grid import TensorGrid
from core.profiles import (
    LowerBarrier,
    OrthotropicProfile,
    UpperBarrier,
    anisotropic_mass_transform,
    box_mass,
    barenblatt_solution,
    calibrate_orthotropic,
    calibrate_orthotropic_on_grid,
    eval_isotropic_barenblatt,
    eval_lower_barrier,
    eval_orthotropic,
    eval_truncated_barrier,
    eval_upper_barrier,
    lower_barrier_A0,
    lower_barrier_solution,
    mass_factor,
    mass_transform,
    orthotropic_flux_identity,
    orthotropic_mass,
    stationary_residual,
    upper_barrier_gammas,
    very_singular,
)
from core.verify import fit_slope

P = [1.5, 1.5]


@pytest.fixture
def profile():
    return OrthotropicProfile(N=2, p=1.5, C0=1.0)


class TestOrthotropicProfile:
    """Explicit Barenblatt profiles."""

    def test_value_at_origin(self, profile):
        """Test F(0) = C0^{-1} for p = 1.5."""
        assert eval_orthotropic(profile, [0.0, 0.0]) == pytest.approx(1.0)

    def test_value_on_axis(self, profile):
        """Test F(1, 0) = 3/7."""
        assert eval_orthotropic(profile, [1.0, 0.0]) == pytest.approx(3.0 / 7.0, abs=1e-14)

    def test_batch_evaluation(self, profile):
        """Test that a batch of points returns one value per row."""
        values = eval_orthotropic(profile, np.array([[0.0, 0.0], [1.0, 0.0], [0.0, -1.0]]))
        assert values.shape == (3,)
        assert values[2] == pytest.approx(3.0 / 7.0)

    def test_slow_branch_free_boundary(self):
        """Test that the slow branch vanishes beyond its free boundary."""
        slow = OrthotropicProfile(N=2, p=3.0, C0=1.0)
        assert slow.branch == "slow"
        assert eval_orthotropic(slow, [10.0, 0.0]) == 0.0
        assert eval_orthotropic(slow, [0.0, 0.0]) == pytest.approx(1.0)

    def test_rejects_subcritical_exponent(self):
        """Test that p <= p_c is refused."""
        with pytest.raises(ValueError, match="outside"):
            OrthotropicProfile(N=2, p=1.3)

    def test_isotropic_gaussian(self):
        """Test the p = 2 branch is the heat kernel (4 pi)^{-N/2} at the origin."""
        assert eval_isotropic_barenblatt(2, 2.0, 1.0, [0.0, 0.0]) == pytest.approx(1.0 / (4.0 * math.pi))

    def test_isotropic_unit_radius(self):
        """Test the radial profile at |y| = 1 equals 3/7 for p = 1.5."""
        assert eval_isotropic_barenblatt(2, 1.5, 1.0, [0.6, 0.8]) == pytest.approx(3.0 / 7.0)

    def test_flux_identity(self, profile):
        """Test the per-axis first integral |F'|^{p-2}F' + (alpha/N) y F = 0."""
        rng = np.random.default_rng(7)
        pts = rng.uniform(-5.0, 5.0, size=(50, 2))
        assert np.max(np.abs(orthotropic_flux_identity(profile, pts))) <= 1e-12

    def test_flux_identity_hand_value(self, profile):
        """Test flux and drift at (1, 0) are -6/7 and +6/7."""
        alpha = profile.exponents.alpha
        drift = alpha / 2.0 * 1.0 * eval_orthotropic(profile, [1.0, 0.0])
        assert drift == pytest.approx(6.0 / 7.0)
        assert orthotropic_flux_identity(profile, [1.0, 0.0])[0] == pytest.approx(0.0, abs=1e-12)

    def test_box_calibration_accounts_for_truncated_mass(self):
        """Test the box-calibrated profile has grid mass M and more than M on the whole space."""
        grid = TensorGrid.cube(2, 12.0, 97)
        profile = calibrate_orthotropic_on_grid(grid, 1.5, 1.0)
        assert box_mass(profile, grid) == pytest.approx(1.0, rel=1e-9)
        assert orthotropic_mass(profile) > 1.2
        assert profile.C0 < calibrate_orthotropic(2, 1.5, 1.0).C0


class TestBarenblattSolution:
    """Self-similar solution and mass scaling."""

    def test_identity_at_unit_time(self, profile):
        """Test B(x, 1) = F(x)."""
        x = [0.3, -1.2]
        assert barenblatt_solution(profile, x, 1.0) == pytest.approx(eval_orthotropic(profile, x))

    def test_decay_at_origin(self, profile):
        """Test B(0, 2) = 2^{-4} since alpha = 4."""
        assert barenblatt_solution(profile, [0.0, 0.0], 2.0) == pytest.approx(2.0 ** -4)

    def test_rejects_nonpositive_time(self, profile):
        """Test t <= 0 is refused."""
        with pytest.raises(ValueError, match="Time"):
            barenblatt_solution(profile, [0.0, 0.0], 0.0)

    def test_mass_factor(self):
        """Test the mass multiplier 2^{1/3} for p = 1.5, N = 2."""
        assert mass_factor(P, 2.0) == pytest.approx(2.0 ** (1.0 / 3.0))

    def test_transform_identity(self, profile):
        """Test T_1 leaves the profile unchanged."""
        assert mass_transform(profile, 1.0).C0 == pytest.approx(profile.C0)

    def test_transform_matches_function_form(self, profile):
        """Test the C0 rule agrees with k F(k^{beta} y)."""
        k = 2.5
        pts = np.array([[0.4, 1.3], [-2.0, 0.1], [0.0, 0.0]])
        direct = anisotropic_mass_transform(lambda y: eval_orthotropic(profile, y), P, k)(pts)
        via_c0 = eval_orthotropic(mass_transform(profile, k), pts)
        assert np.allclose(direct, via_c0, rtol=1e-12)

    def test_transform_mass_ratio(self, profile):
        """Test the mass of T_k F over that of F is k^{mu}."""
        ratio = orthotropic_mass(mass_transform(profile, 2.0)) / orthotropic_mass(profile)
        assert ratio == pytest.approx(2.0 ** (1.0 / 3.0), rel=1e-12)

    def test_mass_against_quadrature(self, profile):
        """Test the closed-form mass against adaptive quadrature over the quarter plane."""
        value, _ = quadrature.dblquad(lambda b, a: eval_orthotropic(profile, [a, b]),
                                      0.0, np.inf, 0.0, np.inf, epsabs=1e-10, epsrel=1e-9)
        assert orthotropic_mass(profile) == pytest.approx(4.0 * value, rel=1e-5)

    def test_slow_mass_against_quadrature(self):
        """Test the closed form on the compactly supported branch."""
        slow = OrthotropicProfile(N=1, p=3.0, C0=1.0)
        edge = 6.0 ** (2.0 / 3.0)
        value, _ = quadrature.quad(lambda a: eval_orthotropic(slow, [a]), 0.0, 10.0, limit=200, points=[edge])
        assert orthotropic_mass(slow) == pytest.approx(2.0 * value, rel=1e-6)

    def test_calibration(self):
        """Test calibrate_orthotropic hits the requested mass."""
        assert orthotropic_mass(calibrate_orthotropic(2, 1.5, 3.0)) == pytest.approx(3.0, rel=1e-12)

    def test_calibration_rejects_nonpositive_mass(self):
        """Test M <= 0 is refused."""
        with pytest.raises(ValueError, match="Mass"):
            calibrate_orthotropic(2, 1.5, 0.0)


class TestVerySingular:
    """Very singular solutions."""

    def test_time_scaling(self):
        """Test V(x, 2t)/V(x, t) = 2^{1/(2-p)}."""
        x = [0.7, 1.4]
        ratio = very_singular(1.5, 2, x, 2.0, 1.0) / very_singular(1.5, 2, x, 1.0, 1.0)
        assert ratio == pytest.approx(4.0)

    def test_axis_decay(self):
        """Test the decay exponent -3 along an axis for p = 1.5."""
        y = np.logspace(0, 2, 20)
        pts = np.stack([y, np.zeros_like(y)], axis=-1)
        assert fit_slope(y, very_singular(1.5, 2, pts, 1.0, 1.0), middle=1.0) == pytest.approx(-3.0, abs=1e-10)

    def test_singular_point(self):
        """Test x = 0 is refused."""
        with pytest.raises(ValueError, match="Singular"):
            very_singular(1.5, 2, [0.0, 0.0], 1.0, 1.0)

    def test_separated_variant_needs_off_axis_point(self):
        """Test the separated form refuses points on a coordinate hyperplane."""
        assert very_singular(1.5, 2, [1.0, 1.0], 1.0, 2.0, separated=True) == pytest.approx(4.0)
        with pytest.raises(ValueError, match="Singular"):
            very_singular(1.5, 2, [1.0, 0.0], 1.0, 1.0, separated=True)

    def test_not_integrable_near_origin(self):
        """Test the mass of V over annuli shrinking to 0 grows without bound."""
        masses = []
        for r in (1e-1, 1e-2, 1e-3):
            value, _ = quadrature.quad(lambda s: 2.0 * math.pi * s * very_singular(1.5, 2, [s, 0.0], 1.0, 1.0),
                                       r, 1.0)
            masses.append(value)
        assert masses[0] < masses[1] < masses[2]
        assert masses[2] > 50.0 * masses[0]


class TestUpperBarrier:
    """Outer barrier of the stationary equation."""

    def test_gammas_orthotropic(self):
        """Test gamma_i = 1/27 for p = (1.5, 1.5)."""
        gammas = upper_barrier_gammas(P, selfsim_exponents(P))
        assert gammas == pytest.approx((1.0 / 27.0, 1.0 / 27.0), rel=1e-12)

    def test_gammas_anisotropic(self):
        """Test both coefficients are positive for p = (1.4, 1.8)."""
        p = [1.4, 1.8]
        assert all(g > 0 for g in upper_barrier_gammas(p, selfsim_exponents(p)))

    def test_gammas_require_h1(self):
        """Test refusal outside the fast range."""
        p = [1.5, 2.2]
        with pytest.raises(ValueError, match="H1"):
            upper_barrier_gammas(p, selfsim_exponents(p))

    def test_hand_value(self):
        """Test F(1, 1) = 1/2 with gamma = (1, 1)."""
        barrier = UpperBarrier(gamma=(1.0, 1.0), p=(1.5, 1.5), alpha=4.0, sigma=(0.5, 0.5), strict=False)
        assert eval_upper_barrier(barrier, [1.0, 1.0]) == pytest.approx(0.5)

    def test_truncation(self):
        """Test min{F, F_*} with F_* = 0.4 at (1, 1) and at the origin."""
        barrier = UpperBarrier(gamma=(1.0, 1.0), p=(1.5, 1.5), alpha=4.0, sigma=(0.5, 0.5), Fstar=0.4,
                               strict=False)
        assert eval_truncated_barrier(barrier, [1.0, 1.0]) == pytest.approx(0.4)
        assert eval_truncated_barrier(barrier, [0.0, 0.0]) == pytest.approx(0.4)

    def test_strict_bound(self):
        """Test that gamma above the supersolution bound is refused."""
        with pytest.raises(ValueError, match="bound"):
            UpperBarrier(gamma=(1.0, 1.0), p=(1.5, 1.5), alpha=4.0, sigma=(0.5, 0.5))

    def test_singular_at_origin(self):
        """Test the untruncated barrier refuses y = 0."""
        with pytest.raises(ValueError, match="Singular"):
            eval_upper_barrier(UpperBarrier.build(P), [0.0, 0.0])

    def test_axis_decay(self):
        """Test the axis tail slope -p/(2-p) = -3."""
        barrier = UpperBarrier.build(P)
        y = np.logspace(0, 2, 20)
        pts = np.stack([y, np.zeros_like(y)], axis=-1)
        assert fit_slope(y, eval_upper_barrier(barrier, pts)) == pytest.approx(-3.0, abs=1e-10)

    def test_supersolution_sign(self):
        """Test the stationary residual is negative at (1, 1)."""
        barrier = UpperBarrier.build(P)
        residual = stationary_residual(lambda z: eval_upper_barrier(barrier, z), P, selfsim_exponents(P),
                                       [1.0, 1.0], 1e-3)
        assert residual < 0


class TestLowerBarrier:
    """Inner barrier of the stationary equation."""

    def test_threshold(self):
        """Test A_0 = 6.25 for gamma = 4, theta = (1, 1)."""
        assert lower_barrier_A0(P, selfsim_exponents(P), 4.0, (1.0, 1.0)) == pytest.approx(6.25, rel=1e-12)

    def test_value_at_origin(self):
        """Test F(0) = A^{-gamma}."""
        barrier = LowerBarrier.build(P, 4.0, (1.0, 1.0), A=7.0)
        assert eval_lower_barrier(barrier, [0.0, 0.0]) == pytest.approx(7.0 ** -4)

    def test_condition_failure(self):
        """Test refusal when 1/(gamma theta_i) < (2 - p_i)/p_i fails."""
        with pytest.raises(ValueError, match="condition"):
            lower_barrier_A0(P, selfsim_exponents(P), 1.0, (1.0, 1.0))

    def test_rejects_small_a(self):
        """Test A must exceed A_0."""
        with pytest.raises(ValueError, match="exceed"):
            LowerBarrier.build(P, 4.0, (1.0, 1.0), A=6.0)

    def test_subsolution_sign(self):
        """Test the stationary residual is positive at (1, 1) for A = 7 and A = 7.5."""
        ss = selfsim_exponents(P)
        for A in (7.0, 7.5):
            barrier = LowerBarrier.build(P, 4.0, (1.0, 1.0), A=A)
            assert stationary_residual(lambda z: eval_lower_barrier(barrier, z), P, ss, [1.0, 1.0], 1e-3) > 0

    def test_integrable(self):
        """Test the mass over growing boxes converges."""
        barrier = LowerBarrier.build(P, 4.0, (1.0, 1.0), A=7.0)
        masses = []
        for R in (50.0, 100.0, 200.0):
            value, _ = quadrature.dblquad(lambda b, a: eval_lower_barrier(barrier, [a, b]), 0.0, R, 0.0, R)
            masses.append(4.0 * value)
        assert masses[2] - masses[1] < masses[1] - masses[0]
        assert masses[2] - masses[1] < 1e-2 * masses[2]

    def test_solution_in_original_variables(self):
        """Test U(x, 1) = F(x)."""
        barrier = LowerBarrier.build(P, 4.0, (1.0, 1.0), A=7.0)
        ss = selfsim_exponents(P)
        x = [0.5, -2.0]
        assert lower_barrier_solution(barrier, ss, x, 1.0) == pytest.approx(eval_lower_barrier(barrier, x))


class TestStationaryResidual:
    """Finite-difference residual of the stationary equation."""

    def test_profile_residual_vanishes(self, profile):
        """Test the orthotropic profile has residual O(h^2) off the axes."""
        ss = profile.exponents
        coarse = abs(stationary_residual(lambda z: eval_orthotropic(profile, z), P, ss, [0.7, 1.1], 0.1))
        fine = abs(stationary_residual(lambda z: eval_orthotropic(profile, z), P, ss, [0.7, 1.1], 0.025))
        assert fine < 5e-3
        assert fine < coarse

    def test_rejects_point_near_axis(self, profile):
        """Test points within 2h of an axis are refused."""
        with pytest.raises(ValueError, match="axis"):
            stationary_residual(lambda z: eval_orthotropic(profile, z), P, profile.exponents, [1.0, 0.01], 0.01)


if __name__ == "__main__":
    pytest.main([__file__])
