import math
import sys
from pathlib import Path

import pytest
from hypothesis import assume, given, settings, strategies as st

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from core.exponents import (
    DnlParameters,
    ExponentVector,
    check_conditions,
    cianchi_lambda,
    classify_region,
    critical_exponent,
    dnl_exponents,
    dnl_identity_residuals,
    mass_exponent,
    pbar,
    region_scan,
    selfsim_exponents,
    sigma_deviation,
)


class TestExponentVector:
    """Validation of the exponent vector."""

    def test_rejects_exponent_at_one(self):
        """Test that p_i = 1 is rejected."""
        with pytest.raises(ValueError, match="must be > 1"):
            ExponentVector.of([1.0, 1.5])

    def test_rejects_length_mismatch(self):
        """Test that N must match the number of exponents."""
        with pytest.raises(ValueError, match="Expected 3 exponents"):
            ExponentVector(N=3, p=(1.5, 1.5))

    def test_orthotropic_flag(self):
        """Test detection of equal exponents."""
        assert ExponentVector.of([1.5, 1.5]).is_orthotropic
        assert not ExponentVector.of([1.4, 1.8]).is_orthotropic


class TestPbar:
    """Harmonic mean and critical exponent."""

    def test_equal_exponents(self):
        """Test that the harmonic mean of equal values is that value."""
        assert pbar([1.5, 1.5]) == pytest.approx(1.5, abs=1e-14)
        assert pbar([1.5, 1.5, 1.5]) == pytest.approx(1.5, abs=1e-14)

    def test_mixed_exponents(self):
        """Test pbar(4/3, 2) = 2/(3/4 + 1/2) = 1.6."""
        assert pbar([4.0 / 3.0, 2.0]) == pytest.approx(1.6, abs=1e-14)

    def test_invalid_exponent(self):
        """Test that pbar refuses p_i <= 1."""
        with pytest.raises(ValueError):
            pbar([0.9, 1.5])

    def test_critical_exponent(self):
        """Test p_c(N) = 2N/(N+1)."""
        assert critical_exponent(1) == pytest.approx(1.0)
        assert critical_exponent(2) == pytest.approx(4.0 / 3.0)
        assert critical_exponent(3) == pytest.approx(1.5)

    def test_critical_exponent_rejects_zero_dimension(self):
        """Test that N < 1 is rejected."""
        with pytest.raises(ValueError, match="Dimension"):
            critical_exponent(0)


class TestConditions:
    """Standing assumptions H1, H2, H3."""

    def test_admissible_pair(self):
        """Test that (1.5, 1.5) satisfies every condition."""
        report = check_conditions([1.5, 1.5])
        assert report.H1 and report.H2 and report.H3
        assert report.diagnostics["inverse_sum"] == pytest.approx(4.0 / 3.0)

    def test_h2_boundary(self):
        """Test that (4/3, 4/3) sits on the H2 boundary and fails the strict inequality."""
        report = check_conditions([4.0 / 3.0, 4.0 / 3.0])
        assert not report.H2
        assert report.diagnostics["H2_boundary"]

    def test_h3_failure(self):
        """Test that (2.5, 1.1) violates the small anisotropy condition."""
        report = check_conditions([2.5, 1.1])
        assert not report.H3
        assert not report.H1
        assert report.diagnostics["H3_margins"][0] < 0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(min_value=1.001, max_value=1.999), min_size=1, max_size=6))
    def test_h1_and_h2_imply_h3(self, p):
        """Property: inside the fast range H2 forces the small anisotropy condition."""
        report = check_conditions(p)
        assume(report.H1 and report.H2)
        assert report.H3


class TestSelfSimilarExponents:
    """Self-similar exponents of the fundamental solution."""

    def test_orthotropic_values(self):
        """Test alpha = 4, sigma = (1/2, 1/2), mu = 1/3 for p = (1.5, 1.5)."""
        ss = selfsim_exponents([1.5, 1.5])
        assert ss.alpha == pytest.approx(4.0, abs=1e-12)
        assert ss.sigma == pytest.approx((0.5, 0.5), abs=1e-12)
        assert ss.mu == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert ss.a == pytest.approx((2.0, 2.0), abs=1e-12)
        assert ss.beta == pytest.approx((1.0 / 3.0, 1.0 / 3.0), abs=1e-12)

    def test_anisotropic_values(self):
        """Test hand values for p = (1.4, 1.8)."""
        ss = selfsim_exponents([1.4, 1.8])
        assert ss.pbar == pytest.approx(1.575, abs=1e-12)
        assert ss.alpha == pytest.approx(2.0 / 0.725, abs=1e-12)
        assert ss.sigma == pytest.approx((0.6875, 0.3125), abs=1e-12)
        assert sum(ss.sigma) == pytest.approx(1.0, abs=1e-12)

    def test_h2_violation_reports_sign(self):
        """Test that a negative denominator of alpha is refused."""
        with pytest.raises(ValueError, match="negative"):
            selfsim_exponents([1.2, 1.2])

    def test_sigma_second_form(self):
        """Test sigma_i - 1/N = ((N+1)/N)(pbar - p_i)/p_i."""
        p = [1.3, 1.6, 1.9]
        ss = selfsim_exponents(p)
        for s, d in zip(ss.sigma, sigma_deviation(p)):
            assert s - 1.0 / 3.0 == pytest.approx(d, abs=1e-12)

    def test_mass_exponent(self):
        """Test mu = 1 - sum beta_i."""
        p = [1.4, 1.8]
        ss = selfsim_exponents(p)
        assert mass_exponent(p) == pytest.approx(1.0 - sum(ss.beta), abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(min_value=1.01, max_value=1.99), min_size=1, max_size=5))
    def test_time_elimination_identity(self, p):
        """Property: alpha (p_i - 1) + p_i a_i = alpha + 1 for every admissible vector."""
        assume(check_conditions(p).H2)
        ss = selfsim_exponents(p)
        for pi, ai in zip(ss.p, ss.a):
            assert ss.alpha * (pi - 1.0) + pi * ai == pytest.approx(ss.alpha + 1.0, rel=1e-12)


class TestLambda:
    """Symmetrization constant."""

    @pytest.mark.parametrize("N", [1, 2, 3, 4])
    def test_lambda_is_one_for_laplacian(self, N):
        """Test Lambda = 1 when every p_i = 2."""
        assert cianchi_lambda([2.0] * N) == pytest.approx(1.0, abs=1e-10)

    def test_lambda_positive(self):
        """Test that Lambda is positive and finite in the fast range."""
        value = cianchi_lambda([1.5, 1.5])
        assert value > 0 and math.isfinite(value)

    def test_lambda_rejects_exponent_near_one(self):
        """Test the guard against p_i -> 1."""
        with pytest.raises(ValueError, match="1 \\+"):
            cianchi_lambda([1.0 + 1e-8, 1.5])


class TestDoublyNonlinear:
    """Exponents of the doubly nonlinear equation."""

    def test_reduces_to_p_laplacian(self):
        """Test that m_i = 1 reproduces the p-Laplacian exponents."""
        p = (1.4, 1.8)
        result = dnl_exponents(DnlParameters(p=p, m=(1.0, 1.0)))
        ss = selfsim_exponents(p)
        assert result.alpha == pytest.approx(ss.alpha, rel=1e-14)
        assert result.sigma == pytest.approx(ss.sigma, rel=1e-12)

    def test_porous_medium_exponent(self):
        """Test alpha = N/(N(m-1)+2) for p_i = 2."""
        result = dnl_exponents(DnlParameters(p=(2.0, 2.0, 2.0), m=(1.5, 1.5, 1.5)))
        assert result.alpha == pytest.approx(3.0 / 3.5, rel=1e-12)

    def test_fast_diffusion_example(self):
        """Test q = 0.8, alpha = 20/3, sigma = (1/2, 1/2) for p = 1.5, m = 0.8."""
        dnl = DnlParameters(p=(1.5, 1.5), m=(0.8, 0.8))
        result = dnl_exponents(dnl)
        assert dnl.q == pytest.approx(0.8, abs=1e-14)
        assert result.alpha == pytest.approx(20.0 / 3.0, abs=1e-12)
        assert result.sigma == pytest.approx((0.5, 0.5), abs=1e-12)
        assert result.DN2 and all(result.DN3)
        assert max(abs(r) for r in dnl_identity_residuals(dnl, result)) <= 1e-12

    def test_dn2_failure(self):
        """Test that a failing DN2 reports alpha without sigma."""
        dnl = DnlParameters(p=(1.5, 1.5), m=(0.2, 0.2))
        result = dnl_exponents(dnl)
        assert not result.DN2
        assert not result.alpha_positive
        assert result.sigma is None
        with pytest.raises(ValueError, match="undefined"):
            dnl_identity_residuals(dnl, result)

    def test_rejects_nonpositive_m(self):
        """Test validation of m_i > 0."""
        with pytest.raises(ValueError):
            DnlParameters(p=(1.5, 1.5), m=(0.0, 1.0))


class TestRegion:
    """Planar classification of exponent pairs."""

    def test_admissible(self):
        """Test (1.5, 1.5) is admissible in the fast range."""
        assert classify_region(1.5, 1.5).label == "admissible-fast"

    def test_boundary(self):
        """Test the hyperbola passes through (4/3, 4/3)."""
        assert classify_region(4.0 / 3.0, 4.0 / 3.0).label == "boundary"

    def test_skewed_pair(self):
        """Test (1.1, 1.9) satisfies H2 and H3."""
        region = classify_region(1.1, 1.9)
        assert region.H2 and region.H3
        assert region.hyperbola_margin == pytest.approx((1.1 - 2 / 3) * (1.9 - 2 / 3) - 4 / 9)

    def test_rejects_exponent_below_one(self):
        """Test that pairs outside (1, inf)^2 are rejected."""
        with pytest.raises(ValueError):
            classify_region(1.0, 1.5)

    def test_scan_size(self):
        """Test the scan lattice skips the lower edge."""
        scan = region_scan(1.0, 2.5, 10)
        assert len(scan) == 100
        assert min(r.p1 for r in scan) == pytest.approx(1.15)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(min_value=1.01, max_value=2.49), st.floats(min_value=1.01, max_value=2.49))
    def test_agrees_with_conditions(self, p1, p2):
        """Property: the hyperbola and line forms agree with check_conditions."""
        report = check_conditions([p1, p2])
        assume(abs(report.diagnostics["H2_margin"]) > 1e-9)
        assume(min(abs(m) for m in report.diagnostics["H3_margins"]) > 1e-9)
        region = classify_region(p1, p2)
        assert region.H2 == report.H2
        assert region.H3 == report.H3


if __name__ == "__main__":
    pytest.main([__file__])
