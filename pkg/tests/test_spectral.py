import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import jn_zeros

from tunnelguide.geometry import CrossSectionSpec
from tunnelguide.spectral import cap_spectrum, cross_section_modes, singular_radial_pair, tip_radial

J01 = jn_zeros(0, 1)[0]


def test_disk_threshold_converges_monotonically(modes):
    lam = J01 ** 2
    assert modes.lam1_sq == pytest.approx(lam, abs=1e-3)
    coarse, fine = modes.raw["h"][0], modes.raw["h/2"][0]
    # both discrete values approach the limit from the same side, the finer one closer
    assert abs(fine - lam) < abs(coarse - lam)
    assert abs(modes.lam1_sq - lam) < abs(fine - lam)


def test_rectangle_thresholds():
    m = cross_section_modes(CrossSectionSpec("rectangle", a=2.0, b=1.5), h=0.05)
    exact = sorted(np.pi ** 2 * (i ** 2 / 4.0 + j ** 2 / 2.25) for i in range(1, 4) for j in range(1, 4))[:4]
    np.testing.assert_allclose(m.thresholds, exact, rtol=1e-4)


def test_ground_mode_positive_and_window(modes):
    assert np.all(modes.psi1 >= -1e-12)
    assert modes.lam1_sq < modes.lam2_sq
    k = np.sqrt([modes.lam1_sq - 0.1, modes.lam1_sq + 0.1, modes.lam2_sq - 0.1, modes.lam2_sq + 0.1])
    np.testing.assert_array_equal(modes.in_window(k), [False, True, True, False])


def test_hemisphere_exponents():
    c = cap_spectrum(np.pi / 2)
    assert c.mu1 == pytest.approx(1.0, abs=1e-6)
    assert c.mu2 == pytest.approx(2.0, abs=1e-6)


def test_small_cap_bessel_limit():
    c = cap_spectrum(0.05)
    assert c.mu1 * 0.05 == pytest.approx(J01, rel=0.02)


def test_cap_normalization(cap):
    assert cap.norm_integral() == pytest.approx(1.0, abs=1e-6)
    assert cap.phi1(0.0) > 0 and cap.phi1(cap.theta) == 0.0
    assert cap.mu1 < cap.mu2


def test_reference_cap_exponents(cap):
    assert cap.mu1 == pytest.approx(1.77729, abs=1e-5)
    assert cap.mu2 == pytest.approx(3.19569, abs=1e-5)


def test_cap_monotone_in_angle():
    thetas = np.linspace(0.4, 1.5, 6)
    mus = [cap_spectrum(t, steps=2000).mu1 for t in thetas]
    assert np.all(np.diff(mus) < 0)


@given(mu=st.floats(0.5, 4.0), k=st.floats(1.0, 4.0))
def test_radial_pair_small_argument(mu, k):
    r = 1e-4 / k
    p = singular_radial_pair(mu, k, r)
    assert r ** -0.5 * p.J / r ** mu == pytest.approx(1.0, rel=1e-6)
    assert r ** -0.5 * p.N * r ** (mu + 1) == pytest.approx(1.0, rel=1e-5)


@given(mu=st.floats(0.5, 4.0), k=st.floats(1.0, 4.0), r=st.floats(0.05, 3.0))
def test_radial_pair_wronskian(mu, k, r):
    # J N' - N J' of the rescaled pair: W(r^nu, r^-nu) = -2 nu / r
    nu = mu + 0.5
    p = singular_radial_pair(mu, k, r)
    assert (p.J * p.dN - p.N * p.dJ) * r == pytest.approx(-2 * nu, rel=1e-8)


def test_tip_radial_harmonic_limit():
    g, dg, ddg = tip_radial(1.5, 0.0, 2.0, "N")
    assert g == pytest.approx(2.0 ** -2.5) and dg == pytest.approx(-2.5 * 2.0 ** -3.5)


def test_radial_pair_rejects_bad_input():
    with pytest.raises(ValueError):
        singular_radial_pair(1.0, 1.0, 0.0)
    with pytest.raises(OverflowError):
        singular_radial_pair(1.0, 1.0, 1e6)
