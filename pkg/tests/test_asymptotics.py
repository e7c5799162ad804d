import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tunnelguide.asymptotics import (full_vs_leading, gamma_delta, leading_pole, loglog_slope, matching_solve,
                                     peak_characteristics, polarization, resonance_pole, spin_characteristics,
                                     transmission_profile)

EPS = 0.2


def test_gamma_delta_identities(model):
    E = model.scale(EPS)
    gamma, delta = gamma_delta(model, EPS)
    a, A = model.channel(model.k0_sq)
    assert gamma * A * model.beta + a * model.alpha == pytest.approx(1.0 / E, rel=1e-12)
    # gamma grows like eps^-(2 mu1 + 1): halving eps multiplies the leading part by 2^(2 mu1 + 1)
    g_half, _ = gamma_delta(model, EPS / 2)
    lead = lambda g: g + a * model.alpha / (A * model.beta)
    assert lead(g_half) / lead(gamma) == pytest.approx(2 ** (2 * model.mu1 + 1), rel=1e-12)


def test_delta_without_outgoing_channel_constant(model):
    flat = replace(model, channel=lambda k2: (0j, 1.2 - 0.3j))
    _, delta = gamma_delta(flat, EPS)
    assert delta == pytest.approx(flat.alpha / ((1.2 - 0.3j) * flat.beta), rel=1e-14)


@pytest.mark.parametrize("mode", ["leading", "full"])
def test_matching_residual_and_methods(model, mode):
    pk = peak_characteristics(model, EPS, mode)
    for t in (-2.0, 0.0, 1.5):
        lin = matching_solve(model, 0.0, EPS, mode, detuning=pk.shift + t * pk.width)
        assert lin.residual < 1e-12
        closed = matching_solve(model, 0.0, EPS, mode, "closed", detuning=pk.shift + t * pk.width)
        # the closed formulas rely on Im a = |A|^2, which the channel constants satisfy to about 1%
        assert closed.transmission == pytest.approx(lin.transmission, rel=0.05)


def test_transmission_independent_of_distance(model):
    far = replace(model, d=11.0)
    for z in (-1e-4, 0.0, 3e-4):
        assert abs(matching_solve(far, 0.0, EPS, detuning=z).s12) == pytest.approx(
            abs(matching_solve(model, 0.0, EPS, detuning=z).s12), rel=1e-12)


def test_equal_tips_give_full_transmission(model):
    pk = peak_characteristics(model, EPS)
    assert pk.q == pytest.approx(1.0, rel=1e-10)
    assert pk.T_max == pytest.approx(1.0, rel=1e-12)
    assert matching_solve(model, 0.0, EPS, detuning=pk.shift).transmission == pytest.approx(1.0, abs=1e-6)


@given(q=st.floats(0.1, 10.0))
def test_peak_height_formula(model, q):
    b2 = model.b1 / q
    m = replace(model, b2=b2)
    pk = peak_characteristics(m, EPS)
    assert pk.T_max == pytest.approx(4.0 / (q + 1.0 / q) ** 2, rel=1e-12)
    assert 0 < pk.T_max <= 1.0


def test_lorentzian_half_height(model):
    pk = peak_characteristics(model, EPS)
    e4 = model.scale(EPS) ** 2
    assert pk.lorentzian(0.0, e4) == pytest.approx(pk.T_max)
    for s in (-0.5, 0.5):
        assert pk.lorentzian(s * pk.width, e4) == pytest.approx(0.5 * pk.T_max, rel=1e-12)


def test_pole_properties(model):
    pole = resonance_pole(model, EPS)
    assert pole.k_i_sq > 0
    assert pole.residual < 1e-8
    kr, ki = pole.leading
    E = model.scale(EPS)
    # the remainders are of higher order than the power-law terms
    assert abs(pole.k_r_sq - kr) < 0.05 * abs(model.k0_sq - kr)
    assert pole.k_i_sq == pytest.approx(ki, rel=0.05)
    assert model.k0_sq - pole.k_r_sq == pytest.approx(model.alpha * 2 * abs(model.b1) ** 2 * E, rel=0.05)


def test_leading_pole_scaling(model):
    kr1, ki1 = leading_pole(model, EPS)
    kr2, ki2 = leading_pole(model, EPS / 2)
    p = 2 * model.mu1 + 1
    assert (model.k0_sq - kr1) / (model.k0_sq - kr2) == pytest.approx(2 ** p, rel=1e-9)
    assert ki1 / ki2 == pytest.approx(2 ** (2 * p), rel=1e-12)


def test_width_matches_pole(model):
    pole = resonance_pole(model, EPS)
    pk = peak_characteristics(model, EPS, pole=pole)
    # Lorentzian full width is twice the imaginary part of the pole
    assert pk.width == pytest.approx(2 * pole.k_i_sq, rel=0.05)


def test_profile_lorentzian_agrees_with_matching(model):
    prof = transmission_profile(model, EPS, n=41, half_widths=3.0)
    assert np.all((prof.T_full > 0) & (prof.T_full <= 1 + 1e-9))
    np.testing.assert_allclose(prof.T_full, prof.T_lorentz, atol=0.02)
    assert prof.offset[np.argmax(prof.T_full)] == pytest.approx(0.0, abs=prof.peak.width / 10)


def test_unitarity_defect_is_small(model):
    pk = peak_characteristics(model, EPS)
    for t in (-1.0, 0.0, 1.0):
        s = matching_solve(model, 0.0, EPS, detuning=pk.shift + t * pk.width)
        # bounded by the flux identity defect of the channel constants
        assert abs(s.unitarity_defect) < 0.05


def test_power_laws_over_a_decade(model):
    eps = np.array([0.05, 0.08, 0.12, 0.2])
    shifts, widths = [], []
    for e in eps:
        pole = resonance_pole(model, e)
        shifts.append(model.k0_sq - pole.k_r_sq)
        widths.append(peak_characteristics(model, e, pole=pole).width)
    p = 2 * model.mu1 + 1
    assert loglog_slope(eps, shifts) == pytest.approx(p, rel=0.05)
    assert loglog_slope(eps, widths) == pytest.approx(2 * p, rel=0.05)


def test_full_expansion_correction_is_small(model):
    diffs = [full_vs_leading(model, e) for e in (0.3, 0.2, 0.14)]
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 1e-2


def test_zero_field_gives_no_polarization(model):
    pk = peak_characteristics(model, EPS)
    k2 = pk.k_r_sq + pk.width * np.linspace(-3, 3, 31)
    s = spin_characteristics(model, model, EPS, k2)
    assert np.all(s.polarization == 0.0)
    assert s.separation == 0.0 and not s.resolvable


def test_relabelling_spins_flips_polarization(model):
    pk = peak_characteristics(model, EPS)
    minus = replace(model, k0_sq=model.k0_sq - 3 * pk.width, spin="minus")
    k2 = pk.k_r_sq + pk.width * np.linspace(-6, 3, 31)
    s = spin_characteristics(model, minus, EPS, k2)
    r = spin_characteristics(minus, model, EPS, k2)
    np.testing.assert_allclose(r.polarization, -s.polarization, atol=1e-15)
    assert s.separation == pytest.approx(3 * pk.width, rel=1e-6)
    assert s.resolvable
    # each peak is strongly polarized toward its own spin
    assert s.polarization[np.argmin(np.abs(k2 - s.peak_plus.k_r_sq))] > 0.9
    assert s.polarization[np.argmin(np.abs(k2 - s.peak_minus.k_r_sq))] < -0.9


def test_polarization_bounds():
    p = polarization([0.0, 1.0, 0.2, 0.0], [0.0, 0.0, 0.2, 0.5])
    np.testing.assert_array_equal(p, [0.0, 1.0, 0.0, -1.0])


def test_spin_channels_must_share_geometry(model):
    with pytest.raises(ValueError, match="geometry"):
        spin_characteristics(model, replace(model, d=8.0), EPS, [model.k0_sq])


def test_regime_warning(model):
    with pytest.warns(RuntimeWarning, match="asymptotic regime"):
        assert not model.check_regime(0.9)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert model.check_regime(0.2)


def test_pole_iteration_fails_outside_regime(model):
    with pytest.raises(ValueError, match="outside asymptotic regime"):
        resonance_pole(model, 2.5)


def test_model_validation(model):
    with pytest.raises(ValueError, match="beta"):
        replace(model, beta=0.0)
    with pytest.raises(ValueError, match="threshold"):
        model.nu1(model.lam1_sq - 0.1)
    with pytest.raises(ValueError, match="expansion"):
        replace(model, expansion=None).coefficients(model.k0_sq, "full")
