import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tunnelguide.channel import ChannelGrid, channel_constants, dtN_closure, mirror_constants

K0 = np.sqrt(6.025)


@pytest.fixture(scope="module")
def const(cap, modes):
    return channel_constants(cap, modes, K0)


def test_reference_constants(const):
    assert const.a == pytest.approx(3.2603 + 2.0801j, abs=5e-3)
    assert const.A == pytest.approx(1.4261 - 0.2166j, abs=5e-3)


def test_flux_identity(const):
    assert abs(abs(const.A) ** 2 - const.a.imag) <= 0.01 * abs(const.A) ** 2
    assert const.a.imag > 0
    # the discrete Green identity with the discrete section mode holds to round-off
    assert const.flux_residual < 1e-10


def test_mirror_channel(cap, modes, const):
    right = channel_constants(cap, modes, K0, side="right", tip_x=7.0)
    a, A = mirror_constants(const, 7.0, modes.nu1(K0))
    assert right.a == pytest.approx(a, rel=1e-9)
    assert right.A == pytest.approx(A, rel=1e-9)


def test_truncation_length_robustness(cap, modes, const):
    longer = channel_constants(cap, modes, K0, ChannelGrid(length=12.0))
    # the evanescent tail is negligible; what remains is the mesh change, far below the error bar
    assert abs(longer.a - const.a) < 1e-3 * abs(const.a)
    assert abs(longer.A - const.A) < 1e-3 * abs(const.A)
    assert abs(longer.a - const.a) < const.diagnostics["a_error"]


def test_constants_continuous_in_k(coefficients):
    rows = coefficients.get("channel")["rows"]
    a = np.array([complex(*r["a"]) for r in rows])
    # Im a = |A|^2 grows like the square root of k^2 - lambda_1^2 near the threshold,
    # so continuity is checked as monotone components with shrinking steps
    assert np.all(np.diff(a.real) < 0) and np.all(np.diff(a.imag) > 0)
    steps = np.abs(np.diff(a))
    assert np.all(np.diff(steps) < 0)


THRESH = np.array([5.7832, 14.682, 26.375, 40.706, 49.2, 70.8])


def test_closure_outgoing_and_incoming():
    k = 2.5
    c = dtN_closure(THRESH, k, 2)
    nu = np.sqrt(k * k - THRESH[0])
    x = -3.0
    # outgoing to the left: exp(-i nu x); outward normal is -x
    out_trace, out_flux = np.exp(-1j * nu * x), -(-1j * nu) * np.exp(-1j * nu * x)
    assert abs(c.residual([out_trace], [out_flux])[0]) < 1e-14
    in_trace, in_flux = np.exp(1j * nu * x), -(1j * nu) * np.exp(1j * nu * x)
    assert abs(c.residual([in_trace], [in_flux])[0]) == pytest.approx(2 * nu)


@given(n=st.integers(1, 5))
def test_closure_evanescent_modes(n):
    k = 2.5
    c = dtN_closure(THRESH, k, 2)
    rate = np.sqrt(THRESH[n] - k * k)
    trace = np.zeros(n + 1)
    flux = np.zeros(n + 1)
    trace[n], flux[n] = 1.0, -rate
    res = abs(c.residual(trace, flux)[n])
    if n <= 2:
        assert res < 1e-14
    else:
        assert res == pytest.approx(np.sqrt(THRESH[n]) - rate)
        assert res < k * k / (2 * rate)


def test_closure_rejects_multichannel():
    with pytest.raises(ValueError, match="single-channel"):
        dtN_closure(THRESH, 4.0)
    with pytest.raises(ValueError, match="single-channel"):
        dtN_closure(THRESH, 2.0)
