import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import reference_spec
from tunnelguide.asymptotics import peak_characteristics
from tunnelguide.direct import (DirectGrid, direct_pole, fit_lorentzian, gauge_check, make_system, observed_order,
                                resonance_scan, scattering_convergence, scattering_solve)
from tunnelguide.geometry import CrossSectionSpec, NarrowSpec, SolenoidSpec, WaveguideSpec

K = np.sqrt(6.2)
COARSE = DirectGrid(n_radial=8)
VOXEL = DirectGrid(h=0.2, min_waist_voxels=0)


def _validation_spec(field=1.0):
    sol = SolenoidSpec((3.5, 0.0), 0.3, (field,), "plus", (1.0, 2.0))
    return WaveguideSpec(CrossSectionSpec(), (NarrowSpec(0.0, np.pi / 3), NarrowSpec(7.0, np.pi / 3)), 0.1, sol, 0.8)


@pytest.mark.parametrize("solver,grid", [("meridian", COARSE), ("voxel", VOXEL)])
def test_open_cylinder_transmits(solver, grid):
    r = make_system(reference_spec(0.3), grid, solver=solver, validation="cylinder").solve(K)
    # the voxel closure is exact for the discrete channel; the meridian closure carries the mesh error
    tol = 1e-12 if solver == "voxel" else 1e-3
    assert r.T == pytest.approx(1.0, abs=tol)
    assert r.R < tol


@pytest.mark.parametrize("solver,grid", [("meridian", COARSE), ("voxel", VOXEL)])
def test_blocked_guide_reflects(solver, grid):
    r = make_system(reference_spec(0.3), grid, solver=solver, validation="blocked").solve(K)
    assert r.T == 0.0
    assert r.R == pytest.approx(1.0, abs=1e-12)


def test_discrete_flux_is_conserved():
    for solver, grid in (("meridian", COARSE), ("voxel", DirectGrid(h=0.1))):
        r = make_system(reference_spec(0.4), grid, solver=solver).solve(K)
        assert abs(r.flux_residual) < 1e-12


def test_off_resonance_tunnelling_is_tiny():
    r = make_system(reference_spec(0.3), COARSE).solve(K)
    assert r.T < 1e-12
    assert r.defect < 1e-12


def test_spin_flip_with_field_reversal():
    # a single open channel has |s12| = |s21|; reversing the field and the spin is time reversal
    def T(field, spin):
        sol = SolenoidSpec((3.2, 0.0), 0.3, (field,), spin, (0.4, 1.2))
        return make_system(reference_spec(0.4, sol, channel_length=0.8), DirectGrid(h=0.1)).solve(np.sqrt(6.0)).T

    assert T(1.0, "plus") == pytest.approx(T(-1.0, "minus"), rel=1e-10)


def test_zero_field_spins_are_identical():
    sol = SolenoidSpec((3.2, 0.0), 0.3, (0.0,), "plus", (0.4, 1.2))
    spec = reference_spec(0.4, sol, channel_length=0.8)
    plus = make_system(spec, DirectGrid(h=0.1), spin="plus", solver="voxel").solve(np.sqrt(6.0))
    minus = make_system(spec, DirectGrid(h=0.1), spin="minus", solver="voxel").solve(np.sqrt(6.0))
    assert plus.s12 == minus.s12 and plus.s11 == minus.s11


def test_gauge_change_leaves_transmission():
    g = gauge_check(_validation_spec(), VOXEL, np.sqrt(7.0), validation="cylinder")
    assert g["dT"] < 1e-6
    assert g["field_deviation"] < 1e-2
    # without a field both gauges coincide
    g0 = gauge_check(_validation_spec(0.0), VOXEL, np.sqrt(7.0), validation="cylinder")
    assert g0["dT"] == 0.0 and g0["field_deviation"] == 0.0


def test_resonance_scan_matches_asymptotics(model):
    spec = reference_spec(0.4)
    pk = peak_characteristics(model, 0.4)
    scan = resonance_scan(spec, COARSE, (5.85, 6.2), n_points=15, asymptotic=pk)
    assert scan.fit.residual < 1e-3
    assert scan.fit.height == pytest.approx(1.0, abs=1e-2)
    # the fitted width agrees with the pole up to the slow variation of the background
    assert scan.fit.width == pytest.approx(-2 * scan.pole.imag, rel=0.03)
    assert scan.fit.center == pytest.approx(scan.pole.real, abs=scan.fit.width)
    assert set(scan.deltas) == {"center", "width", "height"}
    assert np.all(scan.defects < 1e-2)


def test_resonance_scan_reports_missing_peak():
    with pytest.raises(RuntimeError):
        resonance_scan(reference_spec(0.4), COARSE, (6.1, 6.2), n_points=9)


def test_direct_pole_levels():
    p = direct_pole(reference_spec(0.4), COARSE, 6.03, levels=2)
    assert len(p.levels) == 2
    assert all(z.imag < 0 for z in p.levels)
    assert p.k_r_sq == pytest.approx((4 * p.levels[1].real - p.levels[0].real) / 3)
    # with two levels the error estimate is the change between them
    assert p.k_r_sq_error == pytest.approx(abs(p.k_r_sq - p.levels[1].real), rel=1e-9)


def test_convergence_bounds():
    rs = scattering_convergence(reference_spec(0.3), COARSE, K, levels=2)
    assert rs[0].defect_bound == pytest.approx(4 / 3 * (abs(rs[0].R - rs[1].R) + abs(rs[0].T - rs[1].T)))
    assert rs[1].defect_bound == pytest.approx(rs[0].defect_bound / 4)


@given(center=st.floats(-2, 2), width=st.floats(0.3, 3), height=st.floats(0.1, 1))
def test_fit_lorentzian_recovers_parameters(center, width, height):
    x = np.linspace(-5, 5, 41) * 1e-9
    T = height / (1 + ((x - center * 1e-9) / (0.5 * width * 1e-9)) ** 2)
    c, w, h, res = fit_lorentzian(x, T, 1e-9)
    assert c == pytest.approx(center * 1e-9, abs=1e-15)
    assert w == pytest.approx(width * 1e-9, rel=1e-6)
    assert h == pytest.approx(height, rel=1e-6)
    assert res < 1e-8


def test_observed_order():
    assert observed_order([1e-1, 4e-2, 1e-2]) == pytest.approx(2.0)
    assert observed_order([8e-3, 1e-3]) == pytest.approx(3.0)


def test_threshold_gap_is_enforced(modes):
    with pytest.raises(ValueError, match="threshold"):
        scattering_solve(reference_spec(0.3), COARSE, np.sqrt(modes.lam1_sq + 1e-4), modes=modes)


def test_meridian_rejects_fields():
    sol = SolenoidSpec((3.5, 0.0), 0.3, (1.0,), "plus", (0.5, 1.5))
    with pytest.raises(ValueError, match="field free"):
        make_system(reference_spec(0.3, sol), COARSE, solver="meridian")
    with pytest.raises(ValueError):
        make_system(reference_spec(0.3), COARSE, solver="bogus")
