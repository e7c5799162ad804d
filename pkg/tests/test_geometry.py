import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import D, THETA, reference_solenoid, reference_spec
from tunnelguide.geometry import (CrossSectionSpec, NarrowSpec, NeckProfile, SolenoidSpec, WaveguideSpec,
                                  gauge_function, gauge_modified_potential, in_neck_domain, point_in_waveguide,
                                  read_grid_field, vector_potential, voxelize, write_grid_field)


def _at(x, y):
    return np.array([x, y, 0.0])


def test_uniform_field_potential_inside_and_outside():
    sol = SolenoidSpec((0.0, 0.0), 0.5, (2.0,))
    inside = vector_potential(sol, _at(0.3, 0.0))
    outside = vector_potential(sol, _at(0.0, 1.5))
    assert np.linalg.norm(inside) == pytest.approx(2.0 * 0.3 / 2)
    assert np.linalg.norm(outside) == pytest.approx(2.0 * 0.5 ** 2 / (2 * 1.5))
    # azimuthal direction
    assert inside[0] == pytest.approx(0.0, abs=1e-15) and inside[1] > 0


def test_potential_decays_like_inverse_distance():
    sol = SolenoidSpec((0.0, 0.0), 0.3, (1.0, 0.2, 3.0))
    r = np.array([10.0, 100.0, 1000.0])
    mags = np.linalg.norm(vector_potential(sol, np.stack([r, 0 * r, 0 * r], -1)), axis=-1)
    np.testing.assert_allclose(mags * r, sol.flux_constant, rtol=1e-12)


def test_axis_value_is_zero():
    sol = SolenoidSpec((1.0, 2.0), 0.3, (1.0,))
    assert np.all(vector_potential(sol, _at(1.0, 2.0)) == 0.0)


@given(rho=st.floats(0.3, 5.0), samples=st.lists(st.floats(-3, 3), min_size=1, max_size=5))
def test_flux_identity(rho, samples):
    sol = SolenoidSpec((0.0, 0.0), 0.3, tuple(samples))
    t = np.linspace(0, 2 * np.pi, 257)[:-1]
    pts = np.stack([rho * np.cos(t), rho * np.sin(t), 0 * t], -1)
    tangent = np.stack([-np.sin(t), np.cos(t), 0 * t], -1)
    circulation = np.sum(vector_potential(sol, pts) * tangent) * rho * (2 * np.pi / len(t))
    assert circulation == pytest.approx(2 * np.pi * sol.flux_constant, abs=1e-10)


def test_modified_potential_vanishes_far_and_matches_near():
    sol = reference_solenoid()
    x0 = sol.center[0]
    far = np.array([[x0 + 0.3 + 1.6, 0.2, 0.1], [x0 - 2.5, -0.4, 0.3]])
    assert np.all(gauge_modified_potential(sol, far) == 0.0)
    near = np.array([[x0 + 0.5, 0.3, 0.0], [x0 - 0.7, -0.6, 0.2]])
    np.testing.assert_array_equal(gauge_modified_potential(sol, near), vector_potential(sol, near))


def test_modified_potential_has_the_same_curl():
    sol = reference_solenoid()
    x0 = sol.center[0]
    h = 1e-4

    def curl_z(fn, x, y):
        p = lambda dx, dy: fn(sol, _at(x + dx, y + dy))
        return ((p(h, 0)[1] - p(-h, 0)[1]) - (p(0, h)[0] - p(0, -h)[0])) / (2 * h)

    for x, y in [(x0 + 1.1, 0.4), (x0 - 1.2, 0.5), (x0 + 1.4, -0.3), (x0 - 1.05, 0.8)]:
        assert curl_z(gauge_modified_potential, x, y) == pytest.approx(curl_z(vector_potential, x, y), abs=1e-6)


def test_gauge_function_is_single_valued_across_the_cut():
    # the cut x = x0, y < y0 lies where the cutoff vanishes, so g is continuous there
    sol = reference_solenoid()
    x0 = sol.center[0]
    left, right = gauge_function(sol, _at(x0 - 1e-9, -0.5)), gauge_function(sol, _at(x0 + 1e-9, -0.5))
    assert left == 0.0 and right == 0.0
    far = gauge_function(sol, np.array([[x0 + 2.0, -0.5, 0.0], [x0 - 2.0, -0.5, 0.0]]))
    # psi in (-pi/2, 3 pi/2]
    np.testing.assert_allclose(far, sol.flux_constant * np.array([np.arctan2(-0.5, 2.0),
                                                                  np.pi + np.arctan2(0.5, 2.0)]))


@given(x=st.floats(-3, 3), rho=st.floats(0, 3), eps=st.floats(0.01, 2.0), tip=st.floats(-5, 5))
def test_contraction_identity(x, rho, eps, tip):
    n = NarrowSpec(tip, THETA, NeckProfile())
    scaled = n.contains(tip + eps * x, eps * rho, eps)
    assert bool(scaled) == bool(n.contains_unit(x, rho))


def test_waveguide_membership_examples():
    spec = reference_spec(eps=0.2)
    pts = np.array([[3.5, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.5, 0.0], [3.5, 0.0, 1.01], [-3.0, 0.9, 0.0]])
    np.testing.assert_array_equal(point_in_waveguide(spec, pts), [True, True, False, False, True])


def test_voxel_count_scales_with_volume():
    spec = reference_spec()
    counts = [voxelize(spec, h, "G2").count for h in (0.2, 0.1, 0.05)]
    r1, r2 = counts[1] / counts[0], counts[2] / counts[1]
    assert abs(r2 - 8) < abs(r1 - 8) or abs(r2 - 8) < 0.2
    assert r2 == pytest.approx(8, rel=0.05)


def test_resonator_volume_converges_to_analytic():
    spec = reference_spec()
    xk = 1.0 / np.tan(THETA)
    exact = np.pi * (D - 2 * xk) + 2 * np.pi * xk / 3
    errs = [abs(voxelize(spec, h, "G2").volume - exact) for h in (0.2, 0.1, 0.05)]
    for h, e in zip((0.2, 0.1, 0.05), errs):
        assert e <= 4.0 * h * exact
    assert errs[2] < errs[0]


def test_neck_masks_nest():
    n = NarrowSpec(0.0, THETA, NeckProfile())
    a = voxelize(n, 0.1, "omega", r_max=2.0)
    b = voxelize(n, 0.1, "omega", r_max=4.0)
    pa, pb = a.points(), b.points()
    off = np.round((np.array(a.origin) - np.array(b.origin)) / 0.1).astype(int)
    sub = b.interior[off[0]:off[0] + a.shape[0], off[1]:off[1] + a.shape[1], off[2]:off[2] + a.shape[2]]
    pb = pb[off[0]:off[0] + a.shape[0], off[1]:off[1] + a.shape[1], off[2]:off[2] + a.shape[2]]
    np.testing.assert_allclose(pb, pa, atol=1e-12)
    np.testing.assert_array_equal(sub, in_neck_domain(n, pb, 4.0))
    np.testing.assert_array_equal(a.interior, in_neck_domain(n, pa, 2.0))
    # on the shared region the two truncations select the same points (same coordinates)
    shared = np.linalg.norm(pa, axis=-1) < 2.0 - 1e-9
    np.testing.assert_array_equal(in_neck_domain(n, pa, 4.0)[shared], a.interior[shared])
    # lattice points off the neck surface agree between the two grids
    assert np.mean(sub[shared] != a.interior[shared]) < 1e-3


def test_voxelize_rejects_unresolved_neck():
    with pytest.raises(ValueError, match="too coarse"):
        voxelize(reference_spec(eps=0.1), 0.2, "G")


def test_grid_file_roundtrip(tmp_path):
    g = voxelize(reference_spec(), 0.25, "G2")
    write_grid_field(tmp_path / "m.bin", g)
    head, mask = read_grid_field(tmp_path / "m.bin")
    assert (tmp_path / "m.bin").stat().st_size == 64 + mask.size
    np.testing.assert_array_equal(mask.astype(bool), g.interior)
    assert head["h"] == 0.25 and head["shape"] == g.shape
    vals = np.arange(g.count) * (1 + 2j)
    write_grid_field(tmp_path / "f.bin", g, vals)
    _, field = read_grid_field(tmp_path / "f.bin")
    np.testing.assert_array_equal(field[g.interior], vals)


def test_spec_validation():
    with pytest.raises(ValueError, match="simple"):
        CrossSectionSpec("polygon", vertices=((0, 0), (2, 2), (2, 0), (0, 1)))
    with pytest.raises(ValueError, match="too short"):
        WaveguideSpec(CrossSectionSpec(), (NarrowSpec(0.0), NarrowSpec(1.0)), 0.1)
    with pytest.raises(ValueError, match="gauge band"):
        reference_spec(eps=0.4, solenoid=reference_solenoid(band=(1.0, 2.0)))
    with pytest.raises(ValueError):
        reference_spec(eps=-0.1)
    reference_spec(eps=0.4, solenoid=reference_solenoid(band=(0.5, 1.5)))
