import numpy as np
import pytest

from tunnelguide.geometry import NeckProfile
from tunnelguide.junction import JunctionGrid, _symmetric_pair, junction_coefficients, solve_model_solution


@pytest.fixture(scope="module")
def right(cap):
    return solve_model_solution(NeckProfile(), cap, "right")


@pytest.fixture(scope="module")
def left(cap):
    return solve_model_solution(NeckProfile(), cap, "left")


def test_reference_coefficients(coefficients):
    j = coefficients.get("junction")
    assert j["alpha"] == pytest.approx(0.39753, abs=2e-3)
    assert j["beta"] == pytest.approx(0.0029884, rel=0.02)
    # error bars below 5% of the values
    assert j["alpha_error"] < 0.05 * abs(j["alpha"])
    assert j["beta_error"] < 0.05 * abs(j["beta"])


def test_central_symmetry(right, left):
    for radius in (1.5, 2.5, 3.5):
        assert right.projection(radius, "right") == pytest.approx(left.projection(radius, "left"), rel=1e-6)
        assert right.projection(radius, "left") == pytest.approx(left.projection(radius, "right"), rel=1e-6)


def test_far_field_self_consistency(right, cap):
    # re-projection at half the truncation radius reproduces rho^mu + alpha rho^(-mu-1)
    r_half = 0.5 * JunctionGrid().r_max_factor * NeckProfile().match_radius(cap.theta)
    mu = cap.mu1
    expected = r_half ** mu + right.same_side * r_half ** (-mu - 1)
    assert right.projection(r_half, "right") == pytest.approx(expected, rel=2e-3)
    assert right.projection(r_half, "left") == pytest.approx(right.opposite_side * r_half ** (-mu - 1), rel=0.05)


def test_left_right_and_reciprocity(right, left, coefficients):
    # both model solutions give the same pair; the cross coefficients coincide
    assert right.same_side == pytest.approx(left.same_side, rel=1e-6)
    assert right.opposite_side == pytest.approx(left.opposite_side, rel=1e-6)
    j = coefficients.get("junction")
    assert right.same_side == pytest.approx(j["alpha"], rel=0.02)
    assert right.opposite_side == pytest.approx(j["beta"], rel=0.05)


def test_maximum_principle_and_real_values(right):
    assert right.w.min() >= -1e-8 * right.w.max()
    assert np.isrealobj(right.w)


def test_beta_vanishes_as_neck_closes(cap):
    grid = JunctionGrid()
    betas = []
    for waist in (1.0, 0.5, 0.25):
        prof = NeckProfile(waist=waist)
        betas.append(_symmetric_pair(prof, cap, grid, grid.r_max_factor * NeckProfile().match_radius(cap.theta))[1])
    assert betas[0] > betas[1] > betas[2] > 0
    assert betas[2] < 0.1 * betas[0]


def test_closed_neck_is_rejected(cap):
    with pytest.raises(ValueError, match="closed"):
        junction_coefficients(NeckProfile(waist=1.0), cap, beta_min=1.0)
