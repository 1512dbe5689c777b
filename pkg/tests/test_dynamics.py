import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpfckit import dynamics as dyn
from mpfckit.dynamics import ManipulatorModel

MODEL = ManipulatorModel()
angle = st.floats(-2 * np.pi, 2 * np.pi)
speed = st.floats(-5.0, 5.0)


def test_inertia_spot_values():
    np.testing.assert_allclose(dyn.inertia([0.0, 0.0], MODEL), [[0.7841, 0.19165], [0.19165, 0.0785]], atol=1e-12)
    M = dyn.inertia([0.0, np.pi], MODEL)
    np.testing.assert_allclose(M, [[0.3315, -0.03465], [-0.03465, 0.0785]], atol=1e-12)
    assert np.linalg.det(M) == pytest.approx(0.02482, abs=1e-5)


def test_inertia_positive_definite_on_grid():
    for y2 in np.linspace(-np.pi, np.pi, 721):
        assert np.all(np.linalg.eigvalsh(dyn.inertia([0.0, y2], MODEL)) > 0)


def test_coriolis_spot_value():
    C = dyn.coriolis([0.0, np.pi / 2], [1.0, 1.0], MODEL)
    np.testing.assert_allclose(C, [[-0.11315, -0.2263], [0.11315, 0.0]], atol=1e-12)


def test_gravity_spot_values():
    np.testing.assert_allclose(dyn.gravity([0.0, 0.0], MODEL), [21.3858, 4.3164], atol=1e-12)
    np.testing.assert_allclose(dyn.gravity([np.pi, 0.0], MODEL), [-21.3858, -4.3164], atol=1e-12)


def test_joint_accel_matches_linear_solve():
    M = np.array([[0.7841, 0.19165], [0.19165, 0.0785]])
    expected = np.linalg.solve(M, [-21.3858, -4.3164])
    np.testing.assert_allclose(dyn.joint_accel([0, 0], [0, 0], [0, 0], MODEL), expected, rtol=1e-12)


def test_gravity_compensation_is_equilibrium():
    y = np.array([0.3, -1.1])
    acc = dyn.joint_accel(y, [0.0, 0.0], dyn.gravity(y, MODEL), MODEL)
    np.testing.assert_allclose(acc, 0.0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(y2=angle, x1=speed, x2=speed, z1=speed, z2=speed)
def test_mdot_minus_2c_is_skew(y2, x1, x2, z1, z2):
    z = np.array([z1, z2])
    Mdot = dyn.inertia_dy2([0.0, y2], MODEL) * x2
    C = dyn.coriolis([0.0, y2], [x1, x2], MODEL)
    assert abs(z @ (Mdot - 2 * C) @ z) < 1e-10


def test_inertia_derivative_matches_finite_difference():
    y = np.array([0.2, 0.7])
    h = 1e-6
    fd = (dyn.inertia(y + [0, h], MODEL) - dyn.inertia(y - [0, h], MODEL)) / (2 * h)
    np.testing.assert_allclose(dyn.inertia_dy2(y, MODEL), fd, atol=1e-9)


def test_forward_kinematics_and_jacobian():
    np.testing.assert_allclose(dyn.forward_kinematics([0, 0], MODEL), [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(dyn.forward_kinematics([np.pi / 2, -np.pi / 2], MODEL), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(dyn.fk_jacobian([0, 0], MODEL), [[0, 0], [1.0, 0.5]], atol=1e-15)
    np.testing.assert_allclose(dyn.fk_jacobian([np.pi / 2, 0], MODEL), [[-1.0, -0.5], [0, 0]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(px=st.floats(0.05, 0.95), py=st.floats(0.05, 0.95))
def test_inverse_kinematics_round_trip(px, py):
    if not 0.02 <= np.hypot(px, py) <= 0.98:
        return
    y = dyn.inverse_kinematics([px, py], MODEL)
    assert y[1] <= 0.0
    np.testing.assert_allclose(dyn.forward_kinematics(y, MODEL), [px, py], atol=1e-12)


def test_inverse_kinematics_rejects_unreachable():
    with pytest.raises(ValueError):
        dyn.inverse_kinematics([1.5, 0.0], MODEL)


def test_model_validation():
    with pytest.raises(ValueError):
        ManipulatorModel(a2=0.6)
    with pytest.raises(ValueError):
        ManipulatorModel(u_max=0.0)


def test_corrupted_parameters_raise_singular():
    bad = object.__new__(ManipulatorModel)
    object.__setattr__(bad, "__dict__", {**MODEL.__dict__, "a1": 0.0, "a2": 0.0})
    with pytest.raises(dyn.SingularMatrixError):
        dyn.joint_accel([0, 0], [0, 0], [0, 0], bad)


def test_extended_rhs_appends_timing_block():
    xi = [0.1, 0.2, 0.3, 0.4, 1.0, 0.5]
    w = [1.0, 2.0, 0.7]
    out = dyn.extended_rhs(xi, w, MODEL)
    np.testing.assert_allclose(out[:4], dyn.tracking_rhs(xi[:4], w[:2], MODEL))
    np.testing.assert_allclose(out[4:], [0.5, 0.7])


def test_state_types_round_trip():
    v = np.array([0.1, 0.2, 0.3, 0.4, 1.0, 0.5])
    assert np.array_equal(dyn.ExtendedState.from_vector(v).to_vector(), v)
    assert np.array_equal(dyn.TrackingState.from_vector(v[:4]).to_vector(), v[:4])
    with pytest.raises(ValueError):
        dyn.ExtendedState.from_vector(v).validate(s_f=0.5, s_dot_max=2.0)
