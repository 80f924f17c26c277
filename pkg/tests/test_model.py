import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from snake_empc.model import (
    ConstraintSet,
    RobotParams,
    RobotState,
    build_coupling_matrices,
    in_input_set,
    in_state_set,
    propulsion_coefficient,
    step,
)

from oracles import coupling_oracle, step_oracle

finite = st.floats(-1.0, 1.0, allow_nan=False)


# -- parameters --------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        dict(n_links=1),
        dict(mass=0.0),
        dict(link_length=-0.1),
        dict(ts=0.0),
        dict(c_n=1.0, c_t=1.0),
        dict(c_n=1.0, c_t=2.0),
        dict(n_links=3.5),
    ],
)
def test_robot_params_rejects(kw):
    with pytest.raises(ValueError):
        RobotParams(**kw)


def test_constraint_set_positive():
    with pytest.raises(ValueError):
        ConstraintSet(phi_max=0.0)
    with pytest.raises(ValueError):
        ConstraintSet(u_max=-1.0)


@pytest.mark.parametrize(
    "cn, ct, l, expected",
    [(3.0, 1.0, 0.14, 7.142857142857143), (2.0, 1.0, 0.5, 1.0)],
)
def test_propulsion_coefficient(cn, ct, l, expected):
    p = RobotParams(c_n=cn, c_t=ct, link_length=l)
    assert propulsion_coefficient(p) == pytest.approx(expected, rel=1e-15)


def test_propulsion_coefficient_isotropic_is_zero():
    # RobotParams forbids c_n == c_t, so exercise the formula directly
    p = RobotParams()
    object.__setattr__(p, "c_t", p.c_n)
    assert propulsion_coefficient(p) == 0.0


# -- coupling matrices -------------------------------------------------------


def test_coupling_three_links():
    m = build_coupling_matrices(3)
    np.testing.assert_array_equal(m.D, [[1, -1, 0], [0, 1, -1]])
    np.testing.assert_allclose(
        m.D_bar, [[2 / 3, 1 / 3], [-1 / 3, 1 / 3], [-1 / 3, -2 / 3]], atol=1e-15
    )


def test_coupling_two_links():
    m = build_coupling_matrices(2)
    np.testing.assert_array_equal(m.D, [[1, -1]])
    np.testing.assert_allclose(m.D_bar, [[0.5], [-0.5]], atol=1e-15)


@pytest.mark.parametrize("n", range(2, 21))
def test_coupling_right_inverse_and_structure(n):
    m = build_coupling_matrices(n)
    np.testing.assert_allclose(m.D @ m.D_bar, np.eye(n - 1), atol=1e-12)
    for M, signs in ((m.A, (1, 1)), (m.D, (1, -1))):
        for i, row in enumerate(M):
            nz = np.nonzero(row)[0]
            assert list(nz) == [i, i + 1]
            assert tuple(row[nz]) == signs
    A, D, D_bar = coupling_oracle(n)
    np.testing.assert_allclose(m.D_bar, D_bar, atol=1e-12)
    np.testing.assert_allclose(m.AD_bar, A @ D_bar, atol=1e-12)


def test_coupling_rejects_single_link():
    with pytest.raises(ValueError):
        build_coupling_matrices(1)


# -- state -------------------------------------------------------------------


def test_state_vector_roundtrip_and_dimension():
    x = RobotState.zeros(9)
    assert x.to_vector().size == 2 * 9 + 4
    v = np.arange(22.0)
    assert np.array_equal(RobotState.from_vector(v).to_vector(), v)


def test_state_rejects_mismatched_joints():
    with pytest.raises(ValueError):
        RobotState(np.zeros(3), 0, 0, 0, np.zeros(4), 0, 0, 0)
    with pytest.raises(ValueError):
        RobotState.from_vector(np.zeros(9))


# -- step --------------------------------------------------------------------


@pytest.fixture(scope="module")
def model():
    p = RobotParams()
    return p, build_coupling_matrices(p.n_links)


def test_step_rest_is_equilibrium(model):
    p, m = model
    x = RobotState.zeros(9)
    assert np.array_equal(step(x, np.zeros(8), p, m).to_vector(), np.zeros(22))


def test_step_input_integration(model):
    p, m = model
    x = step(RobotState.zeros(9), np.full(8, 0.2276), p, m)
    np.testing.assert_allclose(x.v_phi, 0.011380, rtol=0, atol=1e-15)


def test_step_hand_evaluated_velocities(model):
    p, m = model
    x = RobotState(np.full(8, 0.01), 0, 0, 0, np.zeros(8), 0, 0.1, 0.0)
    nxt = step(x, np.zeros(8), p, m)
    assert nxt.v_t == pytest.approx(0.095, abs=1e-15)
    assert nxt.v_n == pytest.approx(0.05 * (2 * 7.142857142857143 / 9) * 0.1 * 0.08, rel=1e-12)
    assert nxt.v_n == pytest.approx(0.00063492, abs=5e-9)


def test_step_matches_frozen_oracle(model):
    # values produced by oracles.step_oracle and frozen
    p, m = model
    x = np.array([0.01, -0.02, 0.03, 0, 0.015, -0.01, 0.02, 0.005, 0.3, 1.0, -0.5,
                  0.05, -0.04, 0.1, 0.02, -0.08, 0.0, 0.03, -0.01, 0.2, 0.06, -0.01])
    u = np.array([0.1, -0.2, 0.2276, 0, -0.05, 0.15, -0.1, 0.02])
    expected = [
        1.2500000000000001e-02, -2.1999999999999999e-02, 3.5000000000000003e-02,
        1.0000000000000000e-03, 1.0999999999999999e-02, -1.0000000000000000e-02,
        2.1500000000000002e-02, 4.5000000000000005e-03, 3.1000000000000000e-01,
        1.0030137695707075e+00, -4.9959110762457881e-01, 5.5000000000000007e-02,
        -5.0000000000000003e-02, 1.1138000000000001e-01, 2.0000000000000000e-02,
        -8.2500000000000004e-02, 7.4999999999999997e-03, 2.4999999999999998e-02,
        -9.0000000000000011e-03, 1.9537500000000002e-01, 5.7033289241622570e-02,
        -8.2619047619047620e-03,
    ]
    got = step(RobotState.from_vector(x), u, p, m).to_vector()
    np.testing.assert_allclose(got, expected, rtol=1e-14, atol=1e-16)


@settings(max_examples=200, deadline=None)
@given(arrays(float, 22, elements=finite), arrays(float, 8, elements=finite))
def test_step_matches_live_oracle(model, x, u):
    p, m = model
    got = step(RobotState.from_vector(x), u, p, m).to_vector()
    np.testing.assert_allclose(got, step_oracle(x, u), rtol=1e-12, atol=1e-14)


def test_step_dimension_mismatch(model):
    p, m = model
    with pytest.raises(ValueError):
        step(RobotState.zeros(9), np.zeros(7), p, m)
    with pytest.raises(ValueError):
        step(RobotState.zeros(5), np.zeros(4), p, m)


@settings(max_examples=100, deadline=None)
@given(
    arrays(float, 22, elements=finite),
    arrays(float, 8, elements=finite),
    arrays(float, 8, elements=finite),
    st.floats(0.0, 1.0),
)
def test_step_linear_in_input(model, x, u1, u2, a):
    p, m = model
    s = RobotState.from_vector(x)
    mix = step(s, a * u1 + (1 - a) * u2, p, m)
    x1 = step(s, u1, p, m)
    x2 = step(s, u2, p, m)
    np.testing.assert_allclose(mix.v_phi, a * x1.v_phi + (1 - a) * x2.v_phi, atol=1e-14)
    other = np.delete(mix.to_vector(), np.s_[11:19])
    assert np.array_equal(other, np.delete(x1.to_vector(), np.s_[11:19]))


@settings(max_examples=50, deadline=None)
@given(
    arrays(float, 22, elements=finite),
    st.floats(-10, 10),
    st.floats(-10, 10),
    st.floats(-10, 10),
    st.floats(-10, 10),
)
def test_structural_decoupling(model, x, theta, vtheta, px, py):
    p, m = model
    a = RobotState.from_vector(x)
    b = a.replace(theta=theta, v_theta=vtheta, p_x=px, p_y=py)
    rng = np.random.default_rng(0)
    for _ in range(20):
        u = rng.uniform(-0.3, 0.3, 8)
        a, b = step(a, u, p, m), step(b, u, p, m)
        assert np.array_equal(a.phi, b.phi) and np.array_equal(a.v_phi, b.v_phi)
        assert a.v_t == b.v_t and a.v_n == b.v_n


def test_step_deterministic(model):
    p, m = model
    x = RobotState.from_vector(np.linspace(-0.1, 0.1, 22))
    u = np.linspace(-0.2, 0.2, 8)
    assert np.array_equal(step(x, u, p, m).to_vector(), step(x, u, p, m).to_vector())


# -- constraint sets ---------------------------------------------------------


def test_state_set_boundary_and_violation():
    c = ConstraintSet()
    on = RobotState(np.full(8, c.phi_max), 0, 0, 0, np.zeros(8), 0, 0, 0)
    assert in_state_set(on, c) == (True, 0.0)
    phi = np.zeros(8)
    phi[0] = c.phi_max + 0.01
    ok, viol = in_state_set(RobotState(phi, 0, 0, 0, np.zeros(8), 0, 0, 0), c, tol=0.0)
    assert not ok and viol == pytest.approx(0.01, abs=1e-15)
    assert in_state_set(RobotState.zeros(9), c) == (True, 0.0)


def test_input_set():
    c = ConstraintSet()
    assert in_input_set(np.zeros(8), c)
    u = np.zeros(8)
    u[3] = -c.u_max
    assert in_input_set(u, c)
    u[0] = 1.1 * c.u_max
    assert not in_input_set(u, c)
