import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from snake_empc.feasibility import (
    CandidatePlan,
    PlanSource,
    certify,
    joint_violations,
    repair_candidate,
    shifted_candidate,
    stopping_horizon,
    stopping_input,
    stopping_plan,
    zero_plan,
)
from snake_empc.model import ConstraintSet, RobotParams, RobotState, build_coupling_matrices, step

from oracles import braking_steps_oracle
from plan_sampler import shifted_candidate_failures, sample_feasible_plans

C = ConstraintSet()
TS = 0.05


# -- stopping law ------------------------------------------------------------


def test_stopping_input_examples():
    assert stopping_input(np.zeros(1), C, TS)[0] == 0.0
    assert stopping_input(np.array([0.109]), C, TS)[0] == -0.2276
    assert stopping_input(np.array([-0.109]), C, TS)[0] == 0.2276
    assert stopping_input(np.array([0.005]), C, TS)[0] == pytest.approx(-0.1, rel=1e-15)


def test_stopping_input_branch_boundary_agrees():
    v = TS * C.u_max
    assert stopping_input(np.array([v]), C, TS)[0] == pytest.approx(-C.u_max, rel=1e-15)


def test_stopping_input_rejects_bad_ts():
    with pytest.raises(ValueError):
        stopping_input(np.zeros(2), C, 0.0)


def test_stopping_horizon_examples():
    assert stopping_horizon(C, TS) == 10
    assert stopping_horizon(ConstraintSet(0.1, 0.1, 0.3), 0.1) == 4
    exact = ConstraintSet(0.1, TS * 0.2276, 0.2276)
    assert stopping_horizon(exact, TS) == 1


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(0.001, 0.5),
)
@example(1.0, 0.01, 0.001)  # long braking run
@example(0.010000000000000002, 0.2, 0.005)  # one ulp above a multiple
def test_stopping_horizon_matches_braking_oracle(v_max, u_max, ts):
    c = ConstraintSet(1.0, v_max, u_max)
    assert stopping_horizon(c, ts) == braking_steps_oracle(v_max, ts, u_max)


def test_braking_never_speeds_up_10k():
    rng = np.random.default_rng(1)
    v = rng.uniform(-C.v_phi_max, C.v_phi_max, 10_000)
    v[:4] = [0.0, C.v_phi_max, -C.v_phi_max, TS * C.u_max]
    nxt = v + TS * stopping_input(v, C, TS)
    assert np.all(np.abs(nxt) <= np.abs(v))
    big = np.abs(v) > TS * C.u_max
    assert np.all(np.sign(nxt[big]) == np.sign(v[big]))


@settings(max_examples=300, deadline=None)
@given(st.floats(-0.109, 0.109))
def test_braking_never_speeds_up_property(v):
    nxt = v + TS * stopping_input(np.array([v]), C, TS)[0]
    assert abs(nxt) <= abs(v)
    if abs(v) > TS * C.u_max:
        assert np.sign(nxt) == np.sign(v)


def test_stopping_completes_in_b_steps():
    rng = np.random.default_rng(2)
    b = stopping_horizon(C, TS)
    v = np.concatenate([rng.uniform(-C.v_phi_max, C.v_phi_max, 10_000), [C.v_phi_max, -C.v_phi_max]])
    for _ in range(b):
        v = v + TS * stopping_input(v, C, TS)
    assert np.max(np.abs(v)) <= 1e-12


# -- plans -------------------------------------------------------------------


@pytest.fixture(scope="module")
def model():
    p = RobotParams()
    return p, build_coupling_matrices(9)


def test_zero_plan_from_rest(model):
    p, m = model
    plan = zero_plan(RobotState.zeros(9), 20, p, m)
    assert plan.source is PlanSource.ZERO
    assert certify(plan, C)[0]
    assert all(np.array_equal(x.to_vector(), np.zeros(22)) for x in plan.predicted_states)


def test_shifted_candidate_from_zero_is_zero(model):
    p, m = model
    plan = shifted_candidate(np.zeros((20, 8)), RobotState.zeros(9), 20, 10, p, m, C)
    assert np.array_equal(plan.inputs, np.zeros((20, 8)))
    assert len(plan.predicted_states) == 21
    assert all(np.array_equal(x.to_vector(), np.zeros(22)) for x in plan.predicted_states)


def test_shifted_candidate_index_split(model):
    p, m = model
    rng = np.random.default_rng(3)
    prev = rng.uniform(-0.01, 0.01, (20, 8))
    x0 = RobotState.zeros(9)
    plan = shifted_candidate(prev, x0, 20, 10, p, m, C)
    np.testing.assert_array_equal(plan.inputs[:9], prev[1:10])
    states = plan.predicted_states
    for k in range(9, 20):
        np.testing.assert_array_equal(plan.inputs[k], stopping_input(states[k].v_phi, C, p.ts))
    for k in range(20):
        np.testing.assert_array_equal(
            states[k + 1].to_vector(), step(states[k], plan.inputs[k], p, m).to_vector()
        )


def test_shifted_candidate_single_joint_stops():
    p = RobotParams(n_links=2)
    m = build_coupling_matrices(2)
    b = stopping_horizon(C, p.ts)
    x0 = RobotState(np.zeros(1), 0, 0, 0, np.array([C.v_phi_max]), 0, 0, 0)
    prev = np.full((20, 1), -C.u_max)
    plan = shifted_candidate(prev, x0, 20, b, p, m, C)
    start = 20 - b - 1
    v_at_stop = plan.predicted_states[start].v_phi[0]
    # prefix of 9 saturated brakes already drove the joint almost to rest
    assert v_at_stop == pytest.approx(C.v_phi_max - 9 * p.ts * C.u_max, abs=1e-15)
    assert abs(plan.predicted_states[start + b].v_phi[0]) <= 1e-12
    x = RobotState(np.zeros(1), 0, 0, 0, np.array([C.v_phi_max]), 0, 0, 0)
    stop = stopping_plan(x, b, p, m, C)
    assert abs(stop.predicted_states[-1].v_phi[0]) <= 1e-12


def test_shifted_candidate_rejects_short_horizon(model):
    p, m = model
    with pytest.raises(ValueError):
        shifted_candidate(np.zeros((10, 8)), RobotState.zeros(9), 10, 10, p, m, C)
    with pytest.raises(ValueError):
        shifted_candidate(np.zeros((19, 8)), RobotState.zeros(9), 20, 10, p, m, C)


def test_certify_flags_input(model):
    p, m = model
    plan = zero_plan(RobotState.zeros(9), 20, p, m)
    bad = plan.inputs.copy()
    bad[7, 2] = 2 * C.u_max
    ok, report = certify(CandidatePlan(bad, PlanSource.ZERO, plan.predicted_states), C)
    assert not ok
    assert report.first_input_index == 7
    assert report.input_violation == pytest.approx(C.u_max)
    assert "input 7" in str(report)


def test_certify_flags_state(model):
    p, m = model
    phi = np.zeros(8)
    phi[0] = C.phi_max
    x0 = RobotState(phi, 0, 0, 0, np.eye(8)[0] * 0.05, 0, 0, 0)
    plan = zero_plan(x0, 5, p, m)
    ok, report = certify(plan, C)
    assert not ok and report.first_state_index == 1
    assert joint_violations(plan, C).tolist() == [True] + [False] * 7


def test_plan_sampler_reaches_the_bounds():
    rng = np.random.default_rng(6)
    phi0, v0, U = sample_feasible_plans(rng, 500, 8, 20, 10, C, TS)
    phi, v = phi0.copy(), v0.copy()
    peak_phi = peak_v = 0.0
    for k in range(20):
        phi, v = phi + TS * v, v + TS * U[:, k]
        peak_phi = max(peak_phi, np.abs(phi).max())
        peak_v = max(peak_v, np.abs(v).max())
    assert len(U) > 400
    assert peak_phi > 0.99 * C.phi_max and peak_v > 0.99 * C.v_phi_max


def test_shifted_candidate_certified_10k_plans():
    assert shifted_candidate_failures(10_000, 8, seed=4) == 0


@pytest.mark.parametrize("nj", range(1, 17))
def test_shifted_candidate_any_joint_count(nj):
    assert shifted_candidate_failures(100, nj, seed=100 + nj) == 0


@pytest.mark.parametrize("horizon", [11, 12, 15, 30])
def test_shifted_candidate_other_horizons(horizon):
    assert shifted_candidate_failures(200, 8, seed=horizon, horizon=horizon) == 0


def test_stopping_plan_from_any_feasible_state(model):
    p, m = model
    rng = np.random.default_rng(5)
    phi0, v0, _ = sample_feasible_plans(rng, 300, 8, 20, 10, C, p.ts)
    for k in range(len(phi0)):
        plan = stopping_plan(RobotState(phi0[k], 0, 0, 0, v0[k], 0, 0, 0), 20, p, m, C)
        assert certify(plan, C)[0]
        assert plan.source is PlanSource.PURE_STOPPING
        assert np.all(np.abs(plan.inputs) <= C.u_max)
        # braking never increases any joint speed
        v = np.array([x.v_phi for x in plan.predicted_states])
        assert np.all(np.diff(np.abs(v), axis=0) <= 0)


def test_repair_replaces_only_bad_joints(model):
    from snake_empc.feasibility import _open_loop

    p, m = model
    phi = np.zeros(8)
    phi[3] = C.phi_max - 0.005
    v = np.zeros(8)
    v[3] = 0.02
    x0 = RobotState(phi, 0, 0, 0, v, 0, 0, 0)
    inputs = np.full((20, 8), 0.01)
    states, _ = _open_loop(x0, inputs, p, m, None)
    plan = CandidatePlan(inputs, PlanSource.SHIFTED_PREVIOUS, tuple(states))
    assert joint_violations(plan, C).tolist() == [False] * 3 + [True] + [False] * 4
    fixed = repair_candidate(plan, p, m, C)
    assert fixed.source is PlanSource.REPAIRED
    np.testing.assert_array_equal(np.delete(fixed.inputs, 3, axis=1), np.delete(inputs, 3, axis=1))
    assert certify(fixed, C)[0]
    assert repair_candidate(fixed, p, m, C) is fixed
