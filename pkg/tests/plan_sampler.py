"""Random feasible joint plans for the recursive-feasibility checks.

Plans are drawn for the decoupled joint double integrator directly, without
the package's rollout, so the certification under test is checked against
an independent construction.
"""

import numpy as np

from snake_empc.feasibility import certify, shifted_candidate, stopping_horizon, stopping_input
from snake_empc.model import ConstraintSet, RobotParams, RobotState, build_coupling_matrices

C = ConstraintSet()


def braking_endpoint(phi, v, c, ts, steps=None):
    """Joint distance reached after braking for ``steps`` steps (to rest when
    ``None``).

    Braking is monotone, so this is also the largest excursion on the way.
    """
    du = ts * c.u_max
    speed = np.abs(v)
    n = np.ceil(speed / du)
    if steps is not None:
        n = np.minimum(n, steps)
    travel = ts * (n * speed - du * n * (n - 1) / 2)
    return phi + np.sign(v) * travel


def sample_feasible_plans(rng, n_plans, nj, horizon, b, c, ts, max_tries=20):
    """Batch of random initial joint states and input sequences whose whole
    predicted double-integrator trajectory stays inside the boxes.

    Inputs mix uniform and bang-bang draws, redrawn where the next state
    leaves the box.  Up to step ``horizon - b`` the next state must also
    be able to brake inside the box (any feasible plan has that property
    there); later steps only need to stay inside until the horizon ends, so
    plans may finish moving fast towards a bound.
    Returns ``(phi0, v0, U)`` with shapes (P, nj), (P, nj), (P, horizon, nj).
    """
    shape = (n_plans, nj)
    phi0 = np.empty(shape)
    v0 = np.empty(shape)
    todo = np.ones(shape, dtype=bool)
    while todo.any():
        n = int(todo.sum())
        phi0[todo] = rng.uniform(-c.phi_max, c.phi_max, n)
        v0[todo] = rng.uniform(-c.v_phi_max, c.v_phi_max, n)
        todo = np.abs(braking_endpoint(phi0, v0, c, ts)) > c.phi_max
    phi, v = phi0.copy(), v0.copy()
    U = np.empty((n_plans, horizon, nj))
    dead = np.zeros(shape, dtype=bool)
    for k in range(horizon):
        need_viable = k + 1 <= horizon - b
        u = np.zeros(shape)
        todo = np.ones(shape, dtype=bool)
        for _ in range(max_tries):
            n = int(todo.sum())
            draw = rng.uniform(-c.u_max, c.u_max, n)
            bang = rng.random(n) < 0.3
            draw[bang] = np.sign(draw[bang]) * c.u_max
            u[todo] = draw
            v_next = v + ts * u
            ok = (np.abs(v_next) <= c.v_phi_max) & (np.abs(phi + ts * v) <= c.phi_max)
            # tail states only have to stay inside until the horizon ends
            steps = None if need_viable else horizon - k - 1
            ok &= np.abs(braking_endpoint(phi + ts * v, v_next, c, ts, steps)) <= c.phi_max
            todo &= ~ok
            if not todo.any():
                break
        if todo.any():
            u[todo] = stopping_input(v[todo], c, ts)
        U[:, k] = u
        phi, v = phi + ts * v, v + ts * u
        dead |= (np.abs(phi) > c.phi_max) | (np.abs(v) > c.v_phi_max)
    keep = ~dead.any(axis=1)
    return phi0[keep], v0[keep], U[keep]


def _plan_states_feasible(phi0, v0, U, c, ts):
    """Per-plan flag: the whole predicted trajectory stays inside the boxes."""
    phi, v = phi0.copy(), v0.copy()
    ok = np.ones(len(phi0), dtype=bool)
    for k in range(U.shape[1]):
        phi, v = phi + ts * v, v + ts * U[:, k]
        ok &= (np.abs(phi) <= c.phi_max).all(axis=1) & (np.abs(v) <= c.v_phi_max).all(axis=1)
    return ok


def shifted_candidate_failures(n_trials, nj, seed, horizon=20, c=C):
    """Certification failures of the shifted candidate over random feasible plans."""
    p = RobotParams(n_links=nj + 1)
    m = build_coupling_matrices(nj + 1)
    b = stopping_horizon(c, p.ts)
    rng = np.random.default_rng(seed)
    phi0, v0, U = sample_feasible_plans(rng, int(n_trials * 1.3) + 10, nj, horizon, b, c, p.ts)
    assert len(U) >= n_trials
    phi0, v0, U = phi0[:n_trials], v0[:n_trials], U[:n_trials]
    assert _plan_states_feasible(phi0, v0, U, c, p.ts).all()
    failures = 0
    for k in range(n_trials):
        x1 = RobotState(phi0[k] + p.ts * v0[k], 0, 0, 0, v0[k] + p.ts * U[k, 0], 0, 0, 0)
        plan = shifted_candidate(U[k], x1, horizon, b, p, m, c)
        failures += not certify(plan, c)[0]
    return failures
