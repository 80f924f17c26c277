"""Recursive-feasibility construction: stopping law, stopping horizon,
shifted candidate, and runtime certification of candidate plans.

Everything here only touches the double-integrator part ``(phi, v_phi, u)``
of the state, so it applies for any number of joints and any cost.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .model import (
    ConstraintSet,
    CouplingMatrices,
    RobotParams,
    RobotState,
    in_state_set,
    input_violation,
    mask_input,
    pin_faults,
    step,
)


class PlanSource(enum.Enum):
    SHIFTED_PREVIOUS = "shifted_previous"
    PURE_STOPPING = "pure_stopping"
    ZERO = "zero"
    REPAIRED = "repaired"


@dataclass(frozen=True)
class CandidatePlan:
    inputs: np.ndarray  # (horizon, n_joints)
    source: PlanSource
    predicted_states: tuple  # horizon + 1 RobotState

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class CertifyReport:
    ok: bool
    first_input_index: Optional[int] = None
    input_violation: float = 0.0
    first_state_index: Optional[int] = None
    state_violation: float = 0.0

    def __str__(self):
        if self.ok:
            return "feasible"
        parts = []
        if self.first_input_index is not None:
            parts.append(f"input {self.first_input_index} exceeds bound by {self.input_violation:.3g}")
        if self.first_state_index is not None:
            parts.append(f"state {self.first_state_index} exceeds bound by {self.state_violation:.3g}")
        return "; ".join(parts)


def stopping_input(v_phi, c: ConstraintSet, ts: float) -> np.ndarray:
    """Per-joint braking law.

    Saturated braking ``-sgn(v) u_max`` while ``|v| > ts u_max``, otherwise the
    exact cancelling input ``-v / ts``.
    """
    if ts <= 0:
        raise ValueError("ts must be positive")
    v = np.asarray(v_phi, dtype=float)
    big = np.abs(v) > ts * c.u_max
    return np.where(big, -np.sign(v) * c.u_max, -v / ts)


def stopping_horizon(c: ConstraintSet, ts: float) -> int:
    """Number of steps ``ceil(v_phi_max / (ts u_max))`` needed to brake any
    admissible joint velocity to zero."""
    if c.u_max <= 0 or ts <= 0:
        raise ValueError("u_max and ts must be positive")
    ratio = c.v_phi_max / (ts * c.u_max)
    b = math.ceil(ratio)
    # guard against ratios like 1.0000000000000002 produced by rounding
    if b - ratio > 1 - 1e-12:
        b -= 1
    return max(int(b), 1)


def _closed_loop_tail(
    states: List[RobotState],
    inputs: List[np.ndarray],
    n_steps: int,
    params: RobotParams,
    mats: CouplingMatrices,
    c: ConstraintSet,
    fault_mask,
):
    x = states[-1]
    for _ in range(n_steps):
        u = mask_input(stopping_input(x.v_phi, c, params.ts), fault_mask)
        x = pin_faults(step(x, u, params, mats), fault_mask)
        inputs.append(u)
        states.append(x)


def _open_loop(
    x0: RobotState,
    inputs: Sequence[np.ndarray],
    params: RobotParams,
    mats: CouplingMatrices,
    fault_mask,
):
    x = pin_faults(x0, fault_mask)
    states = [x]
    used = []
    for u in inputs:
        u = mask_input(np.asarray(u, dtype=float), fault_mask)
        x = pin_faults(step(x, u, params, mats), fault_mask)
        used.append(u)
        states.append(x)
    return states, used


def stopping_plan(
    initial_state: RobotState,
    horizon: int,
    params: RobotParams,
    mats: CouplingMatrices,
    c: ConstraintSet,
    fault_mask=None,
) -> CandidatePlan:
    """Apply the braking law for the whole horizon."""
    states = [pin_faults(initial_state, fault_mask)]
    inputs: List[np.ndarray] = []
    _closed_loop_tail(states, inputs, horizon, params, mats, c, fault_mask)
    return CandidatePlan(np.array(inputs), PlanSource.PURE_STOPPING, tuple(states))


def zero_plan(
    initial_state: RobotState,
    horizon: int,
    params: RobotParams,
    mats: CouplingMatrices,
    fault_mask=None,
) -> CandidatePlan:
    inputs = np.zeros((horizon, params.n_joints))
    states, _ = _open_loop(initial_state, inputs, params, mats, fault_mask)
    return CandidatePlan(inputs, PlanSource.ZERO, tuple(states))


def shifted_candidate(
    prev_solution,
    new_initial_state: RobotState,
    horizon: int,
    b: int,
    params: RobotParams,
    mats: CouplingMatrices,
    c: ConstraintSet,
    fault_mask=None,
) -> CandidatePlan:
    """Shift the previous optimal inputs and append the braking law.

    The new plan reuses ``prev_solution[1 : horizon - b]`` (``horizon - b - 1``
    entries) and then applies :func:`stopping_input` in closed loop for the
    remaining ``b + 1`` steps.
    """
    if horizon <= b:
        raise ValueError(
            f"horizon {horizon} must exceed the stopping horizon {b}; "
            "the shifted candidate is not guaranteed feasible otherwise"
        )
    prev = np.asarray(prev_solution, dtype=float)
    if prev.shape[0] != horizon:
        raise ValueError(f"prev_solution has {prev.shape[0]} steps, expected {horizon}")
    states, inputs = _open_loop(new_initial_state, prev[1 : horizon - b], params, mats, fault_mask)
    _closed_loop_tail(states, inputs, b + 1, params, mats, c, fault_mask)
    return CandidatePlan(np.array(inputs), PlanSource.SHIFTED_PREVIOUS, tuple(states))


def _first_over(viol: np.ndarray, tol: float):
    idx = np.nonzero(viol > tol)[0]
    if idx.size == 0:
        return None, 0.0
    return int(idx[0]), float(viol[idx[0]])


def certify(plan: CandidatePlan, c: ConstraintSet, tol: float = 1e-9):
    """Check every input and predicted state of ``plan`` against the boxes.

    Returns ``(ok, report)``.
    """
    u = np.abs(np.asarray(plan.inputs, dtype=float))
    u_viol = np.maximum(0.0, u.max(axis=1, initial=-np.inf) - c.u_max) if u.size else np.zeros(0)
    phi = np.array([x.phi for x in plan.predicted_states])
    v = np.array([x.v_phi for x in plan.predicted_states])
    x_viol = np.maximum.reduce([
        np.zeros(len(phi)),
        (np.abs(phi) - c.phi_max).max(axis=1, initial=-np.inf),
        (np.abs(v) - c.v_phi_max).max(axis=1, initial=-np.inf),
    ])
    first_u, worst_u = _first_over(u_viol, tol)
    first_x, worst_x = _first_over(x_viol, tol)
    ok = first_u is None and first_x is None
    return ok, CertifyReport(ok, first_u, worst_u, first_x, worst_x)


def joint_violations(plan: CandidatePlan, c: ConstraintSet, tol: float = 1e-9) -> np.ndarray:
    """Boolean mask of joints whose input or state bounds are broken anywhere."""
    phi = np.array([x.phi for x in plan.predicted_states])
    v = np.array([x.v_phi for x in plan.predicted_states])
    bad = (np.abs(phi) > c.phi_max + tol).any(axis=0)
    bad |= (np.abs(v) > c.v_phi_max + tol).any(axis=0)
    bad |= (np.abs(plan.inputs) > c.u_max + tol).any(axis=0)
    return bad


def repair_candidate(
    plan: CandidatePlan,
    params: RobotParams,
    mats: CouplingMatrices,
    c: ConstraintSet,
    tol: float = 1e-9,
    fault_mask=None,
) -> CandidatePlan:
    """Replace the inputs of each offending joint by the braking law.

    Joint distances and velocities evolve independently per joint, so
    swapping one joint's input column leaves the others untouched.  Used
    when the plant has drifted from the prediction (e.g. an unmodelled
    blocked joint) and the shifted plan loses its guarantee.
    """
    bad = joint_violations(plan, c, tol)
    if not bad.any():
        return plan
    x0 = plan.predicted_states[0]
    stop = stopping_plan(x0, plan.horizon, params, mats, c, fault_mask)
    inputs = np.where(bad, stop.inputs, plan.inputs)
    states, used = _open_loop(x0, inputs, params, mats, fault_mask)
    return CandidatePlan(np.array(used), PlanSource.REPAIRED, tuple(states))
