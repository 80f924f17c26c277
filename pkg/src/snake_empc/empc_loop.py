"""Closed-loop simulation: economic MPC and the lateral undulation baseline.

Row ``t`` of a trace holds the plant state ``x(t)`` and the input ``u(t)``
computed from it, so ``trace[t + 1].state == step(trace[t].state,
trace[t].applied_input)`` (with blocked joints pinned when a fault is active).
A run of ``total_steps`` produces ``total_steps + 1`` records, t = 0..total_steps.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .feasibility import (
    certify,
    repair_candidate,
    shifted_candidate,
    stopping_horizon,
    stopping_plan,
    zero_plan,
)
from .gait_lu import LuParams, lu_control
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
from .ocp import Dynamics, OcpSpec
from .solver import SolverConfig, shift_duals, solve

log = logging.getLogger(__name__)


class FeasibilityBreach(RuntimeError):
    """A warm start that theory says is feasible failed certification."""


@dataclass(frozen=True)
class FaultSpec:
    """A joint that blocks from ``onset_step`` on.

    ``joint_index`` is 1-based (joint 1 is nearest the head).
    """

    joint_index: int = 4
    onset_step: int = 200
    predictor_aware: bool = True

    def mask(self, n_joints: int) -> np.ndarray:
        if not 1 <= self.joint_index <= n_joints:
            raise ValueError(f"fault joint {self.joint_index} outside 1..{n_joints}")
        m = np.zeros(n_joints, dtype=bool)
        m[self.joint_index - 1] = True
        return m


@dataclass(frozen=True)
class LoopConfig:
    total_steps: int = 300
    horizon: int = 20
    gamma: float = 0.0
    fault: Optional[FaultSpec] = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


@dataclass(frozen=True)
class TraceRecord:
    step: int
    time_s: float
    state: RobotState
    applied_input: np.ndarray
    cost: float
    iterations: int
    status: str
    violation: float
    warm_start: str = ""


def _violation(x: RobotState, u, c: ConstraintSet) -> float:
    return max(in_state_set(x, c, tol=0.0)[1], input_violation(u, c))


def _initial_plan(x0, horizon, params, mats, c, tol, fault_mask):
    plan = zero_plan(x0, horizon, params, mats, fault_mask)
    if certify(plan, c, tol)[0]:
        return plan
    plan = stopping_plan(x0, horizon, params, mats, c, fault_mask)
    ok, report = certify(plan, c, tol)
    if not ok:
        raise FeasibilityBreach(f"no certified initial plan from x(0): {report}")
    return plan


def run_empc(
    initial_state: RobotState,
    loop_config: LoopConfig,
    params: RobotParams,
    mats: CouplingMatrices,
    c: ConstraintSet,
    progress=None,
) -> List[TraceRecord]:
    """Run the economic MPC closed loop.

    Each step warm-starts the solver with the shifted candidate of the
    previous solution, solves, and applies the first input.  The plant
    always experiences a configured fault from its onset; the predictor only
    models it when ``fault.predictor_aware``.
    """
    N = loop_config.horizon
    b = stopping_horizon(c, params.ts)
    if N <= b:
        raise ValueError(
            f"horizon {N} must exceed the stopping horizon {b} for recursive feasibility"
        )
    tol = loop_config.solver.constraint_tol
    if not in_state_set(initial_state, c, tol)[0]:
        raise ValueError("initial state violates the state constraints")
    fault = loop_config.fault
    fault_mask = fault.mask(params.n_joints) if fault is not None else None
    dyn = Dynamics(params, mats)

    def plant_mask(t):
        return fault_mask if fault is not None and t >= fault.onset_step else None

    def predictor_mask(t):
        if fault is not None and fault.predictor_aware and t >= fault.onset_step:
            return fault_mask
        return None

    x = initial_state
    records: List[TraceRecord] = []
    solution = None
    started = time.perf_counter()
    for t in range(loop_config.total_steps + 1):
        x = pin_faults(x, plant_mask(t))
        pmask = predictor_mask(t)
        if solution is None:
            plan = _initial_plan(x, N, params, mats, c, tol, pmask)
        else:
            plan = shifted_candidate(solution.inputs, x, N, b, params, mats, c, pmask)
            if not certify(plan, c, tol)[0]:
                # only legitimate when the plant diverged from the prediction
                mismatch = plant_mask(t) is not None and pmask is None
                if mismatch:
                    plan = repair_candidate(plan, params, mats, c, tol, pmask)
                ok, report = certify(plan, c, tol)
                if not ok:
                    raise FeasibilityBreach(f"step {t}: warm start not feasible: {report}")
        spec = OcpSpec(N, loop_config.gamma, x, c, pmask)
        duals = shift_duals(solution.duals) if solution is not None else None
        solution = solve(spec, plan, loop_config.solver, params, mats, dyn, duals=duals)
        u = mask_input(solution.inputs[0], plant_mask(t))
        records.append(
            TraceRecord(
                step=t,
                time_s=t * params.ts,
                state=x,
                applied_input=u,
                cost=solution.cost,
                iterations=solution.iterations,
                status=solution.status.value,
                violation=_violation(x, u, c),
                warm_start=plan.source.value,
            )
        )
        if progress is not None:
            progress(t, records[-1])
        x = pin_faults(step(x, u, params, mats), plant_mask(t))
    log.info(
        "EMPC run: %d steps in %.1f s", loop_config.total_steps, time.perf_counter() - started
    )
    return records


def run_lu(
    initial_state: RobotState,
    total_steps: int,
    lu_params: LuParams,
    params: RobotParams,
    mats: CouplingMatrices,
    c: ConstraintSet,
) -> List[TraceRecord]:
    """Closed loop under the undulation controller.  Constraint violations
    are recorded, not prevented."""
    x = initial_state
    records = []
    for t in range(total_steps + 1):
        u = lu_control(x, lu_params, params.n_links, t * params.ts)
        records.append(
            TraceRecord(
                step=t,
                time_s=t * params.ts,
                state=x,
                applied_input=u,
                cost=math.nan,
                iterations=0,
                status="lu",
                violation=_violation(x, u, c),
            )
        )
        x = step(x, u, params, mats)
    return records
