"""Augmented-Lagrangian / projected-gradient solver for the MPC program.

Input boxes are enforced exactly by projection.  Joint distance and joint
velocity bounds enter an augmented Lagrangian (PHR form for inequalities)
whose inner problem is solved by projected gradient descent with
Barzilai-Borwein trial steps and Armijo backtracking.  The certified warm
start doubles as the fallback: the returned solution never costs more than
it and is always feasible to ``constraint_tol``.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from .feasibility import CandidatePlan, certify
from .model import ConstraintSet, CouplingMatrices, RobotParams
from .ocp import Dynamics, OcpSolution, OcpSpec, SolveStatus, evaluate_cost, rollout

log = logging.getLogger(__name__)


class StepRule(enum.Enum):
    ARMIJO = "armijo"


@dataclass(frozen=True)
class SolverConfig:
    max_outer_iters: int = 8
    max_inner_iters: int = 400
    grad_tol: float = 1e-6
    constraint_tol: float = 1e-6
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    step_rule: StepRule = StepRule.ARMIJO
    # when False, an iterate that cannot meet the contract raises SolverFailure
    # instead of returning the candidate (debugging aid)
    fallback_enabled: bool = True
    armijo_c: float = 1e-4
    # bounds are tightened by this fraction of constraint_tol inside the solver
    backoff: float = 0.5
    # inner loop also stops when the merit drops by less than
    # stall_tol * max(1, |merit|) over stall_window iterations
    stall_tol: float = 1e-9
    stall_window: int = 20

    def __post_init__(self):
        if self.grad_tol <= 0 or self.constraint_tol <= 0 or self.penalty_init <= 0:
            raise ValueError("tolerances and initial penalty must be positive")
        if self.penalty_growth <= 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.max_outer_iters < 0 or self.max_inner_iters < 0:
            raise ValueError("iteration limits must be non-negative")


class Duals(NamedTuple):
    """Multipliers of the upper/lower joint distance and velocity margins,
    each shaped (2, horizon, n_joints), and the penalty parameter."""

    mu_phi: np.ndarray
    mu_v: np.ndarray
    rho: float


def shift_duals(duals: Optional[Duals]) -> Optional[Duals]:
    """Advance multipliers one step, repeating the last stage."""
    if duals is None:
        return None
    def shift(mu):
        out = np.empty_like(mu)
        out[:, :-1] = mu[:, 1:]
        out[:, -1] = mu[:, -1]
        return out
    return Duals(shift(duals.mu_phi), shift(duals.mu_v), duals.rho)


class InfeasibleWarmStart(RuntimeError):
    """The warm start handed to :func:`solve` is not certified feasible."""


class SolverFailure(RuntimeError):
    """No iterate met the contract and falling back was disabled."""


def project_inputs(inputs, c: ConstraintSet) -> np.ndarray:
    """Clamp every input entry to ``[-u_max, u_max]``."""
    return np.clip(np.asarray(inputs, dtype=float), -c.u_max, c.u_max)


class _Merit:
    """Augmented Lagrangian in scaled variables ``w = u / u_max``.

    Constraints are the normalized margins for k = 1..N (the initial state is
    fixed and does not depend on the decision variables).
    """

    def __init__(self, spec: OcpSpec, dyn: Dynamics, shrink: float):
        self.spec = spec
        self.dyn = dyn
        c = spec.constraint_set
        self.c = c
        x0 = spec.initial_state
        self.x0 = x0
        self.mask = spec.fault_mask
        nj = x0.n_joints
        self.keep = np.ones(nj) if self.mask is None else (~self.mask).astype(float)
        self.phi_lim = c.phi_max - shrink
        self.v_lim = c.v_phi_max - shrink
        n = spec.horizon
        self.mu_phi = np.zeros((2, n, nj))  # upper, lower multipliers
        self.mu_v = np.zeros((2, n, nj))
        self.rho = 1.0
        self._args = (
            c.u_max, np.ascontiguousarray(x0.phi), np.ascontiguousarray(x0.v_phi),
            x0.v_t, x0.v_n, self.keep, dyn.ts, dyn.decay_t, dyn.decay_n,
            dyn.k_cross, dyn.k_shape, np.ascontiguousarray(dyn.M), spec.gamma,
            c.phi_max, c.v_phi_max, self.phi_lim, self.v_lim,
        )
        self._grad = np.zeros((n, nj))

    def value(self, w):
        """Return ``(merit, cost, max_violation)``."""
        return _kernels.merit(
            w, *self._args, self.mu_phi, self.mu_v, self.rho, False, self._grad
        )

    def value_grad(self, w):
        grad = np.empty_like(w)
        out = _kernels.merit(w, *self._args, self.mu_phi, self.mu_v, self.rho, True, grad)
        return out[0], grad

    def traj(self, w):
        x0 = self.x0
        return self.dyn.rollout(x0.phi, x0.v_phi, x0.v_t, x0.v_n, w * self.c.u_max, self.mask)

    def update_multipliers(self, w):
        tr = self.traj(w)
        phi = tr.phi[1:] / self.c.phi_max
        v = tr.v_phi[1:] / self.c.v_phi_max
        pl = self.phi_lim / self.c.phi_max
        vl = self.v_lim / self.c.v_phi_max
        g_phi = np.stack([phi - pl, -phi - pl])
        g_v = np.stack([v - vl, -v - vl])
        self.mu_phi = np.maximum(0.0, self.mu_phi + self.rho * g_phi)
        self.mu_v = np.maximum(0.0, self.mu_v + self.rho * g_v)


def _inner(merit: _Merit, w, config: SolverConfig, budget: int):
    """Projected gradient with BB trial steps and Armijo backtracking.

    Stops on a small projected gradient or when the merit stalls.  Returns
    ``(w, iterations, converged, merit_history)``; the history is
    non-increasing.
    """
    w = np.array(w, dtype=float, order="C")
    if merit.mask is not None and np.any(merit.mask):
        w[:, merit.mask] = 0.0
    history = np.empty(budget + 1)
    its, converged = _kernels.projected_gradient(
        w, budget, config.grad_tol, config.stall_tol, config.stall_window,
        config.armijo_c, *merit._args, merit.mu_phi, merit.mu_v, merit.rho, history,
    )
    return w, its, converged, history[: its + 1]


def solve(
    spec: OcpSpec,
    warm_start: CandidatePlan,
    config: SolverConfig,
    params: RobotParams,
    mats: CouplingMatrices,
    dynamics: Optional[Dynamics] = None,
    duals: Optional[Duals] = None,
) -> OcpSolution:
    """Solve one MPC program starting from a certified candidate.

    Guarantees: inputs inside the box exactly, state violation at most
    ``config.constraint_tol`` and cost no larger than the warm start's.  When
    the optimizer cannot improve on the candidate, the candidate itself is
    returned with status ``FELL_BACK_TO_CANDIDATE``.

    ``duals`` optionally seeds the multipliers and penalty, typically with
    :func:`shift_duals` of the previous solution's ``duals``.
    """
    c = spec.constraint_set
    ok, report = certify(warm_start, c, config.constraint_tol)
    if not ok:
        raise InfeasibleWarmStart(f"warm start is not feasible: {report}")
    if warm_start.horizon != spec.horizon:
        raise ValueError("warm start horizon does not match the problem horizon")

    warm_inputs = np.asarray(warm_start.inputs, dtype=float)
    warm_cost = evaluate_cost(warm_start.predicted_states, warm_inputs, spec.gamma)
    warm_viol = _plan_violation(warm_start, c)

    def fallback(iters, why):
        if not config.fallback_enabled:
            raise SolverFailure(why)
        return OcpSolution(
            inputs=warm_inputs.copy(),
            states=tuple(warm_start.predicted_states),
            cost=warm_cost,
            max_state_violation=warm_viol,
            iterations=iters,
            status=SolveStatus.FELL_BACK_TO_CANDIDATE,
        )

    if config.max_inner_iters == 0 or config.max_outer_iters == 0:
        return fallback(0, "iteration budget is zero")

    dyn = dynamics or Dynamics(params, mats)
    merit = _Merit(spec, dyn, config.backoff * config.constraint_tol)
    merit.rho = config.penalty_init
    if duals is not None and duals.mu_phi.shape == merit.mu_phi.shape:
        merit.mu_phi = duals.mu_phi.copy()
        merit.mu_v = duals.mu_v.copy()
        merit.rho = config.penalty_init
    w = project_inputs(warm_inputs, c) / c.u_max

    best_w, best_cost = None, np.inf
    total = 0
    converged = False
    prev_viol = np.inf
    for _outer in range(config.max_outer_iters):
        w, its, inner_ok, _ = _inner(merit, w, config, config.max_inner_iters)
        total += its
        _, cost, viol = merit.value(w)
        if viol <= config.constraint_tol and cost < best_cost:
            best_w, best_cost = w.copy(), cost
        if viol <= config.constraint_tol and inner_ok:
            converged = True
            break
        merit.update_multipliers(w)
        if viol > 0.25 * prev_viol:
            merit.rho *= config.penalty_growth
        prev_viol = viol

    final_duals = Duals(merit.mu_phi.copy(), merit.mu_v.copy(), merit.rho)
    if best_w is None:
        log.debug("no feasible iterate found; returning candidate")
        return replace(fallback(total, "no feasible iterate found"), duals=final_duals)

    inputs = project_inputs(best_w * c.u_max, c)
    if spec.fault_mask is not None and np.any(spec.fault_mask):
        inputs[:, spec.fault_mask] = 0.0
    states = rollout(spec.initial_state, inputs, params, mats, spec.fault_mask)
    cost = evaluate_cost(states, inputs, spec.gamma)
    viol = _states_violation(states, c)
    if viol > config.constraint_tol or cost > warm_cost + 1e-12:
        why = f"iterate violation {viol:.3g}, cost {cost:.12g} vs candidate {warm_cost:.12g}"
        return replace(fallback(total, why), duals=final_duals)
    return OcpSolution(
        inputs=inputs,
        states=tuple(states),
        cost=cost,
        max_state_violation=viol,
        iterations=total,
        status=SolveStatus.CONVERGED if converged else SolveStatus.MAX_ITER,
        duals=final_duals,
    )


def _states_violation(states, c: ConstraintSet) -> float:
    phi = np.array([x.phi for x in states])
    v = np.array([x.v_phi for x in states])
    return max(
        0.0,
        float(np.max(np.abs(phi) - c.phi_max)),
        float(np.max(np.abs(v) - c.v_phi_max)),
    )


def _plan_violation(plan: CandidatePlan, c: ConstraintSet) -> float:
    return _states_violation(plan.predicted_states, c)
