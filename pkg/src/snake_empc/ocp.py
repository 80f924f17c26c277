"""Single-shooting transcription of the economic MPC problem.

Decision variables are the ``horizon`` input vectors only.  The cost is

    J = -sum_{k=0}^{N} v_t(k) + gamma * sum_{k=0}^{N-1} u(k)' u(k)

and its gradient is obtained by a backward (adjoint) sweep through the
hand-derived Jacobians of the dynamics.  Heading, position and rotational
velocity never reach the cost, so the sweep only carries
``(phi, v_phi, v_t, v_n)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np

from .model import (
    ConstraintSet,
    CouplingMatrices,
    RobotParams,
    RobotState,
    mask_input,
    pin_faults,
    propulsion_coefficient,
    step,
)


class SolveStatus(enum.Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    FELL_BACK_TO_CANDIDATE = "fell_back_to_candidate"


@dataclass(frozen=True)
class OcpSpec:
    horizon: int
    gamma: float
    initial_state: RobotState
    constraint_set: ConstraintSet
    fault_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.fault_mask is not None:
            mask = np.asarray(self.fault_mask, dtype=bool).reshape(-1)
            if mask.size != self.initial_state.n_joints:
                raise ValueError("fault_mask length must equal the number of joints")
            object.__setattr__(self, "fault_mask", mask)


@dataclass(frozen=True)
class OcpSolution:
    inputs: np.ndarray  # (horizon, n_joints)
    states: tuple  # horizon + 1 RobotState
    cost: float
    max_state_violation: float
    iterations: int
    status: SolveStatus
    # solver-specific multiplier state, reusable as a warm start
    duals: Optional[object] = None


class Trajectory(NamedTuple):
    """Cost-relevant part of a rollout, as stacked arrays."""

    phi: np.ndarray  # (N+1, nj)
    v_phi: np.ndarray  # (N+1, nj)
    v_t: np.ndarray  # (N+1,)
    v_n: np.ndarray  # (N+1,)


class Dynamics:
    """Precomputed constants for fast array rollouts of the reduced state."""

    def __init__(self, params: RobotParams, mats: CouplingMatrices):
        self.params = params
        self.mats = mats
        n = params.n_links
        m = params.mass
        cp = propulsion_coefficient(params)
        self.ts = params.ts
        self.decay_t = 1.0 - params.ts * params.c_t / m
        self.decay_n = 1.0 - params.ts * params.c_n / m
        self.k_cross = params.ts * 2.0 * cp / (n * m)
        self.k_shape = params.ts * cp / (n * m)
        self.M = np.array(mats.AD_bar)
        self.Mt = self.M.T.copy()

    def rollout(self, phi0, v_phi0, v_t0, v_n0, inputs, fault_mask=None) -> Trajectory:
        U = np.asarray(inputs, dtype=float)
        N, nj = U.shape
        ts = self.ts
        if fault_mask is not None and np.any(fault_mask):
            keep = ~np.asarray(fault_mask, dtype=bool)
            U = U * keep
            v_phi0 = np.asarray(v_phi0) * keep
        # joint states are a pure double integrator
        v_phi = np.empty((N + 1, nj))
        v_phi[0] = v_phi0
        np.cumsum(ts * U, axis=0, out=v_phi[1:])
        v_phi[1:] += v_phi0
        phi = np.empty((N + 1, nj))
        phi[0] = phi0
        np.cumsum(ts * v_phi[:-1], axis=0, out=phi[1:])
        phi[1:] += phi0
        phi_sum = phi.sum(axis=1)
        shape_term = np.einsum("ki,ij,kj->k", phi, self.M, v_phi)
        v_t = np.empty(N + 1)
        v_n = np.empty(N + 1)
        vt, vn = float(v_t0), float(v_n0)
        v_t[0], v_n[0] = vt, vn
        dt, dn, kc, ks = self.decay_t, self.decay_n, self.k_cross, self.k_shape
        for k in range(N):
            s = phi_sum[k]
            vt, vn = (
                dt * vt + kc * vn * s - ks * shape_term[k],
                dn * vn + kc * vt * s,
            )
            v_t[k + 1] = vt
            v_n[k + 1] = vn
        return Trajectory(phi, v_phi, v_t, v_n)

    def cost(self, traj: Trajectory, inputs, gamma: float) -> float:
        U = np.asarray(inputs)
        return float(-traj.v_t.sum() + gamma * np.sum(U * U))

    def gradient(
        self, traj: Trajectory, inputs, gamma: float, fault_mask=None, extra_phi=None, extra_vphi=None
    ) -> np.ndarray:
        """Adjoint gradient of the cost with respect to every input entry.

        ``extra_phi`` / ``extra_vphi`` (shape (N+1, n_joints)) are added to the
        direct sensitivities of the cost to ``phi(k)`` / ``v_phi(k)``; the
        solver uses them for its constraint penalty.
        """
        U = np.asarray(inputs, dtype=float)
        N, nj = U.shape
        dt, dn, kc, ks = self.decay_t, self.decay_n, self.k_cross, self.k_shape
        phi, v_phi, v_t, v_n = traj
        phi_sum = phi.sum(axis=1)
        # adjoints of v_t(k+1), v_n(k+1) for k = 0..N-1
        lam_t = np.empty(N)
        lam_n = np.empty(N)
        lt, ln = -1.0, 0.0
        for k in range(N - 1, -1, -1):
            lam_t[k] = lt
            lam_n[k] = ln
            s = phi_sum[k]
            lt, ln = -1.0 + lt * dt + ln * kc * s, lt * kc * s + ln * dn
        w_phi = np.zeros((N + 1, nj))
        w_vphi = np.zeros((N + 1, nj))
        w_phi[:N] = (lam_t * kc * v_n[:N] + lam_n * kc * v_t[:N])[:, None]
        w_phi[:N] -= (lam_t * ks)[:, None] * (v_phi[:N] @ self.Mt)
        w_vphi[:N] = -(lam_t * ks)[:, None] * (phi[:N] @ self.M)
        if extra_phi is not None:
            w_phi += extra_phi
        if extra_vphi is not None:
            w_vphi += extra_vphi
        grad = joint_adjoint(w_phi, w_vphi, self.ts)
        grad += 2.0 * gamma * U
        if fault_mask is not None and np.any(fault_mask):
            grad[:, np.asarray(fault_mask, dtype=bool)] = 0.0
        return grad


def joint_adjoint(w_phi: np.ndarray, w_vphi: np.ndarray, ts: float) -> np.ndarray:
    """Pull sensitivities on ``phi(k)``, ``v_phi(k)`` (k = 0..N) back to the
    inputs through the double integrator ``phi+ = phi + ts v``, ``v+ = v + ts u``."""
    lam_phi = np.cumsum(w_phi[::-1], axis=0)[::-1]
    carry = w_vphi.copy()
    carry[:-1] += ts * lam_phi[1:]
    lam_v = np.cumsum(carry[::-1], axis=0)[::-1]
    return ts * lam_v[1:]


def evaluate_cost(states, inputs, gamma: float) -> float:
    """Economic cost of a state sequence (length N+1) and inputs (length N)."""
    U = np.asarray(inputs, dtype=float)
    if U.ndim == 1:
        U = U.reshape(1, -1)
    if len(states) != U.shape[0] + 1:
        raise ValueError(f"{len(states)} states do not match {U.shape[0]} inputs")
    v_t = np.array([x.v_t for x in states])
    return float(-v_t.sum() + gamma * np.sum(U * U))


def rollout(
    initial_state: RobotState,
    inputs,
    params: RobotParams,
    mats: CouplingMatrices,
    fault_mask=None,
) -> List[RobotState]:
    """Full-state prediction.  Blocked joints have ``v_phi`` pinned to zero
    and their input zeroed before every step."""
    U = np.asarray(inputs, dtype=float)
    if U.ndim != 2 or U.shape[0] < 1:
        raise ValueError("inputs must be a non-empty (horizon, n_joints) array")
    if U.shape[1] != params.n_joints:
        raise ValueError(f"inputs have {U.shape[1]} columns, expected {params.n_joints}")
    x = pin_faults(initial_state, fault_mask)
    states = [x]
    for u in U:
        x = pin_faults(step(x, mask_input(u, fault_mask), params, mats), fault_mask)
        states.append(x)
    return states


def cost_gradient(
    initial_state: RobotState,
    inputs,
    params: RobotParams,
    mats: CouplingMatrices,
    gamma: float,
    fault_mask=None,
    dynamics: Optional[Dynamics] = None,
) -> np.ndarray:
    dyn = dynamics or Dynamics(params, mats)
    x = initial_state
    traj = dyn.rollout(x.phi, x.v_phi, x.v_t, x.v_n, inputs, fault_mask)
    return dyn.gradient(traj, inputs, gamma, fault_mask)


def margins_from_arrays(phi: np.ndarray, v_phi: np.ndarray, c: ConstraintSet) -> np.ndarray:
    """Signed margins, shape (N+1, n_joints, 4), last axis ordered
    ``phi - phi_max, -phi - phi_max, v_phi - v_max, -v_phi - v_max``."""
    return np.stack(
        [phi - c.phi_max, -phi - c.phi_max, v_phi - c.v_phi_max, -v_phi - c.v_phi_max],
        axis=-1,
    )


def state_constraint_values(states, c: ConstraintSet) -> np.ndarray:
    """Flattened signed margins (feasible iff all <= 0).

    Order: time step major, then joint, then the four margins
    ``(phi - phi_max, -phi - phi_max, v_phi - v_max, -v_phi - v_max)``.
    """
    phi = np.array([x.phi for x in states])
    v_phi = np.array([x.v_phi for x in states])
    return margins_from_arrays(phi, v_phi, c).reshape(-1)
