"""Simplified snake robot model: parameters, state, coupling matrices, dynamics.

The robot is a chain of ``n_links`` equal links joined by ``n_links - 1``
translational joints on a flat surface with anisotropic viscous friction.
The discrete update :func:`step` is the explicit first-order form

    phi+     = phi + Ts v_phi
    theta+   = theta + Ts v_theta
    p+       = p + Ts R(theta) [v_t, v_n]
    v_phi+   = v_phi + Ts u
    v_theta+ = v_theta + Ts (-l1 v_theta + l2/(N-1) v_t sum(phi))
    v_t+     = v_t + Ts (-ct/m v_t + 2cp/(N m) v_n sum(phi) - cp/(N m) phi' A Dbar v_phi)
    v_n+     = v_n + Ts (-cn/m v_n + 2cp/(N m) v_t sum(phi))
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

# Rotational constants of the reduced model; commonly used values from the
# snake robot literature.  No velocity or energy metric depends on them.
DEFAULT_LAMBDA1 = 0.5
DEFAULT_LAMBDA2 = 20.0


@dataclass(frozen=True)
class RobotParams:
    n_links: int = 9
    mass: float = 1.0
    link_length: float = 0.14
    c_n: float = 3.0
    c_t: float = 1.0
    lambda1: float = DEFAULT_LAMBDA1
    lambda2: float = DEFAULT_LAMBDA2
    ts: float = 0.05

    def __post_init__(self):
        if int(self.n_links) != self.n_links or self.n_links < 2:
            raise ValueError(f"n_links must be an integer >= 2, got {self.n_links}")
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.link_length <= 0:
            raise ValueError("link_length must be positive")
        if self.ts <= 0:
            raise ValueError("ts must be positive")
        if not (self.c_n > self.c_t > 0):
            raise ValueError("friction must satisfy c_n > c_t > 0")

    @property
    def n_joints(self) -> int:
        return self.n_links - 1


@dataclass(frozen=True)
class ConstraintSet:
    """Box bounds on joint distances, joint velocities and inputs."""

    phi_max: float = 0.052
    v_phi_max: float = 0.109
    u_max: float = 0.2276

    def __post_init__(self):
        for name in ("phi_max", "v_phi_max", "u_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class CouplingMatrices:
    A: np.ndarray
    D: np.ndarray
    e: np.ndarray
    e_bar: np.ndarray
    D_bar: np.ndarray
    # A @ D_bar, the only product the dynamics need
    AD_bar: np.ndarray = field(repr=False)

    @property
    def n_links(self) -> int:
        return self.A.shape[1]


def propulsion_coefficient(params: RobotParams) -> float:
    """Return ``c_p = (c_n - c_t) / (2 l)``."""
    if params.link_length <= 0:
        raise ValueError("link_length must be positive")
    return (params.c_n - params.c_t) / (2.0 * params.link_length)


def build_coupling_matrices(n_links: int) -> CouplingMatrices:
    """Build the addition/difference matrices and ``D_bar = D^T (D D^T)^-1``."""
    if n_links < 2:
        raise ValueError(f"n_links must be >= 2, got {n_links}")
    nj = n_links - 1
    A = np.zeros((nj, n_links))
    D = np.zeros((nj, n_links))
    idx = np.arange(nj)
    A[idx, idx] = 1.0
    A[idx, idx + 1] = 1.0
    D[idx, idx] = 1.0
    D[idx, idx + 1] = -1.0
    DDt = D @ D.T
    # tridiag(-1, 2, -1) is positive definite for every size
    assert np.linalg.matrix_rank(DDt) == nj, "D D^T is singular"
    # D_bar^T = (D D^T)^-1 D since D D^T is symmetric
    D_bar = np.linalg.solve(DDt, D).T
    for arr in (A, D, D_bar):
        arr.setflags(write=False)
    AD_bar = A @ D_bar
    AD_bar.setflags(write=False)
    return CouplingMatrices(
        A=A, D=D, e=np.ones(n_links), e_bar=np.ones(nj), D_bar=D_bar, AD_bar=AD_bar
    )


@dataclass(frozen=True)
class RobotState:
    """Full state ``[phi, theta, p_x, p_y, v_phi, v_theta, v_t, v_n]``."""

    phi: np.ndarray
    theta: float
    p_x: float
    p_y: float
    v_phi: np.ndarray
    v_theta: float
    v_t: float
    v_n: float

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float).reshape(-1)
        v_phi = np.asarray(self.v_phi, dtype=float).reshape(-1)
        if phi.shape != v_phi.shape:
            raise ValueError(f"phi has {phi.size} entries but v_phi has {v_phi.size}")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "v_phi", v_phi)
        for name in ("theta", "p_x", "p_y", "v_theta", "v_t", "v_n"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def n_joints(self) -> int:
        return self.phi.size

    @classmethod
    def zeros(cls, n_links: int) -> "RobotState":
        nj = n_links - 1
        return cls(np.zeros(nj), 0.0, 0.0, 0.0, np.zeros(nj), 0.0, 0.0, 0.0)

    def to_vector(self) -> np.ndarray:
        """Flatten to the ``2 N_l + 4`` vector in the documented order."""
        return np.concatenate(
            [
                self.phi,
                [self.theta, self.p_x, self.p_y],
                self.v_phi,
                [self.v_theta, self.v_t, self.v_n],
            ]
        )

    @classmethod
    def from_vector(cls, x) -> "RobotState":
        x = np.asarray(x, dtype=float).reshape(-1)
        if (x.size - 6) % 2 or x.size < 8:
            raise ValueError(f"state vector of length {x.size} is not 2*N_l + 4")
        nj = (x.size - 6) // 2
        return cls(
            phi=x[:nj].copy(),
            theta=x[nj],
            p_x=x[nj + 1],
            p_y=x[nj + 2],
            v_phi=x[nj + 3 : 2 * nj + 3].copy(),
            v_theta=x[2 * nj + 3],
            v_t=x[2 * nj + 4],
            v_n=x[2 * nj + 5],
        )

    def replace(self, **changes) -> "RobotState":
        return replace(self, **changes)


def step(
    state: RobotState, u, params: RobotParams, mats: CouplingMatrices
) -> RobotState:
    """Advance the state by one sampling period under input ``u``."""
    u = np.asarray(u, dtype=float).reshape(-1)
    nj = params.n_joints
    if state.n_joints != nj or u.size != nj or mats.n_links != params.n_links:
        raise ValueError(
            f"dimension mismatch: state has {state.n_joints} joints, input has "
            f"{u.size}, params expect {nj}, matrices built for {mats.n_links} links"
        )
    ts = params.ts
    m = params.mass
    cp = propulsion_coefficient(params)
    n = params.n_links
    phi, v_phi = state.phi, state.v_phi
    v_t, v_n, theta = state.v_t, state.v_n, state.theta
    phi_sum = mats.e_bar @ phi
    c, s = np.cos(theta), np.sin(theta)

    v_t_next = v_t + ts * (
        -params.c_t / m * v_t
        + 2.0 * cp / (n * m) * v_n * phi_sum
        - cp / (n * m) * (phi @ mats.AD_bar @ v_phi)
    )
    v_n_next = v_n + ts * (-params.c_n / m * v_n + 2.0 * cp / (n * m) * v_t * phi_sum)
    v_theta_next = state.v_theta + ts * (
        -params.lambda1 * state.v_theta + params.lambda2 / (n - 1) * v_t * phi_sum
    )
    return RobotState(
        phi=phi + ts * v_phi,
        theta=theta + ts * state.v_theta,
        p_x=state.p_x + ts * (v_t * c - v_n * s),
        p_y=state.p_y + ts * (v_t * s + v_n * c),
        v_phi=v_phi + ts * u,
        v_theta=v_theta_next,
        v_t=v_t_next,
        v_n=v_n_next,
    )


def in_state_set(
    state: RobotState, c: ConstraintSet, tol: float = 1e-9
) -> Tuple[bool, float]:
    """Check the joint distance and joint velocity boxes.

    Returns ``(inside, violation)`` where ``violation`` is the largest
    overshoot beyond the bounds (0 when inside without tolerance).
    """
    over_phi = np.max(np.abs(state.phi) - c.phi_max, initial=-np.inf)
    over_v = np.max(np.abs(state.v_phi) - c.v_phi_max, initial=-np.inf)
    worst = max(0.0, float(over_phi), float(over_v))
    return worst <= tol, worst


def in_input_set(u, c: ConstraintSet, tol: float = 1e-9) -> bool:
    u = np.asarray(u, dtype=float)
    return bool(np.all(np.abs(u) <= c.u_max + tol))


def input_violation(u, c: ConstraintSet) -> float:
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        return 0.0
    return max(0.0, float(np.max(np.abs(u)) - c.u_max))


def pin_faults(state: RobotState, fault_mask) -> RobotState:
    """Zero the joint velocity of every blocked joint."""
    if fault_mask is None or not np.any(fault_mask):
        return state
    v_phi = np.where(fault_mask, 0.0, state.v_phi)
    return state.replace(v_phi=v_phi)


def mask_input(u: np.ndarray, fault_mask) -> np.ndarray:
    if fault_mask is None or not np.any(fault_mask):
        return u
    return np.where(fault_mask, 0.0, u)
