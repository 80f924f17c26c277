"""Lateral undulation reference gait and its PD tracking controller."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import RobotState


@dataclass(frozen=True)
class LuParams:
    """Gait and controller constants.

    ``omega`` and ``delta`` are stored in radians; use :meth:`from_degrees`
    to build from the usual deg/s and deg values.
    """

    alpha: float = 0.05
    omega: float = float(np.deg2rad(120.0))
    delta: float = float(np.deg2rad(40.0))
    phi0: float = 0.0
    k_d: float = 5.0
    k_p: float = 20.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.k_d <= 0 or self.k_p <= 0:
            raise ValueError("controller gains must be positive")

    @classmethod
    def from_degrees(cls, alpha, omega_deg_s, delta_deg, phi0=0.0, k_d=5.0, k_p=20.0):
        return cls(
            alpha=alpha,
            omega=float(np.deg2rad(omega_deg_s)),
            delta=float(np.deg2rad(delta_deg)),
            phi0=phi0,
            k_d=k_d,
            k_p=k_p,
        )


def lu_reference(p: LuParams, n_links: int, time_s: float):
    """Return ``(phi_ref, v_phi_ref, u_ref)`` at ``time_s``.

    phi_ref_i = phi0 + alpha sin(omega t + (i-1) delta), with its first and
    second time derivatives evaluated analytically.
    """
    if time_s < 0:
        raise ValueError("time_s must be non-negative")
    arg = p.omega * time_s + np.arange(n_links - 1) * p.delta
    s, c = np.sin(arg), np.cos(arg)
    phi_ref = p.phi0 + p.alpha * s
    v_ref = p.alpha * p.omega * c
    u_ref = -p.alpha * p.omega**2 * s
    return phi_ref, v_ref, u_ref


def lu_control(state: RobotState, p: LuParams, n_links: int, time_s: float) -> np.ndarray:
    """PD tracking law around the undulation reference.  Not saturated."""
    if state.n_joints != n_links - 1:
        raise ValueError("state dimension does not match n_links")
    phi_ref, v_ref, u_ref = lu_reference(p, n_links, time_s)
    return u_ref + p.k_d * (v_ref - state.v_phi) + p.k_p * (phi_ref - state.phi)
