"""Economic model predictive control for a simplified snake robot.

Modules: ``model`` (dynamics), ``gait_lu`` (lateral undulation baseline),
``feasibility`` (stopping law and shifted candidates), ``ocp`` (the MPC
program), ``solver`` (augmented Lagrangian / projected gradient),
``empc_loop`` (closed loop), ``perf_monitor`` (trajectory checks) and
``harness`` (scenarios, files, CLI).
"""

from .model import (
    ConstraintSet,
    CouplingMatrices,
    RobotParams,
    RobotState,
    build_coupling_matrices,
    propulsion_coefficient,
    step,
)
from .gait_lu import LuParams, lu_control
from .feasibility import certify, shifted_candidate, stopping_horizon, stopping_input
from .ocp import OcpSolution, OcpSpec, SolveStatus, evaluate_cost
from .solver import SolverConfig, project_inputs, solve
from .empc_loop import FaultSpec, LoopConfig, TraceRecord, run_empc, run_lu

__version__ = "0.1.0"

__all__ = [
    "ConstraintSet", "CouplingMatrices", "RobotParams", "RobotState",
    "build_coupling_matrices", "propulsion_coefficient", "step",
    "LuParams", "lu_control",
    "certify", "shifted_candidate", "stopping_horizon", "stopping_input",
    "OcpSolution", "OcpSpec", "SolveStatus", "evaluate_cost",
    "SolverConfig", "project_inputs", "solve",
    "FaultSpec", "LoopConfig", "TraceRecord", "run_empc", "run_lu",
]
