"""Experiment runner: scenario configs, closed-loop runs, metrics and files.

Config files are flat ``key = value`` text, one key per line, ``#`` starts a
comment.  Every key is optional; ``snake-empc simulate --print-defaults``
prints the full default file.

Outputs (in ``output_dir``):

* ``trace.csv``: one row per step t = 0..total_steps.  Row t holds the plant
  state x(t) and the input u(t) applied from it.  Columns, in order::

      step, time_s, phi_1..phi_n, theta, p_x, p_y, v_phi_1..v_phi_n,
      v_theta, v_t, v_n, u_1..u_n, cost, iterations, status, violation,
      warm_start

  Floats are written with 17 significant digits.  ``fault_compare`` writes
  one trace per variant under ``aware/`` and ``unaware/``.
* ``metrics.json``: velocity/energy metrics, stopping horizon, constraint
  violations, solver statistics and the velocity performance report.  No
  timestamps, so identical configs give identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .empc_loop import FaultSpec, FeasibilityBreach, LoopConfig, TraceRecord, run_empc, run_lu
from .feasibility import stopping_horizon
from .gait_lu import LuParams
from .model import ConstraintSet, RobotParams, RobotState, build_coupling_matrices, in_state_set
from .perf_monitor import check_acceleration_capability, perf_report
from .solver import InfeasibleWarmStart, SolverConfig, SolverFailure, StepRule

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BREACH = 3

SCENARIOS = ("lu", "empc", "fault_compare")
DEFAULT_PHI0 = (0.0, 0.01, -0.01, 0.01, 0.0, 0.0, 0.01, -0.01)


class ConfigError(ValueError):
    """Malformed or out-of-range scenario configuration."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one harness run needs.

    ``total_steps``, ``metrics_start``, ``metrics_end``, ``fault_step`` and
    ``v_tilde`` left as ``None`` take scenario defaults (300 steps and window
    100..300; for ``fault_compare`` 500 steps, window 300..500 and onset 200).
    """

    scenario: str = "empc"
    gamma: float = 0.0
    total_steps: Optional[int] = None
    seed: int = 0
    output_dir: str = "out"
    horizon: int = 20
    # model
    n_links: int = 9
    mass: float = 1.0
    link_length: float = 0.14
    c_n: float = 3.0
    c_t: float = 1.0
    lambda1: float = RobotParams.lambda1
    lambda2: float = RobotParams.lambda2
    ts: float = 0.05
    # constraints
    phi_max: float = 0.052
    v_phi_max: float = 0.109
    u_max: float = 0.2276
    # undulation gait
    alpha: float = 0.05
    omega_deg_s: float = 120.0
    delta_deg: float = 40.0
    phi0: float = 0.0
    k_d: float = 5.0
    k_p: float = 20.0
    # solver
    max_outer_iters: int = SolverConfig.max_outer_iters
    max_inner_iters: int = SolverConfig.max_inner_iters
    grad_tol: float = SolverConfig.grad_tol
    constraint_tol: float = SolverConfig.constraint_tol
    penalty_init: float = SolverConfig.penalty_init
    penalty_growth: float = SolverConfig.penalty_growth
    step_rule: str = StepRule.ARMIJO.value
    fallback_enabled: bool = SolverConfig.fallback_enabled
    armijo_c: float = SolverConfig.armijo_c
    backoff: float = SolverConfig.backoff
    stall_tol: float = SolverConfig.stall_tol
    stall_window: int = SolverConfig.stall_window
    # initial state
    initial_phi: Tuple[float, ...] = DEFAULT_PHI0
    initial_v_phi: Optional[Tuple[float, ...]] = None
    initial_v_t: float = 0.0
    initial_v_n: float = 0.0
    # metrics
    metrics_start: Optional[int] = None
    metrics_end: Optional[int] = None
    v_tilde: Optional[float] = None
    # fault (empc: only when fault_step is set; fault_compare runs both variants)
    fault_joint: int = 4
    fault_step: Optional[int] = None
    fault_aware: bool = True

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {', '.join(SCENARIOS)}")
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")
        if self.steps < 1:
            raise ConfigError("total_steps must be >= 1")
        start, end = self.window
        if not 0 <= start < end:
            raise ConfigError("metrics window needs 0 <= metrics_start < metrics_end")
        if end > self.steps:
            raise ConfigError(f"metrics_end {end} exceeds total_steps {self.steps}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        try:
            self.robot_params()
            self.constraints()
            self.lu_params()
            self.solver_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        nj = self.n_links - 1
        if len(self.initial_phi) != nj:
            raise ConfigError(f"initial_phi needs {nj} entries, got {len(self.initial_phi)}")
        if self.initial_v_phi is not None and len(self.initial_v_phi) != nj:
            raise ConfigError(f"initial_v_phi needs {nj} entries")
        if self.scenario != "lu":
            b = stopping_horizon(self.constraints(), self.ts)
            if self.horizon <= b:
                raise ConfigError(f"horizon {self.horizon} must exceed the stopping horizon {b}")
            if not in_state_set(self.initial_state(), self.constraints(), self.constraint_tol)[0]:
                raise ConfigError("initial state violates the state constraints")
        onset = self.fault_onset
        if onset is not None:
            if not 0 <= onset <= self.steps:
                raise ConfigError("fault_step must lie in 0..total_steps")
            if not 1 <= self.fault_joint <= nj:
                raise ConfigError(f"fault_joint must lie in 1..{nj}")

    @property
    def steps(self) -> int:
        if self.total_steps is not None:
            return self.total_steps
        return 500 if self.scenario == "fault_compare" else 300

    @property
    def window(self) -> Tuple[int, int]:
        default = (300, 500) if self.scenario == "fault_compare" else (100, 300)
        start = default[0] if self.metrics_start is None else self.metrics_start
        end = default[1] if self.metrics_end is None else self.metrics_end
        return start, end

    @property
    def benchmark_velocity(self) -> float:
        """``v_tilde`` or the scenario default (0.045 lu, 0.05 empc, 0.04 fault_compare)."""
        if self.v_tilde is not None:
            return self.v_tilde
        return {"lu": 0.045, "empc": 0.05, "fault_compare": 0.04}[self.scenario]

    @property
    def fault_onset(self) -> Optional[int]:
        if self.fault_step is None and self.scenario == "fault_compare":
            return 200
        return self.fault_step

    def robot_params(self) -> RobotParams:
        return RobotParams(
            n_links=self.n_links, mass=self.mass, link_length=self.link_length,
            c_n=self.c_n, c_t=self.c_t, lambda1=self.lambda1, lambda2=self.lambda2,
            ts=self.ts,
        )

    def constraints(self) -> ConstraintSet:
        return ConstraintSet(self.phi_max, self.v_phi_max, self.u_max)

    def lu_params(self) -> LuParams:
        return LuParams.from_degrees(
            self.alpha, self.omega_deg_s, self.delta_deg, self.phi0, self.k_d, self.k_p
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            max_outer_iters=self.max_outer_iters,
            max_inner_iters=self.max_inner_iters,
            grad_tol=self.grad_tol,
            constraint_tol=self.constraint_tol,
            penalty_init=self.penalty_init,
            penalty_growth=self.penalty_growth,
            step_rule=StepRule(self.step_rule),
            fallback_enabled=self.fallback_enabled,
            armijo_c=self.armijo_c,
            backoff=self.backoff,
            stall_tol=self.stall_tol,
            stall_window=self.stall_window,
        )

    def initial_state(self) -> RobotState:
        nj = self.n_links - 1
        v_phi = np.zeros(nj) if self.initial_v_phi is None else np.array(self.initial_v_phi)
        return RobotState(
            phi=np.array(self.initial_phi, dtype=float), theta=0.0, p_x=0.0, p_y=0.0,
            v_phi=v_phi, v_theta=0.0, v_t=self.initial_v_t, v_n=self.initial_v_n,
        )

    def fault(self, aware: bool) -> Optional[FaultSpec]:
        if self.fault_onset is None:
            return None
        return FaultSpec(self.fault_joint, self.fault_onset, aware)

    def loop_config(self, aware: Optional[bool] = None) -> LoopConfig:
        aware = self.fault_aware if aware is None else aware
        return LoopConfig(
            total_steps=self.steps, horizon=self.horizon, gamma=self.gamma,
            fault=self.fault(aware), solver=self.solver_config(),
        )


# --------------------------------------------------------------------------
# config text format

_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}


def _field_kind(name: str) -> str:
    t = str(_FIELDS[name].type)
    if "Tuple" in t:
        return "floats"
    for kind in ("bool", "int", "float"):
        if kind in t:
            return kind
    return "str"


def _parse_value(name: str, text: str):
    kind = _field_kind(name)
    optional = "Optional" in str(_FIELDS[name].type)
    if optional and text.lower() == "none":
        return None
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true/false, got {text!r}")
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "floats":
        parts = [p for p in text.replace("[", "").replace("]", "").split(",") if p.strip()]
        return tuple(float(p) for p in parts)
    return text


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def parse_config(text: str, source: str = "<string>", **overrides) -> ScenarioConfig:
    """Parse config text; ``overrides`` win over file values."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _parse_value(key, value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ScenarioConfig(**values)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def format_config(config: ScenarioConfig) -> str:
    lines = []
    for name in _FIELDS:
        lines.append(f"{name} = {_format_value(getattr(config, name))}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# metrics and serialization


def _v_t(trace) -> np.ndarray:
    return np.array([r.state.v_t for r in trace])


def compute_metrics(trace: Sequence[TraceRecord], window: Tuple[int, int]) -> Dict[str, float]:
    """Velocity and energy over steps ``start..end`` inclusive, divided by
    ``end - start``.

    With the default window that is 201 samples over 200, deliberately not
    a mean.  ``v_av_mean`` / ``E_mean`` are the ordinary means over the same
    samples.
    """
    start, end = window
    if not 0 <= start < end or end >= len(trace):
        raise ValueError(f"window {window} outside trace of {len(trace)} rows")
    rows = trace[start : end + 1]
    v = np.array([r.state.v_t for r in rows])
    e = np.array([float(np.dot(r.applied_input, r.applied_input)) for r in rows])
    span = end - start
    return {
        "v_av": float(v.sum() / span),
        "E": float(e.sum() / span),
        "v_av_mean": float(v.mean()),
        "E_mean": float(e.mean()),
    }


def trace_columns(n_joints: int) -> List[str]:
    j = range(1, n_joints + 1)
    return (
        ["step", "time_s"]
        + [f"phi_{i}" for i in j]
        + ["theta", "p_x", "p_y"]
        + [f"v_phi_{i}" for i in j]
        + ["v_theta", "v_t", "v_n"]
        + [f"u_{i}" for i in j]
        + ["cost", "iterations", "status", "violation", "warm_start"]
    )


def _num(x: float) -> str:
    return format(float(x), ".17g")


def write_trace(path, trace: Sequence[TraceRecord]) -> None:
    nj = trace[0].state.n_joints
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_columns(nj))
        for r in trace:
            s = r.state
            w.writerow(
                [r.step, _num(r.time_s)]
                + [_num(x) for x in s.phi]
                + [_num(s.theta), _num(s.p_x), _num(s.p_y)]
                + [_num(x) for x in s.v_phi]
                + [_num(s.v_theta), _num(s.v_t), _num(s.v_n)]
                + [_num(x) for x in r.applied_input]
                + [_num(r.cost), r.iterations, r.status, _num(r.violation), r.warm_start]
            )


def read_trace(path) -> Dict[str, np.ndarray]:
    """Load a trace file into column arrays (numeric columns as float)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for i, name in enumerate(header):
        col = [r[i] for r in body]
        if name in ("status", "warm_start"):
            out[name] = np.array(col)
        else:
            out[name] = np.array(col, dtype=float)
    return out


def _violation_summary(trace, tol: float) -> Dict:
    viol = np.array([r.violation for r in trace])
    over = np.nonzero(viol > tol)[0]
    worst = int(np.argmax(viol))
    return {
        "tolerance": tol,
        "count": int(over.size),
        "first_step": int(over[0]) if over.size else None,
        "worst": float(viol[worst]),
        "worst_step": worst,
    }


def _solver_summary(trace) -> Dict:
    statuses = [r.status for r in trace]
    return {
        "status_counts": {s: statuses.count(s) for s in sorted(set(statuses))},
        "mean_iterations": float(np.mean([r.iterations for r in trace])),
        "max_iterations": int(max(r.iterations for r in trace)),
    }


def trace_metrics(trace, config: ScenarioConfig) -> Dict:
    out = dict(compute_metrics(trace, config.window))
    out["constraint_violation"] = _violation_summary(trace, config.constraint_tol)
    out["solver"] = _solver_summary(trace)
    # monitored from the start of the metrics window, i.e. after the transient
    start = config.window[0]
    report = perf_report(trace[start:], config.benchmark_velocity, config.ts)
    if report.first_entry_step is not None:
        report.first_entry_step += start
    report.invariance_violations = [(k + start, v) for k, v in report.invariance_violations]
    out["performance"] = dict(report.to_dict(), monitored_from_step=start)
    return out


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


# --------------------------------------------------------------------------
# running


def _empc_job(config: ScenarioConfig, aware: Optional[bool]) -> List[TraceRecord]:
    params = config.robot_params()
    mats = build_coupling_matrices(params.n_links)
    c = config.constraints()
    loop = config.loop_config(aware)

    def progress(t, rec):
        if t % 50 == 0:
            log.info("step %d/%d  v_t=%.5f  status=%s", t, loop.total_steps, rec.state.v_t, rec.status)

    return run_empc(config.initial_state(), loop, params, mats, c, progress)


def _lu_job(config: ScenarioConfig) -> List[TraceRecord]:
    params = config.robot_params()
    mats = build_coupling_matrices(params.n_links)
    return run_lu(
        config.initial_state(), config.steps, config.lu_params(), params, mats,
        config.constraints(),
    )


def simulate(config: ScenarioConfig, parallel: bool = True) -> Dict[str, List[TraceRecord]]:
    """Run the closed loop(s) of a scenario; returns traces keyed by variant."""
    if config.scenario == "lu":
        return {"lu": _lu_job(config)}
    if config.scenario == "empc":
        return {"empc": _empc_job(config, None)}
    if parallel:
        with ProcessPoolExecutor(max_workers=2) as pool:
            aware = pool.submit(_empc_job, config, True)
            unaware = pool.submit(_empc_job, config, False)
            return {"aware": aware.result(), "unaware": unaware.result()}
    return {"aware": _empc_job(config, True), "unaware": _empc_job(config, False)}


def build_metrics(config: ScenarioConfig, traces: Dict[str, List[TraceRecord]]) -> Dict:
    c = config.constraints()
    out = {
        "scenario": config.scenario,
        "gamma": config.gamma,
        "total_steps": config.steps,
        "N_p": config.horizon,
        "b": stopping_horizon(c, config.ts),
        "window": list(config.window),
        "metric_divisor": config.window[1] - config.window[0],
    }
    if config.scenario == "fault_compare":
        out["fault"] = {"joint": config.fault_joint, "onset_step": config.fault_onset}
        out["aware"] = trace_metrics(traces["aware"], config)
        out["unaware"] = trace_metrics(traces["unaware"], config)
        out["aware_minus_unaware_v_av"] = out["aware"]["v_av"] - out["unaware"]["v_av"]
        return _json_safe(out)
    (trace,) = traces.values()
    out.update(trace_metrics(trace, config))
    if config.scenario == "lu":
        ok, deficit = check_acceleration_capability(trace, config.benchmark_velocity)
        out["acceleration_capability"] = {"ok": ok, "max_deficit": float(deficit.max())}
    elif config.fault_onset is not None:
        out["fault"] = {
            "joint": config.fault_joint,
            "onset_step": config.fault_onset,
            "predictor_aware": config.fault_aware,
        }
    return _json_safe(out)


def write_outputs(config: ScenarioConfig, traces, metrics) -> Path:
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.scenario == "fault_compare":
        for name, trace in traces.items():
            (out_dir / name).mkdir(exist_ok=True)
            write_trace(out_dir / name / "trace.csv", trace)
    else:
        (trace,) = traces.values()
        write_trace(out_dir / "trace.csv", trace)
    with open(out_dir / "metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


def run_scenario(config: ScenarioConfig, parallel: bool = True) -> int:
    """Run, write ``trace.csv`` and ``metrics.json``, return an exit code."""
    try:
        traces = simulate(config, parallel)
    except (FeasibilityBreach, InfeasibleWarmStart, SolverFailure) as exc:
        log.error("invariant breach: %s", exc)
        return EXIT_BREACH
    metrics = build_metrics(config, traces)
    write_outputs(config, traces, metrics)
    if config.scenario != "lu":
        for trace in traces.values():
            summary = _violation_summary(trace, config.constraint_tol)
            if summary["count"]:
                log.error(
                    "closed loop left the constraint set at step %d (violation %.3g)",
                    summary["first_step"], summary["worst"],
                )
                return EXIT_BREACH
    return EXIT_OK


# --------------------------------------------------------------------------
# command line


def _bool_arg(text: str) -> bool:
    try:
        return _parse_value("fault_aware", text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snake-empc", description="Snake robot economic MPC experiments."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", help="run one scenario and write trace.csv + metrics.json")
    sim.add_argument("--scenario", choices=SCENARIOS)
    sim.add_argument("--config", type=Path, help="key = value config file")
    sim.add_argument("--gamma", type=float)
    sim.add_argument("--steps", type=int, dest="total_steps")
    sim.add_argument("--out-dir", dest="output_dir")
    sim.add_argument("--fault-step", type=int)
    sim.add_argument("--fault-joint", type=int, help="1-based joint index")
    sim.add_argument("--fault-aware", type=_bool_arg, metavar="{true,false}")
    sim.add_argument("--sequential", action="store_true",
                     help="run fault_compare variants one after the other")
    sim.add_argument("--print-defaults", action="store_true",
                     help="print the default configuration and exit")
    sim.add_argument("-q", "--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.print_defaults:
        sys.stdout.write(format_config(ScenarioConfig()))
        return EXIT_OK
    overrides = {
        "scenario": args.scenario,
        "gamma": args.gamma,
        "total_steps": args.total_steps,
        "output_dir": args.output_dir,
        "fault_step": args.fault_step,
        "fault_joint": args.fault_joint,
        "fault_aware": args.fault_aware,
    }
    try:
        if args.config is not None:
            if not args.config.is_file():
                raise ConfigError(f"config file not found: {args.config}")
            config = parse_config(args.config.read_text(), str(args.config), **overrides)
        else:
            config = parse_config("", **overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code = run_scenario(config, parallel=not args.sequential)
    if code == EXIT_OK:
        metrics = json.loads((Path(config.output_dir) / "metrics.json").read_text())
        _print_summary(metrics)
    return code


def _print_summary(metrics: Dict) -> None:
    if metrics["scenario"] == "fault_compare":
        for name in ("aware", "unaware"):
            m = metrics[name]
            print(f"{name:8s} v_av={m['v_av']:.4f} m/s  E={m['E']:.4f}")
    else:
        print(f"v_av={metrics['v_av']:.4f} m/s  E={metrics['E']:.4f}  b={metrics['b']}")


if __name__ == "__main__":
    sys.exit(main())
