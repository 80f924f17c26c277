"""Trajectory post-processors for the velocity performance claims.

These are empirical checks over recorded closed-loop traces:

* invariance of ``{v_t >= v_tilde}`` once entered,
* the largest observed one-step deceleration ``epsilon``,
* whether a baseline trace closes the velocity deficit, with the deficit
  allowed to grow by at most ``slack`` per step (a stand-in for an
  unidentified class-KL bound),
* convergence, reported as: the set is entered and never left.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np


def _v_t(trace) -> np.ndarray:
    if len(trace) and hasattr(trace[0], "state"):
        return np.array([r.state.v_t for r in trace], dtype=float)
    return np.asarray(trace, dtype=float)


def _ts(trace, ts: Optional[float]) -> float:
    if ts is not None:
        return ts
    if len(trace) > 1 and hasattr(trace[0], "time_s"):
        return trace[1].time_s - trace[0].time_s
    raise ValueError("sampling time needed for plain velocity arrays")


@dataclass
class PerfReport:
    v_tilde: float
    first_entry_step: Optional[int]
    invariance_violations: List[Tuple[int, float]] = field(default_factory=list)
    epsilon_empirical: float = float("nan")
    converged: bool = False

    def to_dict(self):
        return {
            "v_tilde": self.v_tilde,
            "first_entry_step": self.first_entry_step,
            "invariance_violations": [[int(k), float(v)] for k, v in self.invariance_violations],
            "epsilon_empirical": self.epsilon_empirical,
            "converged": self.converged,
        }


def check_invariance(trace, v_tilde: float):
    """Return ``(first_entry_step, violations)`` for the set ``v_t >= v_tilde``.

    ``violations`` lists ``(step, v_t)`` for every step after the first
    entry at which the velocity is below the benchmark again.
    """
    v = _v_t(trace)
    if v.size == 0:
        raise ValueError("trace is empty")
    inside = np.nonzero(v >= v_tilde)[0]
    if inside.size == 0:
        return None, []
    first = int(inside[0])
    bad = np.nonzero(v[first:] < v_tilde)[0] + first
    return first, [(int(k), float(v[k])) for k in bad]


def estimate_epsilon(traces: Sequence, ts: Optional[float] = None) -> float:
    """Largest observed ``(v_t(t) - v_t(t+1)) / ts`` over all traces.

    Negative when every observed step accelerates.
    """
    if len(traces) == 0:
        raise ValueError("no traces given")
    best = -np.inf
    for tr in traces:
        v = _v_t(tr)
        if v.size < 2:
            continue
        dt = _ts(tr, ts)
        best = max(best, float(np.max((v[:-1] - v[1:]) / dt)))
    return best


def check_acceleration_capability(lu_trace, v_tilde: float, slack: float = 1e-4):
    """Does the baseline trace close the deficit ``v_tilde - v_t``?

    True when the deficit reaches zero and, before that, never grows by more
    than ``slack`` between consecutive steps.  Returns ``(ok, deficit)`` where
    ``deficit`` is ``max(0, v_tilde - v_t)`` per step.
    """
    v = _v_t(lu_trace)
    deficit = np.maximum(0.0, v_tilde - v)
    reached = np.nonzero(deficit == 0.0)[0]
    if reached.size == 0:
        return False, deficit
    head = deficit[: reached[0] + 1]
    monotone = bool(np.all(np.diff(head) <= slack))
    return monotone, deficit


def perf_report(trace, v_tilde: float, ts: Optional[float] = None) -> PerfReport:
    first, violations = check_invariance(trace, v_tilde)
    eps = estimate_epsilon([trace], ts) if len(trace) > 1 else float("nan")
    return PerfReport(
        v_tilde=v_tilde,
        first_entry_step=first,
        invariance_violations=violations,
        epsilon_empirical=eps,
        converged=first is not None and not violations,
    )
