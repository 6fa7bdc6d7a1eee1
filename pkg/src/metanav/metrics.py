"""Convergence factor, density, potential traces and run summaries."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import Scenario
from .coordinator import RunResult, Trajectory


def density(scenario: Scenario) -> float:
    """Objects (agents and obstacles) per unit workspace area."""
    n = len(scenario.agents) + len(scenario.obstacles)
    if n == 0:
        return 0.0
    return n / scenario.workspace.area


def kappa(mnf_times: Mapping[int, int | None], dnf_times: Mapping[int, int | None]) -> tuple[float | None, str | None]:
    """Ratio of worst-case MNF to worst-case DNF convergence steps.

    Returns ``(kappa, None)`` or ``(None, reason)`` when either run left an
    agent unconverged.
    """
    for name, times in (("MNF", mnf_times), ("DNF", dnf_times)):
        if not times:
            return None, f"{name} run has no agents"
        missing = sorted(k for k, v in times.items() if v is None)
        if missing:
            return None, f"{name} run incomplete: {len(missing)} of {len(times)} agents unconverged"
    m = max(mnf_times.values())
    d = max(dnf_times.values())
    if d <= 0:
        return None, "DNF run converged at step 0"
    return m / d, None


def potential_trace(traj: Trajectory) -> list[tuple[int, float]]:
    return [(s.step, s.potential) for s in traj.samples]


@dataclass
class RunMetrics:
    per_agent_time: dict[int, int | None]
    density: float
    min_clearance: float
    completed: float
    kappa: float | None = None
    kappa_reason: str | None = None
    min_agent_clearance: float | None = None
    alpha_dagger: dict[int, float] = field(default_factory=dict)
    final_distance: dict[int, float] = field(default_factory=dict)
    mode: str = "mnf"

    @property
    def max_time(self) -> int | None:
        vals = [v for v in self.per_agent_time.values() if v is not None]
        return max(vals) if vals else None

    @property
    def scenario_alpha(self) -> float | None:
        """Scenario-level confinement factor: the largest per-agent value."""
        return max(self.alpha_dagger.values()) if self.alpha_dagger else None

    def to_dict(self) -> dict:
        a = list(self.alpha_dagger.values())
        return {
            "mode": self.mode,
            "completed": self.completed,
            "density": self.density,
            "min_clearance": self.min_clearance,
            "min_agent_clearance": self.min_agent_clearance,
            "max_time": self.max_time,
            "kappa": self.kappa,
            "kappa_reason": self.kappa_reason,
            "alpha_dagger_max": max(a) if a else None,
            "alpha_dagger_mean": float(np.mean(a)) if a else None,
            "per_agent_time": {str(k): v for k, v in self.per_agent_time.items()},
            "alpha_dagger": {str(k): v for k, v in self.alpha_dagger.items()},
            "final_distance": {str(k): v for k, v in self.final_distance.items()},
        }


def run_metrics(result: RunResult, baseline: RunResult | None = None) -> RunMetrics:
    """Summarize one run; with ``baseline`` (a DNF run) also fill in kappa."""
    k = reason = None
    if baseline is not None:
        k, reason = kappa(result.convergence_steps, baseline.convergence_steps)
    return RunMetrics(
        per_agent_time=dict(result.convergence_steps),
        density=density(result.scenario),
        min_clearance=result.min_obstacle_clearance,
        completed=result.completed,
        kappa=k,
        kappa_reason=reason,
        min_agent_clearance=result.min_agent_clearance,
        alpha_dagger=dict(result.alpha_dagger),
        final_distance=dict(result.final_distance),
        mode=result.config.mode.value,
    )
