"""Random scenario generation and the total/partial-association suites."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import Agent, CoalitionPartition, Obstacle, PotentialParams, Scenario, Workspace


class InfeasibleSpecError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    n_agents: int
    n_obstacles: int
    area: tuple[float, float]
    min_separation: float | None = None  # default: 2% of the diagonal
    seed: int = 0
    coalitions: int = 1
    obstacle_radius: float = 1.0
    max_tries: int = 20000

    @property
    def workspace(self) -> Workspace:
        return Workspace(float(self.area[0]), float(self.area[1]))

    @property
    def separation(self) -> float:
        if self.min_separation is not None:
            return float(self.min_separation)
        return 0.02 * self.workspace.diagonal

    @property
    def density(self) -> float:
        return (self.n_agents + self.n_obstacles) / self.workspace.area

    def scaled(self, factor: float) -> "GeneratorSpec":
        """Same density with ``factor`` times the counts (area scaled alike)."""
        s = math.sqrt(factor)
        return replace(
            self,
            n_agents=max(1, round(self.n_agents * factor)),
            n_obstacles=max(0, round(self.n_obstacles * factor)),
            area=(self.area[0] * s, self.area[1] * s),
            coalitions=min(self.coalitions, max(1, round(self.n_agents * factor))),
        )


def _place(rng, n, lo, hi, ok, tries, what):
    out: list[np.ndarray] = []
    budget = tries
    while len(out) < n:
        if budget <= 0:
            raise InfeasibleSpecError(f"rejection budget exhausted placing {what} ({len(out)}/{n})")
        budget -= 1
        p = rng.uniform(lo, hi)
        if ok(p, out):
            out.append(p)
    return out


def generate(spec: GeneratorSpec, params: PotentialParams | None = None) -> Scenario:
    """Rejection-sample obstacles, targets and start points; deterministic in ``spec.seed``."""
    if spec.n_agents < 0 or spec.n_obstacles < 0:
        raise InfeasibleSpecError("counts must be non-negative")
    ws = spec.workspace
    sep = spec.separation
    rad = spec.obstacle_radius
    rng = np.random.default_rng(spec.seed)
    lo = np.array([sep, sep])
    hi = np.array([ws.width - sep, ws.height - sep])
    if np.any(hi <= lo):
        raise InfeasibleSpecError("workspace too small for the separation")

    def obstacle_ok(p, placed):
        if ws.wall_distance(p) < rad + sep:
            return False
        return all(np.linalg.norm(p - c) >= 2 * rad + sep for c in placed)

    centers = _place(rng, spec.n_obstacles, lo, hi, obstacle_ok, spec.max_tries, "obstacles")

    def free_point_ok(p, placed):
        if any(np.linalg.norm(p - c) < rad + sep for c in centers):
            return False
        return all(np.linalg.norm(p - q) >= sep for q in placed)

    targets = _place(rng, spec.n_agents, lo, hi, free_point_ok, spec.max_tries, "targets")
    starts = _place(rng, spec.n_agents, lo, hi, free_point_ok, spec.max_tries, "initial positions")

    ids = list(range(spec.n_agents))
    partition = CoalitionPartition.uniform(ids, max(1, spec.coalitions))
    agents = tuple(
        Agent(i, tuple(starts[i]), tuple(targets[i]), partition.assignment[i]) for i in ids
    )
    obstacles = tuple(Obstacle(j, tuple(c), rad) for j, c in enumerate(centers))
    return Scenario(ws, agents, obstacles, params or PotentialParams())


# Table-shaped suites: beta, lambda1 shared; lambda2/lambda3 per column.
_BETA = 10.0
_LAMBDA1 = 0.4
_LAMBDA2 = (12.0, 13.0, 14.0, 15.0)
_LAMBDA3 = (0.001, 0.0005, 0.0002, 0.0001)
_TABLE1 = ((20, 12, (30.0, 15.0)), (30, 21, (30.0, 15.0)), (80, 40, (40.0, 25.0)), (100, 50, (40.0, 25.0)))
_TABLE2_COALITIONS = (5, 10, 20, 50)


@dataclass(frozen=True)
class SuiteEntry:
    label: str
    spec: GeneratorSpec
    params: PotentialParams


def _params(col: int, gamma: float) -> PotentialParams:
    return PotentialParams(
        lambda1=_LAMBDA1, lambda2=_LAMBDA2[col], lambda3=_LAMBDA3[col], alpha=2.0, beta=_BETA, gamma=gamma
    )


def table1_suite(seed: int = 0, scale: float = 1.0, gamma: float = 0.02) -> list[SuiteEntry]:
    """Total associations: four scenarios of increasing density."""
    out = []
    for col, (n_a, n_o, area) in enumerate(_TABLE1):
        spec = GeneratorSpec(n_a, n_o, area, seed=seed, coalitions=1)
        if scale != 1.0:
            spec = spec.scaled(scale)
        out.append(SuiteEntry(f"{spec.n_agents}a/{spec.n_obstacles}o", spec, _params(col, gamma)))
    return out


def table2_suite(seed: int = 0, scale: float = 1.0, gamma: float = 0.02) -> list[SuiteEntry]:
    """Partial associations: one swarm, uniformly split into 5/10/20/50 coalitions."""
    out = []
    for col, n_c in enumerate(_TABLE2_COALITIONS):
        spec = GeneratorSpec(100, 50, (40.0, 25.0), seed=seed, coalitions=n_c)
        if scale != 1.0:
            spec = replace(spec.scaled(scale), coalitions=n_c)
        out.append(SuiteEntry(f"{n_c} coalitions", spec, _params(col, gamma)))
    return out
