"""Scenario domain types, validation and (de)serialization."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

import tomli_w


def _vec(p) -> tuple[float, float]:
    x, y = p
    return (float(x), float(y))


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Workspace:
    """Axis-aligned rectangle ``[0, width] x [0, height]``."""

    width: float
    height: float

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def contains(self, p, strict: bool = True) -> bool:
        x, y = p
        if strict:
            return 0.0 < x < self.width and 0.0 < y < self.height
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height

    def wall_distance(self, p) -> float:
        x, y = p
        return min(x, self.width - x, y, self.height - y)


@dataclass(frozen=True)
class Agent:
    id: int
    q0: tuple[float, float]
    qt: tuple[float, float]
    coalition: int = 0

    def __post_init__(self):
        object.__setattr__(self, "q0", _vec(self.q0))
        object.__setattr__(self, "qt", _vec(self.qt))


@dataclass(frozen=True)
class Obstacle:
    id: int
    center: tuple[float, float]
    radius: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True)
class PotentialParams:
    lambda1: float = 0.4
    lambda2: float = 12.0
    lambda3: float = 0.001
    alpha: float = 2.0
    beta: float = 10.0
    gamma: float = 0.02

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.lambda1 > 0:
            raise ValueError("lambda1 must be > 0")
        if not self.lambda2 > 0:
            raise ValueError("lambda2 must be > 0")
        if not self.lambda3 >= 0:
            raise ValueError("lambda3 must be >= 0")
        if not self.alpha > 1:
            raise ValueError("alpha must be > 1")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")

    def replace(self, **changes) -> "PotentialParams":
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return PotentialParams(**values)


@dataclass(frozen=True)
class CoalitionPartition:
    """Assignment of every agent to exactly one coalition."""

    assignment: Mapping[int, int]

    def __post_init__(self):
        object.__setattr__(self, "assignment", dict(self.assignment))

    @classmethod
    def total(cls, agent_ids: Iterable[int]) -> "CoalitionPartition":
        return cls({i: 0 for i in agent_ids})

    @classmethod
    def singletons(cls, agent_ids: Iterable[int]) -> "CoalitionPartition":
        return cls({i: n for n, i in enumerate(agent_ids)})

    @classmethod
    def uniform(cls, agent_ids: Iterable[int], n_coalitions: int) -> "CoalitionPartition":
        """Round-robin partition into ``n_coalitions`` groups of near-equal size."""
        if n_coalitions < 1:
            raise ValueError("need at least one coalition")
        return cls({i: n % n_coalitions for n, i in enumerate(agent_ids)})

    def allies(self, agent_id: int) -> frozenset[int]:
        c = self.assignment[agent_id]
        return frozenset(k for k, ck in self.assignment.items() if ck == c and k != agent_id)

    def coalitions(self) -> dict[int, list[int]]:
        groups: dict[int, list[int]] = {}
        for k, c in sorted(self.assignment.items()):
            groups.setdefault(c, []).append(k)
        return groups


@dataclass(frozen=True)
class Scenario:
    workspace: Workspace
    agents: tuple[Agent, ...] = ()
    obstacles: tuple[Obstacle, ...] = ()
    params: PotentialParams = field(default_factory=PotentialParams)

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @property
    def agent_ids(self) -> list[int]:
        return [a.id for a in self.agents]

    @property
    def partition(self) -> CoalitionPartition:
        return CoalitionPartition({a.id: a.coalition for a in self.agents})

    def with_partition(self, partition: CoalitionPartition) -> "Scenario":
        agents = tuple(
            Agent(a.id, a.q0, a.qt, partition.assignment[a.id]) for a in self.agents
        )
        return Scenario(self.workspace, agents, self.obstacles, self.params)

    def with_params(self, params: PotentialParams) -> "Scenario":
        return Scenario(self.workspace, self.agents, self.obstacles, params)

    def translated(self, dx: float, dy: float) -> "Scenario":
        """Rigid shift of every position.  The workspace origin moves with it,
        so callers compare in the shifted frame; see ``validate_scenario(origin=)``."""
        agents = tuple(
            Agent(a.id, (a.q0[0] + dx, a.q0[1] + dy), (a.qt[0] + dx, a.qt[1] + dy), a.coalition)
            for a in self.agents
        )
        obstacles = tuple(
            Obstacle(o.id, (o.center[0] + dx, o.center[1] + dy), o.radius) for o in self.obstacles
        )
        return Scenario(self.workspace, agents, obstacles, self.params)

    @cached_property
    def initial_positions(self) -> np.ndarray:
        return _readonly(np.array([a.q0 for a in self.agents], dtype=float).reshape(-1, 2))

    @cached_property
    def targets(self) -> np.ndarray:
        return _readonly(np.array([a.qt for a in self.agents], dtype=float).reshape(-1, 2))

    @cached_property
    def centers(self) -> np.ndarray:
        return _readonly(np.array([o.center for o in self.obstacles], dtype=float).reshape(-1, 2))

    @cached_property
    def radii(self) -> np.ndarray:
        return _readonly(np.array([o.radius for o in self.obstacles], dtype=float))

    def index_of(self, agent_id: int) -> int:
        for n, a in enumerate(self.agents):
            if a.id == agent_id:
                return n
        raise KeyError(agent_id)


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_scenario(
    scenario: Scenario,
    partition: CoalitionPartition | None = None,
    origin: tuple[float, float] = (0.0, 0.0),
) -> ValidationResult:
    """Collect every structural problem with ``scenario``; never raises.

    ``origin`` is the lower-left corner of the workspace, for scenarios that
    were rigidly translated away from the canonical frame.
    """
    out: list[str] = []
    ws = scenario.workspace
    ox, oy = origin

    def inside(p) -> bool:
        return ws.contains((p[0] - ox, p[1] - oy))

    if not (ws.width > 0 and ws.height > 0):
        out.append(f"workspace must have positive size, got {ws.width}x{ws.height}")

    seen: set[int] = set()
    for a in scenario.agents:
        if a.id in seen:
            out.append(f"duplicate agent id {a.id}")
        seen.add(a.id)
        if not all(math.isfinite(v) for v in (*a.q0, *a.qt)):
            out.append(f"agent {a.id}: non-finite position")
            continue
        if a.q0 == a.qt:
            out.append(f"agent {a.id}: degenerate agent (q0 == qt)")
        if not inside(a.q0):
            out.append(f"agent {a.id}: initial position outside workspace")
        if not inside(a.qt):
            out.append(f"agent {a.id}: target outside workspace")
        for o in scenario.obstacles:
            if math.dist(a.qt, o.center) - o.radius <= 0:
                out.append(f"agent {a.id}: target inside obstacle {o.id}")
            if math.dist(a.q0, o.center) - o.radius <= 0:
                out.append(f"agent {a.id}: initial position inside obstacle {o.id}")

    starts: dict[tuple[float, float], int] = {}
    goals: dict[tuple[float, float], int] = {}
    for a in scenario.agents:
        if a.q0 in starts and starts[a.q0] != a.id:
            out.append(f"agents {starts[a.q0]} and {a.id} share an initial position")
        starts.setdefault(a.q0, a.id)
        if a.qt in goals and goals[a.qt] != a.id:
            out.append(f"agents {goals[a.qt]} and {a.id} share a target")
        goals.setdefault(a.qt, a.id)

    seen_obs: set[int] = set()
    for o in scenario.obstacles:
        if o.id in seen_obs:
            out.append(f"duplicate obstacle id {o.id}")
        seen_obs.add(o.id)
        if not o.radius >= 0:
            out.append(f"obstacle {o.id}: negative radius")
        if not inside(o.center):
            out.append(f"obstacle {o.id}: center outside workspace")

    if partition is not None:
        ids = set(scenario.agent_ids)
        keys = set(partition.assignment)
        if ids - keys:
            out.append(f"coalition map is not a partition: unassigned agents {sorted(ids - keys)}")
        if keys - ids:
            out.append(f"coalition map is not a partition: unknown agents {sorted(keys - ids)}")
    return ValidationResult(tuple(out))


# -- serialization ---------------------------------------------------------


def scenario_to_dict(scenario: Scenario) -> dict:
    p = scenario.params
    return {
        "workspace": {"width": scenario.workspace.width, "height": scenario.workspace.height},
        "agents": [
            {"id": a.id, "q0": list(a.q0), "qt": list(a.qt), "coalition": a.coalition}
            for a in scenario.agents
        ],
        "obstacles": [
            {"id": o.id, "center": list(o.center), "radius": o.radius} for o in scenario.obstacles
        ],
        "params": {
            "lambda1": p.lambda1,
            "lambda2": p.lambda2,
            "lambda3": p.lambda3,
            "alpha": p.alpha,
            "beta": p.beta,
            "gamma": p.gamma,
        },
    }


class ScenarioFormatError(ValueError):
    pass


def scenario_from_dict(data: Mapping) -> Scenario:
    try:
        ws = data["workspace"]
        workspace = Workspace(float(ws["width"]), float(ws["height"]))
        agents = tuple(
            Agent(int(a["id"]), a["q0"], a["qt"], int(a.get("coalition", 0)))
            for a in data.get("agents", [])
        )
        obstacles = tuple(
            Obstacle(int(o["id"]), o["center"], float(o.get("radius", 0.0)))
            for o in data.get("obstacles", [])
        )
        params = PotentialParams(**data["params"]) if "params" in data else PotentialParams()
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"malformed scenario: {exc!r}") from exc
    return Scenario(workspace, agents, obstacles, params)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if path.suffix.lower() == ".toml":
        with path.open("rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ScenarioFormatError(str(exc)) from exc
    else:
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioFormatError(str(exc)) from exc
    return scenario_from_dict(data)


def dump_scenario(scenario: Scenario, fmt: str = "json") -> str:
    data = scenario_to_dict(scenario)
    if fmt == "toml":
        return tomli_w.dumps(data)
    return json.dumps(data, indent=2)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    path = Path(path)
    fmt = "toml" if path.suffix.lower() == ".toml" else "json"
    path.write_text(dump_scenario(scenario, fmt))
