import numpy as np
import pytest

from metanav.core import Agent, Obstacle, PotentialParams, Scenario, Workspace


def make_scenario(agents, obstacles=(), size=(20.0, 12.0), params=None):
    """agents: iterable of (q0, qt[, coalition]); obstacles: (center, radius)."""
    ags = []
    for i, a in enumerate(agents):
        coalition = a[2] if len(a) > 2 else 0
        ags.append(Agent(i, a[0], a[1], coalition))
    obs = [Obstacle(j, c, r) for j, (c, r) in enumerate(obstacles)]
    return Scenario(Workspace(*size), tuple(ags), tuple(obs), params or PotentialParams())


@pytest.fixture
def two_agents():
    return make_scenario(
        [((2.0, 2.0), (15.0, 9.0)), ((3.0, 9.0), (16.0, 3.0))],
        [((9.0, 6.0), 1.0)],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting ----------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
