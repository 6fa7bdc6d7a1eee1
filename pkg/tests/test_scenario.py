import math

import numpy as np
import pytest

from metanav.core import validate_scenario
from metanav.metrics import density
from metanav.scenario import GeneratorSpec, InfeasibleSpecError, generate, table1_suite, table2_suite


def test_table1_scenario1_density():
    sc = generate(GeneratorSpec(20, 12, (30.0, 15.0), seed=0))
    assert validate_scenario(sc).ok
    assert len(sc.agents) == 20 and len(sc.obstacles) == 12
    assert density(sc) == pytest.approx(32 / 450)


def test_generation_is_deterministic():
    spec = GeneratorSpec(15, 8, (30.0, 15.0), seed=42, coalitions=3)
    assert generate(spec) == generate(spec)
    assert generate(spec) != generate(GeneratorSpec(15, 8, (30.0, 15.0), seed=43, coalitions=3))


def test_no_agents():
    sc = generate(GeneratorSpec(0, 3, (10.0, 10.0)))
    assert sc.agents == () and validate_scenario(sc).ok


def test_separations_respected():
    spec = GeneratorSpec(30, 15, (30.0, 15.0), seed=5)
    sc = generate(spec)
    sep = spec.separation
    assert sep == pytest.approx(0.02 * math.hypot(30, 15))
    for pts in (sc.initial_positions, sc.targets):
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1) + np.eye(len(pts)) * 1e9
        assert d.min() >= sep
        surf = np.linalg.norm(pts[:, None] - sc.centers[None], axis=-1) - sc.radii
        assert surf.min() >= sep
    c = np.linalg.norm(sc.centers[:, None] - sc.centers[None], axis=-1) + np.eye(len(sc.centers)) * 1e9
    assert c.min() >= 2 * spec.obstacle_radius + sep


def test_infeasible_spec():
    with pytest.raises(InfeasibleSpecError):
        generate(GeneratorSpec(5, 40, (6.0, 6.0), max_tries=2000))


def test_uniform_coalitions():
    sc = generate(GeneratorSpec(10, 0, (20.0, 20.0), coalitions=3))
    sizes = sorted(len(v) for v in sc.partition.coalitions().values())
    assert sizes == [3, 3, 4]


def test_table1_suite_params():
    s = table1_suite()
    assert [e.spec.n_agents for e in s] == [20, 30, 80, 100]
    assert (s[0].params.lambda2, s[0].params.lambda3) == (12.0, 0.001)
    assert (s[3].params.lambda2, s[3].params.lambda3) == (15.0, 0.0001)
    assert all(e.spec.coalitions == 1 for e in s)
    lam3 = [e.params.lambda3 for e in s]
    dens = [e.spec.density for e in s]
    assert dens == sorted(dens) and lam3 == sorted(lam3, reverse=True)


def test_table2_suite_params():
    s = table2_suite()
    assert [e.spec.coalitions for e in s] == [5, 10, 20, 50]
    assert all(e.params.lambda1 == 0.4 and e.params.beta == 10.0 for e in s)
    assert all((e.spec.n_agents, e.spec.n_obstacles, e.spec.area) == (100, 50, (40.0, 25.0)) for e in s)


def test_half_scale_keeps_density():
    full = table1_suite()
    half = table1_suite(scale=0.5)
    assert [e.spec.n_agents for e in half] == [10, 15, 40, 50]
    for f, h in zip(full, half):
        assert h.spec.density == pytest.approx(f.spec.density, rel=0.05)  # counts are rounded
    assert [e.spec.coalitions for e in table2_suite(scale=0.5)] == [5, 10, 20, 50]
