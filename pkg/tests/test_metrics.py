import pytest
from hypothesis import given
from hypothesis import strategies as st

from metanav.coordinator import Sample, Trajectory, run
from metanav.metrics import density, kappa, potential_trace, run_metrics
from metanav.potentials import Phase
from metanav.scenario import GeneratorSpec, generate

from conftest import make_scenario


def test_kappa_examples():
    t = {0: 10, 1: 40, 2: 25}
    assert kappa(t, t) == (1.0, None)
    assert kappa({0: 50, 1: 3}, {0: 100, 1: 7}) == (0.5, None)


def test_kappa_incomplete():
    k, reason = kappa({0: 50}, {0: None, 1: 20})
    assert k is None and "DNF" in reason and "1 of 2" in reason
    k, reason = kappa({0: None}, {0: 20})
    assert k is None and "MNF" in reason
    assert kappa({}, {0: 1})[0] is None


@given(st.lists(st.integers(1, 10_000), min_size=1, max_size=10),
       st.lists(st.integers(1, 10_000), min_size=1, max_size=10),
       st.integers(1, 50))
def test_kappa_scale_invariant(m, d, c):
    a = dict(enumerate(m))
    b = dict(enumerate(d))
    k1, _ = kappa(a, b)
    k2, _ = kappa({i: v * c for i, v in a.items()}, {i: v * c for i, v in b.items()})
    assert k1 > 0 and k1 == pytest.approx(k2)


def test_density_examples():
    assert density(generate(GeneratorSpec(20, 12, (30.0, 15.0)))) == pytest.approx(32 / 450)
    assert density(generate(GeneratorSpec(100, 50, (40.0, 25.0)))) == pytest.approx(0.15)
    assert density(make_scenario([])) == 0.0


def test_density_rigid_motion_and_area():
    sc = generate(GeneratorSpec(5, 3, (20.0, 12.0), seed=1))
    assert density(sc.translated(3.0, -7.0)) == density(sc)
    big = make_scenario([((1, 1), (2, 2))], size=(40.0, 12.0))
    small = make_scenario([((1, 1), (2, 2))], size=(20.0, 12.0))
    assert density(big) == pytest.approx(density(small) / 2)


def test_potential_trace_shapes():
    tr = Trajectory(3, [Sample(0, 1.0, 1.0, 5.0, Phase.PLANNING), Sample(1, 1.0, 1.0, 5.0, Phase.PLANNING)])
    assert potential_trace(tr) == [(0, 5.0), (1, 5.0)]


def test_run_metrics_and_trace():
    sc = make_scenario([((2.0, 2.0), (14.0, 8.0)), ((3.0, 9.0), (16.0, 3.0))], [((9.0, 6.0), 1.0)])
    res = run(sc)
    m = run_metrics(res)
    assert m.completed == 1.0 and m.kappa is None
    assert m.max_time == max(res.convergence_steps.values())
    assert m.scenario_alpha == max(res.alpha_dagger.values())
    d = m.to_dict()
    assert set(d["alpha_dagger"]) == {"0", "1"}
    for tr in res.trajectories:
        trace = potential_trace(tr)
        assert trace[-1][1] < 1e-9
        kern = [v for (s, v), p in zip(trace, tr.phases()) if p is Phase.KERNEL]
        assert all(b < a for a, b in zip(kern, kern[1:]))
