import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metanav.core import Obstacle, PotentialParams, Workspace
from metanav.potentials import (
    FieldContext,
    Phase,
    PhasePredicate,
    SingularityError,
    dnf_baseline,
    dnf_kernel,
    grad_dnf_baseline,
    grad_mnf,
    grad_omega,
    grad_psi,
    limit_grad_psi,
    mnf,
    omega,
    psi,
)
from metanav.scenario import GeneratorSpec, generate

from conftest import make_scenario


def ctx_for(target, obstacles=(), params=None, workspace=None, peers=None, allies=()):
    peers = peers or {}
    return FieldContext(
        subject=0,
        target=target,
        peer_positions={k: v[0] for k, v in peers.items()},
        peer_targets={k: v[1] for k, v in peers.items()},
        obstacles=tuple(Obstacle(j, c, r) for j, (c, r) in enumerate(obstacles)),
        coalition=frozenset(allies),
        params=params or PotentialParams(),
        workspace=workspace,
    )


def naive_psi(q, qt, objects, l1, l2, l3, alpha, allies_dist2):
    """Loop-based reference for the confined function."""
    d = math.dist(q, qt)
    rep = sum(d ** (1 / alpha) / math.dist(q, o) ** 2 for o in objects)
    return l1 * d * d + (l2 / alpha) * rep + l3 * d * d * allies_dist2


def fd_grad(f, q, h):
    q = np.asarray(q, dtype=float)
    out = np.zeros(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        out[i] = (f(q + e) - f(q - e)) / (2 * h)
    return out


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def test_psi_hand_example():
    ctx = ctx_for((0, 0), [((2, 0), 0.0)], PotentialParams(lambda1=1, lambda2=1, lambda3=0, alpha=2))
    assert psi((1, 0), ctx) == pytest.approx(1.5, rel=1e-15)


def test_psi_hand_example_symbolic():
    sp = pytest.importorskip("sympy")
    x, y = sp.symbols("x y", real=True)
    l1, l2, a = 1, 1, 2
    d = sp.sqrt(x**2 + y**2)
    expr = l1 * d**2 + sp.Rational(l2, a) * d ** sp.Rational(1, a) / ((x - 2) ** 2 + y**2)
    assert sp.nsimplify(expr.subs({x: 1, y: 0})) == sp.Rational(3, 2)
    # symbolic gradient at an off-axis point against the analytic one
    ctx = ctx_for((0, 0), [((2, 0), 0.0)], PotentialParams(lambda1=1, lambda2=1, lambda3=0, alpha=2))
    pt = {x: sp.Rational(3, 10), y: sp.Rational(7, 10)}
    sym = np.array([float(sp.diff(expr, v).subs(pt)) for v in (x, y)])
    assert np.allclose(grad_psi((0.3, 0.7), ctx), sym, rtol=1e-12)


def test_psi_zero_at_target(two_agents):
    for aid in (0, 1):
        ctx = FieldContext.from_scenario(two_agents, aid)
        qt = two_agents.agents[aid].qt
        assert psi(qt, ctx) == 0.0
        assert np.all(grad_psi(qt, ctx) == 0.0)


def test_psi_matches_naive_reference(two_agents):
    ctx = FieldContext.from_scenario(two_agents, 0)
    p = two_agents.params
    ws = two_agents.workspace
    for q in [(4.0, 3.0), (10.5, 7.2), (1.0, 11.0)]:
        objs = [two_agents.agents[1].q0, (9.0, 6.0), (0, q[1]), (ws.width, q[1]), (q[0], 0), (q[0], ws.height)]
        allies = math.dist(two_agents.agents[1].q0, two_agents.agents[1].qt) ** 2
        ref = naive_psi(q, two_agents.agents[0].qt, objs, p.lambda1, p.lambda2, p.lambda3, p.alpha, allies)
        assert psi(q, ctx) == pytest.approx(ref, rel=1e-12)


def test_reduces_to_quadratic_without_objects():
    ctx = ctx_for((1, 2), params=PotentialParams(lambda1=0.7, lambda3=0))
    assert psi((4, 6), ctx) == pytest.approx(0.7 * 25)
    assert np.allclose(grad_psi((4, 6), ctx), [2 * 0.7 * 3, 2 * 0.7 * 4])


def test_associative_term_vanishes_when_allies_home():
    peers = {1: ((5.0, 5.0), (5.0, 5.0))}
    ctx = ctx_for((1, 2), params=PotentialParams(lambda3=0.5), peers=peers, allies={1})
    assert ctx.association == 0.0
    no_assoc = ctx_for((1, 2), params=PotentialParams(lambda3=0.0), peers=peers)
    assert psi((3, 3), ctx) == psi((3, 3), no_assoc)


def test_associative_monotonicity():
    near = ctx_for((0, 0), peers={1: ((5.0, 5.0), (6.0, 5.0))}, allies={1})
    far = ctx_for((0, 0), peers={1: ((5.0, 5.0), (9.0, 5.0))}, allies={1})
    # same peer position (same repulsion), ally farther from its target
    assert psi((2, 1), far) > psi((2, 1), near)


def test_gradient_zero_at_target_without_repulsion():
    ctx = ctx_for((3, 3), params=PotentialParams(lambda2=1e-9))
    assert np.allclose(grad_psi((3, 3), ctx), 0.0)


def test_singularity():
    ctx = ctx_for((0, 0), [((2, 0), 0.0)])
    with pytest.raises(SingularityError) as exc:
        psi((2, 0), ctx)
    assert exc.value.point == (2.0, 0.0)
    with pytest.raises(SingularityError):
        grad_psi((2 + 1e-12, 0), ctx)


def sample_free_points(sc, n, rng, margin=0.3):
    ws = sc.workspace
    pts = []
    objs = np.vstack([sc.initial_positions, sc.centers])
    while len(pts) < n:
        q = rng.uniform([margin, margin], [ws.width - margin, ws.height - margin])
        if np.min(np.linalg.norm(objs - q, axis=1)) > margin:
            pts.append(q)
    return pts


@pytest.mark.parametrize("alpha", [2.0, 7.5])
def test_grad_psi_finite_differences(alpha, rng):
    sc = generate(GeneratorSpec(6, 5, (20.0, 12.0), seed=1, coalitions=2))
    ctx = FieldContext.from_scenario(sc, 0, alpha=alpha)
    h = 1e-6 * math.hypot(20, 12)
    worst = 0.0
    for q in sample_free_points(sc, 1000, rng):
        fd = fd_grad(lambda z: psi(z, ctx), q, h)
        worst = max(worst, rel_err(grad_psi(q, ctx), fd))
    assert worst < 1e-5


def test_limit_gradient_large_alpha(rng):
    sc = generate(GeneratorSpec(4, 4, (20.0, 12.0), seed=2, coalitions=1))
    ctx = FieldContext.from_scenario(sc, 0, alpha=1e6)
    qt = np.array(sc.agents[0].qt)
    checked = 0
    for q in sample_free_points(sc, 200, rng, margin=1.0):
        if np.linalg.norm(q - qt) < 2.0:
            continue
        assert rel_err(grad_psi(q, ctx), limit_grad_psi(q, ctx)) < 1e-3
        checked += 1
        if checked == 20:
            break
    assert checked == 20


def test_omega_examples():
    assert omega((1, 1), (1, 1), 10) == 0
    assert omega((2, 0), (0, 0), 10) == 20
    assert omega((3, 4), (0, 0), 3.0) == pytest.approx(3 * omega((3, 4), (0, 0), 1.0))
    assert np.allclose(grad_omega((3, 4), (0, 0), 1.0), [0.6, 0.8])
    assert np.all(grad_omega((1, 1), (1, 1), 10) == 0)
    with pytest.raises(ValueError):
        omega((0, 0), (1, 1), 0)


def test_grad_omega_constant_norm_and_fd(rng):
    qt = np.array([4.0, 5.0])
    for _ in range(1000):
        q = qt + rng.normal(size=2) * 3
        g = grad_omega(q, qt, 10.0)
        assert np.linalg.norm(g) == pytest.approx(10.0)
        assert rel_err(g, fd_grad(lambda z: omega(z, qt, 10.0), q, 1e-6)) < 1e-5


def test_mnf_branches():
    ctx = ctx_for((0, 0), [((6, 0), 0.0)])
    pred = PhasePredicate((0, 0), 2.0)
    v, ph = mnf((4, 0), ctx, pred)
    assert ph is Phase.PLANNING and v == psi((4, 0), ctx)
    v, ph = mnf((1, 0), ctx, pred)
    assert ph is Phase.KERNEL and v == pytest.approx(10.0 * 1.0)
    assert mnf((2, 0), ctx, pred)[1] is Phase.PLANNING  # boundary belongs to planning
    assert mnf((0, 2 - 1e-12), ctx, pred)[1] is Phase.KERNEL
    g, ph = grad_mnf((1, 0), ctx, pred)
    assert ph is Phase.KERNEL and np.allclose(g, [10, 0])


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi), st.floats(0.1, 5.0))
def test_mnf_branch_rotation_invariant(theta, phi, dist):
    pred = PhasePredicate((1.0, 1.0), 2.5)
    ctx = ctx_for((1.0, 1.0), [((9.0, 9.0), 0.0)])
    branches = set()
    for ang in (theta, phi):
        q = (1.0 + dist * math.cos(ang), 1.0 + dist * math.sin(ang))
        branches.add(mnf(q, ctx, pred)[1])
    if abs(dist - 2.5) > 1e-9:
        assert branches == {Phase.KERNEL if dist < 2.5 else Phase.PLANNING}


@settings(max_examples=100, deadline=None)
@given(st.floats(0.2, 19.8), st.floats(0.2, 11.8))
def test_psi_nonnegative(x, y):
    ctx = ctx_for((5, 5), [((12, 6), 1.0)], workspace=Workspace(20, 12), peers={1: ((15, 3), (2, 2))}, allies={1})
    if math.dist((x, y), (12, 6)) < 1e-3 or math.dist((x, y), (15, 3)) < 1e-3:
        return
    assert psi((x, y), ctx) >= 0


def test_dnf_zero_at_target_and_max_at_boundary():
    ctx = ctx_for((2, 2), [((6, 2), 1.0)], workspace=Workspace(10, 10))
    assert dnf_baseline((2, 2), ctx) == 0.0
    near = [dnf_baseline((6 - 1 - eps, 2), ctx) for eps in (1e-2, 1e-4, 1e-6)]
    assert near[0] < near[1] < near[2] <= 1.0
    assert near[2] == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(SingularityError):
        dnf_baseline((5, 2), ctx)


def test_dnf_value_matches_formula():
    ctx = ctx_for((2, 2), [((6, 2), 1.0)], workspace=Workspace(10, 10))
    q = (3.0, 4.0)
    g = 1 + 4
    b = ((3 - 6) ** 2 + 2**2 - 1) * 3**2 * (10 - 3) ** 2 * 4**2 * (10 - 4) ** 2
    assert dnf_baseline(q, ctx, k=3) == pytest.approx(g / (g**3 + b) ** (1 / 3), rel=1e-12)


@pytest.mark.parametrize("k", [3.0, 8.0])
def test_dnf_gradient_finite_differences(k, rng):
    sc = generate(GeneratorSpec(3, 3, (10.0, 8.0), seed=4))
    ctx = FieldContext.from_scenario(sc, 0)
    h = 1e-6 * math.hypot(10, 8)
    pts = sample_free_points(sc, 200, rng, margin=0.5)
    worst = 0.0
    for q in pts:
        if np.min(np.linalg.norm(sc.centers - q, axis=1) - sc.radii) < 0.5:
            continue
        g = grad_dnf_baseline(q, ctx, k)
        # the field saturates near 1 far from the target; where its slope is
        # below the difference quotient's roundoff floor the oracle is noise
        if np.linalg.norm(g) < 1e-3 * np.finfo(float).eps ** 0.5 / h:
            continue
        worst = max(worst, rel_err(g, fd_grad(lambda z: dnf_baseline(z, ctx, k), q, h)))
    assert worst < 1e-5


def test_dnf_direction_is_positive_multiple(rng):
    sc = generate(GeneratorSpec(3, 3, (10.0, 8.0), seed=4))
    ctx = FieldContext.from_scenario(sc, 0)
    for q in sample_free_points(sc, 30, rng, margin=1.2):
        Q = q[None, :]
        OBJ, RAD, mask = ctx.objects(Q)
        QT = np.asarray(ctx.target)[None, :]
        _, g, _ = dnf_kernel(Q, QT, OBJ, RAD, mask, 3.0)
        _, d, _ = dnf_kernel(Q, QT, OBJ, RAD, mask, 3.0, direction=True)
        cos = g[0] @ d[0] / (np.linalg.norm(g[0]) * np.linalg.norm(d[0]))
        assert cos == pytest.approx(1.0, abs=1e-12)


def test_from_scenario_allies_and_walls():
    sc = make_scenario([((2, 2), (15, 9), 0), ((3, 9), (16, 3), 0), ((8, 2), (8, 10), 1)])
    ctx = FieldContext.from_scenario(sc, 0)
    assert ctx.coalition == frozenset({1})
    assert ctx.association == pytest.approx(math.dist((3, 9), (16, 3)) ** 2)
    OBJ, RAD, _ = ctx.objects(np.array([[5.0, 5.0]]))
    assert OBJ.shape == (1, 2 + 4, 2)
    with pytest.raises(ValueError):
        FieldContext(0, (0, 0), {}, {}, (), frozenset({0}), PotentialParams())
