"""Two-phase MNF coordinator and the navigation-function baseline runner."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .core import Scenario
from .criticality import SearchOptions, confinement_radius, solve_alpha_dagger
from .potentials import (
    FieldContext,
    Phase,
    SingularityError,
    dnf_kernel,
    psi_kernel,
    wall_projections,
)

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    MNF = "mnf"
    DNF = "dnf"


class NumericalFault(ArithmeticError):
    """A gradient step produced a non-finite displacement."""

    def __init__(self, message: str, agent_id: int | None = None, position=None):
        super().__init__(message)
        self.agent_id = agent_id
        self.position = position


@dataclass(frozen=True)
class SimConfig:
    mode: Mode = Mode.MNF
    max_steps: int = 4000
    convergence_epsilon: float | None = None  # default: 1e-3 x workspace diagonal
    gamma: float | None = None  # default: the scenario's step size factor
    max_step: float | None = None  # default: 1e-2 x workspace diagonal
    barrier_fraction: float = 0.25
    resolve_alpha_each_step: bool = False
    sequential: bool = False
    dnf_k: float = 3.0
    dnf_step: str = "direction"  # or "gradient" (raw, underflows in crowded scenes)
    alpha_cap: float = 1e6
    alpha_scale: float = 1.0
    include_agent_targets: bool = True
    confinement_margin: float = 1.0  # alpha is solved against margin * r
    settled_association: bool = True  # solve alpha with every ally at its target
    stall_window: int | None = 50  # steps; None disables alpha escalation
    stall_tolerance: float | None = None  # progress that resets the window; default 0.05 x max_step
    search: SearchOptions = field(default_factory=SearchOptions)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.max_steps <= 0:
            raise ValueError("max_steps must be > 0")
        if self.convergence_epsilon is not None and not self.convergence_epsilon > 0:
            raise ValueError("convergence_epsilon must be > 0")
        if self.dnf_step not in ("gradient", "direction"):
            raise ValueError("dnf_step must be 'gradient' or 'direction'")
        if not 0 < self.barrier_fraction < 1:
            raise ValueError("barrier_fraction must lie in (0, 1)")
        if self.stall_window is not None and self.stall_window <= 0:
            raise ValueError("stall_window must be > 0")
        if not 0 < self.confinement_margin <= 1:
            raise ValueError("confinement_margin must lie in (0, 1]")
        if not self.alpha_scale >= 1:
            raise ValueError("alpha_scale must be >= 1")

    def replace(self, **changes) -> "SimConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class Sample:
    step: int
    x: float
    y: float
    potential: float
    phase: Phase


@dataclass
class Trajectory:
    agent_id: int
    samples: list[Sample] = field(default_factory=list)

    def positions(self) -> np.ndarray:
        return np.array([(s.x, s.y) for s in self.samples], dtype=float).reshape(-1, 2)

    def phases(self) -> list[Phase]:
        return [s.phase for s in self.samples]

    def potentials(self) -> np.ndarray:
        return np.array([s.potential for s in self.samples], dtype=float)


@dataclass
class RunResult:
    scenario: Scenario
    config: SimConfig
    trajectories: list[Trajectory]
    convergence_steps: dict[int, int | None]
    final_distance: dict[int, float]
    alpha_dagger: dict[int, float]
    confinement_radius: dict[int, float]
    epsilon: float
    min_obstacle_clearance: float
    min_agent_clearance: float
    max_association_after_convergence: float
    reports: dict = field(default_factory=dict)
    final_alpha: dict[int, float] = field(default_factory=dict)
    escalations: dict[int, int] = field(default_factory=dict)

    @property
    def completed(self) -> float:
        n = len(self.convergence_steps)
        if not n:
            return 1.0
        return sum(v is not None for v in self.convergence_steps.values()) / n

    @property
    def all_converged(self) -> bool:
        return all(v is not None for v in self.convergence_steps.values())

    def trajectory(self, agent_id: int) -> Trajectory:
        for t in self.trajectories:
            if t.agent_id == agent_id:
                return t
        raise KeyError(agent_id)


def gdc_step(q, g, gamma: float, max_step: float | None = None, barriers=None) -> np.ndarray:
    """One gradient-descent move ``q - gamma * g``.

    ``max_step`` clips the displacement length.  ``barriers`` is an optional
    ``(points, radii, fraction)`` triple: the displacement component toward
    each barrier is limited to ``fraction`` of the current clearance to its
    surface, so a step can slide along but never cross it.
    """
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    q = np.asarray(q, dtype=float)
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise NumericalFault(f"non-finite gradient at {q.tolist()}", position=tuple(q))
    delta = -gamma * g
    if max_step is not None:
        n = float(np.linalg.norm(delta))
        if n > max_step:
            delta *= max_step / n
    if barriers is not None:
        pts, radii, frac = barriers
        delta = _limit_approach(q[None, :], delta[None, :], np.asarray(pts)[None], np.asarray(radii)[None], frac)[0]
    return q + delta


def _limit_approach(Q, D, OBJ, RAD, frac, mask=None):
    """Vectorized barrier projection of displacements D (M, 2)."""
    R = OBJ - Q[:, None, :]
    dist = np.linalg.norm(R, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        N = R / dist[..., None]
    clear = dist - RAD
    active = np.ones_like(clear, dtype=bool) if mask is None else mask.copy()
    active &= np.isfinite(clear)
    N = np.where(active[..., None], N, 0.0)
    allow = frac * np.maximum(clear, 0.0)
    D = D.copy()
    for _ in range(4):
        approach = np.einsum("ijk,ik->ij", N, D)
        excess = np.where(active, np.maximum(approach - allow, 0.0), 0.0)
        if not np.any(excess > 0):
            break
        D -= np.einsum("ij,ijk->ik", excess, N)
    # the projections interact when normals are not orthogonal; shrink until safe
    for _ in range(40):
        new = Q + D
        nd = np.linalg.norm(OBJ - new[:, None, :], axis=-1) - RAD
        bad = np.any(active & (nd < (1.0 - frac) * clear - 1e-12), axis=1)
        if not bad.any():
            return D
        D[bad] *= 0.5
    D[bad] = 0.0
    return D


class _Swarm:
    """Array view of the scenario with per-agent object lists."""

    def __init__(self, scenario: Scenario, cfg: SimConfig):
        self.sc = scenario
        self.cfg = cfg
        self.N = len(scenario.agents)
        self.T = np.array(scenario.targets, dtype=float).reshape(-1, 2)
        self.C = np.array(scenario.centers, dtype=float).reshape(-1, 2)
        self.radii = np.array(scenario.radii, dtype=float)
        coal = np.array([a.coalition for a in scenario.agents])
        self.allies = (coal[:, None] == coal[None, :]) & ~np.eye(self.N, dtype=bool)
        self.ws = scenario.workspace

    def objects(self, Q, idx, P):
        """Objects seen by agents ``idx`` at points ``Q``: peers, obstacles, walls."""
        m = len(idx)
        peers = np.broadcast_to(P, (m, self.N, 2))
        peer_mask = np.ones((m, self.N), dtype=bool)
        peer_mask[np.arange(m), idx] = False
        obs = np.broadcast_to(self.C, (m, len(self.C), 2))
        walls = wall_projections(Q, self.ws)
        OBJ = np.concatenate([peers, obs, walls], axis=1)
        RAD = np.concatenate(
            [np.zeros((m, self.N)), np.broadcast_to(self.radii, (m, len(self.C))), np.zeros((m, 4))], axis=1
        )
        mask = np.concatenate([peer_mask, np.ones((m, len(self.C) + 4), dtype=bool)], axis=1)
        return OBJ, RAD, mask

    def association(self, P):
        d2 = np.einsum("ij,ij->i", P - self.T, P - self.T)
        return self.allies.astype(float) @ d2


def prepare_alpha(scenario: Scenario, cfg: SimConfig, P=None):
    """Per-agent confinement radius and, in MNF mode, confinement factor.

    Returns ``(alphas, radii, reports)`` keyed by agent id.
    """
    alphas, radii, reports = {}, {}, {}
    for a in scenario.agents:
        r = confinement_radius(a.qt, scenario, cfg.include_agent_targets, exclude_agent=a.id)
        radii[a.id] = r
        if cfg.mode is Mode.MNF:
            ctx = FieldContext.from_scenario(scenario, a.id, positions=P)
            alpha, rep = solve_alpha_dagger(
                ctx, cfg.confinement_margin * r, alpha_cap=cfg.alpha_cap, options=cfg.search,
                settled=cfg.settled_association,
            )
            alphas[a.id] = alpha
            reports[a.id] = rep
    return alphas, radii, reports


def run(
    scenario: Scenario,
    cfg: SimConfig | None = None,
    alpha_dagger: dict[int, float] | None = None,
) -> RunResult:
    """Simulate every agent to convergence or ``cfg.max_steps``.

    MNF agents solve their confinement factor up front, descend the confined
    function until they enter their confinement disk, then follow the
    attraction kernel in a straight line.  DNF agents descend the baseline
    throughout.  Agents move in synchronous ticks against a frozen snapshot
    of peer positions; ``cfg.sequential`` instead plans one agent at a time
    with the others held still.  Pass precomputed ``alpha_dagger`` values to
    skip the solver.
    """
    cfg = cfg or SimConfig()
    sw = _Swarm(scenario, cfg)
    ids = scenario.agent_ids
    diag = scenario.workspace.diagonal
    eps = cfg.convergence_epsilon or 1e-3 * diag
    max_step = cfg.max_step or 1e-2 * diag
    params = scenario.params
    gamma = cfg.gamma or params.gamma
    k = cfg.dnf_k

    if alpha_dagger is None:
        alphas, radii, reports = prepare_alpha(scenario, cfg)
    else:
        alphas = dict(alpha_dagger)
        radii = {
            a.id: confinement_radius(a.qt, scenario, cfg.include_agent_targets, exclude_agent=a.id)
            for a in scenario.agents
        }
        reports = {}
    alpha_vec = np.array([alphas.get(i, params.alpha) for i in ids], dtype=float) * cfg.alpha_scale
    alpha_start = alpha_vec.copy()
    r_vec = np.array([radii[i] for i in ids], dtype=float)

    P = np.array(scenario.initial_positions, dtype=float).reshape(-1, 2).copy()
    dist0 = np.linalg.norm(P - sw.T, axis=1)
    if cfg.mode is Mode.MNF:
        phase = np.where(dist0 < r_vec, 1, 0)  # 0 planning, 1 kernel, 2 converged
    else:
        phase = np.zeros(sw.N, dtype=int)
    phase = np.where(dist0 <= eps, 2, phase)
    conv_step: list[int | None] = [0 if p == 2 else None for p in phase]
    trajs = [Trajectory(i) for i in ids]
    labels = {0: Phase.PLANNING, 1: Phase.KERNEL, 2: Phase.CONVERGED}

    stall_tol = cfg.stall_tolerance or 0.05 * max_step
    best = dist0.copy()  # distance to target when the stall window last reset
    anchor_step = np.zeros(sw.N, dtype=int)
    escalations = np.zeros(sw.N, dtype=int)

    clear = _Clearance(sw)
    clear.update(P)
    assoc_after = 0.0

    def evaluate(idx, P):
        """Potential values and descent gradients for agents ``idx``."""
        vals = np.zeros(len(idx))
        grads = np.zeros((len(idx), 2))
        Q = P[idx]
        QT = sw.T[idx]
        if cfg.mode is Mode.DNF:
            OBJ, RAD, mask = sw.objects(Q, idx, P)
            gain = _dnf_gain_log(sw, QT, idx, P, params.lambda1, k)
            try:
                vals, grads, _ = dnf_kernel(
                    Q, QT, OBJ, RAD, mask, k, gain_log=gain, direction=cfg.dnf_step == "direction"
                )
            except SingularityError as exc:
                raise _blame(exc, idx, ids) from exc
            return vals, grads
        plan = phase[idx] == 0
        if plan.any():
            pidx = idx[plan]
            OBJ, _, mask = sw.objects(P[pidx], pidx, P)
            A = sw.association(P)[pidx]
            try:
                v, g, _ = psi_kernel(
                    P[pidx], sw.T[pidx], OBJ, mask,
                    params.lambda1, params.lambda2, params.lambda3, alpha_vec[pidx], A,
                )
            except SingularityError as exc:
                raise _blame(exc, pidx, ids) from exc
            vals[plan], grads[plan] = v, g
        kern = ~plan
        if kern.any():
            E = Q[kern] - QT[kern]
            d = np.linalg.norm(E, axis=1)
            vals[kern] = params.beta * d
            with np.errstate(invalid="ignore", divide="ignore"):
                grads[kern] = np.where(d[:, None] > 0, params.beta * E / d[:, None], 0.0)
        return vals, grads

    def advance(idx, P, grads):
        Q = P[idx]
        D = -gamma * grads
        if not np.all(np.isfinite(D)):
            bad = idx[np.nonzero(~np.isfinite(D).all(axis=1))[0][0]]
            raise NumericalFault(
                f"non-finite step for agent {ids[bad]} at {P[bad].tolist()}", ids[bad], tuple(P[bad])
            )
        kern = (phase[idx] == 1) if cfg.mode is Mode.MNF else np.zeros(len(idx), dtype=bool)
        if cfg.mode is Mode.DNF and cfg.dnf_step == "direction":
            n = np.linalg.norm(grads, axis=1)
            speed = 2.0 * gamma * params.lambda1 * np.linalg.norm(Q - sw.T[idx], axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                D = np.where(n[:, None] > 0, -grads * (speed / n)[:, None], 0.0)
        free = ~kern
        if free.any():
            fidx = idx[free]
            OBJ, RAD, mask = sw.objects(Q[free], fidx, P)
            Df = D[free]
            n = np.linalg.norm(Df, axis=1)
            Df *= np.where(n > max_step, max_step / np.maximum(n, 1e-300), 1.0)[:, None]
            D[free] = _limit_approach(Q[free], Df, OBJ, RAD, cfg.barrier_fraction, mask)
        if kern.any():
            E = sw.T[idx[kern]] - Q[kern]
            d = np.linalg.norm(E, axis=1)
            stride = np.minimum(gamma * params.beta, d)
            # finish with one exact landing rather than stopping within epsilon
            stride = np.where(d - stride <= eps, d, stride)
            with np.errstate(invalid="ignore", divide="ignore"):
                D[kern] = np.where(d[:, None] > 0, E * (stride / d)[:, None], 0.0)
        return D

    for n in np.nonzero(phase == 2)[0]:
        # agents that start on their targets still get their one sample
        if cfg.mode is Mode.MNF:
            val = params.beta * float(dist0[n])
        else:
            val = float(evaluate(np.array([n]), P)[0][0])
        trajs[n].samples.append(Sample(0, float(P[n, 0]), float(P[n, 1]), val, Phase.CONVERGED))

    groups: Iterable[np.ndarray]
    if cfg.sequential:
        groups = [np.array([n]) for n in range(sw.N)]
    else:
        groups = [np.arange(sw.N)]

    for group in groups:
        t = 0
        while True:
            idx = group[phase[group] != 2]
            if not len(idx):
                break
            if cfg.resolve_alpha_each_step and cfg.mode is Mode.MNF:
                _resolve(scenario, cfg, P, idx, phase, alpha_vec, r_vec, ids, escalations)
            vals, grads = evaluate(idx, P)
            for m, n in enumerate(idx):
                trajs[n].samples.append(Sample(t, float(P[n, 0]), float(P[n, 1]), float(vals[m]), labels[int(phase[n])]))
            if t >= cfg.max_steps:
                break
            D = advance(idx, P, grads)
            P[idx] = P[idx] + D
            if cfg.mode is Mode.MNF:
                # snap landing steps so converged agents sit on their targets
                landed = np.linalg.norm(P[idx] - sw.T[idx], axis=1) <= 1e-12 * diag
                P[idx[landed]] = sw.T[idx[landed]]
            t += 1
            d = np.linalg.norm(P[idx] - sw.T[idx], axis=1)
            for m, n in enumerate(idx):
                if cfg.mode is Mode.MNF and phase[n] == 0:
                    # the kernel always takes over before convergence, so the
                    # agent finishes on its target rather than merely near it
                    if d[m] < r_vec[n]:
                        phase[n] = 1
                elif d[m] <= eps:
                    phase[n] = 2
                    conv_step[n] = t
            if cfg.mode is Mode.MNF and cfg.stall_window:
                # Any alpha above the confining one still confines, so an agent
                # held by peers in a planning-phase minimum may raise its own.
                # progress is judged against the distance when the window opened
                progressed = d < best[idx] - stall_tol
                best[idx[progressed]] = d[progressed]
                anchor_step[idx[progressed]] = t
                stuck = idx[~progressed & (t - anchor_step[idx] >= cfg.stall_window) & (phase[idx] == 0)]
                for n in stuck:
                    if alpha_vec[n] < cfg.alpha_cap:
                        alpha_vec[n] = min(2.0 * alpha_vec[n], cfg.alpha_cap)
                        escalations[n] += 1
                        log.debug("agent %s stalled; alpha raised to %g", ids[n], alpha_vec[n])
                    anchor_step[n] = t
            done = idx[phase[idx] == 2]
            for n in done:
                if cfg.mode is Mode.MNF:
                    val = params.beta * float(np.linalg.norm(P[n] - sw.T[n]))
                else:
                    val = float(evaluate(np.array([n]), P)[0][0])
                trajs[n].samples.append(Sample(t, float(P[n, 0]), float(P[n, 1]), val, Phase.CONVERGED))
            clear.update(P)
            conv_mask = phase == 2
            if conv_mask.any():
                contrib = np.einsum("ij,ij->i", P[conv_mask] - sw.T[conv_mask], P[conv_mask] - sw.T[conv_mask])
                assoc_after = max(assoc_after, float(contrib.max()))

    final_d = {ids[n]: float(np.linalg.norm(P[n] - sw.T[n])) for n in range(sw.N)}
    unconverged = [i for i, s in zip(ids, conv_step) if s is None]
    if unconverged:
        log.info("max_steps reached with %d unconverged agents", len(unconverged))
    return RunResult(
        scenario=scenario,
        config=cfg,
        trajectories=trajs,
        convergence_steps=dict(zip(ids, conv_step)),
        final_distance=final_d,
        alpha_dagger={i: float(a) for i, a in zip(ids, alpha_start)} if cfg.mode is Mode.MNF else {},
        confinement_radius=radii,
        epsilon=eps,
        min_obstacle_clearance=clear.obstacle,
        min_agent_clearance=clear.agent,
        max_association_after_convergence=assoc_after,
        reports=reports,
        final_alpha={i: float(a) for i, a in zip(ids, alpha_vec)} if cfg.mode is Mode.MNF else {},
        escalations={i: int(e) for i, e in zip(ids, escalations)},
    )


def _blame(exc: SingularityError, idx, ids) -> SingularityError:
    return SingularityError(f"{exc} (agents {[ids[n] for n in idx]})", exc.point)


def _dnf_gain_log(sw: _Swarm, QT, idx, P, lam1, k):
    OBJ, RAD, mask = sw.objects(QT, idx, P)
    R = QT[:, None, :] - OBJ
    f = np.einsum("ijk,ijk->ij", R, R) - RAD**2
    f = np.where(mask, f, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.log(np.where(f > 0, f, np.nan))
    logs = np.where(np.isnan(logs) & mask, np.log(1e-300), logs)
    return np.log(lam1) + logs.sum(axis=1) / k


def _resolve(scenario, cfg, P, idx, phase, alpha_vec, r_vec, ids, escalations):
    """Re-solve alpha against live positions (current associative sum)."""
    for n in idx:
        if phase[n] != 0:
            continue
        ctx = FieldContext.from_scenario(scenario, ids[n], positions=P)
        alpha, _ = solve_alpha_dagger(
            ctx, cfg.confinement_margin * r_vec[n], alpha_cap=cfg.alpha_cap, options=cfg.search
        )
        alpha_vec[n] = min(alpha * cfg.alpha_scale * 2.0 ** escalations[n], cfg.alpha_cap)


class _Clearance:
    def __init__(self, sw: _Swarm):
        self.sw = sw
        self.obstacle = float("inf")
        self.agent = float("inf")

    def update(self, P):
        sw = self.sw
        if len(sw.C) and len(P):
            surf = np.linalg.norm(P[:, None, :] - sw.C[None, :, :], axis=-1) - sw.radii
            self.obstacle = min(self.obstacle, float(surf.min()))
        if len(P) > 1:
            pd = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)
            pd[np.diag_indices(len(P))] = np.inf
            self.agent = min(self.agent, float(pd.min()))
