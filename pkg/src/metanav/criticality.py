"""Critical-point enumeration and the confinement-factor solver."""
from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import Scenario, Workspace
from .potentials import FieldContext, wall_projections

log = logging.getLogger(__name__)

ALPHA_FLOOR = 1.0 + 1e-6
CONFINEMENT_RTOL = 1e-6


class InvalidScenarioError(ValueError):
    pass


class UnconfinableError(RuntimeError):
    def __init__(self, message: str, offending: np.ndarray):
        super().__init__(message)
        self.offending = offending


def confinement_radius(
    qt,
    scenario: Scenario,
    include_agent_targets: bool = True,
    exclude_agent: int | None = None,
) -> float:
    """Distance from ``qt`` to the nearest object surface (obstacles, walls
    and, optionally, the other agents' targets)."""
    qt = np.asarray(qt, dtype=float)
    r = scenario.workspace.wall_distance(qt)
    if len(scenario.obstacles):
        r = min(r, float(np.min(np.linalg.norm(scenario.centers - qt, axis=1) - scenario.radii)))
    if include_agent_targets:
        for a in scenario.agents:
            if a.id == exclude_agent:
                continue
            dist = math.dist(a.qt, qt)
            if exclude_agent is None and dist == 0.0:
                continue  # qt is this agent's own target
            r = min(r, dist)
    if not r > 0:
        raise InvalidScenarioError(f"non-positive confinement radius {r} at {qt.tolist()}")
    return float(r)


@dataclass(frozen=True)
class CriticalSet:
    points: np.ndarray  # row 0 is always the target
    target: tuple[float, float]
    tolerance: float
    dedupe_radius: float

    @property
    def non_target(self) -> np.ndarray:
        return self.points[1:]

    def distances(self) -> np.ndarray:
        return np.linalg.norm(self.non_target - np.asarray(self.target), axis=1)

    def confined(self, r: float, rtol: float = CONFINEMENT_RTOL) -> bool:
        return bool(np.all(self.distances() <= r * (1.0 + rtol)))


@dataclass(frozen=True)
class SearchOptions:
    grid: int = 80
    seed: int = 0
    grad_rtol: float = 1e-8
    dedupe_rtol: float = 1e-4
    newton_iters: int = 60


def _gradient_scale(ctx: FieldContext, diag: float) -> float:
    p = ctx.params
    return 2.0 * (p.lambda1 + p.lambda3 * ctx.association) * diag


def _free_space(points: np.ndarray, ctx: FieldContext, workspace: Workspace) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    ok = (x > 0) & (x < workspace.width) & (y > 0) & (y < workspace.height)
    for o in ctx.obstacles:
        ok &= np.hypot(x - o.center[0], y - o.center[1]) > o.radius
    return ok


def _grad(ctx: FieldContext, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _, G, min_rho = ctx.psi_batch(X, raise_on_singular=False)
    return G, min_rho


_GRID_CACHE: OrderedDict = OrderedDict()
_GRID_CACHE_SIZE = 16


def _grid(ctx: FieldContext, workspace: Workspace, opts: SearchOptions):
    """Jittered grid nodes and their repulsive sums, shared by every target
    and confinement factor over the same object set."""
    key = (ctx.object_key(), workspace, opts.grid, opts.seed)
    hit = _GRID_CACHE.get(key)
    if hit is not None:
        _GRID_CACHE.move_to_end(key)
        return hit
    n = opts.grid
    rng = np.random.default_rng(opts.seed)
    hx, hy = workspace.width / n, workspace.height / n
    sx, sy = rng.uniform(-0.25, 0.25, size=2)
    xs = (np.arange(n) + 0.5 + sx) * hx
    ys = (np.arange(n) + 0.5 + sy) * hy
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
    S, P, min_rho = ctx.repulsion_sums(nodes)
    hit = (nodes, S, P, min_rho, (sx, sy, hx, hy))
    _GRID_CACHE[key] = hit
    if len(_GRID_CACHE) > _GRID_CACHE_SIZE:
        _GRID_CACHE.popitem(last=False)
    return hit


def _candidates(ctx: FieldContext, workspace: Workspace, opts: SearchOptions) -> np.ndarray:
    n = opts.grid
    nodes, S, P, min_rho, (sx, sy, hx, hy) = _grid(ctx, workspace, opts)
    _, G = ctx.psi_from_sums(nodes, S, P)
    valid = np.isfinite(G).all(axis=1) & (min_rho > 1e-9)
    G = np.where(valid[:, None], G, np.nan).reshape(n, n, 2)

    # cells whose corners bracket a zero of both gradient components
    sign = np.sign(G)
    corners = np.stack([sign[:-1, :-1], sign[1:, :-1], sign[:-1, 1:], sign[1:, 1:]], axis=0)
    finite = np.isfinite(corners).all(axis=(0, 3))
    with np.errstate(invalid="ignore"):
        both = finite & (corners.max(axis=0) > 0).all(axis=-1) & (corners.min(axis=0) < 0).all(axis=-1)
    ci, cj = np.nonzero(both)
    cells = np.stack([(ci + 1.0 + sx) * hx, (cj + 1.0 + sy) * hy], axis=1)

    # local minima of the gradient norm over the 8-neighbourhood
    norm = np.linalg.norm(G, axis=-1)
    norm = np.where(np.isfinite(norm), norm, np.inf)
    pad = np.pad(norm, 1, constant_values=np.inf)
    neigh = np.stack(
        [pad[1 + di : n + 1 + di, 1 + dj : n + 1 + dj] for di in (-1, 0, 1) for dj in (-1, 0, 1) if di or dj]
    )
    mi, mj = np.nonzero(np.isfinite(norm) & (norm <= neigh.min(axis=0)))
    minima = nodes.reshape(n, n, 2)[mi, mj]
    return np.concatenate([cells, minima], axis=0)


def _refine(ctx: FieldContext, X: np.ndarray, workspace: Workspace, tol: float, opts: SearchOptions):
    """Damped Newton iteration on grad(psi) = 0, vectorized over seeds.

    Seeds are dropped once they enter an obstacle disk, collapse onto the
    target cusp, leave the workspace, or stop reducing the gradient norm.
    """
    X = X.copy()
    diag = workspace.diagonal
    cell = max(workspace.width, workspace.height) / opts.grid
    target = np.asarray(ctx.target)
    alive = np.ones(len(X), dtype=bool)
    done = np.zeros(len(X), dtype=bool)
    best = np.full(len(X), np.inf)
    last_gain = np.zeros(len(X), dtype=int)
    for it in range(opts.newton_iters):
        idx = np.nonzero(alive & ~done)[0]
        if not len(idx):
            break
        Xa = X[idx]
        G, min_rho = _grad(ctx, Xa)
        gnorm = np.linalg.norm(G, axis=1)
        bad = ~np.isfinite(gnorm) | (min_rho < 1e-9)
        bad |= ~_free_space(Xa, ctx, workspace) & (it > 0)
        bad |= np.linalg.norm(Xa - target, axis=1) < opts.dedupe_rtol * diag
        improved = gnorm < 0.5 * best[idx]
        best[idx] = np.where(improved, gnorm, best[idx])
        last_gain[idx] = np.where(improved, it, last_gain[idx])
        bad |= it - last_gain[idx] > 8
        conv = ~bad & (gnorm < tol)
        done[idx[conv]] = True
        alive[idx[bad]] = False
        step_idx = ~bad & ~conv
        if not step_idx.any():
            continue
        Xs, Gs, rs = Xa[step_idx], G[step_idx], min_rho[step_idx]
        h = np.maximum(1e-7 * diag, 1e-4 * np.minimum(rs, diag))
        H = _hessian(ctx, Xs, h)
        det = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] * H[:, 1, 0]
        ok = np.abs(det) > 1e-300
        safe_det = np.where(ok, det, 1.0)
        dx = np.empty_like(Xs)
        dx[:, 0] = (H[:, 1, 1] * Gs[:, 0] - H[:, 0, 1] * Gs[:, 1]) / safe_det
        dx[:, 1] = (-H[:, 1, 0] * Gs[:, 0] + H[:, 0, 0] * Gs[:, 1]) / safe_det
        dx = np.where(ok[:, None], dx, Gs / (np.linalg.norm(Gs, axis=1, keepdims=True) + 1e-300) * cell * 0.1)
        length = np.linalg.norm(dx, axis=1)
        cap = np.minimum(0.5 * rs, 2.0 * cell)
        shrink = np.where(length > cap, cap / np.maximum(length, 1e-300), 1.0)
        Xn = Xs - dx * shrink[:, None]
        X[idx[step_idx]] = Xn
        outside = (
            (Xn[:, 0] < -cell) | (Xn[:, 0] > workspace.width + cell)
            | (Xn[:, 1] < -cell) | (Xn[:, 1] > workspace.height + cell)
        )
        alive[idx[step_idx][outside]] = False
    G, min_rho = _grad(ctx, X)
    gnorm = np.linalg.norm(G, axis=1)
    good = alive & np.isfinite(gnorm) & (gnorm < tol) & (min_rho > 1e-9)
    return X[good]


def _hessian(ctx: FieldContext, X: np.ndarray, h: np.ndarray) -> np.ndarray:
    H = np.empty((len(X), 2, 2))
    for k in range(2):
        step = np.zeros_like(X)
        step[:, k] = h
        gp, _ = _grad(ctx, X + step)
        gm, _ = _grad(ctx, X - step)
        H[:, :, k] = (gp - gm) / (2 * h[:, None])
    return 0.5 * (H + np.swapaxes(H, 1, 2))


def _dedupe(points: np.ndarray, target: np.ndarray, radius: float) -> np.ndarray:
    kept = [target]
    order = np.lexsort((points[:, 1], points[:, 0])) if len(points) else []
    for p in points[order]:
        if all(np.linalg.norm(p - k) > radius for k in kept):
            kept.append(p)
    return np.array(kept, dtype=float).reshape(-1, 2)


def find_critical_set(
    ctx: FieldContext,
    workspace: Workspace | None = None,
    options: SearchOptions | None = None,
) -> CriticalSet:
    """Numerically enumerate the critical points of ``psi`` in free space.

    Grid nodes are screened for cells that bracket a zero of both gradient
    components and for local minima of the gradient norm; those seeds are
    polished by damped Newton.  Points inside an obstacle disk or outside the
    workspace are not part of the configuration space and are dropped.  The
    target is always included, as row 0.  Critical points lying between grid
    nodes can be missed; raise ``options.grid`` to search more densely.
    """
    opts = options or SearchOptions()
    workspace = workspace or ctx.workspace
    if workspace is None:
        raise ValueError("a workspace is needed to bound the search")
    target = np.asarray(ctx.target, dtype=float)
    tol = opts.grad_rtol * _gradient_scale(ctx, workspace.diagonal)
    dedupe = opts.dedupe_rtol * workspace.diagonal
    seeds = _candidates(ctx, workspace, opts)
    pts = _refine(ctx, seeds, workspace, tol, opts) if len(seeds) else np.empty((0, 2))
    pts = pts[_free_space(pts, ctx, workspace)] if len(pts) else pts
    points = _dedupe(pts, target, dedupe)
    points.setflags(write=False)
    return CriticalSet(points, tuple(target), tol, dedupe)


def boundary_cp(cs: CriticalSet) -> np.ndarray | None:
    """Farthest non-target critical point; ties within the dedupe radius go to
    the lexicographically smallest coordinates."""
    pts = cs.non_target
    if not len(pts):
        return None
    dist = cs.distances()
    near_max = pts[dist >= dist.max() - cs.dedupe_radius]
    best = min(map(tuple, near_max))
    return np.array(best)


# -- confinement factor ----------------------------------------------------


def confinement_terms(ctx: FieldContext, q_star) -> tuple[float, float, np.ndarray]:
    """(A, B, C) of the confinement condition, with obstacles and walls as J."""
    q_star = np.asarray(q_star, dtype=float)
    objs = [o.center for o in ctx.obstacles]
    if ctx.workspace is not None:
        objs += [tuple(p) for p in wall_projections(q_star[None, :], ctx.workspace)[0]]
    R = q_star - np.array(objs, dtype=float).reshape(-1, 2)
    rho = np.linalg.norm(R, axis=1)
    B = float(np.sum(1.0 / rho**3))
    C = (R / rho[:, None] ** 4).sum(axis=0)
    return ctx.association, B, C


def confinement_residual(alpha: float, ctx: FieldContext, q_star, r: float) -> float:
    """Confinement condition projected on the unit critical vector, with the
    critical radius identified with ``r``."""
    A, B, C = confinement_terms(ctx, q_star)
    v = np.asarray(ctx.target) - np.asarray(q_star, dtype=float)
    v_hat = v / np.linalg.norm(v)
    p = ctx.params
    ra = r ** (1.0 / alpha)
    return float(
        2.0 * (p.lambda1 + A * p.lambda3) * r * alpha**2
        - 2.0 * p.lambda2 * float(C @ v_hat) * alpha * ra
        + B * p.lambda2 * r**3 * ra
    )


def confinement_condition_root(ctx: FieldContext, q_star, r: float, alpha_cap: float = 1e6) -> float | None:
    """Root in (1, alpha_cap] of the scalarized condition, if it changes sign."""
    grid = np.geomspace(ALPHA_FLOOR, alpha_cap, 200)
    vals = np.array([confinement_residual(a, ctx, q_star, r) for a in grid])
    change = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    if not len(change):
        return None
    i = change[0]
    return float(brentq(confinement_residual, grid[i], grid[i + 1], args=(ctx, q_star, r), xtol=1e-12))


@dataclass(frozen=True)
class CriticalityReport:
    critical_set: CriticalSet
    boundary_cp: np.ndarray | None
    critical_vector: np.ndarray
    critical_radius: float
    confinement_radius: float
    alpha_dagger: float
    residual: float | None
    threshold_cp: np.ndarray | None = None
    alpha_condition: float | None = None
    trials: tuple[tuple[float, bool, int], ...] = ()
    monotone_violations: tuple[float, ...] = ()
    critical_region_radius: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "critical_region_radius", self.critical_radius)

    def to_dict(self) -> dict:
        def vec(v):
            return None if v is None else [float(x) for x in v]

        return {
            "target": vec(self.critical_set.target),
            "critical_points": [vec(p) for p in self.critical_set.non_target],
            "boundary_cp": vec(self.boundary_cp),
            "critical_vector": vec(self.critical_vector),
            "critical_radius": self.critical_radius,
            "confinement_radius": self.confinement_radius,
            "alpha_dagger": self.alpha_dagger,
            "residual": self.residual,
            "threshold_cp": vec(self.threshold_cp),
            "alpha_condition": self.alpha_condition,
            "trials": [{"alpha": a, "confined": c, "n_critical": n} for a, c, n in self.trials],
            "monotone_violations": list(self.monotone_violations),
        }


def solve_alpha_dagger(
    ctx: FieldContext,
    r: float,
    workspace: Workspace | None = None,
    *,
    alpha_cap: float = 1e6,
    rtol: float = 1e-3,
    options: SearchOptions | None = None,
    settled: bool = False,
) -> tuple[float, CriticalityReport]:
    """Smallest confinement factor whose critical points all sit within ``r``
    of the target.

    The repulsive set is restricted to obstacles and walls.  With ``settled``
    the associative sum is taken as zero (all allies at their targets), the
    weakest attraction the agent will see; otherwise the allies' current
    distances are used.  The factor is bracketed by
    doubling from just above 1 and then bisected geometrically to relative
    width ``rtol``; the returned value is the confining end of the bracket.
    """
    if not r > 0:
        raise ValueError("confinement radius must be > 0")
    workspace = workspace or ctx.workspace
    base = ctx.without_peers()
    if settled:
        base = base.with_association(0.0)
    trials: list[tuple[float, bool, int]] = []
    sets: dict[float, CriticalSet] = {}
    violations: list[float] = []

    def confined(alpha: float) -> bool:
        cs = find_critical_set(base.with_alpha(alpha), workspace, options)
        ok = cs.confined(r)
        sets[alpha] = cs
        trials.append((alpha, ok, len(cs.non_target)))
        confining = [a for a, c, _ in trials if c]
        if not ok and confining and alpha > min(confining):
            violations.append(alpha)
            log.warning("confinement lost at alpha=%g above a confining alpha=%g", alpha, min(confining))
        return ok

    lo = None
    if confined(ALPHA_FLOOR):
        hi = ALPHA_FLOOR
    else:
        lo, hi = ALPHA_FLOOR, 2.0
        while not confined(hi):
            lo = hi
            if hi >= alpha_cap:
                cs = sets[hi]
                far = cs.non_target[cs.distances() > r]
                raise UnconfinableError(
                    f"no confining alpha up to {alpha_cap:g} for agent {ctx.subject}", far
                )
            hi = min(hi * 2.0, alpha_cap)
        while hi / lo - 1.0 > rtol:
            mid = math.sqrt(lo * hi)
            if confined(mid):
                hi = mid
            else:
                lo = mid

    cs = sets[hi]
    q_star = boundary_cp(cs)
    target = np.asarray(ctx.target)
    vec = np.zeros(2) if q_star is None else target - q_star
    threshold = boundary_cp(sets[lo]) if lo is not None else None
    residual = root = None
    if threshold is not None and np.linalg.norm(threshold - target) > 0:
        residual = confinement_residual(hi, base, threshold, r)
        root = confinement_condition_root(base, threshold, r, alpha_cap)
    report = CriticalityReport(
        critical_set=cs,
        boundary_cp=q_star,
        critical_vector=vec,
        critical_radius=float(np.linalg.norm(vec)),
        confinement_radius=float(r),
        alpha_dagger=float(hi),
        residual=residual,
        threshold_cp=threshold,
        alpha_condition=root,
        trials=tuple(trials),
        monotone_violations=tuple(violations),
    )
    return float(hi), report
