"""Confined function, attraction kernel, meta navigation function and a
Rimon-Koditschek navigation-function baseline.

All fields are evaluated by vectorized kernels over a batch of query points
``Q`` of shape ``(M, 2)``.  Every query row carries its own target and its own
list of repulsive objects, so the same kernel serves a single-agent field
(one target, many points) and a swarm tick (one point per agent).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import Obstacle, PotentialParams, Scenario, Workspace

SINGULARITY_GUARD = 1e-9


class SingularityError(ArithmeticError):
    """Evaluation point coincides with a repulsive object."""

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = None if point is None else tuple(float(v) for v in point)


class Phase(str, enum.Enum):
    PLANNING = "Planning"
    KERNEL = "Kernel"
    CONVERGED = "Converged"


def wall_projections(Q: np.ndarray, workspace: Workspace) -> np.ndarray:
    """Orthogonal projections of each point onto the four walls, shape (M, 4, 2)."""
    Q = np.asarray(Q, dtype=float).reshape(-1, 2)
    x, y = Q[:, 0], Q[:, 1]
    zero = np.zeros_like(x)
    w = np.full_like(x, workspace.width)
    h = np.full_like(x, workspace.height)
    return np.stack(
        [
            np.stack([zero, y], axis=-1),
            np.stack([w, y], axis=-1),
            np.stack([x, zero], axis=-1),
            np.stack([x, h], axis=-1),
        ],
        axis=1,
    )


# -- vectorized kernels ----------------------------------------------------


def repulsion_sums(Q, OBJ, mask):
    """Target-independent pieces of the repulsive term for each row.

    Returns ``S = sum 1/rho**2``, ``P = sum (q - o)/rho**4`` and the distance
    to the nearest active object.
    """
    R = Q[:, None, :] - OBJ
    rho2 = np.einsum("ijk,ijk->ij", R, R)
    rho2 = np.where(mask, rho2, np.inf)
    min_rho = np.sqrt(rho2.min(axis=1)) if rho2.shape[1] else np.full(len(Q), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv2 = 1.0 / rho2
    inv2 = np.where(np.isfinite(inv2), inv2, 0.0)
    return inv2.sum(axis=1), np.einsum("ijk,ij->ik", R, inv2 * inv2), min_rho


def psi_from_sums(Q, QT, S, P, lam1, lam2, lam3, alpha, A):
    """Value and gradient of the confined function given the repulsive sums."""
    E = Q - QT
    d2 = np.einsum("ij,ij->i", E, E)
    d = np.sqrt(d2)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), d.shape)
    A = np.broadcast_to(np.asarray(A, dtype=float), d.shape)
    p = d ** (1.0 / alpha)
    attract = lam1 + lam3 * A
    values = attract * d2 + (lam2 / alpha) * p * S
    # d**(1/alpha - 2) * E, taken as zero at the target
    with np.errstate(divide="ignore", invalid="ignore"):
        radial = np.where(d2 > 0, p / d2, 0.0)
    grads = 2.0 * attract[:, None] * E + (lam2 / alpha)[:, None] * (
        (radial * S / alpha)[:, None] * E - 2.0 * p[:, None] * P
    )
    return values, grads


def psi_kernel(Q, QT, OBJ, mask, lam1, lam2, lam3, alpha, A, *, raise_on_singular=True):
    """Value and gradient of the confined function for each row.

    Q, QT: (M, 2); OBJ: (M, K, 2); mask: (M, K) bool of active objects;
    alpha, A: scalars or (M,) arrays.  Returns ``(values, grads, min_dist)``.
    """
    S, P, min_rho = repulsion_sums(Q, OBJ, mask)
    if raise_on_singular and np.any(min_rho < SINGULARITY_GUARD):
        bad = int(np.argmin(min_rho))
        raise SingularityError(f"evaluation at a repulsive object: q={Q[bad].tolist()}", Q[bad])
    values, grads = psi_from_sums(Q, QT, S, P, lam1, lam2, lam3, alpha, A)
    return values, grads, min_rho


def dnf_kernel(Q, QT, OBJ, RAD, mask, k, *, gain_log=None, raise_on_singular=True, direction=False):
    """Rimon-Koditschek field ``g / (g**k + b)**(1/k)`` with ``g = |q - qt|**2`` and
    ``b`` the product of ``|q - o|**2 - rho_o**2`` over active objects.

    Computed in log space.  When ``gain_log`` (shape (M,)) is given, the
    returned gradient is multiplied by ``exp(gain_log)`` without ever forming
    that factor explicitly.  With ``direction`` the gradient is replaced by
    ``2(q - qt) - (g/k) grad(log b)``, a positive multiple of it that stays
    representable where the field is numerically flat.  Returns
    ``(values, grads, min_surface_dist)``.
    """
    E = Q - QT
    g = np.einsum("ij,ij->i", E, E)
    R = Q[:, None, :] - OBJ
    rho2 = np.einsum("ijk,ijk->ij", R, R)
    f = rho2 - RAD**2
    f = np.where(mask, f, 1.0)
    surface = np.where(mask, np.sqrt(np.maximum(rho2, 0.0)) - RAD, np.inf)
    min_surface = surface.min(axis=1) if surface.shape[1] else np.full(len(Q), np.inf)
    if raise_on_singular and np.any(min_surface < SINGULARITY_GUARD):
        bad = int(np.argmin(min_surface))
        raise SingularityError(f"evaluation on an object boundary: q={Q[bad].tolist()}", Q[bad])
    with np.errstate(divide="ignore", invalid="ignore"):
        logb = np.log(f).sum(axis=1)
        logg = np.log(g)
    logs = np.logaddexp(k * logg, logb)
    values = np.where(g > 0, np.exp(logg - logs / k), 0.0)
    b_over_s = np.exp(logb - logs)
    scale = -logs / k if gain_log is None else gain_log - logs / k
    c = np.exp(scale)
    dlogb = np.einsum("ijk,ij->ik", R, np.where(mask, 2.0 / f, 0.0))
    bracket = 2.0 * E - (g / k)[:, None] * dlogb
    if direction:
        return values, bracket, min_surface
    grads = (b_over_s * c)[:, None] * bracket
    return values, grads, min_surface


# -- single-agent context --------------------------------------------------


@dataclass(frozen=True)
class FieldContext:
    """Everything agent ``subject`` needs to evaluate its own fields.

    ``coalition`` is the ally index set used by the associative term; it never
    contains ``subject``.  ``workspace`` adds the four walls as repulsive
    objects (``None`` drops them).  ``repel_peers=False`` restricts the
    repulsive set to obstacles and walls.
    """

    subject: int
    target: tuple[float, float]
    peer_positions: Mapping[int, tuple[float, float]]
    peer_targets: Mapping[int, tuple[float, float]]
    obstacles: tuple[Obstacle, ...]
    coalition: frozenset[int]
    params: PotentialParams
    workspace: Workspace | None = None
    repel_peers: bool = True
    association_override: float | None = None
    _objects: np.ndarray = field(init=False, repr=False, compare=False)
    _radii: np.ndarray = field(init=False, repr=False, compare=False)
    _association: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(float(v) for v in self.target))
        object.__setattr__(self, "peer_positions", {int(k): tuple(map(float, v)) for k, v in self.peer_positions.items()})
        object.__setattr__(self, "peer_targets", {int(k): tuple(map(float, v)) for k, v in self.peer_targets.items()})
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "coalition", frozenset(self.coalition))
        if self.subject in self.coalition:
            raise ValueError("an agent cannot be its own ally")
        missing = [k for k in self.coalition if k not in self.peer_positions or k not in self.peer_targets]
        if missing:
            raise ValueError(f"allies without position/target: {sorted(missing)}")
        peers = [v for k, v in sorted(self.peer_positions.items()) if k != self.subject] if self.repel_peers else []
        pts = peers + [o.center for o in self.obstacles]
        rad = [0.0] * len(peers) + [o.radius for o in self.obstacles]
        object.__setattr__(self, "_objects", np.array(pts, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "_radii", np.array(rad, dtype=float))
        A = sum(math.dist(self.peer_positions[k], self.peer_targets[k]) ** 2 for k in self.coalition)
        if self.association_override is not None:
            A = self.association_override
        object.__setattr__(self, "_association", float(A))

    @classmethod
    def from_scenario(
        cls,
        scenario: Scenario,
        agent_id: int,
        positions: np.ndarray | None = None,
        alpha: float | None = None,
        walls: bool = True,
        repel_peers: bool = True,
    ) -> "FieldContext":
        pos = scenario.initial_positions if positions is None else np.asarray(positions, dtype=float)
        me = scenario.agents[scenario.index_of(agent_id)]
        params = scenario.params if alpha is None else scenario.params.replace(alpha=alpha)
        return cls(
            subject=agent_id,
            target=me.qt,
            peer_positions={a.id: tuple(pos[n]) for n, a in enumerate(scenario.agents) if a.id != agent_id},
            peer_targets={a.id: a.qt for a in scenario.agents if a.id != agent_id},
            obstacles=scenario.obstacles,
            coalition=scenario.partition.allies(agent_id),
            params=params,
            workspace=scenario.workspace if walls else None,
            repel_peers=repel_peers,
        )

    def with_alpha(self, alpha: float) -> "FieldContext":
        return self._replace(params=self.params.replace(alpha=alpha))

    def with_association(self, value: float | None) -> "FieldContext":
        """Pin the associative sum (``None`` restores the allies' actual distances)."""
        return self._replace(association_override=value)

    def without_peers(self) -> "FieldContext":
        return self._replace(repel_peers=False)

    def _replace(self, **changes) -> "FieldContext":
        kw = dict(
            subject=self.subject,
            target=self.target,
            peer_positions=self.peer_positions,
            peer_targets=self.peer_targets,
            obstacles=self.obstacles,
            coalition=self.coalition,
            params=self.params,
            workspace=self.workspace,
            repel_peers=self.repel_peers,
            association_override=self.association_override,
        )
        kw.update(changes)
        return FieldContext(**kw)

    def object_key(self) -> tuple:
        """Hashable identity of the repulsive object set."""
        return (self._objects.tobytes(), self._radii.tobytes(), self.workspace)

    @property
    def association(self) -> float:
        """Sum of squared distance-to-target over allies."""
        return self._association

    def objects(self, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Repulsive objects seen from each query point: (OBJ, RAD, mask)."""
        Q = np.asarray(Q, dtype=float).reshape(-1, 2)
        M, K = len(Q), len(self._objects)
        OBJ = np.broadcast_to(self._objects, (M, K, 2))
        RAD = np.broadcast_to(self._radii, (M, K))
        if self.workspace is not None:
            OBJ = np.concatenate([OBJ, wall_projections(Q, self.workspace)], axis=1)
            RAD = np.concatenate([RAD, np.zeros((M, 4))], axis=1)
        return OBJ, RAD, np.ones(OBJ.shape[:2], dtype=bool)

    def repulsion_sums(self, Q):
        Q = np.asarray(Q, dtype=float).reshape(-1, 2)
        OBJ, _, mask = self.objects(Q)
        return repulsion_sums(Q, OBJ, mask)

    def psi_from_sums(self, Q, S, P):
        p = self.params
        QT = np.broadcast_to(np.asarray(self.target), np.shape(Q))
        return psi_from_sums(Q, QT, S, P, p.lambda1, p.lambda2, p.lambda3, p.alpha, self._association)

    def psi_batch(self, Q, *, raise_on_singular=True):
        Q = np.asarray(Q, dtype=float).reshape(-1, 2)
        OBJ, _, mask = self.objects(Q)
        p = self.params
        QT = np.broadcast_to(np.asarray(self.target), Q.shape)
        return psi_kernel(
            Q, QT, OBJ, mask, p.lambda1, p.lambda2, p.lambda3, p.alpha, self._association,
            raise_on_singular=raise_on_singular,
        )


def _point(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (2,):
        raise ValueError(f"expected a 2-vector, got shape {q.shape}")
    return q


def psi(q, ctx: FieldContext) -> float:
    values, _, _ = ctx.psi_batch(_point(q)[None, :])
    return float(values[0])


def grad_psi(q, ctx: FieldContext) -> np.ndarray:
    _, grads, _ = ctx.psi_batch(_point(q)[None, :])
    return grads[0]


def limit_grad_psi(q, ctx: FieldContext) -> np.ndarray:
    """Gradient of the confined function as the confinement factor grows
    without bound: only the attractive and associative terms survive."""
    e = _point(q) - np.asarray(ctx.target)
    p = ctx.params
    return e * (2.0 * p.lambda1 + 2.0 * p.lambda3 * ctx.association)


def omega(q, qt, beta: float) -> float:
    if not beta > 0:
        raise ValueError("beta must be > 0")
    return float(beta * np.linalg.norm(_point(q) - _point(qt)))


def grad_omega(q, qt, beta: float) -> np.ndarray:
    """Constant-norm pull toward ``qt``.  Returns the zero vector at ``qt``,
    where the cone is not differentiable and the agent counts as converged."""
    if not beta > 0:
        raise ValueError("beta must be > 0")
    e = _point(q) - _point(qt)
    n = float(np.linalg.norm(e))
    if n == 0.0:
        return np.zeros(2)
    return beta * e / n


@dataclass(frozen=True)
class PhasePredicate:
    qt: tuple[float, float]
    r: float

    def __post_init__(self):
        object.__setattr__(self, "qt", tuple(float(v) for v in self.qt))
        if not self.r > 0:
            raise ValueError("confinement radius must be > 0")

    def __call__(self, q) -> bool:
        # open disk: the boundary belongs to the planning region
        return math.dist(tuple(_point(q)), self.qt) < self.r


def mnf(q, ctx: FieldContext, pred: PhasePredicate) -> tuple[float, Phase]:
    if pred(q):
        return omega(q, ctx.target, ctx.params.beta), Phase.KERNEL
    return psi(q, ctx), Phase.PLANNING


def grad_mnf(q, ctx: FieldContext, pred: PhasePredicate) -> tuple[np.ndarray, Phase]:
    if pred(q):
        return grad_omega(q, ctx.target, ctx.params.beta), Phase.KERNEL
    return grad_psi(q, ctx), Phase.PLANNING


# -- navigation-function baseline ------------------------------------------


def _dnf_eval(q, ctx: FieldContext, k: float, gain_log=None):
    Q = _point(q)[None, :]
    OBJ, RAD, mask = ctx.objects(Q)
    QT = np.asarray(ctx.target)[None, :]
    return dnf_kernel(Q, QT, OBJ, RAD, mask, k, gain_log=gain_log)


def dnf_baseline(q, ctx: FieldContext, k: float = 3.0) -> float:
    values, _, _ = _dnf_eval(q, ctx, k)
    return float(values[0])


def grad_dnf_baseline(q, ctx: FieldContext, k: float = 3.0) -> np.ndarray:
    _, grads, _ = _dnf_eval(q, ctx, k)
    return grads[0]


def dnf_gain_log(ctx: FieldContext, k: float = 3.0) -> float:
    """Log of ``lambda1 * b(qt)**(1/k)``.

    Scaling the baseline by this constant makes it coincide with the
    attractive term ``lambda1 * |q - qt|**2`` near an unobstructed target, so
    both coordinators share one step-size factor on a common footing.
    """
    QT = np.asarray(ctx.target)[None, :]
    OBJ, RAD, mask = ctx.objects(QT)
    R = QT[:, None, :] - OBJ
    f = np.einsum("ijk,ijk->ij", R, R) - RAD**2
    if np.any(f[mask] <= 0):
        raise SingularityError("target on an object boundary", ctx.target)
    return float(math.log(ctx.params.lambda1) + np.log(f[mask]).sum() / k)


def dnf_descent_gradient(q, ctx: FieldContext, k: float = 3.0) -> np.ndarray:
    _, grads, _ = _dnf_eval(q, ctx, k, gain_log=np.array([dnf_gain_log(ctx, k)]))
    return grads[0]
