"""Exact discrete optimal transport and a brute-force worst-case search.

The transport solver is successive shortest paths on the bipartite support
graph (Dijkstra with node potentials), exact up to floating point for real
weights.  The worst-case search only looks at distributions that move each
sample to one new location, so it always returns a lower bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from wdro.core import INF, DataSpace, EmpiricalDistribution, LossSpec, as_space
from wdro.errors import ConfigError, DomainError

__all__ = [
    "TransportPlan",
    "min_cost_transport",
    "transport_plan",
    "wasserstein_p",
    "in_ball",
    "SearchGrid",
    "DisplacementCandidate",
    "oracle_worst_case",
]

_MASS_EPS = 1e-14


def min_cost_transport(a, b, C):
    """Minimum-cost transport of mass ``a`` onto ``b`` under cost matrix ``C``.

    Infinite entries of ``C`` are forbidden edges.  Returns ``(plan, cost)``;
    ``cost`` is ``inf`` when no feasible coupling exists.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    n, m = C.shape
    flow = np.zeros((n, m))
    sup = a.copy()
    dem = b.copy()
    finite = np.isfinite(C)
    if not np.any(finite):
        return flow, INF
    Cf = np.where(finite, C, 0.0)

    # nodes: sources 0..n-1, sinks n..n+m-1, super source S, super sink T
    V = n + m + 2
    S, T = n + m, n + m + 1
    pi = np.zeros(V)
    colmin = np.where(finite, C, INF).min(axis=0)
    pi[n:n + m] = np.where(np.isfinite(colmin), colmin, 0.0)
    pi[T] = pi[n:n + m].min()

    while sup.sum() > _MASS_EPS and dem.sum() > _MASS_EPS:
        # reduced-cost adjacency of the residual graph
        R = np.full((V, V), INF)
        active = sup > _MASS_EPS
        R[S, :n] = np.where(active, pi[S] - pi[:n], INF)
        fwd = Cf + pi[:n, None] - pi[None, n:n + m]
        R[:n, n:n + m] = np.where(finite, fwd, INF)
        back = flow > _MASS_EPS
        R[n:n + m, :n] = np.where(back.T, -fwd.T, INF)
        R[n:n + m, T] = np.where(dem > _MASS_EPS, pi[n:n + m] - pi[T], INF)
        np.maximum(R, 0.0, out=R, where=np.isfinite(R))

        dist = np.full(V, INF)
        prev = np.full(V, -1)
        done = np.zeros(V, dtype=bool)
        dist[S] = 0.0
        for _ in range(V):
            cand = np.where(done, INF, dist)
            u = int(np.argmin(cand))
            if not np.isfinite(cand[u]):
                break
            done[u] = True
            if u == T:
                break
            nd = dist[u] + R[u]
            better = (nd < dist) & ~done
            dist[better] = nd[better]
            prev[better] = u
        if not np.isfinite(dist[T]):
            return flow, INF

        path = [T]
        while path[-1] != S:
            path.append(int(prev[path[-1]]))
        path.reverse()
        delta = INF
        for u, v in zip(path[:-1], path[1:]):
            if u == S:
                delta = min(delta, sup[v])
            elif v == T:
                delta = min(delta, dem[u - n])
            elif u >= n:  # backward edge sink -> source
                delta = min(delta, flow[v, u - n])
        for u, v in zip(path[:-1], path[1:]):
            if u == S:
                sup[v] -= delta
            elif v == T:
                dem[u - n] -= delta
            elif u < n:
                flow[u, v - n] += delta
            else:
                flow[v, u - n] -= delta
        pi += np.minimum(dist, dist[T])

    flow[flow < _MASS_EPS] = 0.0
    return flow, float(np.sum(flow * Cf))


@dataclass(frozen=True)
class TransportPlan:
    coupling: np.ndarray
    cost: float
    norm: object
    p: float


def _check_p(p):
    p = float(p)
    if not p >= 1.0:
        raise DomainError(f"Wasserstein order must lie in [1, inf], got {p}")
    return p


def transport_plan(P: EmpiricalDistribution, Q: EmpiricalDistribution, p, norm) -> TransportPlan:
    """Optimal coupling for ``sum gamma_ij d(z_i, z'_j)**p`` (finite ``p``)."""
    p = _check_p(p)
    if p == INF:
        raise DomainError("transport_plan needs a finite order; use wasserstein_p")
    D = as_space(norm).pairwise(P.points, Q.points)
    with np.errstate(over="ignore"):
        C = D ** p
    plan, cost = min_cost_transport(P.weights, Q.weights, C)
    return TransportPlan(plan, cost, norm, p)


def wasserstein_p(P: EmpiricalDistribution, Q: EmpiricalDistribution, p, norm) -> float:
    """p-Wasserstein distance between two finitely supported distributions."""
    p = _check_p(p)
    if P.dim != Q.dim:
        raise DomainError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    if p < INF:
        cost = transport_plan(P, Q, p, norm).cost
        return cost ** (1.0 / p) if np.isfinite(cost) else INF

    D = as_space(norm).pairwise(P.points, Q.points)
    levels = np.unique(D[np.isfinite(D)])

    def feasible(t):
        C = np.where(np.isfinite(D), (D > t).astype(float), INF)
        return min_cost_transport(P.weights, Q.weights, C)[1] <= 1e-12

    if levels.size == 0 or not feasible(levels[-1]):
        return INF
    lo, hi = 0, levels.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(levels[mid]):
            hi = mid
        else:
            lo = mid + 1
    return float(levels[lo])


def in_ball(Q, P_n, p, alpha, norm, tol=1e-9) -> bool:
    return wasserstein_p(Q, P_n, p, norm) <= alpha + tol


@dataclass(frozen=True)
class SearchGrid:
    """Resolution of the displacement search.

    ``levels`` budget levels per sample; ``mode`` is ``directional`` (search
    along steepest-ascent directions) or ``exhaustive`` (a full circle of
    ``angles`` directions, for at most two free coordinates).
    ``max_radius`` caps any single displacement.
    """

    levels: int = 64
    mode: str = "directional"
    angles: int = 72
    max_radius: Optional[float] = None

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigError("search grid needs at least one budget level")
        if self.mode not in ("directional", "exhaustive"):
            raise ConfigError(f"unknown search mode {self.mode!r}")
        if self.mode == "exhaustive" and self.angles < 4:
            raise ConfigError("exhaustive search needs at least 4 angles")


@dataclass(frozen=True)
class DisplacementCandidate:
    points: np.ndarray
    budget_used: float
    mean_loss: float


def _free_coords(space: DataSpace, dim):
    return dim - 1 if space.layout == "classification" else dim


def _directions(loss: LossSpec, space: DataSpace, z, grid: SearchGrid):
    dim = z.size
    free = _free_coords(space, dim)
    dirs = []
    if grid.mode == "exhaustive":
        if free > 2:
            raise ConfigError("exhaustive search supports at most 2 free coordinates")
        if free == 1:
            raw = [np.array([1.0]), np.array([-1.0])]
        else:
            th = 2 * math.pi * np.arange(grid.angles) / grid.angles
            raw = list(np.stack([np.cos(th), np.sin(th)], axis=1))
        for r in raw:
            u = np.zeros(dim)
            u[:free] = r
            dirs.append(u / float(space.norm(u)))
        return dirs
    if loss.composed:
        for W, _ in loss.ridge(z):
            u = space.steepest(W[0])
            if np.any(u):
                dirs += [u, -u]
    else:
        try:
            u = space.steepest(loss.grad(z))
            if np.any(u):
                dirs += [u, -u]
        except Exception:
            pass
        for k in range(free):
            e = np.zeros(dim)
            e[k] = 1.0
            dirs += [e, -e]
    if not dirs:
        e = np.zeros(dim)
        e[0] = 1.0
        dirs = [e]
    return dirs


def oracle_worst_case(loss: LossSpec, P_n: EmpiricalDistribution, p, alpha, norm,
                      search: Optional[SearchGrid] = None):
    """Largest mean loss over n-point displacements inside the ball.

    Each sample is moved along a few candidate directions to one of
    ``search.levels`` budget levels.  For finite ``p`` the levels split the
    shared budget ``alpha**p`` and the allocation across samples is solved
    exactly by dynamic programming; for infinite ``p`` each sample searches
    its own ``alpha``-ball.  Returns ``(value, DisplacementCandidate)``.
    """
    p = _check_p(p)
    alpha = float(alpha)
    if alpha < 0:
        raise DomainError("radius must be nonnegative")
    grid = search or SearchGrid()
    space = loss.space(norm)
    Z, w = P_n.points, P_n.weights
    n, K = P_n.n, grid.levels
    frac = np.arange(K + 1) / K

    gains = np.empty((n, K + 1))
    moves = np.empty((n, K + 1, Z.shape[1]))
    for i in range(n):
        if p == INF:
            radii = alpha * frac
        elif w[i] > 0:
            radii = (alpha ** p * frac / w[i]) ** (1.0 / p)
        else:
            radii = np.zeros(K + 1)
        if grid.max_radius is not None:
            radii = np.minimum(radii, grid.max_radius)
        dirs = np.array(_directions(loss, space, Z[i], grid))
        cand = Z[i][None, None, :] + radii[None, :, None] * dirs[:, None, :]
        vals = loss.values(cand.reshape(-1, Z.shape[1])).reshape(len(dirs), K + 1)
        best = np.argmax(vals, axis=0)
        gains[i] = vals[best, np.arange(K + 1)]
        moves[i] = cand[best, np.arange(K + 1)]

    if p == INF:
        pick = np.argmax(gains, axis=1)
    else:
        pick = _allocate(w[:, None] * gains, K)
    pts = moves[np.arange(n), pick]
    disp = space.norm(pts - Z)
    if p == INF:
        used = float(np.max(disp))
    else:
        used = float(np.dot(w, disp ** p) ** (1.0 / p))
    mean = P_n.expect(loss.values(pts))
    pts.setflags(write=False)
    return mean, DisplacementCandidate(pts, used, mean)


def _allocate(G, K):
    """Maximize ``sum_i G[i, k_i]`` subject to ``sum_i k_i <= K``."""
    n = G.shape[0]
    best = np.full(K + 1, -INF)
    best[0] = 0.0
    choice = np.zeros((n, K + 1), dtype=int)
    b = np.arange(K + 1)
    for i in range(n):
        # total[b, k] = best[b - k] + G[i, k]
        k = np.arange(K + 1)
        idx = b[:, None] - k[None, :]
        prev = np.where(idx >= 0, best[np.clip(idx, 0, K)], -INF)
        total = prev + G[i][None, :]
        choice[i] = np.argmax(total, axis=1)
        best = total[b, choice[i]]
    out = np.zeros(n, dtype=int)
    rem = int(np.argmax(best))
    for i in range(n - 1, -1, -1):
        out[i] = choice[i, rem]
        rem -= out[i]
    return out
