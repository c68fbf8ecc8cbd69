"""Worst-case expected loss through the one-dimensional dual.

For a finite order ``p`` the worst case over the Wasserstein ball equals

    min_{lam >= 0}  lam * alpha**p + sum_i w_i sup_z [loss(z) - lam * ||z - z_i||**p]

which is convex in ``lam``.  The outer problem is solved by golden-section
search; inner suprema are exact one-dimensional problems for the composed
families and a directional search plus local polish for smooth-custom losses.
For ``p = inf`` each sample is maximized independently over its own ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from wdro.core import INF, DataSpace, EmpiricalDistribution, LossSpec, UnivariateLoss
from wdro.errors import DomainError, UnboundedError

__all__ = [
    "InnerSup",
    "DualCertificate",
    "inner_sup",
    "inner_sups",
    "dual_objective",
    "lambda_threshold",
    "worst_case_dual",
    "worst_case_inf",
    "empirical_risk",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_GRID = 1025
_MAX_DOUBLINGS = 200


@dataclass(frozen=True)
class InnerSup:
    """``sup_z loss(z) - lam ||z - anchor||**p`` for one anchor.

    ``bounded`` is False when the supremum is infinite; then ``value`` is
    ``inf`` and ``point`` is None.  ``excess`` is ``value - loss(anchor)``.
    """

    value: float
    excess: float
    point: Optional[np.ndarray]
    bounded: bool = True
    warning: Optional[str] = None


@dataclass
class DualCertificate:
    lambda_star: float
    dual_value: float
    per_sample_sup: list
    bracket: tuple
    iterations: int
    alpha: float
    p: float
    growth: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.dual_value


def empirical_risk(loss: LossSpec, P: EmpiricalDistribution) -> float:
    return P.expect(loss.values(P.points))


def _check_growth(loss: LossSpec, p):
    g = loss.growth()
    if p < g:
        raise UnboundedError(
            f"Wasserstein order p={p} is below the loss growth order {g}: "
            "the worst-case loss is infinite")
    return g


def lambda_threshold(loss: LossSpec, p, norm) -> float:
    """Smallest multiplier at which every inner supremum can be finite."""
    if not loss.composed:
        return 0.0
    space = loss.space(norm)
    out = 0.0
    for b, l in zip(loss._ridge_templates(), loss.pieces):
        bn = float(space.dual_norm(b))
        if p == 1.0 and l.lipschitz is not None:
            out = max(out, l.lipschitz * bn)
        elif l.growth == p:
            out = max(out, l.growth_coef * bn ** p)
    return out


# one-dimensional machinery ---------------------------------------------------

def _argmax_rows(g, lo, hi, iters=90):
    """Maximize ``g`` row-wise over ``[lo_i, hi_i]``: grid, then golden refine.

    ``g`` maps an (n, k) array of abscissae to values, row ``i`` belonging to
    problem ``i``.
    """
    n = lo.shape[0]
    rows = np.arange(n)
    ts = lo[:, None] + (hi - lo)[:, None] * np.linspace(0.0, 1.0, _GRID)[None, :]
    vals = g(ts)
    j = np.argmax(vals, axis=1)
    best_t = ts[rows, j]
    best_v = vals[rows, j]
    a = ts[rows, np.maximum(j - 1, 0)]
    b = ts[rows, np.minimum(j + 1, _GRID - 1)]
    for _ in range(iters):
        c = b - _GOLDEN * (b - a)
        d = a + _GOLDEN * (b - a)
        v = g(np.stack([c, d], axis=1))
        left = v[:, 0] >= v[:, 1]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    mid = 0.5 * (a + b)
    vm = g(mid[:, None])[:, 0]
    take = vm > best_v
    return np.where(take, mid, best_t), np.where(take, vm, best_v)


def _ridge_radius(l: UnivariateLoss, t0, b, lam, p):
    """Half-width outside which ``l(t0 + t) - lam (|t|/b)**p < l(t0)``.

    Returns ``inf`` for rows whose objective does not settle (unbounded).
    """
    if l.lipschitz is not None and p > 1.0:
        return np.full(t0.shape, (l.lipschitz * b ** p / lam) ** (1.0 / (p - 1.0)))

    def g(t):
        return l(t0 + t) - lam * (np.abs(t) / b) ** p

    T = 1.0 + np.abs(t0)
    g0 = l(t0)
    out = np.full(t0.shape, INF)
    open_ = np.ones(t0.shape, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(_MAX_DOUBLINGS):
            ok = np.ones(t0.shape, dtype=bool)
            for s in (1.0, -1.0):
                g1, g2 = g(s * T), g(2 * s * T)
                ok &= (g1 <= g0) & (g2 <= g1)
            newly = ok & open_
            out[newly] = T[newly]
            open_ &= ~ok
            if not open_.any():
                break
            T = np.where(open_, 2.0 * T, T)
    return out


def _ridge_sup(l: UnivariateLoss, t0, b, lam, p):
    """Row-wise ``sup_t l(t0 + t) - lam (|t|/b)**p``; returns (values, t*)."""
    t0 = np.asarray(t0, dtype=float)
    g0 = l(t0)
    if b == 0.0:
        return g0, np.zeros_like(t0)
    if p == 1.0:
        if l.lipschitz is None:
            raise UnboundedError(f"{l.name} is not Lipschitz; p=1 gives an infinite worst case")
        if lam >= l.lipschitz * b:
            return g0, np.zeros_like(t0)
        if not l.asymptotic_slope:
            raise DomainError(f"{l.name} has no declared asymptotic slope; "
                              "cannot decide the supremum below the threshold")
        return np.full(t0.shape, INF), np.full(t0.shape, np.nan)
    if lam <= 0.0:
        return np.full(t0.shape, INF), np.full(t0.shape, np.nan)
    if l.growth == p and lam / b ** p < l.growth_coef:
        return np.full(t0.shape, INF), np.full(t0.shape, np.nan)

    T = _ridge_radius(l, t0, b, lam, p)
    vals = np.full(t0.shape, INF)
    ts = np.full(t0.shape, np.nan)
    fin = np.isfinite(T)
    if fin.any():
        tf0 = t0[fin]

        def g(t):
            return l(tf0[:, None] + t) - lam * (np.abs(t) / b) ** p

        t_best, v_best = _argmax_rows(g, -T[fin], T[fin])
        zero = g0[fin] >= v_best
        vals[fin] = np.where(zero, g0[fin], v_best)
        ts[fin] = np.where(zero, 0.0, t_best)
    return vals, ts


def _move(space: DataSpace, z, w, t):
    """Point ``z + u`` with ``w @ u = t`` and ``||u|| = |t| / ||w||_*``."""
    bn = float(space.dual_norm(w))
    if t == 0.0 or bn == 0.0:
        return np.array(z, dtype=float)
    return z + (abs(t) / bn) * space.steepest(np.sign(t) * w)


def _composed_sups(loss: LossSpec, Z, lam, p, space):
    """Inner suprema for all rows of ``Z`` (composed families)."""
    best_v = np.full(Z.shape[0], -INF)
    best_pt = [None] * Z.shape[0]
    for W, l in loss.ridge(Z):
        b = float(space.dual_norm(W[0]))
        t0 = np.einsum("ij,ij->i", W, Z)
        v, t = _ridge_sup(l, t0, b, lam, p)
        for i in np.flatnonzero(v > best_v):
            best_v[i] = v[i]
            best_pt[i] = None if not np.isfinite(v[i]) else _move(space, Z[i], W[i], t[i])
    base = loss.values(Z)
    return [InnerSup(float(v), float(v - f0), pt, bool(np.isfinite(v)))
            for v, f0, pt in zip(best_v, base, best_pt)]


def _line_max(phi, S):
    """Max of a scalar function on ``[0, S]``: grid then golden refine."""
    f = np.vectorize(phi)
    s, v = _argmax_rows(lambda t: f(t), np.zeros(1), np.array([S]), iters=60)
    return float(s[0]), float(v[0])


def _smooth_sup(loss: LossSpec, z, lam, p, space):
    free = z.size - 1 if space.layout == "classification" else z.size
    f0 = loss.value(z)
    if lam <= 0.0:
        return InnerSup(INF, INF, None, False)
    dirs = []
    try:
        u = space.steepest(loss.grad(z))
        if np.any(u):
            dirs += [u, -u]
    except Exception:
        pass
    for k in range(free):
        e = np.zeros(z.size)
        e[k] = 1.0
        dirs += [e, -e]

    best_v, best_z = f0, z.copy()
    for u in dirs:
        def phi(s, u=u):
            return loss.value(z + s * u) - lam * s ** p

        S = 1.0 + float(np.linalg.norm(z))
        for _ in range(_MAX_DOUBLINGS):
            p1, p2 = phi(S), phi(2 * S)
            if p1 <= f0 and p2 <= p1:
                break
            S *= 2.0
        else:
            return InnerSup(INF, INF, None, False)
        s, v = _line_max(phi, S)
        if v > best_v:
            best_v, best_z = v, z + s * u

    def neg(x):
        return -(loss.value(x) - lam * float(space.norm(x - z)) ** p)

    res = optimize.minimize(neg, best_z, method="Powell",
                            options={"xtol": 1e-10, "ftol": 1e-13, "maxfev": 4000})
    warning = None
    if np.isfinite(res.fun) and -res.fun > best_v:
        if -res.fun > best_v + 1e-6:
            warning = "local polish moved the inner supremum by more than 1e-6"
        best_v, best_z = float(-res.fun), np.asarray(res.x, dtype=float)
    return InnerSup(best_v, best_v - f0, best_z, True, warning)


def inner_sups(loss: LossSpec, Z, lam, p, norm):
    """Inner suprema for every row of ``Z``."""
    p = float(p)
    lam = float(lam)
    if lam < 0:
        raise DomainError("multiplier must be nonnegative")
    _check_growth(loss, p)
    space = loss.space(norm)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if loss.composed:
        return _composed_sups(loss, Z, lam, p, space)
    return [_smooth_sup(loss, z, lam, p, space) for z in Z]


def inner_sup(loss: LossSpec, anchor, lam, p, norm) -> InnerSup:
    """``sup_z loss(z) - lam * ||z - anchor||**p``."""
    return inner_sups(loss, anchor, lam, p, norm)[0]


def dual_objective(loss: LossSpec, P: EmpiricalDistribution, lam, p, alpha, norm) -> float:
    sups = inner_sups(loss, P.points, lam, p, norm)
    if not all(s.bounded for s in sups):
        return INF
    return lam * alpha ** p + P.expect([s.value for s in sups])


def worst_case_dual(loss: LossSpec, P: EmpiricalDistribution, p, alpha, norm,
                    tol: float = 1e-9) -> DualCertificate:
    """Worst-case expected loss over the order-``p`` ball via the dual."""
    p = float(p)
    alpha = float(alpha)
    if not 1.0 <= p < INF:
        raise DomainError(f"worst_case_dual needs p in [1, inf), got {p}; "
                          "use worst_case_inf for p = inf")
    if alpha < 0:
        raise DomainError("radius must be nonnegative")
    order = _check_growth(loss, p)
    growth = {"order": order, "p": p}
    lo = lambda_threshold(loss, p, norm)

    if alpha == 0.0:
        vals = loss.values(P.points)
        sups = [InnerSup(float(v), 0.0, z.copy()) for v, z in zip(vals, P.points)]
        return DualCertificate(lo, P.expect(vals), sups, (lo, lo), 0, alpha, p, growth)

    calls = [0]

    def F(lam):
        calls[0] += 1
        return dual_objective(loss, P, lam, p, alpha, norm)

    lipschitz_p1 = p == 1.0 and loss.lipschitz_z(norm) is not None
    if lipschitz_p1:
        hi = 2.0 * lo if lo > 0 else 1.0
    else:
        step = max(1.0, lo)
        for _ in range(_MAX_DOUBLINGS):
            f1, f2 = F(lo + step), F(lo + 2.0 * step)
            if np.isfinite(f1) and f2 > f1:
                break
            step *= 2.0
        else:
            raise UnboundedError("dual objective did not increase within the bracket search")
        hi = lo + 2.0 * step

    a, b = lo, hi
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = F(c), F(d)
    iters = 0
    while b - a > tol * (1.0 + hi):
        iters += 1
        if fc <= fd and not (fc == INF and fd == INF):
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = F(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = F(d)
    cands = [(lo, F(lo)), (c, fc), (d, fd)]
    lam_star, val = min(cands, key=lambda kv: (kv[1], kv[0]))
    if not np.isfinite(val):
        raise UnboundedError("dual objective is infinite on the whole bracket")
    sups = inner_sups(loss, P.points, lam_star, p, norm)
    warnings = sorted({s.warning for s in sups if s.warning})
    value = lam_star * alpha ** p + P.expect([s.value for s in sups])
    return DualCertificate(float(lam_star), float(value), sups, (lo, hi), iters,
                           alpha, p, growth, warnings)


# p = inf ---------------------------------------------------------------------

def _ball_max_composed(loss: LossSpec, Z, alpha, space):
    best_v = np.full(Z.shape[0], -INF)
    best_pt = [None] * Z.shape[0]
    for W, l in loss.ridge(Z):
        b = float(space.dual_norm(W[0]))
        t0 = np.einsum("ij,ij->i", W, Z)
        if b == 0.0 or alpha == 0.0:
            v, t = l(t0), np.zeros_like(t0)
        else:
            r = np.full(t0.shape, alpha * b)

            def g(t):
                return l(t0[:, None] + t)

            t, v = _argmax_rows(g, -r, r)
            ends = np.stack([l(t0 - alpha * b), l(t0), l(t0 + alpha * b)], axis=1)
            k = np.argmax(ends, axis=1)
            use = ends[np.arange(t0.size), k] > v
            v = np.where(use, ends[np.arange(t0.size), k], v)
            t = np.where(use, np.array([-alpha * b, 0.0, alpha * b])[k], t)
        for i in np.flatnonzero(v > best_v):
            best_v[i] = v[i]
            best_pt[i] = _move(space, Z[i], W[i], t[i])
    return best_v, best_pt


def _ball_max_smooth(loss: LossSpec, z, alpha, space):
    free = z.size - 1 if space.layout == "classification" else z.size
    best_v, best_z = loss.value(z), z.copy()
    if alpha == 0.0:
        return best_v, best_z
    dirs = []
    try:
        u = space.steepest(loss.grad(z))
        if np.any(u):
            dirs += [u, -u]
    except Exception:
        pass
    for k in range(free):
        e = np.zeros(z.size)
        e[k] = 1.0
        dirs += [e, -e]
    for u in dirs:
        s, v = _line_max(lambda s, u=u: loss.value(z + s * u), alpha)
        if v > best_v:
            best_v, best_z = v, z + s * u
    cons = {"type": "ineq", "fun": lambda x: alpha - float(space.norm(x - z))}
    res = optimize.minimize(lambda x: -loss.value(x), best_z, method="SLSQP",
                            constraints=[cons], options={"ftol": 1e-13, "maxiter": 200})
    if (np.all(np.isfinite(res.x)) and float(space.norm(res.x - z)) <= alpha * (1 + 1e-12)
            and -res.fun > best_v):
        best_v, best_z = float(-res.fun), np.asarray(res.x, dtype=float)
    return best_v, best_z


def worst_case_inf(loss: LossSpec, P: EmpiricalDistribution, alpha, norm):
    """Worst case over the ``p = inf`` ball: every sample moves within ``alpha``.

    Returns ``(value, points)`` where ``points[i]`` maximizes the loss over the
    ball around sample ``i``.
    """
    alpha = float(alpha)
    if alpha < 0:
        raise DomainError("radius must be nonnegative")
    space = loss.space(norm)
    Z = P.points
    if loss.composed:
        vals, pts = _ball_max_composed(loss, Z, alpha, space)
    else:
        out = [_ball_max_smooth(loss, z, alpha, space) for z in Z]
        vals = np.array([v for v, _ in out])
        pts = [z for _, z in out]
    pts = np.array(pts)
    return P.expect(loss.values(pts)), pts
