"""Norms, empirical distributions and loss families.

Exponents live in ``[1, inf]`` with ``math.inf`` as the only representation of
the infinite exponent.  Data points are rows of a 2-D float array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from wdro.errors import ConfigError, DomainError, KinkError

INF = math.inf

__all__ = [
    "INF",
    "dual_exponent",
    "NormSpec",
    "DataSpace",
    "EmpiricalDistribution",
    "empirical_norm",
    "UnivariateLoss",
    "UNIVARIATE_LOSSES",
    "LossSpec",
    "SmoothnessCertificate",
    "loss_eval",
    "loss_grad_z",
    "central_difference",
]


def _check_exponent(q, name="exponent"):
    q = float(q)
    if math.isnan(q) or q < 1.0:
        raise DomainError(f"{name} must lie in [1, inf], got {q}")
    return q


def dual_exponent(q: float) -> float:
    """Hölder conjugate of ``q``: ``1/q + 1/q* = 1`` with ``1 <-> inf``."""
    q = _check_exponent(q)
    if q == 1.0:
        return INF
    if q == INF:
        return 1.0
    return q / (q - 1.0)


def _lq_norm(v, q):
    v = np.asarray(v, dtype=float)
    if q == INF:
        return np.max(np.abs(v), axis=-1)
    if q == 1.0:
        return np.sum(np.abs(v), axis=-1)
    # scale by the largest entry so tiny or huge vectors neither under- nor overflow
    a = np.abs(v)
    top = np.max(a, axis=-1, keepdims=True)
    safe = np.where(top > 0, top, 1.0)
    r = a / safe
    if q == 2.0:
        s = np.sqrt(np.sum(r * r, axis=-1))
    else:
        s = np.sum(r ** q, axis=-1) ** (1.0 / q)
    return np.where(top[..., 0] > 0, top[..., 0] * s, 0.0)


def _lq_steepest(g, q):
    """Unit vector ``u`` (in the l_q norm) maximizing ``g @ u``."""
    g = np.asarray(g, dtype=float)
    u = np.zeros_like(g)
    if not np.any(g):
        return u
    if q == 1.0:
        k = int(np.argmax(np.abs(g)))
        u[k] = np.sign(g[k])
        return u
    if q == INF:
        return np.sign(g)
    qs = q / (q - 1.0)
    a = np.abs(g) / np.max(np.abs(g))
    u = np.sign(g) * a ** (qs - 1.0)
    return u / _lq_norm(u, q)


@dataclass(frozen=True)
class NormSpec:
    """The l_q norm on R^d together with its dual (the l_{q*} norm)."""

    q: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "q", _check_exponent(self.q, "norm exponent"))

    @property
    def dual_q(self) -> float:
        return dual_exponent(self.q)

    @property
    def dual(self) -> "NormSpec":
        return NormSpec(self.dual_q)

    def norm(self, v):
        return _lq_norm(v, self.q)

    def dual_norm(self, v):
        return _lq_norm(v, self.dual_q)

    def steepest(self, g):
        return _lq_steepest(g, self.q)

    def pairwise(self, X, Y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if X.shape[1] != Y.shape[1]:
            raise DomainError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
        return self.norm(X[:, None, :] - Y[None, :, :])


LAYOUTS = ("plain", "regression", "classification")


@dataclass(frozen=True)
class DataSpace:
    """Metric structure of the data space built on a ground norm.

    ``plain``: z in R^d with the ground norm.
    ``regression``: z = (x, y), ``||(x, y)|| = ||x|| + |y|``.
    ``classification``: z = (x, y), labels immutable, so any displacement of
    the label has infinite cost and label gradients are ignored.
    """

    ground: NormSpec = field(default_factory=NormSpec)
    layout: str = "plain"

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ConfigError(f"unknown layout {self.layout!r}")

    def norm(self, v):
        v = np.asarray(v, dtype=float)
        if self.layout == "plain":
            return self.ground.norm(v)
        nx = self.ground.norm(v[..., :-1])
        if self.layout == "regression":
            return nx + np.abs(v[..., -1])
        return np.where(v[..., -1] == 0.0, nx, INF)

    def dual_norm(self, g):
        g = np.asarray(g, dtype=float)
        if self.layout == "plain":
            return self.ground.dual_norm(g)
        gx = self.ground.dual_norm(g[..., :-1])
        if self.layout == "regression":
            return np.maximum(gx, np.abs(g[..., -1]))
        return gx

    def steepest(self, g):
        g = np.asarray(g, dtype=float)
        if self.layout == "plain":
            return self.ground.steepest(g)
        u = np.zeros_like(g)
        gx = self.ground.dual_norm(g[:-1])
        if self.layout == "regression" and abs(g[-1]) > gx:
            u[-1] = np.sign(g[-1])
        else:
            u[:-1] = self.ground.steepest(g[:-1])
        return u

    def pairwise(self, X, Y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if X.shape[1] != Y.shape[1]:
            raise DomainError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
        return self.norm(X[:, None, :] - Y[None, :, :])


def as_space(metric) -> DataSpace:
    if isinstance(metric, DataSpace):
        return metric
    if isinstance(metric, NormSpec):
        return DataSpace(metric, "plain")
    return DataSpace(NormSpec(metric), "plain")


class EmpiricalDistribution:
    """Finitely supported distribution ``sum_i w_i delta_{z_i}`` on R^d."""

    def __init__(self, points, weights=None):
        pts = np.array(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise DomainError("need a non-empty (n, d) array of support points")
        if not np.all(np.isfinite(pts)):
            raise DomainError("support points must be finite")
        n = pts.shape[0]
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.array(weights, dtype=float).ravel()
            if w.shape != (n,):
                raise DomainError(f"expected {n} weights, got {w.shape[0]}")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise DomainError("weights must be finite and nonnegative")
            if abs(w.sum() - 1.0) > 1e-12:
                raise DomainError(f"weights sum to {w.sum():.17g}, not 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        self.points = pts
        self.weights = w

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def expect(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))

    def mean_point(self):
        return self.weights @ self.points

    def __repr__(self):
        return f"EmpiricalDistribution(n={self.n}, dim={self.dim})"


def empirical_norm(values, norm=None, p: float = 2.0, weights=None) -> float:
    """Weighted power mean of per-sample norms; the max when ``p`` is infinite.

    ``values`` is either an (n, d) array of vectors measured with ``norm``
    (anything with a ``norm`` method, or a callable) or a 1-D array of scalars
    whose absolute values are used.
    """
    p = _check_exponent(p, "p")
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        raise DomainError("empirical norm of an empty sample")
    if vals.ndim == 1:
        mags = np.abs(vals)
    else:
        if norm is None:
            raise DomainError("vector values need a norm")
        mags = norm.norm(vals) if hasattr(norm, "norm") else norm(vals)
    n = mags.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    if p == INF:
        return float(np.max(mags[w > 0]))
    top = np.max(mags)
    if top == 0.0 or not np.isfinite(top):
        return float(top)
    # scale before powering to keep large p from overflowing
    return float(top * np.dot(w, (mags / top) ** p) ** (1.0 / p))


@dataclass(frozen=True, eq=False)
class UnivariateLoss:
    """A loss on the real line used inside composed families.

    ``growth`` is the exponent g with ``|f(t)| ~ growth_coef * |t|**g`` along
    the worst direction; Lipschitz losses have g = 1.  ``asymptotic_slope``
    declares that ``|f'(t)|`` tends to ``lipschitz`` along some direction.
    ``curvature`` bounds ``|f''|`` when the derivative is Lipschitz.
    """

    name: str
    f: Callable
    df: Callable
    lipschitz: Optional[float] = None
    kinks: tuple = ()
    asymptotic_slope: bool = False
    growth: float = 1.0
    growth_coef: float = 1.0
    curvature: Optional[float] = None

    def __call__(self, t):
        return self.f(np.asarray(t, dtype=float))

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        if self.kinks and np.any(np.isin(t, self.kinks)):
            raise KinkError(f"{self.name} is not differentiable at {self.kinks}")
        return self.df(t)

    def subgrad(self, t):
        """Derivative, or the minimum-magnitude subgradient at a kink."""
        t = np.asarray(t, dtype=float)
        g = np.asarray(self.df(t), dtype=float)
        if self.kinks:
            at = np.isin(t, self.kinks)
            if np.any(at):
                eps = 1e-9 * (1.0 + np.abs(t))
                lo = self.df(t - eps)
                hi = self.df(t + eps)
                inside = np.where(lo * hi <= 0, 0.0,
                                  np.where(np.abs(lo) < np.abs(hi), lo, hi))
                g = np.where(at, inside, g)
        return g

    def __repr__(self):
        return f"UnivariateLoss({self.name!r})"


def _huber(delta):
    def f(t):
        a = np.abs(t)
        return np.where(a <= delta, 0.5 * t * t / delta, a - 0.5 * delta)

    def df(t):
        return np.clip(t / delta, -1.0, 1.0)

    return UnivariateLoss("huber", f, df, lipschitz=1.0, asymptotic_slope=True,
                          curvature=1.0 / delta)


UNIVARIATE_LOSSES = {
    "identity": UnivariateLoss("identity", lambda t: t * 1.0, lambda t: np.ones_like(t),
                               lipschitz=1.0, asymptotic_slope=True, curvature=0.0),
    "absolute": UnivariateLoss("absolute", np.abs, np.sign, lipschitz=1.0,
                               kinks=(0.0,), asymptotic_slope=True),
    "hinge": UnivariateLoss("hinge", lambda t: np.maximum(1.0 - t, 0.0),
                            lambda t: np.where(t < 1.0, -1.0, 0.0),
                            lipschitz=1.0, kinks=(1.0,), asymptotic_slope=True),
    "logistic": UnivariateLoss("logistic", lambda t: np.logaddexp(0.0, -t),
                               lambda t: -0.5 * (1.0 - np.tanh(0.5 * t)),
                               lipschitz=1.0, asymptotic_slope=True, curvature=0.25),
    "huber": _huber(1.0),
    "square": UnivariateLoss("square", lambda t: t * t, lambda t: 2.0 * t,
                             growth=2.0, growth_coef=1.0, curvature=2.0),
}


def _univariate(spec) -> UnivariateLoss:
    if isinstance(spec, UnivariateLoss):
        return spec
    try:
        return UNIVARIATE_LOSSES[spec]
    except KeyError:
        raise ConfigError(f"unknown univariate loss {spec!r}; "
                          f"choose from {sorted(UNIVARIATE_LOSSES)}") from None


FAMILIES = ("linear", "regression", "classification", "piecewise-max", "smooth-custom")
_LAYOUT = {"linear": "plain", "regression": "regression",
           "classification": "classification", "piecewise-max": "plain",
           "smooth-custom": "plain"}


class LossSpec:
    """A loss ``z -> loss_beta(z)`` from one of the supported families.

    ``linear``          l(beta @ z)            (identity l gives beta @ z)
    ``regression``      l(beta @ x - y)        z = (x, y)
    ``classification``  l(y * beta @ x)        z = (x, y), y in {-1, +1}
    ``piecewise-max``   max_m l_m(beta_m @ z)
    ``smooth-custom``   user value/gradient callables

    Use the classmethod constructors rather than ``__init__``.
    """

    def __init__(self, family, beta, pieces=(), value_fn=None, grad_fn=None,
                 dim=None, growth_order=None, domain=None):
        if family not in FAMILIES:
            raise ConfigError(f"unknown loss family {family!r}")
        self.family = family
        self.beta = np.array(beta, dtype=float)
        self.beta.setflags(write=False)
        self.pieces = tuple(pieces)
        self.value_fn = value_fn
        self.grad_fn = grad_fn
        self.growth_order = growth_order
        self.domain = domain
        if family == "smooth-custom":
            self.dim = int(dim)
        elif family in ("regression", "classification"):
            self.dim = self.beta.shape[-1] + 1
        else:
            self.dim = self.beta.shape[-1]

    # constructors ---------------------------------------------------------
    @classmethod
    def linear(cls, beta, loss="identity", domain=None):
        return cls("linear", np.ravel(beta), (_univariate(loss),), domain=domain)

    @classmethod
    def regression(cls, beta, loss="absolute", domain=None):
        return cls("regression", np.ravel(beta), (_univariate(loss),), domain=domain)

    @classmethod
    def classification(cls, beta, loss="hinge", domain=None):
        return cls("classification", np.ravel(beta), (_univariate(loss),), domain=domain)

    @classmethod
    def piecewise_max(cls, betas, losses="identity", domain=None):
        betas = np.atleast_2d(np.asarray(betas, dtype=float))
        if isinstance(losses, (str, UnivariateLoss)):
            losses = [losses] * betas.shape[0]
        if len(losses) != betas.shape[0]:
            raise ConfigError("need one univariate loss per piece")
        return cls("piecewise-max", betas, tuple(_univariate(l) for l in losses),
                   domain=domain)

    @classmethod
    def smooth(cls, value_fn, grad_fn, dim, growth_order=2.0, beta=()):
        return cls("smooth-custom", beta, (), value_fn=value_fn, grad_fn=grad_fn,
                   dim=dim, growth_order=float(growth_order))

    @classmethod
    def quadratic(cls, beta):
        """``(beta @ z) ** 2`` as a composed linear-family loss."""
        return cls.linear(beta, "square")

    # structure ------------------------------------------------------------
    @property
    def composed(self) -> bool:
        return self.family != "smooth-custom"

    @property
    def univariate(self) -> UnivariateLoss:
        return self.pieces[0]

    @property
    def piece_betas(self):
        return self.beta if self.family == "piecewise-max" else self.beta[None, :]

    def space(self, norm) -> DataSpace:
        ground = norm.ground if isinstance(norm, DataSpace) else (
            norm if isinstance(norm, NormSpec) else NormSpec(norm))
        return DataSpace(ground, _LAYOUT[self.family])

    def ridge(self, Z):
        """Per-piece ridge vectors: ``[(W, l)]`` with ``W`` of shape (n, dim).

        For every piece the loss is ``l(W[i] @ z)`` near sample ``i``.
        """
        Z = self._points(Z)
        n = Z.shape[0]
        if self.family in ("linear", "piecewise-max"):
            return [(np.broadcast_to(b, (n, self.dim)), l)
                    for b, l in zip(self.piece_betas, self.pieces)]
        if self.family == "regression":
            w = np.append(self.beta, -1.0)
            return [(np.broadcast_to(w, (n, self.dim)), self.univariate)]
        if self.family == "classification":
            y = Z[:, -1]
            if not np.all(np.isin(y, (-1.0, 1.0))):
                raise DomainError("classification labels must be -1 or +1")
            W = np.zeros((n, self.dim))
            W[:, :-1] = y[:, None] * self.beta[None, :]
            return [(W, self.univariate)]
        raise DomainError("smooth-custom losses have no ridge structure")

    def _points(self, Z):
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[None, :]
        if Z.shape[-1] != self.dim:
            raise DomainError(f"loss expects dimension {self.dim}, got {Z.shape[-1]}")
        return Z

    # evaluation -----------------------------------------------------------
    def values(self, Z):
        Z = self._points(Z)
        if not self.composed:
            return np.array([float(self.value_fn(z)) for z in Z])
        out = None
        for W, l in self.ridge(Z):
            v = l(np.einsum("ij,ij->i", W, Z))
            out = v if out is None else np.maximum(out, v)
        return out

    def value(self, z) -> float:
        return float(self.values(z)[0])

    def grad(self, z):
        z = np.asarray(z, dtype=float)
        Z = self._points(z)
        if not self.composed:
            return np.asarray(self.grad_fn(Z[0]), dtype=float)
        pieces = self.ridge(Z)
        vals = [l(W[0] @ Z[0]) for W, l in pieces]
        top = max(vals)
        active = [i for i, v in enumerate(vals) if v == top]
        grads = [pieces[i][1].deriv(pieces[i][0][0] @ Z[0]) * pieces[i][0][0]
                 for i in active]
        if any(not np.allclose(g, grads[0], rtol=0, atol=0) for g in grads[1:]):
            raise KinkError("tie between pieces with different gradients")
        return np.array(grads[0], dtype=float)

    def grads(self, Z):
        return np.array([self.grad(z) for z in self._points(Z)])

    def lipschitz_z(self, norm) -> Optional[float]:
        """Lipschitz constant of ``z -> loss(z)`` in the data-space norm."""
        if not self.composed:
            return None
        space = self.space(norm)
        consts = []
        for b, l in zip(self._ridge_templates(), self.pieces):
            if l.lipschitz is None:
                return None
            consts.append(l.lipschitz * float(space.dual_norm(b)))
        return max(consts)

    def _ridge_templates(self):
        """Ridge vectors with the classification label folded out."""
        if self.family == "regression":
            return [np.append(self.beta, -1.0)]
        if self.family == "classification":
            return [np.append(self.beta, 0.0)]
        return list(self.piece_betas)

    def growth(self) -> float:
        if not self.composed:
            return float(self.growth_order)
        return max(l.growth for l in self.pieces)

    def __repr__(self):
        names = ",".join(l.name for l in self.pieces)
        return f"LossSpec({self.family!r}, beta={self.beta.tolist()}, loss={names!r})"


def loss_eval(loss: LossSpec, z) -> float:
    return loss.value(z)


def loss_grad_z(loss: LossSpec, z):
    return loss.grad(z)


def central_difference(f, z, step=None):
    """Central finite-difference gradient with step ``1e-6 * (1 + ||z||)``."""
    z = np.asarray(z, dtype=float)
    h = 1e-6 * (1.0 + np.linalg.norm(z)) if step is None else step
    g = np.empty_like(z)
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = h
        g[k] = (f(z + e) - f(z - e)) / (2.0 * h)
    return g


@dataclass(frozen=True, eq=False)
class SmoothnessCertificate:
    """Hölder-gradient constants: ``||grad(z) - grad(z')||_* <=
    h(z') ||z - z'||**kappa + C ||z - z'||**q``."""

    kappa: float
    h: object = 0.0
    C: float = 0.0
    q: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise DomainError(f"kappa must lie in [0, 1], got {self.kappa}")
        if self.C < 0:
            raise DomainError("C must be nonnegative")
        if self.C > 0 and (self.q is None or not 1.0 < self.q < INF):
            raise DomainError("C > 0 needs a growth exponent q in (1, inf)")

    def h_values(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if callable(self.h):
            return np.array([float(self.h(z)) for z in Z])
        return np.full(Z.shape[0], float(self.h))

    def max_violation(self, loss: LossSpec, norm, pairs: Sequence) -> float:
        """Largest ``lhs - rhs`` of the Hölder condition over ``(z, z')`` pairs."""
        space = loss.space(norm)
        worst = -INF
        for z, zp in pairs:
            d = float(space.norm(np.asarray(z) - np.asarray(zp)))
            lhs = float(space.dual_norm(loss.grad(z) - loss.grad(zp)))
            rhs = self.h_values(zp)[0] * d ** self.kappa
            if self.C:
                rhs += self.C * d ** self.q
            worst = max(worst, lhs - rhs)
        return worst
