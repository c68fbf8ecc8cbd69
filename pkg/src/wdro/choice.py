"""Choice probabilities from robust linear utility maximization.

A consumer facing random utilities picks the probability vector maximizing
``beta @ zbar - eta * D*(beta / eta)`` over the simplex.  The optimum is
``eta * grad D(zbar + a0 * 1)`` with the scalar ``a0`` fixed by normalization.
Exponential generators give multinomial logit, nested logit and GEV models.
All exponential quantities are handled in the log domain.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.special import logsumexp, softmax

from wdro.errors import ConfigError, DomainError, NoRootError

__all__ = [
    "ChoiceGenerator",
    "generator_grad",
    "solve_alpha0",
    "choice_probabilities",
    "mnl_closed_form",
    "nested_logit_closed_form",
    "gev_closed_form",
    "paired_combinatorial_logit",
    "conjugate",
    "representative_agent_value",
    "check_generator",
]

_MAX_DOUBLINGS = 200


def _lse(x):
    # scipy's logsumexp carries heavy per-call overhead for tiny vectors
    m = np.max(x)
    if not np.isfinite(m):
        return m
    return m + np.log(np.sum(np.exp(x - m)))


@dataclass(frozen=True, eq=False)
class ChoiceGenerator:
    """Distance generator ``D`` with scale ``eta``.

    ``mnl``: ``D(u) = sum_k exp(u_k)``.
    ``nested``: ``D(u) = sum_g (sum_{k in g} exp(u_k / tau_g))**tau_g``.
    ``gev``: ``D(u) = D0(exp(u))`` with ``D0`` homogeneous of degree
    ``degree``; ``grad_D0`` must be supplied alongside.
    """

    family: str
    dim: int
    nests: Optional[tuple] = None
    tau: Optional[tuple] = None
    D0: Optional[Callable] = None
    grad_D0: Optional[Callable] = None
    degree: float = 1.0
    eta: float = 1.0
    _nest_of: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.family not in ("mnl", "nested", "gev"):
            raise ConfigError(f"unknown choice family {self.family!r}")
        if self.dim < 1:
            raise DomainError("need at least one alternative")
        if not self.eta > 0:
            raise DomainError("eta must be positive")
        if self.family == "nested":
            self._validate_nests()
        if self.family == "gev":
            if self.D0 is None or self.grad_D0 is None:
                raise ConfigError("gev generators need D0 and its gradient")
            if not self.degree > 0:
                raise DomainError("homogeneity degree must be positive")
            self._validate_homogeneity()
            issues = [m for m in check_generator(self) if not m.startswith("even")]
            for msg in issues:
                warnings.warn(msg, stacklevel=3)

    def _validate_nests(self):
        if self.nests is None or self.tau is None:
            raise ConfigError("nested generators need nests and tau")
        nests = tuple(tuple(int(k) for k in g) for g in self.nests)
        tau = tuple(float(t) for t in self.tau)
        if any(len(g) == 0 for g in nests):
            raise DomainError("empty nest")
        if len(tau) != len(nests):
            raise DomainError("need one tau per nest")
        if any(not t > 0 for t in tau):
            raise DomainError("tau must be positive")
        flat = sorted(k for g in nests for k in g)
        if flat != list(range(self.dim)):
            raise DomainError(f"nests must partition 0..{self.dim - 1}")
        nest_of = np.empty(self.dim, dtype=int)
        for j, g in enumerate(nests):
            nest_of[list(g)] = j
        object.__setattr__(self, "nests", nests)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "_nest_of", nest_of)

    def _validate_homogeneity(self, points=10, rtol=1e-8):
        rng = np.random.default_rng(0)
        for _ in range(points):
            Y = rng.uniform(0.1, 10.0, self.dim)
            t = rng.uniform(0.5, 2.0)
            lhs = float(self.D0(t * Y))
            rhs = t ** self.degree * float(self.D0(Y))
            if abs(lhs - rhs) > rtol * (1.0 + abs(rhs)):
                raise DomainError(f"D0 is not homogeneous of degree {self.degree}")

    @classmethod
    def mnl(cls, dim, eta=1.0):
        return cls("mnl", dim, eta=eta)

    @classmethod
    def nested(cls, nests, tau, eta=1.0):
        dim = sum(len(g) for g in nests)
        return cls("nested", dim, nests=tuple(map(tuple, nests)), tau=tuple(tau), eta=eta)

    @classmethod
    def gev(cls, D0, grad_D0, dim, degree=1.0, eta=1.0):
        return cls("gev", dim, D0=D0, grad_D0=grad_D0, degree=degree, eta=eta)

    # log-domain evaluation -------------------------------------------------
    def _u(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise DomainError(f"expected {self.dim} utilities, got shape {u.shape}")
        if not np.all(np.isfinite(u)):
            raise DomainError("utilities must be finite")
        return u

    def _nest_lse(self, u):
        out = np.empty(len(self.nests))
        for j, (g, t) in enumerate(zip(self.nests, self.tau)):
            out[j] = _lse(u[list(g)] / t)
        return out

    def log_value(self, u) -> float:
        u = self._u(u)
        if self.family == "mnl":
            return float(_lse(u))
        if self.family == "nested":
            return float(_lse(np.array(self.tau) * self._nest_lse(u)))
        m = float(np.max(u))
        return self.degree * m + float(np.log(self.D0(np.exp(u - m))))

    def value(self, u) -> float:
        return float(np.exp(self.log_value(u)))

    def log_grad(self, u):
        u = self._u(u)
        if self.family == "mnl":
            return u.copy()
        if self.family == "nested":
            tau = np.array(self.tau)[self._nest_of]
            lse = self._nest_lse(u)[self._nest_of]
            return u / tau + (tau - 1.0) * lse
        m = float(np.max(u))
        with np.errstate(divide="ignore"):
            dg = np.log(np.asarray(self.grad_D0(np.exp(u - m)), dtype=float))
        return u + (self.degree - 1.0) * m + dg

    def grad(self, u):
        return np.exp(self.log_grad(u))


def generator_grad(G: ChoiceGenerator, u):
    return G.grad(u)


def check_generator(G: ChoiceGenerator, pairs=20, seed=0):
    """Spot-check strict convexity, evenness and monotonicity of ``D``.

    Returns a list of human-readable violations (empty when none found).
    """
    rng = np.random.default_rng(seed)
    issues = []
    for _ in range(pairs):
        u, v = rng.normal(size=(2, G.dim))
        mid = G.value(0.5 * (u + v))
        if not mid < 0.5 * (G.value(u) + G.value(v)):
            issues.append("strict convexity fails on a sampled pair")
            break
    for _ in range(pairs):
        u = rng.normal(size=G.dim)
        if not np.isclose(G.value(u), G.value(np.abs(u)), rtol=1e-10):
            issues.append("evenness D(u) = D(|u|) fails on a sampled point")
            break
    for _ in range(pairs):
        u = np.abs(rng.normal(size=G.dim))
        step = np.abs(rng.normal(size=G.dim))
        if G.value(u + step) < G.value(u) * (1 - 1e-12):
            issues.append("D decreases on the positive orthant")
            break
    return issues


def _log_total(G: ChoiceGenerator, zbar, a):
    return float(np.log(G.eta) + _lse(G.log_grad(zbar + a)))


def solve_alpha0(G: ChoiceGenerator, zbar) -> float:
    """Shift ``a0`` with ``sum_k eta * grad_k D(zbar + a0) = 1``.

    Bisection on an expanding bracket, in the log domain.
    """
    zbar = G._u(zbar)

    def phi(a):
        return _log_total(G, zbar, a)

    lo, hi = -1.0, 1.0
    for _ in range(_MAX_DOUBLINGS):
        flo, fhi = phi(lo), phi(hi)
        if flo <= 0.0 <= fhi:
            break
        if flo > 0.0:
            lo, hi = 2.0 * lo, lo if fhi > 0 else hi
        if fhi < 0.0:
            lo, hi = hi if flo < 0 else lo, 2.0 * hi
    else:
        raise NoRootError("no normalizing shift found; the generator may be invalid")
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        fm = phi(mid)
        if fm == 0.0:
            return mid
        if fm < 0.0:
            lo = mid
        else:
            hi = mid
    return lo if abs(phi(lo)) <= abs(phi(hi)) else hi


def choice_probabilities(G: ChoiceGenerator, zbar):
    """Choice probabilities ``eta * grad D(zbar + a0 * 1)``."""
    zbar = G._u(zbar)
    a0 = solve_alpha0(G, zbar)
    return np.exp(np.log(G.eta) + G.log_grad(zbar + a0))


def mnl_closed_form(zbar):
    return softmax(np.asarray(zbar, dtype=float))


def nested_logit_closed_form(zbar, nests: Sequence[Sequence[int]], tau: Sequence[float]):
    zbar = np.asarray(zbar, dtype=float)
    if any(len(g) == 0 for g in nests):
        raise DomainError("empty nest")
    logits = np.empty_like(zbar)
    for g, t in zip(nests, tau):
        g = list(g)
        logits[g] = zbar[g] / t + (t - 1.0) * logsumexp(zbar[g] / t)
    return softmax(logits)


def gev_closed_form(zbar, grad_D0: Callable):
    zbar = np.asarray(zbar, dtype=float)
    m = float(np.max(zbar))
    with np.errstate(divide="ignore"):
        logits = zbar + np.log(np.asarray(grad_D0(np.exp(zbar - m)), dtype=float))
    return softmax(logits)


def paired_combinatorial_logit(mu: float):
    """``D0(Y) = sum_{k<l} (Y_k**(1/mu) + Y_l**(1/mu))**mu``, degree one."""
    if not 0 < mu <= 1:
        raise DomainError("mu must lie in (0, 1]")

    def D0(Y):
        Y = np.asarray(Y, dtype=float) ** (1.0 / mu)
        S = Y[:, None] + Y[None, :]
        iu = np.triu_indices(Y.size, 1)
        return float(np.sum(S[iu] ** mu))

    def grad(Y):
        Y = np.asarray(Y, dtype=float)
        Ym = Y ** (1.0 / mu)
        S = Ym[:, None] + Ym[None, :]
        np.fill_diagonal(S, 1.0)
        T = S ** (mu - 1.0)
        np.fill_diagonal(T, 0.0)
        return T.sum(axis=1) * Y ** (1.0 / mu - 1.0)

    return D0, grad


def conjugate(G: ChoiceGenerator, y) -> float:
    """Convex conjugate ``D*(y) = sup_u u @ y - D(u)`` for ``y >= 0``."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        return np.inf
    if G.family == "mnl":
        pos = y > 0
        return float(np.sum(y[pos] * (np.log(y[pos]) - 1.0)))
    pos = y[y > 0]
    if pos.size == 0:
        return 0.0
    lb = float(np.log(pos.min())) - 40.0
    u0 = np.log(np.maximum(y, np.exp(lb)))

    def fun(u):
        return G.value(u) - u @ y, G.grad(u) - y

    res = optimize.minimize(fun, u0, jac=True, method="L-BFGS-B",
                            bounds=[(lb, float(np.log(pos.max())) + 40.0)] * G.dim,
                            options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 5000})
    return float(-res.fun)


def representative_agent_value(beta, zbar, G: ChoiceGenerator) -> float:
    """``beta @ zbar - eta * D*(beta / eta)`` for ``beta`` on the simplex."""
    beta = np.asarray(beta, dtype=float)
    zbar = G._u(zbar)
    if beta.shape != zbar.shape:
        raise DomainError("beta and zbar differ in length")
    if np.any(beta < 0) or abs(beta.sum() - 1.0) > 1e-9:
        raise DomainError("beta must lie on the probability simplex")
    return float(beta @ zbar - G.eta * conjugate(G, beta / G.eta))
