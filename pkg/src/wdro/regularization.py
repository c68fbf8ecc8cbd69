"""Gradient-norm regularization as a first-order surrogate of the worst case.

Provides the gradient-norm penalty, upper and lower bounds on the worst-case
loss from Hölder-gradient constants, the shrinking-radius gap experiment and
the scalar Young-type inequality used to derive the upper bound.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from wdro.core import (INF, EmpiricalDistribution, LossSpec, SmoothnessCertificate,
                       dual_exponent, empirical_norm)
from wdro.duality import empirical_risk, worst_case_dual, worst_case_inf
from wdro.errors import ConfigError, DomainError

__all__ = [
    "grad_penalty",
    "gradient_certificate",
    "upper_bound",
    "lower_bound",
    "worst_case",
    "Sampler",
    "SAMPLERS",
    "GapRow",
    "GapCurve",
    "geometric_alphas",
    "asymptotic_gap_curve",
    "YoungCheck",
    "young_check",
]


def grad_penalty(loss: LossSpec, P: EmpiricalDistribution, p, norm) -> float:
    """Empirical ``p*``-norm of the sample gradients measured in the dual norm."""
    space = loss.space(norm)
    mags = space.dual_norm(loss.grads(P.points))
    return empirical_norm(mags, p=dual_exponent(p), weights=P.weights)


def gradient_certificate(loss: LossSpec, norm) -> SmoothnessCertificate:
    """Lipschitz-gradient constants (kappa = 1) for single-piece composed losses.

    ``grad = l'(w @ z) w`` so the gradient moves by at most
    ``sup|l''| * ||w||_***2 * ||z - z'||``.
    """
    if not loss.composed or len(loss.pieces) != 1:
        raise DomainError("automatic certificates need a single-piece composed loss")
    l = loss.univariate
    if l.curvature is None:
        raise DomainError(f"{l.name} has no Lipschitz derivative")
    space = loss.space(norm)
    b = float(space.dual_norm(loss._ridge_templates()[0]))
    return SmoothnessCertificate(kappa=1.0, h=l.curvature * b * b)


def _erm(loss, P):
    return empirical_risk(loss, P)


def upper_bound(loss: LossSpec, P: EmpiricalDistribution, p, alpha, norm,
                cert: Optional[SmoothnessCertificate] = None) -> float:
    """Regularization upper bound on the worst-case loss.

    ``p = 1``: empirical risk plus ``alpha`` times the Lipschitz constant of
    the loss in the data.  Otherwise, with Hölder constants
    ``(kappa, h, C, q)``: risk + alpha * penalty + alpha**(kappa+1) ||h||_{p*}
    + C alpha**(q+1), valid for ``p >= q+1`` (C > 0) or ``p >= kappa+1``
    (C = 0), including ``p = inf``.
    """
    p = float(p)
    alpha = float(alpha)
    if alpha < 0:
        raise DomainError("radius must be nonnegative")
    if p == 1.0:
        lip = loss.lipschitz_z(norm)
        if lip is None:
            raise DomainError("p = 1 upper bound needs a Lipschitz loss")
        return _erm(loss, P) + alpha * lip
    if cert is None:
        raise DomainError("p > 1 upper bound needs a smoothness certificate")
    if not 0.0 < cert.kappa <= 1.0:
        raise DomainError(f"upper bound needs kappa in (0, 1], got {cert.kappa}")
    if cert.C > 0 and p < cert.q + 1.0:
        raise DomainError(f"C > 0 needs p in [q+1, inf] = [{cert.q + 1.0}, inf], got {p}")
    if cert.C == 0 and p < cert.kappa + 1.0:
        raise DomainError(f"C = 0 needs p in [kappa+1, inf] = [{cert.kappa + 1.0}, inf], got {p}")
    ps = dual_exponent(p)
    hn = empirical_norm(cert.h_values(P.points), p=ps, weights=P.weights)
    val = _erm(loss, P) + alpha * grad_penalty(loss, P, p, norm) + alpha ** (cert.kappa + 1) * hn
    if cert.C > 0:
        val += cert.C * alpha ** (cert.q + 1.0)
    return val


def lower_bound(loss: LossSpec, P: EmpiricalDistribution, p, alpha, norm,
                cert: SmoothnessCertificate) -> float:
    """Regularization lower bound from n-point perturbations.

    For ``p > kappa + 1`` the correction uses the empirical
    ``p / (p - kappa - 1)``-norm of h, otherwise its maximum.
    """
    p = float(p)
    alpha = float(alpha)
    if alpha < 0:
        raise DomainError("radius must be nonnegative")
    if p < 1.0:
        raise DomainError("p must lie in [1, inf]")
    if cert.C != 0:
        raise DomainError("lower bound needs a certificate with C = 0")
    k1 = cert.kappa + 1.0
    if p > k1:
        r = 1.0 if p == INF else p / (p - k1)
    else:
        r = INF
    hn = empirical_norm(cert.h_values(P.points), p=r, weights=P.weights)
    return _erm(loss, P) + alpha * grad_penalty(loss, P, p, norm) - alpha ** k1 * hn


def worst_case(loss: LossSpec, P: EmpiricalDistribution, p, alpha, norm) -> float:
    if float(p) == INF:
        return worst_case_inf(loss, P, alpha, norm)[0]
    return worst_case_dual(loss, P, p, alpha, norm).dual_value


@dataclass(frozen=True)
class Sampler:
    """Synthetic data source.  Seeds feed numpy's PCG64 generator."""

    name: str
    dim: int
    low: float = -1.0
    high: float = 1.0

    @property
    def continuous(self) -> bool:
        return self.name in ("gaussian", "uniform")

    def draw(self, n: int, seed: int) -> np.ndarray:
        rng = np.random.Generator(np.random.PCG64(seed))
        if self.name == "gaussian":
            return rng.standard_normal((n, self.dim))
        if self.name == "uniform":
            return rng.uniform(self.low, self.high, (n, self.dim))
        if self.name == "rademacher":
            return rng.choice([-1.0, 1.0], size=(n, self.dim))
        raise ConfigError(f"unknown sampler {self.name!r}; choose from {SAMPLERS}")

    def describe(self) -> dict:
        out = {"name": self.name, "dim": self.dim}
        if self.name == "uniform":
            out.update(low=self.low, high=self.high)
        return out


SAMPLERS = ("gaussian", "uniform", "rademacher")


@dataclass(frozen=True)
class GapRow:
    alpha: float
    worst_case: float
    regularized: float
    gap: float
    gap_ratio: float


@dataclass
class GapCurve:
    rows: list
    loss: str
    sampler: dict
    p: float
    seed: int
    columns: tuple = field(default=("alpha", "worst_case", "regularized", "gap", "gap_ratio"))

    def ratios(self):
        return np.array([r.gap_ratio for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.columns)
        for r in self.rows:
            wr.writerow([format(getattr(r, c), ".17g") for c in self.columns])
        return buf.getvalue()


def geometric_alphas(k_max: int, base: float = 2.0, k_min: int = 1):
    return [base ** -k for k in range(k_min, k_max + 1)]


def labeled_points(loss: LossSpec, X):
    """Turn raw sampler draws into data points the loss accepts."""
    X = np.array(X, dtype=float)
    if loss.family == "classification":
        X[:, -1] = np.where(X[:, -1] >= 0, 1.0, -1.0)
    return X


def asymptotic_gap_curve(loss: LossSpec, sampler: Sampler, n: int, alphas: Sequence[float],
                         p, norm, seed: int = 0) -> GapCurve:
    """Worst case versus ``risk + alpha * gradient penalty`` along shrinking radii."""
    p = float(p)
    if sampler.dim != loss.dim:
        raise DomainError(f"sampler dimension {sampler.dim} != loss dimension {loss.dim}")
    if p == 1.0 and not sampler.continuous:
        raise ConfigError("p = 1 needs a sampler with a continuous density")
    alphas = [float(a) for a in alphas]
    if any(a < 0 for a in alphas) or any(b >= a for a, b in zip(alphas, alphas[1:])):
        raise ConfigError("radii must be nonnegative and strictly decreasing")
    P = EmpiricalDistribution(labeled_points(loss, sampler.draw(n, seed)))
    erm = empirical_risk(loss, P)
    pen = grad_penalty(loss, P, p, norm)
    rows = []
    for a in alphas:
        wc = worst_case(loss, P, p, a, norm)
        reg = erm + a * pen
        gap = abs(wc - reg)
        rows.append(GapRow(a, wc, reg, gap, gap / a if a > 0 else 0.0))
    return GapCurve(rows, repr(loss), sampler.describe(), p, seed)


@dataclass(frozen=True)
class YoungCheck:
    holds: bool
    lhs: float
    rhs: float


def young_check(kappa, p, delta, t, slack=1e-12) -> YoungCheck:
    """``t**(k+1) <= (p-1-k)/(p-1) * delta * t + k/(p-1) * delta**(-(p-1-k)/k) * t**p``.

    ``slack`` is relative to the right-hand side.
    """
    kappa, p, delta, t = float(kappa), float(p), float(delta), float(t)
    if not kappa > 0:
        raise DomainError("kappa must be positive")
    if not p >= kappa + 1.0:
        raise DomainError("p must be at least kappa + 1")
    if not (delta > 0 and t > 0):
        raise DomainError("delta and t must be positive")
    # snap rounding noise so p = kappa + 1 gives exact equality
    e = p - 1.0 - kappa
    if e <= 4.0 * np.finfo(float).eps * p:
        e = 0.0
    lhs = t ** (kappa + 1.0)
    try:
        second = kappa / (kappa + e) * delta ** (-e / kappa) * t ** p
    except OverflowError:
        second = INF
    rhs = e / (kappa + e) * delta * t + second
    return YoungCheck(lhs <= rhs * (1.0 + slack), lhs, rhs)
