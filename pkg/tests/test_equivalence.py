import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wdro.core import INF, EmpiricalDistribution, LossSpec, NormSpec
from wdro.duality import empirical_risk
from wdro.equivalence import (closed_form_value, corollary1_value, dual_norm_subgradient,
                              exactness_report, fit_regularized, theorem1_value)
from wdro.errors import ConfigError, DomainError


def emp(pts):
    return EmpiricalDistribution(np.asarray(pts, float))


def random_instance(rng, family, loss):
    n, d = rng.integers(1, 21), rng.integers(1, 6)
    beta = rng.normal(size=d)
    X = rng.normal(size=(n, d))
    if family == "regression":
        y = X @ beta + rng.normal(size=n)
        return LossSpec.regression(beta, loss), emp(np.column_stack([X, y]))
    if family == "classification":
        y = np.sign(rng.normal(size=n))
        y[y == 0] = 1.0
        return LossSpec.classification(beta, loss), emp(np.column_stack([X, y]))
    return LossSpec.linear(beta, loss), emp(X)


def test_abs_instance_closed_form():
    L = LossSpec.linear([2.0], "absolute")
    assert theorem1_value(L, emp([[1.0], [-1.0]]), 0.5, 2.0) == pytest.approx(3.0)


def test_regression_penalty_slope_floors_at_one():
    L = LossSpec.regression([0.3, 0.4], "absolute")
    P = emp([[1.0, 1.0, 0.0]])
    assert theorem1_value(L, P, 1.0, 2.0) - empirical_risk(L, P) == pytest.approx(1.0)
    L2 = LossSpec.regression([3.0, 4.0], "absolute")
    assert theorem1_value(L2, P, 1.0, 2.0) - empirical_risk(L2, P) == pytest.approx(5.0)


def test_zero_radius_is_erm():
    rng = np.random.default_rng(0)
    L, P = random_instance(rng, "classification", "hinge")
    assert theorem1_value(L, P, 0.0, 2.0) == empirical_risk(L, P)
    rep = exactness_report(L, P, 0.0, 2.0)
    assert rep.abs_gap == 0.0


def test_family_mismatch():
    L = LossSpec.quadratic([1.0])
    P = emp([[0.0]])
    with pytest.raises(DomainError):
        theorem1_value(L, P, 0.1, 2.0)
    with pytest.raises(DomainError):
        corollary1_value(LossSpec.linear([1.0]), P, 0.1, 2.0)


def test_corollary_example_penalty():
    L = LossSpec.piecewise_max([[1.0, 0.0], [0.0, 3.0]])
    P = emp([[0.5, 0.5], [-1.0, 2.0]])
    assert corollary1_value(L, P, 0.1, 2.0) - empirical_risk(L, P) == pytest.approx(0.3)


def test_corollary_single_piece_reduces_to_theorem():
    rng = np.random.default_rng(1)
    beta = rng.normal(size=3)
    P = emp(rng.normal(size=(5, 3)))
    for loss in ("identity", "absolute", "logistic"):
        one = LossSpec.piecewise_max([beta], [loss])
        assert corollary1_value(one, P, 0.4, 2.0) == theorem1_value(
            LossSpec.linear(beta, loss), P, 0.4, 2.0)
        same = LossSpec.piecewise_max([beta, beta], [loss, loss])
        assert corollary1_value(same, P, 0.4, 2.0) == theorem1_value(
            LossSpec.linear(beta, loss), P, 0.4, 2.0)


@pytest.mark.parametrize("family, loss", [("regression", "absolute"),
                                          ("classification", "hinge"),
                                          ("classification", "logistic"),
                                          ("linear", "absolute")])
@pytest.mark.parametrize("q", [1.0, 2.0, INF])
def test_dual_equals_closed_form(family, loss, q):
    rng = np.random.default_rng([len(family), len(loss), int(min(q, 9))])
    for _ in range(6):
        L, P = random_instance(rng, family, loss)
        for a in (0.0, 0.1, 1.0):
            rep = exactness_report(L, P, a, q)
            assert rep.rel_gap <= 1e-6, rep


def test_piecewise_max_dual_equals_closed_form():
    rng = np.random.default_rng(2)
    for _ in range(10):
        M, d = rng.integers(1, 5), rng.integers(1, 4)
        L = LossSpec.piecewise_max(rng.normal(size=(M, d)),
                                   list(rng.choice(["identity", "absolute", "logistic"], M)))
        P = emp(rng.normal(size=(rng.integers(1, 10), d)))
        rep = exactness_report(L, P, 0.5, 2.0)
        assert rep.rel_gap <= 1e-6
        assert rep.closed_form_value == closed_form_value(L, P, 0.5, 2.0)


def test_report_rejects_other_orders():
    L = LossSpec.linear([1.0], "absolute")
    with pytest.raises(DomainError):
        exactness_report(L, emp([[0.0]]), 0.1, 2.0, p=2)


@given(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_penalty_is_positively_homogeneous(c, seed):
    rng = np.random.default_rng(seed)
    beta = rng.normal(size=3)
    P = emp(np.column_stack([rng.normal(size=(4, 3)), np.sign(rng.normal(size=4)) + 0.0]))
    P = emp(np.where(P.points == 0, 1.0, P.points))

    def pen(b):
        L = LossSpec.classification(b, "hinge")
        return theorem1_value(L, P, 0.3, 2.0) - empirical_risk(L, P)

    assert pen(c * beta) == pytest.approx(abs(c) * pen(beta), rel=1e-9)


# subgradients and fitting -----------------------------------------------------------

@pytest.mark.parametrize("q", [1.0, 2.0, 3.0, INF])
def test_dual_norm_subgradient_is_a_subgradient(q):
    rng = np.random.default_rng(3)
    norm = NormSpec(q)
    for _ in range(30):
        b = rng.normal(size=4)
        g = dual_norm_subgradient(b, norm)
        for v in rng.normal(size=(20, 4)):
            assert norm.dual_norm(v) >= norm.dual_norm(b) + g @ (v - b) - 1e-10


def test_subgradient_at_a_tie_has_minimum_l2_norm():
    g = dual_norm_subgradient(np.array([1.0, -1.0]), 1.0)
    np.testing.assert_allclose(g, [0.5, -0.5])
    np.testing.assert_array_equal(dual_norm_subgradient(np.zeros(3), 2.0), np.zeros(3))


def test_fit_interpolates_without_penalty():
    x = np.linspace(-1.0, 1.0, 9)
    P = emp(np.column_stack([x, 2.0 * x]))
    res = fit_regularized("regression", P, 0.0, 2.0, seed=1)
    assert res.beta[0] == pytest.approx(2.0, abs=1e-3)
    assert res.converged


def test_fit_huge_penalty_shrinks_to_zero():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(20, 2))
    y = np.sign(X[:, 0] + 0.1)
    res = fit_regularized("classification", emp(np.column_stack([X, y])), 100.0, 2.0)
    np.testing.assert_allclose(res.beta, 0.0, atol=1e-3)


def test_fit_matches_grid_oracle():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(5, 2))
    y = X @ np.array([1.0, -0.5]) + 0.3 * rng.normal(size=5)
    P = emp(np.column_stack([X, y]))
    res = fit_regularized("regression", P, 0.2, 2.0)
    grid = np.arange(-3.0, 3.0 + 1e-9, 1e-2)
    B = np.array(list(itertools.product(grid, grid)))
    risk = np.mean(np.abs(X @ B.T - y[:, None]), axis=0)
    best = np.min(risk + 0.2 * np.maximum(np.linalg.norm(B, axis=1), 1.0))
    assert res.objective <= best + 1e-2
    assert res.objective == pytest.approx(theorem1_value(LossSpec.regression(res.beta), P, 0.2, 2.0))


def test_fit_history_nonincreasing_and_deterministic():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(15, 3))
    y = np.sign(rng.normal(size=15))
    P = emp(np.column_stack([X, y]))
    a = fit_regularized("classification", P, 0.1, 2.0, "logistic", seed=3)
    b = fit_regularized("classification", P, 0.1, 2.0, "logistic", seed=3)
    assert np.all(np.diff(a.history) <= 0)
    np.testing.assert_array_equal(a.beta, b.beta)


def test_fit_iteration_cap_warns():
    P = emp(np.random.default_rng(7).normal(size=(6, 3)))
    res = fit_regularized("regression", P, 0.1, 2.0, max_iter=3)
    assert not res.converged and res.warning


def test_fit_box_constraint():
    x = np.linspace(-1.0, 1.0, 9)
    P = emp(np.column_stack([x, 2.0 * x]))
    res = fit_regularized("regression", P, 0.0, 2.0, box=(-1.0, 1.0))
    assert res.beta[0] == pytest.approx(1.0)


def test_fit_rejects_nonconvex_loss():
    with pytest.raises(ConfigError):
        fit_regularized("regression", emp([[0.0, 0.0]]), 0.1, 2.0, "square")
