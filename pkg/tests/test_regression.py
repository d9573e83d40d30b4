import warnings

import numpy as np
import pytest
from sklearn.base import clone

from qbsde.exceptions import RankDeficientWarning
from qbsde.regression import ConditionalExpectationRegressor, monomial_exponents, regress_condexp


def test_monomial_count():
    # C(n + d, d) monomials of total degree <= d in n variables
    assert len(monomial_exponents(2, 3)) == 10
    assert len(monomial_exponents(1, 5)) == 6
    assert len(monomial_exponents(0, 4)) == 1


def test_recovers_polynomial_exactly():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(500, 2))
    y = 1.0 + 2.0 * X[:, 0] - X[:, 1] ** 2 + 0.5 * X[:, 0] * X[:, 1]
    reg = ConditionalExpectationRegressor(degree=2).fit(X, y)
    assert np.allclose(reg.fitted_, y, atol=1e-9)
    Xn = rng.normal(size=(20, 2))
    yn = 1.0 + 2.0 * Xn[:, 0] - Xn[:, 1] ** 2 + 0.5 * Xn[:, 0] * Xn[:, 1]
    assert np.allclose(reg.predict(Xn), yn, atol=1e-8)


def test_conditional_mean_of_noisy_target():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(20_000, 1))
    y = X[:, 0] ** 2 + rng.normal(size=20_000)
    fitted, resid = regress_condexp(y, X, basis_degree=2)
    assert np.max(np.abs(fitted - X[:, 0] ** 2)) < 0.1
    assert resid == pytest.approx(1.0, abs=0.03)


def test_constant_column_is_dropped():
    rng = np.random.default_rng(2)
    X = np.column_stack([np.full(100, 3.0), rng.normal(size=100)])
    y = rng.normal(size=100)
    reg = ConditionalExpectationRegressor(degree=2).fit(X, y)
    assert list(reg.keep_) == [False, True]
    assert reg.coef_.shape == (3,)


def test_deterministic_state_gives_mean():
    y = np.arange(10.0)
    reg = ConditionalExpectationRegressor(degree=3).fit(np.zeros((10, 1)), y)
    assert np.allclose(reg.fitted_, 4.5)


def test_rank_deficient_warning():
    rng = np.random.default_rng(3)
    x = rng.normal(size=200)
    X = np.column_stack([x, 2.0 * x + 1.0])
    with pytest.warns(RankDeficientWarning):
        regress_condexp(x ** 2, X, basis_degree=2)


def test_project_equals_refit():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(400, 2))
    reg = ConditionalExpectationRegressor(degree=3).fit(X, rng.normal(size=400))
    other = rng.normal(size=(400, 2))
    refit = ConditionalExpectationRegressor(degree=3).fit(X, other).fitted_
    assert np.allclose(reg.project(other), refit, atol=1e-10)
    assert np.allclose(reg.project(other[:, 0]), refit[:, 0], atol=1e-10)


def test_estimator_protocol():
    reg = ConditionalExpectationRegressor(degree=4)
    assert reg.get_params() == {"degree": 4, "ridge": reg.ridge}
    twin = clone(reg)
    assert twin is not reg and twin.degree == 4
    rng = np.random.default_rng(5)
    X = rng.normal(size=(100, 1))
    score = reg.fit(X, X[:, 0] ** 3).score(X, X[:, 0] ** 3)
    assert score == pytest.approx(1.0)


def test_input_validation():
    reg = ConditionalExpectationRegressor(degree=2)
    with pytest.raises(ValueError):
        reg.fit(np.zeros((5, 1)), np.zeros(4))
    with pytest.raises(ValueError):
        reg.fit(np.ones((3, 1)) * np.arange(3)[:, None], np.zeros(3))
    with pytest.raises(ValueError):
        ConditionalExpectationRegressor(degree=-1).fit(np.zeros((5, 1)), np.zeros(5))
    with pytest.raises(ValueError):
        reg.fit(np.arange(10.0)[:, None], np.full(10, np.nan))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        reg.fit(np.arange(10.0)[:, None], np.arange(10.0))
    with pytest.raises(ValueError):
        reg.predict(np.zeros((3, 2)))
