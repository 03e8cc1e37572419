import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize, minimize_scalar

from rcsandwich.errors import DivergenceError, DomainError, SingularSystemError
from rcsandwich.models import (SurvivalOutcome, cox_estfun, cox_loglik, fit_coxph,
                               fit_gaussian_batch, fit_glm_binomial, fit_glm_gaussian,
                               fit_logistic_batch, glm_estfun)


def design(n, p, seed):
    rng = np.random.default_rng(seed)
    return np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])


# --------------------------------------------------------------------------- gaussian


def test_gaussian_exact_line():
    x = np.arange(6.0)
    X = np.column_stack([np.ones(6), x])
    fit = fit_glm_gaussian(X, 2.0 - 3.0 * x)
    np.testing.assert_allclose(fit.coefficients, [2.0, -3.0], atol=1e-12)
    np.testing.assert_allclose(fit.estfun, 0.0, atol=1e-10)


def test_gaussian_five_rows_normal_equations():
    X = np.array([[1, 0.0], [1, 1.0], [1, 2.0], [1, 3.0], [1, 4.0]])
    y = np.array([1.0, 3.0, 2.0, 5.0, 4.0])
    fit = fit_glm_gaussian(X, y)
    # Hand solution: slope = Sxy / Sxx = 8 / 10, intercept = 3 - 0.8 * 2.
    np.testing.assert_allclose(fit.coefficients, [1.4, 0.8], rtol=1e-12)
    resid = y - X @ fit.coefficients
    disp = resid @ resid / 3
    np.testing.assert_allclose(fit.naive_cov, disp * np.linalg.inv(X.T @ X), rtol=1e-12)


@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_gaussian_weight_scaling_and_score_zero(seed, c):
    rng = np.random.default_rng(seed)
    X = design(30, 3, seed)
    y = rng.normal(size=30)
    w = rng.uniform(0.5, 2.0, size=30)
    a = fit_glm_gaussian(X, y, w)
    b = fit_glm_gaussian(X, y, c * w)
    np.testing.assert_allclose(a.coefficients, b.coefficients, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(a.estfun.sum(axis=0), 0.0, atol=1e-9)


def test_gaussian_rank_deficient():
    X = np.column_stack([np.ones(5), np.ones(5)])
    with pytest.raises(SingularSystemError):
        fit_glm_gaussian(X, np.arange(5.0))


# --------------------------------------------------------------------------- logistic


def test_logistic_intercept_only_is_logit_of_proportion():
    y = np.array([1, 1, 0, 0, 0, 1, 0, 0, 1, 0], dtype=float)
    fit = fit_glm_binomial(np.ones((10, 1)), y)
    assert fit.coefficients[0] == pytest.approx(math.log(0.4 / 0.6), abs=1e-10)
    assert fit.coefficients[0] == pytest.approx(-0.4055, abs=1e-4)


def test_logistic_six_rows_matches_generic_optimizer():
    X = np.column_stack([np.ones(6), [-1.0, -0.5, 0.0, 0.3, 1.0, 2.0]])
    y = np.array([0, 1, 0, 1, 0, 1], dtype=float)

    def nll(b):
        eta = X @ b
        return np.sum(np.logaddexp(0, eta) - y * eta)

    ref = minimize(nll, np.zeros(2), method="BFGS", options={"gtol": 1e-12}).x
    fit = fit_glm_binomial(X, y)
    np.testing.assert_allclose(fit.coefficients, ref, atol=1e-6)
    p = 1 / (1 + np.exp(-X @ fit.coefficients))
    info = X.T @ (X * (p * (1 - p))[:, None])
    np.testing.assert_allclose(fit.naive_cov, np.linalg.inv(info), rtol=1e-8)


@given(st.integers(0, 10_000))
def test_logistic_fixed_point_and_score_zero(seed):
    rng = np.random.default_rng(seed)
    X = design(80, 3, seed)
    y = (rng.uniform(size=80) < 0.5).astype(float)
    try:
        fit = fit_glm_binomial(X, y)
    except DivergenceError:
        return
    np.testing.assert_allclose(fit.estfun.sum(axis=0), 0.0, atol=1e-8)
    again = fit_glm_binomial(X, y, start=fit.coefficients)
    assert again.iterations <= 2
    np.testing.assert_allclose(again.coefficients, fit.coefficients, atol=1e-9)


@given(st.integers(0, 10_000), st.sampled_from([0.25, 3.0, 17.0]))
def test_logistic_weight_scaling(seed, c):
    rng = np.random.default_rng(seed)
    X = design(60, 2, seed)
    y = (rng.uniform(size=60) < 0.4).astype(float)
    w = rng.uniform(0.5, 3.0, size=60)
    try:
        a = fit_glm_binomial(X, y, w)
    except DivergenceError:
        return
    b = fit_glm_binomial(X, y, c * w)
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-8)
    np.testing.assert_allclose(b.naive_cov * c, a.naive_cov, rtol=1e-8)


def test_logistic_separation_diverges():
    x = np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])
    y = (x > 0).astype(float)
    with pytest.raises(DivergenceError):
        fit_glm_binomial(np.column_stack([np.ones(6), x]), y)


def test_logistic_rejects_bad_outcome():
    with pytest.raises(DomainError):
        fit_glm_binomial(np.ones((3, 1)), np.array([0.0, 2.0, 1.0]))


def test_estfun_rows_gaussian_unscaled():
    X = design(10, 2, 1)
    y = np.arange(10.0)
    beta = np.array([0.5, 0.1])
    w = np.full(10, 2.0)
    ef = glm_estfun("gaussian", X, y, w, beta)
    np.testing.assert_allclose(ef, (w * (y - X @ beta))[:, None] * X)


def test_batched_fits_match_single_fits():
    rng = np.random.default_rng(0)
    X = design(50, 3, 0)
    y = (rng.uniform(size=50) < 0.5).astype(float)
    W = rng.poisson(1.0, size=(4, 50)).astype(float) + 0.1
    Xb = np.broadcast_to(X, (4, 50, 3))
    yb = np.broadcast_to(y, (4, 50))
    lb, ok = fit_logistic_batch(Xb, yb, W)
    gb, gok = fit_gaussian_batch(Xb, yb, W)
    assert ok.all() and gok.all()
    for b in range(4):
        np.testing.assert_allclose(lb[b], fit_glm_binomial(X, y, W[b]).coefficients, atol=1e-9)
        np.testing.assert_allclose(gb[b], fit_glm_gaussian(X, y, W[b]).coefficients, atol=1e-10)


# --------------------------------------------------------------------------- Cox


def breslow_loglik_loop(x, time, status, w, b):
    """Weighted Breslow log partial likelihood, one covariate, written as loops."""
    ll = 0.0
    for t in np.unique(time[status == 1]):
        dead = (time == t) & (status == 1)
        risk = time >= t
        denom = sum(w[i] * math.exp(b * x[i]) for i in np.flatnonzero(risk))
        for i in np.flatnonzero(dead):
            ll += w[i] * (b * x[i] - math.log(denom))
    return ll


COX_X = np.array([0.5, -1.0, 1.2, 0.0, 2.0, -0.3, 0.8, -1.5, 0.1, 1.1])
COX_T = np.array([1.0, 2.0, 2.0, 3.0, 4.0, 4.0, 4.0, 5.0, 6.0, 7.0])
COX_D = np.array([1, 1, 0, 1, 1, 1, 0, 1, 0, 1])
COX_W = np.array([1.0, 2.0, 1.0, 1.5, 1.0, 0.5, 1.0, 2.0, 1.0, 1.0])


def test_cox_loglik_matches_loop():
    out = SurvivalOutcome(COX_T, COX_D)
    for b in (-0.7, 0.0, 0.4):
        ours = cox_loglik(COX_X[:, None], out, COX_W, np.array([b]))
        assert ours == pytest.approx(breslow_loglik_loop(COX_X, COX_T, COX_D, COX_W, b), rel=1e-12)


def test_cox_coefficient_matches_brute_force_maximizer():
    out = SurvivalOutcome(COX_T, COX_D)
    ref = minimize_scalar(lambda b: -breslow_loglik_loop(COX_X, COX_T, COX_D, COX_W, b),
                          bounds=(-5, 5), method="bounded", options={"xatol": 1e-10}).x
    fit = fit_coxph(COX_X[:, None], out, COX_W)
    assert fit.coefficients[0] == pytest.approx(ref, abs=1e-6)
    np.testing.assert_allclose(fit.estfun.sum(axis=0), 0.0, atol=1e-9)


def test_cox_score_residuals_sum_to_score():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 2))
    out = SurvivalOutcome(np.round(rng.exponential(size=40), 1) + 0.1, rng.integers(0, 2, 40))
    beta = np.array([0.3, -0.2])
    w = rng.uniform(0.5, 2, 40)
    ef = cox_estfun(X, out, w, beta)
    h = 1e-6
    num = np.array([(cox_loglik(X, out, w, beta + h * e) - cox_loglik(X, out, w, beta - h * e)) / (2 * h)
                    for e in np.eye(2)])
    np.testing.assert_allclose(ef.sum(axis=0), num, rtol=1e-5, atol=1e-7)


def test_cox_constant_column_fixed_at_zero():
    out = SurvivalOutcome(COX_T, COX_D)
    X = np.column_stack([COX_X, np.ones(10)])
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        fit = fit_coxph(X, out)
    assert any("constant" in str(r.message) for r in rec)
    assert fit.coefficients[1] == 0.0
    assert fit.coefficients[0] == pytest.approx(fit_coxph(COX_X[:, None], out).coefficients[0])


@given(st.sampled_from([0.5, 2.0, 9.0]))
def test_cox_weight_scaling(c):
    out = SurvivalOutcome(COX_T, COX_D)
    a = fit_coxph(COX_X[:, None], out, COX_W)
    b = fit_coxph(COX_X[:, None], out, c * COX_W)
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-9)


def test_cox_needs_events():
    with pytest.raises(DomainError):
        fit_coxph(COX_X[:, None], SurvivalOutcome(COX_T, np.zeros(10, dtype=int)))
