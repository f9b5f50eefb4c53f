import numpy as np
import pytest
import statsmodels.api as sm

from borrowlab.core_data import FeatureMap, Sample
from borrowlab.errors import FitError, RankDeficiencyError
from borrowlab.models import (
    ConstantProbability,
    RidgeModel,
    fit_logistic,
    fit_ridge,
    grad_loss,
    hessian,
    loss,
    predict_prob,
)


@pytest.fixture
def regression(rng):
    X = rng.normal(size=(80, 3))
    theta = np.array([0.5, 1.0, -2.0, 0.25])
    y = FeatureMap.linear(3).design(X) @ theta + rng.normal(scale=0.1, size=80)
    return X, y, theta


def test_ridge_recovers_noiseless_coefficients(rng):
    X = rng.normal(size=(30, 2))
    y = 1.5 + X @ np.array([2.0, -1.0])
    model = fit_ridge(X, y, 0.0, FeatureMap.linear(2))
    assert np.allclose(model.theta, [1.5, 2.0, -1.0], atol=1e-10)
    assert model.resid_var == pytest.approx(0.0, abs=1e-20)


def test_intercept_is_not_penalized(regression):
    X, y, _ = regression
    model = fit_ridge(X, y, 1e9, FeatureMap.linear(3))
    assert np.allclose(model.theta[1:], 0.0, atol=1e-5)
    assert model.theta[0] == pytest.approx(y.mean(), abs=1e-4)


def test_ridge_without_penalty_needs_full_rank(rng):
    x = rng.normal(size=(20, 1))
    X = np.hstack([x, x])
    with pytest.raises(RankDeficiencyError):
        fit_ridge(X, rng.normal(size=20), 0.0, FeatureMap.linear(2))
    # a positive ridge makes the same design solvable
    fit_ridge(X, rng.normal(size=20), 1e-4, FeatureMap.linear(2))


def test_ridge_needs_two_samples():
    with pytest.raises(FitError):
        fit_ridge(np.zeros((1, 2)), [1.0], 1e-4, FeatureMap.linear(2))


def test_integer_weight_matches_duplicated_row(regression):
    X, y, _ = regression
    fm = FeatureMap.linear(3)
    w = np.ones(len(y))
    w[7] = 2.0
    weighted = fit_ridge(X, y, 1e-4, fm, weights=w)
    duplicated = fit_ridge(np.vstack([X, X[7]]), np.append(y, y[7]), 1e-4, fm)
    assert np.allclose(weighted.theta, duplicated.theta, rtol=1e-10, atol=1e-12)


def test_grad_loss_matches_finite_differences(regression):
    X, y, _ = regression
    fm = FeatureMap.linear(3)
    model = fit_ridge(X, y, 1e-4, fm)
    z = Sample(X[3], 0, float(y[3]) + 0.7, 0)
    grad = grad_loss(model, z)

    h = 1e-6
    numeric = np.empty_like(grad)
    for i in range(fm.d_out):
        step = np.zeros(fm.d_out)
        step[i] = h
        up = RidgeModel(model.theta + step, model.lambda_reg, fm)
        down = RidgeModel(model.theta - step, model.lambda_reg, fm)
        numeric[i] = (loss(up, z.x, [z.y])[0] - loss(down, z.x, [z.y])[0]) / (2 * h)
    assert np.allclose(grad, numeric, rtol=1e-6, atol=1e-8)


def test_hessian_matches_mean_loss_curvature(regression):
    X, y, _ = regression
    fm = FeatureMap.linear(3)
    model = fit_ridge(X, y, 1e-4, fm)
    H = hessian(model, X)
    phi = fm.design(X)
    assert H.damping == 0.0
    assert np.allclose(H.matrix, 2.0 / len(y) * phi.T @ phi)
    v = np.array([1.0, -1.0, 0.5, 2.0])
    assert np.allclose(H.solve(H.matvec(v)), v)


def test_hessian_is_damped_when_singular(rng):
    x = rng.normal(size=(25, 1))
    X = np.hstack([x, x])
    fm = FeatureMap.linear(2)
    model = fit_ridge(X, rng.normal(size=25), 1e-2, fm)
    H = hessian(model, X)
    assert H.damping > 0
    assert np.all(np.linalg.eigvalsh(H.matrix) > 0)


def test_logistic_agrees_with_statsmodels(rng):
    X = rng.normal(size=(400, 2))
    logits = -0.3 + X @ np.array([1.2, -0.8])
    t = (rng.uniform(size=400) < 1 / (1 + np.exp(-logits))).astype(float)
    fm = FeatureMap.linear(2)

    ours = fit_logistic(X, t, fm)
    reference = sm.Logit(t, fm.design(X)).fit(disp=0)
    assert ours.converged
    assert np.allclose(ours.beta, reference.params, atol=1e-4)


def test_logistic_rejects_constant_labels(rng):
    with pytest.raises(FitError):
        fit_logistic(rng.normal(size=(20, 1)), np.ones(20), FeatureMap.linear(1))


def test_logistic_probabilities_are_clipped_on_separable_data():
    X = np.linspace(-3, 3, 40).reshape(-1, 1)
    t = (X[:, 0] > 0).astype(float)
    model = fit_logistic(X, t, FeatureMap.linear(1))
    p = model.predict_prob(np.array([[-50.0], [50.0]]))
    assert np.all(np.isfinite(model.beta))
    assert p[0] == pytest.approx(1e-3)
    assert p[1] == pytest.approx(1 - 1e-3)
    assert 1e-3 <= predict_prob(model, [0.1]) <= 1 - 1e-3


def test_constant_probability_shape():
    p = ConstantProbability(0.75).predict_prob(np.zeros((6, 3)))
    assert p.shape == (6,)
    assert np.all(p == 0.75)


@pytest.mark.parametrize("lambda_reg", [0.0, 1e-4, 1.0])
def test_ridge_solves_its_normal_equations(rng, lambda_reg):
    fm = FeatureMap.polynomial(3, 2)
    X = rng.normal(size=(120, 3))
    y = rng.normal(size=120) + X[:, 0] ** 2
    w = rng.uniform(0.5, 2.0, size=120)
    for weights in (None, w):
        model = fit_ridge(X, y, lambda_reg, fm, weights=weights)
        phi = fm.design(X)
        wt = np.ones(len(y)) if weights is None else weights
        penalty = lambda_reg * np.diag(np.r_[0.0, np.ones(fm.d_out - 1)])
        rhs = phi.T @ (wt * y)
        residual = (phi.T @ (phi * wt[:, None]) + penalty) @ model.theta - rhs
        assert np.linalg.norm(residual) <= 1e-8 * (1 + np.linalg.norm(rhs))


def test_predictions_survive_covariate_rescaling(regression):
    X, y, _ = regression
    fm = FeatureMap.linear(3)
    model = fit_ridge(X, y, 1e-4, fm)
    scale = np.array([2.0, 0.5, 10.0])
    rescaled = RidgeModel(np.r_[model.theta[0], model.theta[1:] / scale], model.lambda_reg, fm)
    assert np.allclose(rescaled.predict(X * scale), model.predict(X), rtol=1e-12, atol=1e-12)


def test_ridge_slope_on_one_covariate_example(rng):
    x = rng.uniform(0, 2, size=(200, 1))
    y = 2 * x[:, 0] + rng.normal(scale=0.2, size=200)
    model = fit_ridge(x, y, 1e-4, FeatureMap.linear(1))
    se = 0.2 / (x[:, 0].std() * np.sqrt(200))
    assert abs(model.theta[1] - 2.0) < 4 * se


def test_logistic_probability_is_monotone_in_the_logit(rng):
    X = rng.normal(size=(300, 2))
    t = (rng.uniform(size=300) < 1 / (1 + np.exp(-(X[:, 0] - X[:, 1])))).astype(float)
    model = fit_logistic(X, t, FeatureMap.linear(2))
    grid = rng.normal(scale=4.0, size=(500, 2))
    order = np.argsort(model.logit(grid))
    assert np.all(np.diff(model.predict_prob(grid)[order]) >= 0)


def test_logistic_without_signal_stays_near_half(rng):
    n = 2000
    X = rng.normal(size=(n, 2))
    t = rng.permutation(np.r_[np.ones(n // 2), np.zeros(n // 2)])
    model = fit_logistic(X, t, FeatureMap.linear(2))
    assert abs(predict_prob(model, [0.0, 0.0]) - 0.5) < 3 * 0.5 / np.sqrt(n)
    assert np.all(np.abs(model.beta[1:]) < 4 * 2 / np.sqrt(n))


def test_logistic_is_consistent_at_n_5000(rng):
    n = 5000
    x = rng.normal(size=(n, 1))
    t = (rng.uniform(size=n) < 1 / (1 + np.exp(-(1 + 2 * x[:, 0])))).astype(float)
    fm = FeatureMap.linear(1)
    model = fit_logistic(x, t, fm)
    phi = fm.design(x)
    p = 1 / (1 + np.exp(-phi @ model.beta))
    se = np.sqrt(np.diag(np.linalg.inv(phi.T @ (phi * (p * (1 - p))[:, None]))))
    assert model.converged
    assert np.all(np.abs(model.beta - [1.0, 2.0]) < 4 * se)
