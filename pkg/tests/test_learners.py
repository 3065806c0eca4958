from __future__ import annotations

import numpy as np
import pytest
from scipy.special import expit, logit

from src.errors import ArityMismatch, SaturationOnContinuous, UnknownLearner
from src.learners import (
    DesignSpec,
    LearnerStack,
    expand_features,
    fit_ensemble,
    fit_glm,
    fit_lasso,
    get_learner,
    predict,
    simplex_weights,
)


def test_expansions() -> None:
    X = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, -1.0]])
    assert expand_features(X, DesignSpec("mean")).shape == (2, 1)
    assert expand_features(X, DesignSpec("main")).shape == (2, 4)
    tw = expand_features(X, DesignSpec("twoway"))
    assert tw.shape == (2, 7)
    np.testing.assert_allclose(tw[:, 4:], [[0.0, 0.0, 2.0], [0.0, -1.0, 0.0]])


def test_saturated_cells() -> None:
    X = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [1, 1]], dtype=float)
    S = expand_features(X, DesignSpec("saturated"))
    assert S.shape == (5, 4)
    assert S.sum(axis=1).tolist() == [1.0] * 5
    assert np.argmax(S, axis=1).tolist() == [0, 1, 2, 3, 3]
    with pytest.raises(SaturationOnContinuous):
        expand_features(np.array([[0.5, 1.0]]), DesignSpec("saturated"))


def test_glm_intercept_only_recovers_logit_mean() -> None:
    y = np.array([1.0] * 4 + [0.0] * 6)
    fit = fit_glm(np.ones((10, 1)), y, "binomial")
    assert fit.converged
    assert abs(fit.params[0] - logit(0.4)) < 1e-6


def test_glm_gaussian_matches_least_squares() -> None:
    rng = np.random.default_rng(1)
    X = np.column_stack([np.ones(200), rng.normal(size=(200, 2))])
    y = X @ [1.0, -2.0, 0.5] + rng.normal(scale=0.1, size=200)
    fit = fit_glm(X, y, "gaussian")
    ref, *_ = np.linalg.lstsq(X, y, rcond=None)
    np.testing.assert_allclose(fit.params, ref, atol=1e-6)


def test_glm_binomial_solves_score_equation() -> None:
    rng = np.random.default_rng(2)
    X = np.column_stack([np.ones(500), rng.normal(size=(500, 2))])
    y = (rng.random(500) < expit(X @ [0.2, 0.5, -0.4])).astype(float)
    fit = fit_glm(X, y, "binomial")
    score = X.T @ (y - expit(X @ fit.params)) / len(y)
    assert np.max(np.abs(score)) < 1e-6


def test_glm_fractional_response() -> None:
    y = np.array([0.2, 0.4, 0.9, 0.7])
    X = expand_features(np.array([[0.0], [0.0], [1.0], [1.0]]), DesignSpec("saturated"))
    np.testing.assert_allclose(fit_glm(X, y, "binomial").predict(X), [0.3, 0.3, 0.8, 0.8], atol=1e-6)


def test_glm_weights_and_offset() -> None:
    y = np.array([1.0, 0.0, 1.0, 1.0])
    off = np.array([0.3, -0.2, 0.1, 0.0])
    fit = fit_glm(np.ones((4, 1)), y, "binomial", weights=np.array([2.0, 1.0, 1.0, 0.5]), offset=off)
    mu = expit(off + fit.params[0])
    assert abs(np.dot([2.0, 1.0, 1.0, 0.5], y - mu)) < 1e-5


def test_glm_survives_separation() -> None:
    X = expand_features(np.array([[0.0], [0.0], [1.0], [1.0]]), DesignSpec("saturated"))
    fit = fit_glm(X, np.array([0.0, 0.0, 1.0, 1.0]), "binomial")
    assert np.all(np.isfinite(fit.params))


def test_glm_empty_cell_predicts_a_half() -> None:
    X = expand_features(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [1.0, 0.0]]), DesignSpec("saturated"))
    fit = fit_glm(X, np.array([0.0, 1.0, 1.0, 0.0]), "binomial")
    unseen = expand_features(np.array([[1.0, 1.0]]), DesignSpec("saturated"))
    np.testing.assert_allclose(fit.predict(unseen), [0.5], atol=1e-6)


def test_lasso_zeroes_noise_columns() -> None:
    rng = np.random.default_rng(3)
    X = rng.normal(size=(400, 6))
    y = 2.0 + 1.5 * X[:, 0] - X[:, 1] + rng.normal(scale=0.3, size=400)
    est, penalty = fit_lasso(X, y, "gaussian", folds=5, seed=1)
    assert penalty > 0
    assert abs(est.coef_[0] - 1.5) < 0.1
    assert abs(est.coef_[1] + 1.0) < 0.1
    assert np.max(np.abs(est.coef_[2:])) < 0.05


def test_lasso_binomial_tracks_signal() -> None:
    rng = np.random.default_rng(4)
    X = rng.normal(size=(600, 4))
    y = (rng.random(600) < expit(0.3 + X @ [1.5, -1.0, 0.0, 0.0])).astype(float)
    est, _ = fit_lasso(X, y, "binomial", folds=5, seed=2)
    assert est.coef_[0, 0] > 0.8
    assert est.coef_[0, 1] < -0.5
    assert np.max(np.abs(est.coef_[0, 2:])) < 0.3


def test_lasso_fractional_response() -> None:
    rng = np.random.default_rng(5)
    x = rng.integers(0, 2, 300).astype(float)
    y = np.where(x == 1, 0.8, 0.2) + rng.uniform(-0.1, 0.1, 300)
    fit = get_learner("lasso_saturated").fit(x[:, None], y, "binomial", lasso_folds=5)
    np.testing.assert_allclose(predict(fit, np.array([[0.0], [1.0]])), [0.2, 0.8], atol=0.06)


def test_lasso_falls_back_to_mean_on_rare_class() -> None:
    X = np.array([[0.0], [1.0]] * 10)
    y = np.zeros(20)
    y[0] = 1.0
    assert fit_lasso(X, y, "binomial", folds=5) is None
    fit = get_learner("lasso_saturated").fit(X, y, "binomial")
    np.testing.assert_allclose(predict(fit, X[:2]), 0.05)


def test_simplex_weights_never_worse_than_best_member() -> None:
    rng = np.random.default_rng(8)
    y = rng.normal(size=300)
    Z = np.column_stack([y + rng.normal(scale=0.5, size=300), y + rng.normal(scale=0.5, size=300), np.zeros(300)])
    w = simplex_weights(Z, y, "gaussian")
    assert abs(w.sum() - 1.0) < 1e-12
    ens = np.mean((y - Z @ w) ** 2)
    assert ens <= min(np.mean((y - Z[:, k]) ** 2) for k in range(3)) + 1e-12
    # two equally noisy, independent members share the weight
    assert w[0] > 0.2 and w[1] > 0.2


def test_simplex_weights_log_loss() -> None:
    rng = np.random.default_rng(9)
    p = rng.uniform(0.1, 0.9, 2000)
    y = (rng.random(2000) < p).astype(float)
    Z = np.column_stack([np.full(2000, y.mean()), p])
    w = simplex_weights(Z, y, "binomial")
    assert np.all(w >= 0.0)
    assert abs(w.sum() - 1.0) < 1e-9
    assert w[1] > 0.9


def test_true_member_dominates_ensemble() -> None:
    rng = np.random.default_rng(11)
    X = rng.integers(0, 2, size=(3000, 3)).astype(float)
    # an interaction only the saturated design can express
    p = expit(-1.0 + 2.5 * X[:, 0] * X[:, 1] - 2.0 * X[:, 2] * (1.0 - X[:, 0]))
    y = (rng.random(3000) < p).astype(float)
    model = fit_ensemble([get_learner("mean"), get_learner("glm_main"), get_learner("glm_saturated")], X, y, "binomial", seed=3)
    assert model.weights[2] >= 0.9
    assert model.cv_risk[2] < model.cv_risk[1] < model.cv_risk[0]


def test_mean_learner_closed_form() -> None:
    rng = np.random.default_rng(9)
    a = (rng.random(10_000) < 0.5).astype(float)
    fit = get_learner("mean").fit(rng.normal(size=(10_000, 2)), a, "binomial")
    assert np.max(np.abs(predict(fit, np.zeros((3, 2))) - a.mean())) < 1e-10


def test_all_ones_is_truncated() -> None:
    fit = get_learner("mean").fit(np.zeros((20, 1)), np.ones(20), "binomial")
    np.testing.assert_allclose(predict(fit, np.zeros((2, 1)), bound=1e-3), [0.999, 0.999], rtol=0, atol=1e-15)


def test_arity_mismatch() -> None:
    fit = get_learner("glm_main").fit(np.random.default_rng(0).normal(size=(30, 2)), np.arange(30.0), "gaussian")
    with pytest.raises(ArityMismatch):
        predict(fit, np.zeros((4, 3)))


def test_unknown_learner() -> None:
    with pytest.raises(UnknownLearner):
        LearnerStack.from_names(["mean", "random_forest"])


def test_stack_skips_saturated_on_continuous() -> None:
    rng = np.random.default_rng(10)
    X = rng.normal(size=(120, 2))
    y = X[:, 0] + rng.normal(size=120)
    model = LearnerStack.from_names(["mean", "glm_main", "glm_saturated"], folds=3).fit(X, y, "gaussian")
    assert [m.name for m in model.members] == ["mean", "glm_main"]
    assert model.weights[1] > 0.5


def test_single_member_ensemble() -> None:
    X = np.array([[0.0], [1.0]] * 10)
    model = fit_ensemble([get_learner("glm_saturated")], X, X[:, 0], "gaussian")
    assert model.weights.tolist() == [1.0]
    np.testing.assert_allclose(model.predict(np.array([[1.0]])), [1.0], atol=1e-6)
