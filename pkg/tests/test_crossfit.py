from __future__ import annotations

import numpy as np
import pytest

from src.crossfit import RegressionTarget, crossfit_predict, derive_seed, make_folds
from src.errors import BadFoldCount, EmptyTrainingSubset
from src.learners import LearnerStack


def test_fold_sizes() -> None:
    assert make_folds(10, 5, seed=1).sizes().tolist() == [2] * 5
    assert sorted(make_folds(11, 5, seed=1).sizes().tolist()) == [2, 2, 2, 2, 3]


def test_folds_are_deterministic() -> None:
    a = make_folds(50, 4, seed=9)
    b = make_folds(50, 4, seed=9)
    c = make_folds(50, 4, seed=10)
    assert a.fold_of.tolist() == b.fold_of.tolist()
    assert a.fold_of.tolist() != c.fold_of.tolist()


def test_bad_fold_count() -> None:
    with pytest.raises(BadFoldCount):
        make_folds(10, 1, seed=0)
    with pytest.raises(BadFoldCount):
        make_folds(3, 4, seed=0)


def test_stratified_folds_spread_each_stratum() -> None:
    strata = np.array([0] * 13 + [1] * 7)
    fa = make_folds(20, 3, seed=2, strata=strata)
    assert fa.sizes().max() - fa.sizes().min() <= 1
    for level in (0, 1):
        counts = np.bincount(fa.fold_of[strata == level], minlength=3)
        assert counts.max() - counts.min() <= 1


def test_duplicate_keeps_fold_of_original() -> None:
    fa = make_folds(7, 3, seed=0)
    dup = fa.duplicate()
    assert dup.J == 3
    assert dup.fold_of.tolist() == fa.fold_of.tolist() * 2


def test_derive_seed() -> None:
    assert derive_seed(1, "g", 0) == derive_seed(1, "g", 0)
    assert derive_seed(1, "g", 0) != derive_seed(1, "g", 1)
    assert derive_seed(1, "g", 0) != derive_seed(2, "g", 0)


def test_constant_response() -> None:
    X = np.random.default_rng(0).normal(size=(20, 2))
    target = RegressionTarget("const", X, np.ones(20), "gaussian")
    (pred,) = crossfit_predict(target, make_folds(20, 2, seed=0), LearnerStack.from_names(["mean"]), [X])
    np.testing.assert_allclose(pred, 1.0)


def test_empty_training_subset() -> None:
    fa = make_folds(12, 3, seed=0)
    X = np.zeros((12, 1))
    # only rows of fold 0 are eligible, so holding out fold 0 leaves nothing
    target = RegressionTarget("treated", X, np.ones(12), "gaussian", fa.fold_of == 0)
    with pytest.raises(EmptyTrainingSubset) as exc:
        crossfit_predict(target, fa, LearnerStack.from_names(["mean"]), [X])
    assert exc.value.fold == 0


def test_own_fold_never_used() -> None:
    rng = np.random.default_rng(3)
    X = rng.normal(size=(60, 2))
    y = X @ [1.0, -1.0] + rng.normal(size=60)
    fa = make_folds(60, 3, seed=4)
    stack = LearnerStack.from_names(["glm_main"])
    (base,) = crossfit_predict(RegressionTarget("y", X, y, "gaussian"), fa, stack, [X])

    poisoned = y.copy()
    poisoned[fa.fold_of == 0] += 100.0
    (after,) = crossfit_predict(RegressionTarget("y", X, poisoned, "gaussian"), fa, stack, [X])
    held = fa.fold_of == 0
    np.testing.assert_allclose(after[held], base[held])
    assert np.all(np.abs(after[~held] - base[~held]) > 1.0)


def test_counterfactual_evaluation_rows() -> None:
    rng = np.random.default_rng(5)
    a = rng.integers(0, 2, 200).astype(float)
    y = 2.0 * a + rng.normal(scale=0.01, size=200)
    X = a[:, None]
    (obs, at_one) = crossfit_predict(
        RegressionTarget("y", X, y, "gaussian"), make_folds(200, 4, seed=0), LearnerStack.from_names(["glm_main"]), [X, np.ones_like(X)]
    )
    np.testing.assert_allclose(at_one, 2.0, atol=0.01)
    np.testing.assert_allclose(obs, 2.0 * a, atol=0.01)


def test_parallel_matches_serial() -> None:
    rng = np.random.default_rng(6)
    X = rng.normal(size=(80, 2))
    y = X[:, 0] + rng.normal(size=80)
    fa = make_folds(80, 4, seed=1)
    stack = LearnerStack.from_names(["mean", "glm_main"], folds=3)
    target = RegressionTarget("y", X, y, "gaussian")
    (serial,) = crossfit_predict(target, fa, stack, [X], seed=3, workers=1)
    (parallel,) = crossfit_predict(target, fa, stack, [X], seed=3, workers=2)
    np.testing.assert_array_equal(serial, parallel)
