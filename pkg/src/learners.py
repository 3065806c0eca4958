from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Literal, Sequence

import numpy as np
import statsmodels.api as sm
from scipy.optimize import minimize, nnls
from scipy.special import xlogy
from sklearn.linear_model import LassoCV, LogisticRegression
from sklearn.metrics import log_loss
from sklearn.model_selection import KFold, StratifiedKFold

from src.config import settings
from src.crossfit import derive_seed, make_folds
from src.errors import ArityMismatch, SaturationOnContinuous, UnknownLearner


logger = logging.getLogger(__name__)

GlmFamily = Literal["binomial", "gaussian"]
Expansion = Literal["mean", "main", "twoway", "saturated"]

# 2**12 cells; larger saturated designs are skipped by the stack
MAX_SATURATED_INPUTS = 12
# stacking weights below this are treated as zero
WEIGHT_FLOOR = float(np.sqrt(np.finfo(float).eps))


def _as_matrix(rows: np.ndarray) -> np.ndarray:
    X = np.asarray(rows, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return X


def binary_columns(X: np.ndarray) -> np.ndarray:
    X = _as_matrix(X)
    return np.all((X == 0.0) | (X == 1.0), axis=0)


@dataclass(frozen=True)
class DesignSpec:
    expansion: Expansion = "main"
    standardize: bool = True


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Centers and scales non-binary columns with training statistics; binary columns pass through."""

    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> Standardizer:
        X = _as_matrix(X)
        cont = ~binary_columns(X)
        sd = X.std(axis=0)
        center = np.where(cont, X.mean(axis=0), 0.0)
        scale = np.where(cont & (sd > 0), sd, 1.0)
        return cls(center=center, scale=scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (_as_matrix(X) - self.center) / self.scale


def expand_features(rows: np.ndarray, spec: DesignSpec) -> np.ndarray:
    X = _as_matrix(rows)
    n, p = X.shape
    ones = np.ones((n, 1))
    if spec.expansion == "mean":
        return ones
    if spec.expansion == "main":
        return np.hstack([ones, X])
    if spec.expansion == "twoway":
        prods = [X[:, i] * X[:, j] for i, j in itertools.combinations(range(p), 2)]
        blocks = [ones, X] + ([np.column_stack(prods)] if prods else [])
        return np.hstack(blocks)
    if spec.expansion == "saturated":
        if not binary_columns(X).all():
            raise SaturationOnContinuous("saturated design requires all inputs to be 0/1")
        # one indicator per joint level; column k is the cell whose bits spell k
        cell = (X.astype(np.int64) << np.arange(p, dtype=np.int64)).sum(axis=1) if p else np.zeros(n, dtype=np.int64)
        out = np.zeros((n, 1 << p))
        out[np.arange(n), cell] = 1.0
        return out
    raise ValueError(f"unknown expansion {spec.expansion!r}")


@dataclass(frozen=True, eq=False)
class FittedModel:
    """A fitted member: the design it expects and the library estimator behind it.

    `estimator` is a float for the mean learner, a statsmodels GLM result for
    the GLM learners and a fitted sklearn `LassoCV`/`LogisticRegression` for
    the lasso.
    """

    family: GlmFamily
    n_inputs: int
    estimator: Any
    design: DesignSpec | None = None
    standardizer: Standardizer | None = None
    name: str = "glm"
    penalty: float | None = None

    def design_matrix(self, rows: np.ndarray) -> np.ndarray:
        X = _as_matrix(rows)
        if X.shape[1] != self.n_inputs:
            raise ArityMismatch(self.n_inputs, X.shape[1])
        if self.standardizer is not None:
            X = self.standardizer.transform(X)
        if self.design is not None:
            X = expand_features(X, self.design)
        return X

    def mean(self, rows: np.ndarray) -> np.ndarray:
        D = self.design_matrix(rows)
        if isinstance(self.estimator, float):
            return np.full(D.shape[0], self.estimator)
        if hasattr(self.estimator, "predict_proba"):
            return self.estimator.predict_proba(D)[:, 1]
        return np.asarray(self.estimator.predict(D), dtype=float)

    def predict(self, rows: np.ndarray, bound: float | None = None) -> np.ndarray:
        return predict(self, rows, bound=bound)


def predict(model: FittedModel | EnsembleModel, rows: np.ndarray, *, bound: float | None = None) -> np.ndarray:
    if isinstance(model, EnsembleModel):
        return model.predict(rows, bound=bound)
    mu = model.mean(rows)
    if model.family == "gaussian":
        return mu
    b = settings.prob_bound if bound is None else bound
    return np.clip(mu, b, 1.0 - b)


# --- GLM ----------------------------------------------------------------------


def glm_family(family: GlmFamily) -> sm.families.Family:
    return sm.families.Binomial() if family == "binomial" else sm.families.Gaussian()


def fit_glm(
    X: np.ndarray,
    y: np.ndarray,
    family: GlmFamily,
    *,
    weights: np.ndarray | None = None,
    offset: np.ndarray | None = None,
) -> Any:
    """statsmodels GLM fit by IRLS; binomial responses may be fractional in [0, 1].

    Empty saturated cells get a zero coefficient from the least-squares step.
    Separation stops the iterations early with finite coefficients.
    """
    model = sm.GLM(np.asarray(y, dtype=float), _as_matrix(X), family=glm_family(family), freq_weights=weights, offset=offset)
    with warnings.catch_warnings():
        # sparse saturated cells separate and overflow the logit
        warnings.simplefilter("ignore")
        return model.fit()


# --- L1-penalized GLM ---------------------------------------------------------


def _labelled_rows(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(rows, 0/1 labels, weights, owning observation) for a classifier.

    A fractional response becomes a 1-row weighted y and a 0-row weighted 1-y,
    which gives the quasi-binomial likelihood.
    """
    n = len(y)
    if bool(binary_columns(y).all()):
        return X, y.astype(np.int64), np.ones(n), np.arange(n)
    labels = np.concatenate([np.ones(n, dtype=np.int64), np.zeros(n, dtype=np.int64)])
    weights = np.concatenate([y, 1.0 - y])
    owner = np.concatenate([np.arange(n), np.arange(n)])
    keep = weights > 0.0
    return np.vstack([X, X])[keep], labels[keep], weights[keep], owner[keep]


def _l1_logistic(C: float, seed: int) -> LogisticRegression:
    return LogisticRegression(penalty="l1", C=C, solver="saga", max_iter=1000, random_state=seed)


def fit_lasso(
    X: np.ndarray,
    y: np.ndarray,
    family: GlmFamily,
    *,
    folds: int = 10,
    seed: int = 0,
    n_lambda: int = 20,
) -> tuple[Any, float] | None:
    """L1-penalized GLM with an unpenalized intercept, penalty chosen by K-fold CV.

    Returns (estimator, chosen penalty), or None when the response leaves too
    few rows of some class to cross-validate.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if np.ptp(y) == 0.0:
        return None
    if family == "gaussian":
        k = min(folds, n)
        if k < 2:
            return None
        est = LassoCV(n_alphas=n_lambda, cv=KFold(k, shuffle=True, random_state=seed), random_state=seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            est.fit(X, y)
        return est, float(est.alpha_)

    strata = (y >= 0.5).astype(np.int64)
    k = min(folds, int(np.bincount(strata, minlength=2).min()))
    if k < 2:
        return None
    rows, labels, weights, owner = _labelled_rows(X, y)
    # both copies of an observation stay in the same fold
    splits = [
        (np.flatnonzero(np.isin(owner, tr)), np.flatnonzero(np.isin(owner, te)))
        for tr, te in StratifiedKFold(k, shuffle=True, random_state=seed).split(np.zeros(n), strata)
    ]
    # CV deviance is weighted, so fractional rows count by their y and 1-y
    grid = np.logspace(-4, 4, n_lambda)
    loss = np.zeros(n_lambda)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            for tr, te in splits:
                for i, C in enumerate(grid):
                    est = _l1_logistic(C, seed).fit(rows[tr], labels[tr], sample_weight=weights[tr])
                    p = est.predict_proba(rows[te])[:, 1]
                    loss[i] += log_loss(labels[te], p, sample_weight=weights[te], labels=[0, 1]) * weights[te].sum()
            best = float(grid[int(np.argmin(loss))])
            est = _l1_logistic(best, seed).fit(rows, labels, sample_weight=weights)
        except ValueError as exc:
            logger.debug("lasso fell back to the mean: %s", exc)
            return None
    return est, 1.0 / best


# --- learners and the stacking ensemble ---------------------------------------


@dataclass(frozen=True)
class Learner:
    name: str
    kind: Literal["mean", "glm", "lasso"]
    design: DesignSpec

    def applicable(self, X: np.ndarray) -> bool:
        if self.design.expansion != "saturated":
            return True
        X = _as_matrix(X)
        return X.shape[1] <= MAX_SATURATED_INPUTS and bool(binary_columns(X).all())

    def _constant(self, X: np.ndarray, y: np.ndarray, family: GlmFamily) -> FittedModel:
        return FittedModel(family=family, n_inputs=X.shape[1], estimator=float(np.mean(y)), name=self.name)

    def fit(self, X: np.ndarray, y: np.ndarray, family: GlmFamily, *, seed: int = 0, lasso_folds: int = 10) -> FittedModel:
        X = _as_matrix(X)
        y = np.asarray(y, dtype=float)
        if self.kind == "mean":
            return self._constant(X, y, family)

        std = Standardizer.fit(X) if self.design.standardize else None
        Xs = std.transform(X) if std is not None else X
        D = expand_features(Xs, self.design)
        if self.kind == "lasso":
            # the lasso carries its own intercept
            fitted = fit_lasso(D, y, family, folds=lasso_folds, seed=seed % 2**32)
            if fitted is None:
                return self._constant(X, y, family)
            est, penalty = fitted
            return FittedModel(family, X.shape[1], est, design=self.design, standardizer=std, name=self.name, penalty=penalty)
        return FittedModel(family, X.shape[1], fit_glm(D, y, family), design=self.design, standardizer=std, name=self.name)


LEARNERS: dict[str, Learner] = {
    "mean": Learner("mean", "mean", DesignSpec("mean", standardize=False)),
    "glm_main": Learner("glm_main", "glm", DesignSpec("main")),
    "glm_twoway": Learner("glm_twoway", "glm", DesignSpec("twoway")),
    "glm_saturated": Learner("glm_saturated", "glm", DesignSpec("saturated", standardize=False)),
    "lasso_saturated": Learner("lasso_saturated", "lasso", DesignSpec("saturated", standardize=False)),
}


def get_learner(name: str) -> Learner:
    try:
        return LEARNERS[name]
    except KeyError:
        raise UnknownLearner(f"unknown learner {name!r}; known: {', '.join(LEARNERS)}") from None


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    family: GlmFamily
    members: tuple[FittedModel, ...]
    weights: np.ndarray
    cv_risk: np.ndarray = field(default_factory=lambda: np.array([]))
    bound: float | None = None

    def predict(self, rows: np.ndarray, bound: float | None = None) -> np.ndarray:
        b = self.bound if bound is None else bound
        out = np.zeros(_as_matrix(rows).shape[0])
        for wk, member in zip(self.weights, self.members):
            if wk > 0.0:
                out += wk * predict(member, rows, bound=b)
        return out


def _risk(y: np.ndarray, pred: np.ndarray, family: GlmFamily) -> float:
    if family == "gaussian":
        return float(np.mean((y - pred) ** 2))
    mu = np.clip(pred, 1e-12, 1.0 - 1e-12)
    return float(-np.mean(xlogy(y, mu) + xlogy(1.0 - y, 1.0 - mu)))


def simplex_weights(Z: np.ndarray, y: np.ndarray, family: GlmFamily) -> np.ndarray:
    """Convex weights for the columns of Z (out-of-fold member predictions).

    Squared error uses non-negative least squares, rescaled to sum to one; the
    log loss is minimized over the simplex by SLSQP. The result falls back to
    the best single member whenever it would do worse than that member.
    """
    k = Z.shape[1]
    member_risk = np.array([_risk(y, Z[:, j], family) for j in range(k)])
    best = np.zeros(k)
    best[int(np.argmin(member_risk))] = 1.0

    if family == "gaussian":
        coef, _ = nnls(Z, y)
    else:
        res = minimize(
            lambda wt: _risk(y, Z @ wt, family),
            np.full(k, 1.0 / k),
            method="SLSQP",
            bounds=[(0.0, 1.0)] * k,
            constraints=({"type": "eq", "fun": lambda wt: np.sum(wt) - 1.0},),
        )
        coef = res.x if res.success else np.zeros(k)
    coef = np.where(coef < WEIGHT_FLOOR, 0.0, coef)
    if coef.sum() <= 0.0:
        return best
    coef = coef / coef.sum()
    if _risk(y, Z @ coef, family) > member_risk.min():
        return best
    return coef


def fit_ensemble(
    members: Sequence[Learner],
    X: np.ndarray,
    y: np.ndarray,
    family: GlmFamily,
    V: int = 5,
    *,
    seed: int = 0,
    lasso_folds: int = 10,
    bound: float | None = None,
) -> EnsembleModel:
    if not members:
        raise ValueError("ensemble needs at least one member")
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    n = len(y)
    k = len(members)
    v_eff = min(V, n)

    if k == 1 or v_eff < 2:
        fitted = tuple(m.fit(X, y, family, seed=derive_seed(seed, "full", i), lasso_folds=lasso_folds) for i, m in enumerate(members))
        weights = np.zeros(k)
        weights[0] = 1.0
        return EnsembleModel(family=family, members=fitted, weights=weights, bound=bound)

    fa = make_folds(n, v_eff, derive_seed(seed, "ensemble-folds"))
    Z = np.zeros((n, k))
    for v in range(v_eff):
        tr, va = fa.fold_of != v, fa.fold_of == v
        for i, m in enumerate(members):
            fit = m.fit(X[tr], y[tr], family, seed=derive_seed(seed, v, i), lasso_folds=lasso_folds)
            Z[va, i] = predict(fit, X[va], bound=bound)

    weights = simplex_weights(Z, y, family)
    cv_risk = np.array([_risk(y, Z[:, i], family) for i in range(k)])
    fitted = tuple(m.fit(X, y, family, seed=derive_seed(seed, "full", i), lasso_folds=lasso_folds) for i, m in enumerate(members))
    logger.debug("ensemble weights %s", dict(zip((m.name for m in members), np.round(weights, 4))))
    return EnsembleModel(family=family, members=fitted, weights=weights, cv_risk=cv_risk, bound=bound)


@dataclass(frozen=True)
class LearnerStack:
    learners: tuple[Learner, ...]
    folds: int = 5
    lasso_folds: int = 10
    bound: float | None = None

    @classmethod
    def from_names(cls, names: Sequence[str], *, folds: int = 5, lasso_folds: int = 10, bound: float | None = None) -> LearnerStack:
        if not names:
            raise UnknownLearner("learner stack is empty")
        return cls(learners=tuple(get_learner(n) for n in names), folds=folds, lasso_folds=lasso_folds, bound=bound)

    def fit(self, X: np.ndarray, y: np.ndarray, family: GlmFamily, *, seed: int = 0) -> EnsembleModel:
        X = _as_matrix(X)
        members = [m for m in self.learners if m.applicable(X)]
        skipped = [m.name for m in self.learners if m not in members]
        if skipped:
            logger.info("skipping %s: saturated designs need at most %d binary inputs", ", ".join(skipped), MAX_SATURATED_INPUTS)
        if not members:
            members = [LEARNERS["mean"]]
        return fit_ensemble(members, X, y, family, self.folds, seed=seed, lasso_folds=self.lasso_folds, bound=self.bound)
