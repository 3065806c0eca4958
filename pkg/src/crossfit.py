from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import KFold, StratifiedKFold

from src.errors import BadFoldCount, EmptyTrainingSubset

if TYPE_CHECKING:
    from src.learners import GlmFamily, LearnerStack


logger = logging.getLogger(__name__)


def derive_seed(seed: int, *keys: int | str) -> int:
    """Child seed for a named sub-task, stable across runs and worker counts."""
    entropy = [int(seed)] + [k if isinstance(k, int) else zlib.crc32(str(k).encode("utf-8")) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def rng_for(seed: int, *keys: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    J: int
    fold_of: np.ndarray

    @property
    def n(self) -> int:
        return len(self.fold_of)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.J)

    def held_out(self, j: int) -> np.ndarray:
        return self.fold_of == j

    def duplicate(self, times: int = 2) -> FoldAssignment:
        # stacked copies keep the fold of their original row
        return FoldAssignment(J=self.J, fold_of=_readonly(np.tile(self.fold_of, times)))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


def make_folds(n: int, J: int, seed: int, strata: np.ndarray | None = None) -> FoldAssignment:
    """Random partition into J folds whose sizes differ by at most one.

    With strata, sklearn's `StratifiedKFold` spreads each stratum evenly over
    the folds; strata smaller than J fall back to a plain shuffled `KFold`.
    """
    if not 2 <= J <= n:
        raise BadFoldCount(n, J)
    state = derive_seed(seed, "folds")
    rows = np.zeros((n, 1))
    if strata is not None and np.unique(strata, return_counts=True)[1].min() >= J:
        splits = StratifiedKFold(J, shuffle=True, random_state=state).split(rows, np.asarray(strata))
    else:
        if strata is not None:
            logger.info("a stratum has fewer than %d rows; folds are not stratified", J)
        splits = KFold(J, shuffle=True, random_state=state).split(rows)
    fold_of = np.empty(n, dtype=np.int64)
    for j, (_, held) in enumerate(splits):
        fold_of[held] = j
    return FoldAssignment(J=J, fold_of=_readonly(fold_of))


@dataclass(frozen=True, eq=False)
class RegressionTarget:
    """One nuisance regression: response on predictors, trained only where `train` is true."""

    name: str
    X: np.ndarray
    y: np.ndarray
    family: GlmFamily
    train: np.ndarray | None = field(default=None)

    def train_mask(self) -> np.ndarray:
        n = len(self.y)
        return np.ones(n, dtype=bool) if self.train is None else np.asarray(self.train, dtype=bool)


def _fit_fold(target: RegressionTarget, stack: LearnerStack, fold_of: np.ndarray, j: int, mask: np.ndarray, eval_rows: Sequence[np.ndarray], seed: int) -> tuple[int, list[np.ndarray]]:
    tr = (fold_of != j) & mask
    if not tr.any():
        raise EmptyTrainingSubset(target.name, j)
    va = fold_of == j
    logger.debug("%s fold %d: %d training rows, %d held out", target.name, j, int(tr.sum()), int(va.sum()))
    model = stack.fit(target.X[tr], target.y[tr], target.family, seed=seed)
    return j, [model.predict(E[va]) for E in eval_rows]


def crossfit_predict(
    target: RegressionTarget,
    folds: FoldAssignment,
    stack: LearnerStack,
    eval_rows: Sequence[np.ndarray],
    *,
    seed: int = 0,
    workers: int = 1,
) -> list[np.ndarray]:
    """Out-of-fold predictions: rows of fold j come from the model trained on the other folds.

    Returns one array per evaluation matrix. Each matrix has one row per
    observation and the predictor layout of `target.X`, with any
    counterfactual substitutions already applied.
    """
    n = folds.n
    if len(target.y) != n or target.X.shape[0] != n:
        raise ValueError(f"{target.name}: regression has {len(target.y)} rows, folds cover {n}")
    mask = target.train_mask()
    fold_of = folds.fold_of
    jobs = (
        delayed(_fit_fold)(target, stack, fold_of, j, mask, eval_rows, derive_seed(seed, target.name, j))
        for j in range(folds.J)
    )
    results = Parallel(n_jobs=workers)(jobs)

    out = [np.empty(n) for _ in eval_rows]
    for j, preds in results:
        va = fold_of == j
        for k, p in enumerate(preds):
            out[k][va] = p
    return out
