from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from src.config import settings
from src.crossfit import FoldAssignment, RegressionTarget, crossfit_predict, derive_seed, rng_for
from src.dataset import Dataset
from src.learners import LearnerStack


logger = logging.getLogger(__name__)


# floor of the default bound; it binds for n below about 115
MIN_RATIO_BOUND = 10.0


def ratio_bound_for(n: int, ratio_bound: float | None = None) -> float:
    """R for the [1/R, R] truncation: the explicit value, else the setting, else sqrt(n) log(n) / 5."""
    if ratio_bound is not None:
        return float(ratio_bound)
    if settings.ratio_bound is not None:
        return float(settings.ratio_bound)
    return max(math.sqrt(n) * math.log(n) / 5.0, MIN_RATIO_BOUND)


def at_level(p1: np.ndarray, a: int) -> np.ndarray:
    """P(A=a | .) from the fitted P(A=1 | .)."""
    return p1 if a == 1 else 1.0 - p1


@dataclass(frozen=True, eq=False)
class AugmentedDataset:
    """The observed rows (lam=0) stacked on copies whose M block was redrawn (lam=1)."""

    w: np.ndarray
    z: np.ndarray
    m: np.ndarray
    a: np.ndarray
    s: np.ndarray | None
    lam: np.ndarray
    original_index: np.ndarray
    folds: FoldAssignment
    seed: int

    @property
    def n_original(self) -> int:
        return len(self.lam) // 2

    @property
    def transported(self) -> bool:
        return self.s is not None


def augment(d: Dataset, folds: FoldAssignment, seed: int) -> AugmentedDataset:
    n = d.n
    m = d.m
    # reference draws are whole M rows from the target population
    pool = np.flatnonzero(d.s == 0) if d.transported else np.arange(n)
    rng = rng_for(seed, "augment")
    drawn = m[pool[rng.integers(0, len(pool), size=n)]]

    def twice(x: np.ndarray) -> np.ndarray:
        return np.concatenate([x, x], axis=0)

    return AugmentedDataset(
        w=twice(d.w),
        z=twice(d.z),
        m=np.concatenate([m, drawn], axis=0),
        a=twice(d.a),
        s=twice(d.s) if d.transported else None,
        lam=np.concatenate([np.zeros(n), np.ones(n)]),
        original_index=twice(np.arange(n)),
        folds=folds.duplicate(),
        seed=seed,
    )


def estimate_hZ(
    aug: AugmentedDataset,
    a_prime: int,
    stack: LearnerStack,
    folds: FoldAssignment | None = None,
    *,
    prob_bound: float | None = None,
    ratio_bound: float | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Cross-fitted p(m|a',w) / p(m|a',z,w) for every original row.

    Two classifiers of lam are trained on the A=a' rows (S=0 rows as well when
    transported): one on (Z, M, W) and one on (M, W). Their odds
    odds(lam=1 | z,m,w) * odds(lam=0 | m,w) give the ratio.
    """
    delta = settings.prob_bound if prob_bound is None else prob_bound
    folds = aug.folds if folds is None else folds
    n = aug.n_original
    bound = ratio_bound_for(n, ratio_bound)

    train = aug.a == a_prime
    if aug.transported:
        train &= aug.s == 0

    full = np.hstack([aug.z, aug.m, aug.w])
    reduced = np.hstack([aug.m, aug.w])
    logger.info("density ratio for a'=%d: %d augmented training rows", a_prime, int(train.sum()))

    p_full = crossfit_predict(
        RegressionTarget(f"lambda|zmw,a={a_prime}", full, aug.lam, "binomial", train),
        folds,
        stack,
        [full],
        seed=derive_seed(aug.seed, "hz-full", a_prime),
        workers=workers,
    )[0][:n]
    p_reduced = crossfit_predict(
        RegressionTarget(f"lambda|mw,a={a_prime}", reduced, aug.lam, "binomial", train),
        folds,
        stack,
        [reduced],
        seed=derive_seed(aug.seed, "hz-reduced", a_prime),
        workers=workers,
    )[0][:n]

    p_full = np.clip(p_full, delta, 1.0 - delta)
    p_reduced = np.clip(p_reduced, delta, 1.0 - delta)
    h = (p_full / (1.0 - p_full)) * ((1.0 - p_reduced) / p_reduced)
    return np.clip(h, 1.0 / bound, bound)


def compute_hM(
    h_z: np.ndarray,
    g: np.ndarray,
    e: np.ndarray,
    a_prime: int,
    a_star: int,
    *,
    ratio_bound: float | None = None,
) -> np.ndarray:
    """h_Z * g(a'|w)/g(a*|w) * e(a*|m,w)/e(a'|m,w); g and e are fitted P(A=1|.)."""
    bound = ratio_bound_for(len(h_z), ratio_bound)
    h = h_z * (at_level(g, a_prime) / at_level(g, a_star)) * (at_level(e, a_star) / at_level(e, a_prime))
    return np.clip(h, 1.0 / bound, bound)
