from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from src.config import Fluctuation
from src.dataset import Dataset
from src.errors import NonConvergenceWarning
from src.learners import fit_glm
from src.nuisance import NuisanceFits


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TmleStep:
    iteration: int
    epsilon: float
    score: float


@dataclass(frozen=True, eq=False)
class TmleResult:
    b: np.ndarray
    iterations: int
    converged: bool
    score: float
    tolerance: float
    log: list[TmleStep] = field(default_factory=list)


def stopping_tolerance(n: int) -> float:
    return 1.0 / (math.sqrt(n) * math.log(n))


def clever_covariate(d: Dataset, nf: NuisanceFits) -> tuple[np.ndarray, np.ndarray]:
    """(fluctuation subset, covariate on every row).

    Transported: rows S=1, A=a' with (1-c)/c * h_M / (t * g(a'|w)).
    Otherwise: rows A=a' with h_M / g(a'|w).
    """
    cov = nf.h_m / nf.g_aprime
    subset = d.a == nf.a_prime
    if d.transported:
        assert nf.c is not None and nf.t is not None
        cov = cov * (1.0 - nf.c) / nf.c / nf.t
        subset &= d.s == 1
    return subset, cov


def _score(y: np.ndarray, b: np.ndarray, subset: np.ndarray, cov: np.ndarray) -> float:
    return float(np.mean(np.where(subset, cov * (y - b), 0.0)))


def tmle_target_b(d: Dataset, nf: NuisanceFits, *, fluctuation: Fluctuation = "weighted", max_iter: int = 50) -> TmleResult:
    """Fluctuate b on the logit scale until the outcome part of the EIF has mean within (sqrt(n) log n)^-1 of zero.

    `d` must carry the outcome on the [0, 1] scale b was fit on.
    """
    y = np.nan_to_num(d.y, nan=0.0)
    subset, cov = clever_covariate(d, nf)
    tol = stopping_tolerance(d.n)
    b = np.asarray(nf.b, dtype=float)
    score = _score(y, b, subset, cov)
    log: list[TmleStep] = []

    it = 0
    while abs(score) > tol and it < max_iter and subset.any():
        it += 1
        off = logit(b[subset])
        if fluctuation == "weighted":
            fit = fit_glm(np.ones((int(subset.sum()), 1)), y[subset], "binomial", weights=cov[subset], offset=off)
            eps = float(fit.params[0])
            b = expit(np.clip(logit(b) + eps, -30.0, 30.0))
        else:
            fit = fit_glm(cov[subset][:, None], y[subset], "binomial", offset=off)
            eps = float(fit.params[0])
            b = expit(np.clip(logit(b) + eps * cov, -30.0, 30.0))
        score = _score(y, b, subset, cov)
        log.append(TmleStep(iteration=it, epsilon=eps, score=score))
        logger.info("tmle theta(%d,%d) iteration %d: epsilon=%.3g score=%.3g", nf.a_prime, nf.a_star, it, eps, score)

    converged = abs(score) <= tol
    if not converged:
        logger.warning("tmle theta(%d,%d) did not converge after %d iterations", nf.a_prime, nf.a_star, it)
        warnings.warn(
            f"partial TMLE for theta({nf.a_prime},{nf.a_star}) stopped at |score|={abs(score):.3g} > {tol:.3g}",
            NonConvergenceWarning,
            stacklevel=2,
        )
    return TmleResult(b=b, iterations=it, converged=converged, score=score, tolerance=tol, log=log)
