from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from src.config import EstimationOptions
from src.crossfit import FoldAssignment, RegressionTarget, crossfit_predict, derive_seed
from src.dataset import Component, Dataset, EffectSpec
from src.density_ratio import at_level, augment, compute_hM, estimate_hZ, ratio_bound_for
from src.learners import LearnerStack


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NuisanceFits:
    """Cross-fitted nuisance values for one theta(a', a*) component, one entry per row.

    g1 and e1 hold P(A=1 | W) and P(A=1 | M, W); c and t are set only for
    transported runs. b is on the scaled outcome and evaluated at A=a'.
    """

    a_prime: int
    a_star: int
    g1: np.ndarray
    e1: np.ndarray
    b: np.ndarray
    h_z: np.ndarray
    h_m: np.ndarray
    u: np.ndarray
    ubar: np.ndarray
    v: np.ndarray
    vbar: np.ndarray
    c: np.ndarray | None = None
    t: float | None = None

    @property
    def component(self) -> Component:
        return (self.a_prime, self.a_star)

    @property
    def g_aprime(self) -> np.ndarray:
        return at_level(self.g1, self.a_prime)

    @property
    def g_astar(self) -> np.ndarray:
        return at_level(self.g1, self.a_star)

    @property
    def e_aprime(self) -> np.ndarray:
        return at_level(self.e1, self.a_prime)

    @property
    def e_astar(self) -> np.ndarray:
        return at_level(self.e1, self.a_star)


@dataclass(frozen=True)
class FitContext:
    folds: FoldAssignment
    stack: LearnerStack
    seed: int = 0
    workers: int = 1


def _target_population(d: Dataset) -> np.ndarray:
    if d.transported:
        return d.s == 0
    return np.ones(d.n, dtype=bool)


def _fit(ctx: FitContext, target: RegressionTarget, eval_rows: list[np.ndarray] | None = None, stack: LearnerStack | None = None) -> list[np.ndarray]:
    logger.info("fitting %s on %d rows", target.name, int(target.train_mask().sum()))
    return crossfit_predict(
        target,
        ctx.folds,
        stack or ctx.stack,
        eval_rows if eval_rows is not None else [target.X],
        seed=derive_seed(ctx.seed, target.name),
        workers=ctx.workers,
    )


def fit_exposure(d: Dataset, ctx: FitContext, stack: LearnerStack | None = None) -> np.ndarray:
    return _fit(ctx, RegressionTarget("g", d.w, d.a, "binomial", _target_population(d)), stack=stack)[0]


def fit_e(d: Dataset, ctx: FitContext) -> np.ndarray:
    X = np.hstack([d.m, d.w])
    return _fit(ctx, RegressionTarget("e", X, d.a, "binomial", _target_population(d)))[0]


def fit_selection(d: Dataset, ctx: FitContext) -> tuple[np.ndarray, float]:
    if not d.transported:
        raise ValueError("selection model needs a transported dataset")
    X = np.column_stack([d.a, d.z, d.m, d.w])
    c = _fit(ctx, RegressionTarget("c", X, d.s, "binomial"))[0]
    return c, float(np.mean(d.s == 0))


def fit_outcome_b(d: Dataset, ctx: FitContext, a_prime: int) -> np.ndarray:
    X = np.column_stack([d.a, d.z, d.m, d.w])
    at_a = X.copy()
    at_a[:, 0] = a_prime
    # the outcome model borrows from the source population when transporting
    train = d.s == 1 if d.transported else None
    y = np.nan_to_num(d.y, nan=0.0)
    return _fit(ctx, RegressionTarget(f"b,a={a_prime}", X, y, "binomial", train), [at_a])[0]


def _on_outcome_scale(pred: np.ndarray) -> np.ndarray:
    # u, ubar, v and vbar average b over conditional laws, so they share its [0, 1] range
    return np.clip(pred, 0.0, 1.0)


def fit_u_ubar(d: Dataset, b: np.ndarray, h_m: np.ndarray, ctx: FitContext, a_prime: int, a_star: int) -> tuple[np.ndarray, np.ndarray]:
    train = _target_population(d) & (d.a == a_prime)
    zw = np.hstack([d.z, d.w])
    tag = f"{a_prime}{a_star}"
    u = _on_outcome_scale(_fit(ctx, RegressionTarget(f"u,{tag}", zw, b * h_m, "gaussian", train))[0])
    ubar = _on_outcome_scale(_fit(ctx, RegressionTarget(f"ubar,{tag}", d.w, u, "binomial", train))[0])
    return u, ubar


def fit_v_vbar(d: Dataset, b: np.ndarray, h_z: np.ndarray, ctx: FitContext, a_prime: int, a_star: int) -> tuple[np.ndarray, np.ndarray]:
    pop = _target_population(d)
    mw = np.hstack([d.m, d.w])
    tag = f"{a_prime}{a_star}"
    v = _on_outcome_scale(_fit(ctx, RegressionTarget(f"v,{tag}", mw, b * h_z, "gaussian", pop & (d.a == a_prime)))[0])
    vbar = _on_outcome_scale(_fit(ctx, RegressionTarget(f"vbar,{tag}", d.w, v, "binomial", pop & (d.a == a_star)))[0])
    return v, vbar


def refit_sequential(d: Dataset, nf: NuisanceFits, b: np.ndarray, ctx: FitContext) -> NuisanceFits:
    """Same fits with b replaced and the pseudo-outcome regressions redone from it."""
    u, ubar = fit_u_ubar(d, b, nf.h_m, ctx, nf.a_prime, nf.a_star)
    v, vbar = fit_v_vbar(d, b, nf.h_z, ctx, nf.a_prime, nf.a_star)
    return replace(nf, b=b, u=u, ubar=ubar, v=v, vbar=vbar)


def build_stack(opts: EstimationOptions, names: tuple[str, ...] | None = None) -> LearnerStack:
    return LearnerStack.from_names(
        names or opts.learners,
        folds=opts.ensemble_folds,
        lasso_folds=opts.lasso_folds,
        bound=opts.prob_bound,
    )


@dataclass(frozen=True, eq=False)
class ExposureFits:
    """Fits shared by every component: g, e and (transported) c, t."""

    g1: np.ndarray
    e1: np.ndarray
    c: np.ndarray | None = None
    t: float | None = None


def fit_exposures(d: Dataset, ctx: FitContext, opts: EstimationOptions) -> ExposureFits:
    g1 = fit_exposure(d, ctx, build_stack(opts, opts.exposure_learners))
    e1 = fit_e(d, ctx)
    c, t = fit_selection(d, ctx) if d.transported else (None, None)
    return ExposureFits(g1=g1, e1=e1, c=c, t=t)


def fit_nuisance(d: Dataset, spec: EffectSpec, opts: EstimationOptions, folds: FoldAssignment) -> dict[Component, NuisanceFits]:
    """All nuisance fits for the components the requested contrasts need.

    Fits depending only on a' (b and h_Z) are shared between components.
    """
    ctx = FitContext(folds=folds, stack=build_stack(opts), seed=opts.seed, workers=opts.workers)
    exp = fit_exposures(d, ctx, opts)

    ratio_bound = ratio_bound_for(d.n, opts.ratio_bound)
    logger.info("density ratios truncated to [%.3g, %.3g]", 1.0 / ratio_bound, ratio_bound)
    aug = augment(d, folds, derive_seed(opts.seed, "augment"))
    components = spec.components()
    b_of: dict[int, np.ndarray] = {}
    hz_of: dict[int, np.ndarray] = {}
    for a_prime in dict.fromkeys(ap for ap, _ in components):
        b_of[a_prime] = fit_outcome_b(d, ctx, a_prime)
        hz_of[a_prime] = estimate_hZ(
            aug, a_prime, ctx.stack, prob_bound=opts.prob_bound, ratio_bound=ratio_bound, workers=opts.workers
        )

    out: dict[Component, NuisanceFits] = {}
    for a_prime, a_star in components:
        logger.info("nuisance fits for theta(%d,%d)", a_prime, a_star)
        b, h_z = b_of[a_prime], hz_of[a_prime]
        h_m = compute_hM(h_z, exp.g1, exp.e1, a_prime, a_star, ratio_bound=ratio_bound)
        u, ubar = fit_u_ubar(d, b, h_m, ctx, a_prime, a_star)
        v, vbar = fit_v_vbar(d, b, h_z, ctx, a_prime, a_star)
        out[(a_prime, a_star)] = NuisanceFits(
            a_prime=a_prime,
            a_star=a_star,
            g1=exp.g1,
            e1=exp.e1,
            b=b,
            h_z=h_z,
            h_m=h_m,
            u=u,
            ubar=ubar,
            v=v,
            vbar=vbar,
            c=exp.c,
            t=exp.t,
        )
    return out
