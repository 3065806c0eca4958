from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Literal

import numpy as np
import pandas as pd
from scipy.stats import norm

from src import jsonutil
from src.config import EstimationOptions
from src.crossfit import make_folds
from src.dataset import CONTRAST_COMPONENTS, Component, Dataset, EffectSpec, OutcomeScale, scale_outcome
from src.nuisance import FitContext, NuisanceFits, build_stack, fit_nuisance, refit_sequential
from src.tmle import TmleResult, TmleStep, tmle_target_b


logger = logging.getLogger(__name__)

EstimatorName = Literal["onestep", "tmle"]

Z95 = float(norm.ppf(0.975))
WEIGHT_TAIL = 100.0

REPORT_COLUMNS = [
    "contrast",
    "estimator",
    "point",
    "se",
    "ci_lo",
    "ci_hi",
    "n_var",
    "tmle_iters",
    "tmle_converged",
    "wt_frac_gt100",
    "wt_p75",
]


def component_label(comp: Component) -> str:
    return f"theta({comp[0]},{comp[1]})"


@dataclass(frozen=True, eq=False)
class EifTable:
    """Per-row EIF pieces for one component, on the scaled outcome.

    `theta` is the solution of the empirical EIF equation and `total` is the
    full EIF evaluated there, so its mean is zero.
    """

    a_prime: int
    a_star: int
    d_y: np.ndarray
    d_z: np.ndarray
    d_m: np.ndarray
    d_w_core: np.ndarray
    # weight multiplying (vbar - theta): 1 without transport, 1{s=0}/t with it
    w_weight: np.ndarray
    theta: float
    total: np.ndarray

    @property
    def n(self) -> int:
        return len(self.total)


def _solve(a_prime: int, a_star: int, d_y: np.ndarray, d_z: np.ndarray, d_m: np.ndarray, vbar: np.ndarray, w_weight: np.ndarray) -> EifTable:
    d_w_core = w_weight * vbar
    theta = float(np.mean(d_y + d_z + d_m + d_w_core))
    total = d_y + d_z + d_m + w_weight * (vbar - theta)
    return EifTable(a_prime, a_star, d_y, d_z, d_m, d_w_core, w_weight, theta, total)


def assemble_eif(nf: NuisanceFits, d: Dataset) -> EifTable:
    y = np.nan_to_num(d.y, nan=0.0)
    at_ap = (d.a == nf.a_prime).astype(float)
    at_as = (d.a == nf.a_star).astype(float)
    d_y = at_ap / nf.g_aprime * nf.h_m * (y - nf.b)
    d_z = at_ap / nf.g_aprime * (nf.u - nf.ubar)
    d_m = at_as / nf.g_astar * (nf.v - nf.vbar)
    return _solve(nf.a_prime, nf.a_star, d_y, d_z, d_m, nf.vbar, np.ones(d.n))


def assemble_eif_transported(nf: NuisanceFits, d: Dataset) -> EifTable:
    assert nf.c is not None and nf.t is not None and d.s is not None
    y = np.nan_to_num(d.y, nan=0.0)
    s1 = d.s == 1
    s0 = ~s1
    t = nf.t
    src_ap = (s1 & (d.a == nf.a_prime)).astype(float)
    tgt_ap = (s0 & (d.a == nf.a_prime)).astype(float)
    tgt_as = (s0 & (d.a == nf.a_star)).astype(float)
    d_y = src_ap / (t * nf.g_aprime) * (1.0 - nf.c) / nf.c * nf.h_m * (y - nf.b)
    d_z = tgt_ap / (t * nf.g_aprime) * (nf.u - nf.ubar)
    d_m = tgt_as / (t * nf.g_astar) * (nf.v - nf.vbar)
    return _solve(nf.a_prime, nf.a_star, d_y, d_z, d_m, nf.vbar, s0.astype(float) / t)


def assemble(nf: NuisanceFits, d: Dataset) -> EifTable:
    return assemble_eif_transported(nf, d) if d.transported else assemble_eif(nf, d)


# --- reporting ----------------------------------------------------------------


@dataclass(frozen=True)
class WeightSummary:
    ratio: str
    frac_gt100: float
    p75: float


def weight_ratio(nf: NuisanceFits) -> tuple[str, np.ndarray]:
    if nf.c is not None:
        return "(1-c)/c", (1.0 - nf.c) / nf.c
    return "h_M/g(a')", nf.h_m / nf.g_aprime


def weight_diagnostics(nf: NuisanceFits) -> WeightSummary:
    name, ratio = weight_ratio(nf)
    return WeightSummary(
        ratio=name,
        frac_gt100=float(np.mean(ratio > WEIGHT_TAIL)),
        p75=float(np.percentile(ratio, 75, method="inverted_cdf")),
    )


@dataclass(frozen=True)
class EstimateRow:
    contrast: str
    estimator: EstimatorName
    point: float
    se: float
    ci_lo: float
    ci_hi: float
    n_var: float
    tmle_iters: int | None = None
    tmle_converged: bool | None = None
    wt_frac_gt100: float | None = None
    wt_p75: float | None = None


@dataclass(frozen=True)
class TmleLog:
    iterations: int
    converged: bool
    score: float
    tolerance: float
    steps: list[TmleStep]


@dataclass
class EstimateReport:
    n: int
    family: str
    rows: list[EstimateRow] = field(default_factory=list)
    diagnostics: dict[str, WeightSummary] = field(default_factory=dict)
    tmle: dict[str, TmleLog] = field(default_factory=dict)
    y_min: float = 0.0
    y_max: float = 1.0
    folds: int | None = None
    seed: int | None = None

    def select(self, contrast: str, estimator: EstimatorName) -> EstimateRow:
        for r in self.rows:
            if r.contrast == contrast and r.estimator == estimator:
                return r
        raise KeyError((contrast, estimator))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows], columns=REPORT_COLUMNS)

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.10g", lineterminator="\n")

    def to_json(self) -> str:
        return jsonutil.dumps(self)


def _row(label: str, kind: EstimatorName, point: float, eif: np.ndarray, width: float) -> EstimateRow:
    n = len(eif)
    se = float(np.std(eif, ddof=1) / np.sqrt(n)) * width
    return EstimateRow(
        contrast=label,
        estimator=kind,
        point=point,
        se=se,
        ci_lo=point - Z95 * se,
        ci_hi=point + Z95 * se,
        n_var=n * se * se,
    )


def summarize(eifs: dict[Component, EifTable], spec: EffectSpec, scale: OutcomeScale, kind: EstimatorName) -> list[EstimateRow]:
    """Contrast rows followed by the component rows, all on the original outcome scale."""
    rows = []
    for c in spec.contrasts:
        hi, lo = CONTRAST_COMPONENTS[c]
        point = (eifs[hi].theta - eifs[lo].theta) * scale.width
        rows.append(_row(c, kind, point, eifs[hi].total - eifs[lo].total, scale.width))
    for comp in spec.components():
        t = eifs[comp]
        rows.append(_row(component_label(comp), kind, float(scale.unscale(t.theta)), t.total, scale.width))
    return rows


def onestep(eifs: dict[Component, EifTable], spec: EffectSpec, scale: OutcomeScale) -> EstimateReport:
    """One-step report from solved EIF tables: each theta solves its empirical EIF equation."""
    n = next(iter(eifs.values())).n
    return EstimateReport(
        n=n,
        family=spec.family,
        rows=summarize(eifs, spec, scale, "onestep"),
        y_min=scale.y_min,
        y_max=scale.y_max,
    )


def _annotate(rows: list[EstimateRow], spec: EffectSpec, diag: dict[Component, WeightSummary], tmle: dict[Component, TmleResult]) -> list[EstimateRow]:
    # contrast rows take the heavier tail of their two components
    out = []
    for r in rows:
        comps = CONTRAST_COMPONENTS.get(r.contrast) or tuple(c for c in spec.components() if component_label(c) == r.contrast)
        upd: dict[str, object] = {
            "wt_frac_gt100": max(diag[c].frac_gt100 for c in comps),
            "wt_p75": max(diag[c].p75 for c in comps),
        }
        if r.estimator == "tmle":
            upd["tmle_iters"] = max(tmle[c].iterations for c in comps)
            upd["tmle_converged"] = all(tmle[c].converged for c in comps)
        out.append(replace(r, **upd))
    return out


def estimate(d: Dataset, spec: EffectSpec, opts: EstimationOptions) -> EstimateReport:
    """Folds, density ratios, nuisance fits, then one-step and/or partial TMLE."""
    if spec.family != d.family:
        raise ValueError(f"dataset family {d.family} does not match requested {spec.family}")
    scaled, scale = scale_outcome(d)
    folds = make_folds(d.n, opts.folds, opts.seed, strata=d.s if d.transported else None)
    logger.info("n=%d, %d folds of sizes %s", d.n, folds.J, sorted(set(folds.sizes().tolist())))

    fits = fit_nuisance(scaled, spec, opts, folds)
    diag = {comp: weight_diagnostics(nf) for comp, nf in fits.items()}

    rows: list[EstimateRow] = []
    if opts.estimator in ("onestep", "both"):
        rows += onestep({c: assemble(nf, scaled) for c, nf in fits.items()}, spec, scale).rows

    tmle: dict[Component, TmleResult] = {}
    if opts.estimator in ("tmle", "both"):
        ctx = FitContext(folds=folds, stack=build_stack(opts), seed=opts.seed, workers=opts.workers)
        targeted: dict[Component, EifTable] = {}
        for comp, nf in fits.items():
            res = tmle_target_b(scaled, nf, fluctuation=opts.fluctuation, max_iter=opts.max_tmle_iter)
            tmle[comp] = res
            targeted[comp] = assemble(refit_sequential(scaled, nf, res.b, ctx), scaled)
        rows += summarize(targeted, spec, scale, "tmle")

    return EstimateReport(
        n=d.n,
        family=spec.family,
        rows=_annotate(rows, spec, diag, tmle),
        diagnostics={component_label(c): s for c, s in diag.items()},
        tmle={
            component_label(c): TmleLog(r.iterations, r.converged, r.score, r.tolerance, r.log) for c, r in tmle.items()
        },
        y_min=scale.y_min,
        y_max=scale.y_max,
        folds=folds.J,
        seed=opts.seed,
    )


def diagnose(d: Dataset, spec: EffectSpec, opts: EstimationOptions) -> dict[str, WeightSummary]:
    """Nuisance fits only; the weight-tail summary per component."""
    scaled, _ = scale_outcome(d)
    folds = make_folds(d.n, opts.folds, opts.seed, strata=d.s if d.transported else None)
    fits = fit_nuisance(scaled, spec, opts, folds)
    return {component_label(c): weight_diagnostics(nf) for c, nf in fits.items()}
