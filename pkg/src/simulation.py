from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import expit

from src.config import EstimationOptions, EstimatorKind
from src.crossfit import derive_seed
from src.dataset import CONTRAST_COMPONENTS, Dataset, EffectSpec, VariableRoles, make_dataset
from src.errors import IntermedError, InvalidConfig, NonConvergenceWarning, UnknownDgm
from src.estimators import EstimatorName, estimate


logger = logging.getLogger(__name__)

DgmId = Literal["binary_nt", "binary_t", "multi_nt", "multi_t"]

P_W = 0.4
P_A = 0.5
# the site marginal is not pinned down by the structural equations; effects do not depend on it
P_S = 0.5

STUDY_SIZES: tuple[int, ...] = (500, 1000, 5000, 10000)
BINARY_STACK: tuple[str, ...] = ("glm_saturated",)
MULTI_STACK: tuple[str, ...] = ("glm_main", "glm_twoway", "glm_saturated", "lasso_saturated")

Prob = Callable[..., np.ndarray]
L = math.log


@dataclass(frozen=True)
class Dgm:
    """All-binary structural model W -> A -> Z -> M -> Y, optionally with a site S.

    Components of Z are independent given (A, W, S) and components of M are
    independent given (A, Z, W, S). Each function returns P(=1) column-wise.
    """

    id: str
    transported: bool
    kz: int
    km: int
    p_z: Prob  # (a, w, s) -> n x kz
    p_m: Prob  # (a, z, w, s) -> n x km
    p_y: Prob  # (a, z, m, w) -> n

    def roles(self) -> VariableRoles:
        return VariableRoles(
            a="a",
            m=_names("m", self.km),
            y="y",
            w=("w",),
            z=_names("z", self.kz),
            s="s" if self.transported else None,
        )

    @property
    def family(self) -> str:
        return "transported" if self.transported else "nontransported"


def _names(prefix: str, k: int) -> tuple[str, ...]:
    return (prefix,) if k == 1 else tuple(f"{prefix}{i + 1}" for i in range(k))


def _cols(*arrays: np.ndarray) -> np.ndarray:
    return np.column_stack(arrays)


DGMS: dict[str, Dgm] = {
    "binary_nt": Dgm(
        id="binary_nt",
        transported=False,
        kz=1,
        km=1,
        p_z=lambda a, w, s: _cols(expit(-L(2) + L(10) * a - L(2) * w)),
        p_m=lambda a, z, w, s: _cols(expit(-L(2) + L(12) * z[:, 0] - L(1.4) * w)),
        p_y=lambda a, z, m, w: expit(-L(5) + L(8) * z[:, 0] + L(10) * m[:, 0] - L(1.2) * w + L(1.2) * z[:, 0] * w),
    ),
    "binary_t": Dgm(
        id="binary_t",
        transported=True,
        kz=1,
        km=1,
        p_z=lambda a, w, s: _cols(expit(-L(2) + L(4) * a - L(2) * w + L(1.4) * s)),
        p_m=lambda a, z, w, s: _cols(expit(-L(2) + L(10) * z[:, 0] - L(1.4) * w + L(0.3) * s)),
        p_y=lambda a, z, m, w: expit(-L(5) + L(8) * z[:, 0] + L(6) * m[:, 0] - L(1.2) * w + L(1.2) * z[:, 0] * w),
    ),
}


def _multi_y(a: np.ndarray, z: np.ndarray, m: np.ndarray, w: np.ndarray) -> np.ndarray:
    return expit(
        -L(5) + L(8) * z[:, 0] + L(4) * m[:, 0] - L(1.2) * w - L(2) * z[:, 1] + L(1.2) * m[:, 1] + L(1.2) * w * z[:, 0]
    )


DGMS["multi_nt"] = Dgm(
    id="multi_nt",
    transported=False,
    kz=2,
    km=2,
    p_z=lambda a, w, s: _cols(0.25 + 0.1 * a + 0.2 * w, 0.4 + 0.1 * a - 0.1 * w),
    p_m=lambda a, z, w, s: _cols(0.6 + 0.1 * z[:, 0] + 0.05 * a - 0.3 * w, 0.33 + 0.22 * z[:, 1] + 0.05 * a + 0.15 * w),
    p_y=_multi_y,
)
DGMS["multi_t"] = Dgm(
    id="multi_t",
    transported=True,
    kz=2,
    km=2,
    p_z=lambda a, w, s: _cols(0.25 + 0.1 * a + 0.2 * w + 0.05 * s, 0.4 + 0.1 * a - 0.1 * w + 0.075 * s),
    p_m=lambda a, z, w, s: _cols(
        0.6 + 0.1 * z[:, 0] + 0.05 * a - 0.3 * w, 0.33 + 0.22 * z[:, 1] + 0.05 * a + 0.15 * w - 0.05 * s
    ),
    p_y=_multi_y,
)


def get_dgm(dgm: str) -> Dgm:
    try:
        return DGMS[dgm]
    except KeyError:
        raise UnknownDgm(f"unknown data-generating mechanism {dgm!r}; known: {', '.join(DGMS)}") from None


def generate(dgm: str, n: int, seed: int) -> Dataset:
    spec = get_dgm(dgm)
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    s = (rng.random(n) < P_S).astype(float) if spec.transported else np.zeros(n)
    w = (rng.random(n) < P_W).astype(float)
    a = (rng.random(n) < P_A).astype(float)
    z = (rng.random((n, spec.kz)) < spec.p_z(a, w, s)).astype(float)
    m = (rng.random((n, spec.km)) < spec.p_m(a, z, w, s)).astype(float)
    y = (rng.random(n) < spec.p_y(a, z, m, w)).astype(float)

    roles = spec.roles()
    cols: dict[str, np.ndarray] = {"w": w, "a": a}
    cols.update({name: z[:, k] for k, name in enumerate(roles.z)})
    cols.update({name: m[:, k] for k, name in enumerate(roles.m)})
    if spec.transported:
        cols["s"] = s
        # outcome is only observed in the source population
        y = np.where(s == 1, y, np.nan)
    cols["y"] = y
    return make_dataset(cols, roles, spec.family)  # type: ignore[arg-type]


# --- published constants and exact oracles ----------------------------------


@dataclass(frozen=True)
class TrueValues:
    ide: float
    iie: float
    ide_bound: float
    iie_bound: float

    def effect(self, contrast: str) -> float:
        return self.ide if contrast == "IDE" else self.iie


_TRUE: dict[str, TrueValues] = {
    "binary_nt": TrueValues(ide=0.1933, iie=0.0975, ide_bound=1.4607, iie_bound=0.3191),
    "binary_t": TrueValues(ide=0.1347, iie=0.0522, ide_bound=0.1742, iie_bound=0.019),
    "multi_nt": TrueValues(ide=0.0314, iie=0.0177, ide_bound=0.9951, iie_bound=0.0749),
    "multi_t": TrueValues(ide=0.0313, iie=0.0177, ide_bound=0.1093, iie_bound=0.0083),
}


def true_values(dgm: str) -> TrueValues:
    get_dgm(dgm)
    return _TRUE[dgm]


def _bern(p: np.ndarray, x: np.ndarray) -> np.ndarray:
    # P(X=x) for independent binary components, product over columns
    return np.prod(np.where(x == 1.0, p, 1.0 - p), axis=1)


def _grid(k: int) -> np.ndarray:
    return np.array(list(itertools.product((0.0, 1.0), repeat=k))).reshape(-1, k)


class Oracle:
    """Exact nuisance functions of a DGM, vectorized over rows of (z, m, w).

    Population quantities conditional on the site use the target S=0 when the
    DGM is transported.
    """

    def __init__(self, dgm: str):
        self.dgm = get_dgm(dgm)
        self.z_levels = _grid(self.dgm.kz)
        self.m_levels = _grid(self.dgm.km)

    def _full(self, v: float | np.ndarray, n: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(v, dtype=float), (n,)).astype(float)

    def g(self, a: int, w: np.ndarray) -> np.ndarray:
        return self._full(P_A if a == 1 else 1.0 - P_A, len(w))

    def q(self, z: np.ndarray, a: int, w: np.ndarray, s: float = 0.0) -> np.ndarray:
        n = len(w)
        return _bern(self.dgm.p_z(self._full(a, n), w, self._full(s, n)), z)

    def p_m_given_z(self, m: np.ndarray, a: int, z: np.ndarray, w: np.ndarray, s: float = 0.0) -> np.ndarray:
        n = len(w)
        return _bern(self.dgm.p_m(self._full(a, n), z, w, self._full(s, n)), m)

    def p_m(self, m: np.ndarray, a: int, w: np.ndarray, s: float = 0.0) -> np.ndarray:
        out = np.zeros(len(w))
        for zl in self.z_levels:
            zz = np.tile(zl, (len(w), 1))
            out += self.q(zz, a, w, s) * self.p_m_given_z(m, a, zz, w, s)
        return out

    def b(self, a: int, z: np.ndarray, m: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self.dgm.p_y(self._full(a, len(w)), z, m, w)

    def h_z(self, a_prime: int, z: np.ndarray, m: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self.p_m(m, a_prime, w) / self.p_m_given_z(m, a_prime, z, w)

    def e(self, a: int, m: np.ndarray, w: np.ndarray, s: float = 0.0) -> np.ndarray:
        num = self.g(a, w) * self.p_m(m, a, w, s)
        return num / (num + self.g(1 - a, w) * self.p_m(m, 1 - a, w, s))

    def h_m(self, a_prime: int, a_star: int, z: np.ndarray, m: np.ndarray, w: np.ndarray) -> np.ndarray:
        return (
            self.h_z(a_prime, z, m, w)
            * self.g(a_prime, w)
            / self.g(a_star, w)
            * self.e(a_star, m, w)
            / self.e(a_prime, m, w)
        )

    def c(self, a: int, z: np.ndarray, m: np.ndarray, w: np.ndarray) -> np.ndarray:
        """P(S=1 | a, z, m, w); W and A are independent of S."""
        joint = [self.q(z, a, w, s) * self.p_m_given_z(m, a, z, w, s) for s in (0.0, 1.0)]
        return P_S * joint[1] / ((1.0 - P_S) * joint[0] + P_S * joint[1])

    def u(self, a_prime: int, a_star: int, z: np.ndarray, w: np.ndarray) -> np.ndarray:
        out = np.zeros(len(w))
        for ml in self.m_levels:
            mm = np.tile(ml, (len(w), 1))
            out += self.p_m_given_z(mm, a_prime, z, w) * self.b(a_prime, z, mm, w) * self.h_m(a_prime, a_star, z, mm, w)
        return out

    def ubar(self, a_prime: int, a_star: int, w: np.ndarray) -> np.ndarray:
        out = np.zeros(len(w))
        for zl in self.z_levels:
            zz = np.tile(zl, (len(w), 1))
            out += self.q(zz, a_prime, w) * self.u(a_prime, a_star, zz, w)
        return out

    def v(self, a_prime: int, m: np.ndarray, w: np.ndarray) -> np.ndarray:
        out = np.zeros(len(w))
        for zl in self.z_levels:
            zz = np.tile(zl, (len(w), 1))
            out += self.q(zz, a_prime, w) * self.b(a_prime, zz, m, w)
        return out

    def vbar(self, a_prime: int, a_star: int, w: np.ndarray) -> np.ndarray:
        out = np.zeros(len(w))
        for ml in self.m_levels:
            mm = np.tile(ml, (len(w), 1))
            out += self.p_m(mm, a_star, w) * self.v(a_prime, mm, w)
        return out

    def theta(self, a_prime: int, a_star: int) -> float:
        w = np.array([0.0, 1.0])
        return float(np.dot([1.0 - P_W, P_W], self.vbar(a_prime, a_star, w)))


def gcomp_oracle(dgm: str, a_prime: int, a_star: int) -> float:
    """Identification formula evaluated exactly by summing over every binary configuration."""
    return Oracle(dgm).theta(a_prime, a_star)


def _observed_cells(o: Oracle) -> tuple[dict[str, np.ndarray], np.ndarray]:
    d = o.dgm
    s_levels = (0.0, 1.0) if d.transported else (0.0,)
    rows = list(itertools.product(s_levels, (0.0, 1.0), (0.0, 1.0), o.z_levels, o.m_levels, (0.0, 1.0)))
    s = np.array([r[0] for r in rows])
    w = np.array([r[1] for r in rows])
    a = np.array([r[2] for r in rows])
    z = np.array([r[3] for r in rows]).reshape(len(rows), d.kz)
    m = np.array([r[4] for r in rows]).reshape(len(rows), d.km)
    y = np.array([r[5] for r in rows])
    p_y = d.p_y(a, z, m, w)
    prob = (
        (np.where(s == 1, P_S, 1.0 - P_S) if d.transported else 1.0)
        * np.where(w == 1, P_W, 1.0 - P_W)
        * np.where(a == 1, P_A, 1.0 - P_A)
        * _bern(d.p_z(a, w, s), z)
        * _bern(d.p_m(a, z, w, s), m)
        * np.where(y == 1, p_y, 1.0 - p_y)
    )
    return {"s": s, "w": w, "a": a, "z": z, "m": m, "y": y}, prob


def _oracle_eif(o: Oracle, cells: dict[str, np.ndarray], a_prime: int, a_star: int) -> np.ndarray:
    s, w, a, z, m, y = (cells[k] for k in ("s", "w", "a", "z", "m", "y"))
    theta = o.theta(a_prime, a_star)
    b = o.b(a_prime, z, m, w)
    g_ap, g_as = o.g(a_prime, w), o.g(a_star, w)
    d_y = (a == a_prime) / g_ap * o.h_m(a_prime, a_star, z, m, w) * (y - b)
    d_z = (a == a_prime) / g_ap * (o.u(a_prime, a_star, z, w) - o.ubar(a_prime, a_star, w))
    d_m = (a == a_star) / g_as * (o.v(a_prime, m, w) - o.vbar(a_prime, a_star, w))
    d_w = o.vbar(a_prime, a_star, w) - theta
    if not o.dgm.transported:
        return d_y + d_z + d_m + d_w
    t = 1.0 - P_S
    c = o.c(a_prime, z, m, w)
    return (s == 1) / t * (1.0 - c) / c * d_y + (s == 0) / t * (d_z + d_m + d_w)


def efficiency_bound(dgm: str) -> dict[str, float]:
    """Variance of the IDE and IIE efficient influence functions, by exact enumeration."""
    o = Oracle(dgm)
    cells, prob = _observed_cells(o)
    eif = {comp: _oracle_eif(o, cells, *comp) for contrast in CONTRAST_COMPONENTS.values() for comp in contrast}
    out = {}
    for name, (hi, lo) in CONTRAST_COMPONENTS.items():
        diff = eif[hi] - eif[lo]
        out[name] = float(np.dot(prob, diff * diff))
    return out


# --- Monte Carlo study --------------------------------------------------------


STUDY_COLUMNS = [
    "dgm",
    "n",
    "estimator",
    "effect",
    "reps",
    "abs_bias",
    "sqrt_n_abs_bias",
    "coverage95",
    "mean_se",
    "failures",
    "seed",
    "mean_est",
    "sd_est",
]


@dataclass(frozen=True)
class StudyRow:
    dgm: str
    n: int
    estimator: EstimatorName
    effect: str
    reps: int
    abs_bias: float
    sqrt_n_abs_bias: float
    coverage95: float
    mean_se: float
    failures: int
    seed: int
    mean_est: float
    sd_est: float


@dataclass
class StudyResult:
    rows: list[StudyRow] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows], columns=STUDY_COLUMNS)

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.10g", lineterminator="\n")


def study_options(dgm: str, estimator: EstimatorKind, seed: int, folds: int = 5) -> EstimationOptions:
    learners = BINARY_STACK if dgm.startswith("binary") else MULTI_STACK
    return EstimationOptions(estimator=estimator, folds=folds, learners=learners, randomized=True, seed=seed, workers=1)


Draw = dict[tuple[str, str], tuple[float, float, float, float]]


def _replicate(dgm: str, n: int, estimator: EstimatorKind, seed: int, folds: int) -> Draw | None:
    spec = get_dgm(dgm)
    try:
        d = generate(dgm, n, seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonConvergenceWarning)
            report = estimate(d, EffectSpec(family=spec.family), study_options(dgm, estimator, seed, folds))  # type: ignore[arg-type]
    except IntermedError as e:
        logger.warning("replicate %s n=%d seed=%d failed: %s: %s", dgm, n, seed, type(e).__name__, e)
        return None
    return {(r.estimator, r.contrast): (r.point, r.se, r.ci_lo, r.ci_hi) for r in report.rows if r.contrast in CONTRAST_COMPONENTS}


def _summarize(dgm: str, n: int, kind: str, effect: str, draws: list[tuple[float, float, float, float]], reps: int, seed: int) -> StudyRow:
    truth = true_values(dgm).effect(effect)
    if draws:
        est = np.array([x[0] for x in draws])
        se = np.array([x[1] for x in draws])
        covered = np.array([lo <= truth <= hi for _, _, lo, hi in draws])
        mean_est = float(est.mean())
        sd_est = float(est.std(ddof=1)) if len(est) > 1 else math.nan
        bias = abs(mean_est - truth)
        coverage, mean_se = float(covered.mean()), float(se.mean())
    else:
        mean_est = sd_est = bias = coverage = mean_se = math.nan
    return StudyRow(
        dgm=dgm,
        n=n,
        estimator=kind,  # type: ignore[arg-type]
        effect=effect,
        reps=reps,
        abs_bias=bias,
        sqrt_n_abs_bias=math.sqrt(n) * bias,
        coverage95=coverage,
        mean_se=mean_se,
        failures=reps - len(draws),
        seed=seed,
        mean_est=mean_est,
        sd_est=sd_est,
    )


def run_study(
    dgm: str,
    n_list: Sequence[int] = STUDY_SIZES,
    reps: int = 200,
    estimators: EstimatorKind = "both",
    seed: int = 1,
    *,
    folds: int = 5,
    workers: int = 1,
) -> StudyResult:
    """Replicate generate -> estimate and summarize bias and coverage against the published effects."""
    get_dgm(dgm)
    if reps < 1:
        raise InvalidConfig(f"reps must be at least 1, got {reps}")
    kinds: list[EstimatorName] = ["onestep", "tmle"] if estimators == "both" else [estimators]  # type: ignore[list-item]

    result = StudyResult()
    for n in n_list:
        seeds = [derive_seed(seed, dgm, n, r) for r in range(reps)]
        logger.info("%s n=%d: %d replicates", dgm, n, reps)
        draws = Parallel(n_jobs=workers)(delayed(_replicate)(dgm, n, estimators, s, folds) for s in seeds)
        ok = [x for x in draws if x is not None]
        if len(ok) < reps:
            logger.warning("%s n=%d: %d of %d replicates failed", dgm, n, reps - len(ok), reps)
        for kind in kinds:
            for effect in CONTRAST_COMPONENTS:
                result.rows.append(_summarize(dgm, n, kind, effect, [x[(kind, effect)] for x in ok], reps, seed))
    return result
