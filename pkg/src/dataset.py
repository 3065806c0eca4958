from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Mapping

import numpy as np
import pandas as pd

from src.errors import (
    DegenerateOutcome,
    EmptyMediatorSet,
    InvalidConfig,
    MalformedCsv,
    MissingColumn,
    MissingSiteRole,
    MissingValue,
    NonBinarySite,
    NonBinaryTreatment,
    NonNumericColumn,
    OverlappingRoles,
)


Family = Literal["nontransported", "transported"]
Contrast = Literal["IDE", "IIE"]
Component = tuple[int, int]

# (a', a*) pairs needed per contrast, in the order they are differenced
CONTRAST_COMPONENTS: dict[str, tuple[Component, Component]] = {
    "IDE": ((1, 0), (0, 0)),
    "IIE": ((1, 1), (1, 0)),
}


@dataclass(frozen=True)
class VariableRoles:
    a: str
    m: tuple[str, ...]
    y: str
    w: tuple[str, ...] = ()
    z: tuple[str, ...] = ()
    s: str | None = None

    def validate(self, family: Family) -> None:
        if not self.m:
            raise EmptyMediatorSet()
        if family == "transported" and not self.s:
            raise MissingSiteRole()
        seen: dict[str, str] = {}
        for role, cols in self._role_lists():
            for c in cols:
                if c in seen:
                    raise OverlappingRoles(f"column {c!r} assigned to both {seen[c]} and {role}")
                seen[c] = role

    def _role_lists(self) -> list[tuple[str, tuple[str, ...]]]:
        out = [("s", (self.s,) if self.s else ()), ("w", self.w), ("a", (self.a,)), ("z", self.z), ("m", self.m), ("y", (self.y,))]
        return out

    def columns(self) -> list[str]:
        return [c for _, cols in self._role_lists() for c in cols]


@dataclass(frozen=True)
class EffectSpec:
    family: Family = "nontransported"
    contrasts: tuple[Contrast, ...] = ("IDE", "IIE")
    a_prime: int = 1
    a_star: int = 0

    def __post_init__(self) -> None:
        if not self.contrasts:
            raise InvalidConfig("at least one contrast (IDE, IIE) is required")
        bad = [c for c in self.contrasts if c not in CONTRAST_COMPONENTS]
        if bad:
            raise InvalidConfig(f"unknown contrast(s): {', '.join(bad)}")
        if (self.a_prime, self.a_star) != (1, 0):
            raise InvalidConfig("treatment levels are fixed at a'=1, a*=0")

    def components(self) -> tuple[Component, ...]:
        """Union of the theta(a', a*) components the contrasts need, each listed once."""
        out: dict[Component, None] = {}
        for c in self.contrasts:
            for comp in CONTRAST_COMPONENTS[c]:
                out[comp] = None
        return tuple(out)


@dataclass(frozen=True)
class OutcomeScale:
    y_min: float
    y_max: float

    def __post_init__(self) -> None:
        if not self.y_max > self.y_min:
            raise DegenerateOutcome()

    @property
    def width(self) -> float:
        return self.y_max - self.y_min

    def scale(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_min) / self.width

    def unscale(self, y: np.ndarray | float) -> np.ndarray | float:
        return self.y_min + self.width * y


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated observation table. Arrays are read-only; build new datasets instead of mutating."""

    columns: Mapping[str, np.ndarray]
    roles: VariableRoles
    family: Family
    n: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "n", len(self.columns[self.roles.a]))

    @property
    def transported(self) -> bool:
        return self.family == "transported"

    def block(self, names: tuple[str, ...]) -> np.ndarray:
        if not names:
            return np.empty((self.n, 0))
        return np.column_stack([self.columns[c] for c in names])

    @property
    def w(self) -> np.ndarray:
        return self.block(self.roles.w)

    @property
    def z(self) -> np.ndarray:
        return self.block(self.roles.z)

    @property
    def m(self) -> np.ndarray:
        return self.block(self.roles.m)

    @property
    def a(self) -> np.ndarray:
        return self.columns[self.roles.a]

    @property
    def y(self) -> np.ndarray:
        return self.columns[self.roles.y]

    @property
    def s(self) -> np.ndarray | None:
        if not self.transported:
            return None
        return self.columns[self.roles.s]  # type: ignore[index]

    @property
    def y_observed(self) -> np.ndarray:
        return ~np.isnan(self.y)

    def with_outcome(self, y: np.ndarray) -> Dataset:
        cols = dict(self.columns)
        cols[self.roles.y] = _frozen(y)
        return Dataset(columns=cols, roles=self.roles, family=self.family)


def make_dataset(columns: Mapping[str, np.ndarray], roles: VariableRoles, family: Family) -> Dataset:
    roles.validate(family)
    needed = roles.columns() if family == "transported" else [c for c in roles.columns() if c != roles.s]

    for c in needed:
        if c not in columns:
            raise MissingColumn(c)
    n = len(columns[roles.a])
    cols: dict[str, np.ndarray] = {}
    for c in needed:
        arr = np.asarray(columns[c], dtype=float)
        if arr.ndim != 1 or len(arr) != n:
            raise MissingColumn(c)
        cols[c] = arr

    # missing values: everything except Y must be complete; report the first row
    for c in needed:
        if c == roles.y:
            continue
        miss = np.flatnonzero(np.isnan(cols[c]))
        if miss.size:
            raise MissingValue(c, int(miss[0]))

    a = cols[roles.a]
    bad = a[(a != 0) & (a != 1)]
    if bad.size:
        raise NonBinaryTreatment(roles.a, float(np.min(bad)))

    y_missing = np.isnan(cols[roles.y])
    if family == "transported":
        s = cols[roles.s]  # type: ignore[index]
        bad_s = s[(s != 0) & (s != 1)]
        if bad_s.size:
            raise NonBinarySite(roles.s, float(np.min(bad_s)))  # type: ignore[arg-type]
        # outcome is only required in the source population
        miss = np.flatnonzero(y_missing & (s == 1))
    else:
        miss = np.flatnonzero(y_missing)
    if miss.size:
        raise MissingValue(roles.y, int(miss[0]))

    return Dataset(columns={k: _frozen(v) for k, v in cols.items()}, roles=roles, family=family)


def load_dataset(path: str | Path, roles: VariableRoles, family: Family) -> Dataset:
    roles.validate(family)
    try:
        df = pd.read_csv(path, na_values=[""], keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise MalformedCsv(str(path), str(exc).strip()) from None
    df.columns = [str(c).strip() for c in df.columns]
    needed = roles.columns() if family == "transported" else [c for c in roles.columns() if c != roles.s]
    for c in needed:
        if c not in df.columns:
            raise MissingColumn(c)
        if not pd.api.types.is_numeric_dtype(df[c]):
            raise NonNumericColumn(c)
    return make_dataset({c: df[c].to_numpy(dtype=float) for c in needed}, roles, family)


def scale_outcome(d: Dataset) -> tuple[Dataset, OutcomeScale]:
    y_obs = d.y[d.y_observed]
    if np.unique(y_obs).size < 2:
        raise DegenerateOutcome()
    scale = OutcomeScale(y_min=float(y_obs.min()), y_max=float(y_obs.max()))
    return d.with_outcome(scale.scale(d.y)), scale
