from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Any, Literal

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.dataset import EffectSpec, Family, VariableRoles
from src.errors import InvalidConfig, UnknownConfigKey


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", case_sensitive=False)

    # Default parallelism cap; CLI --workers and the run config override it
    workers: int = Field(default=1, validation_alias="INTERMED_WORKERS")
    log_level: str = Field(default="WARNING", validation_alias="INTERMED_LOG_LEVEL")

    # Predicted probabilities are kept in [prob_bound, 1 - prob_bound]
    prob_bound: float = Field(default=1e-3, validation_alias="INTERMED_PROB_BOUND")
    # Density ratios are kept in [1 / ratio_bound, ratio_bound]; unset means sqrt(n) log(n) / 5
    ratio_bound: float | None = Field(default=None, validation_alias="INTERMED_RATIO_BOUND")


settings = Settings()


EstimatorKind = Literal["onestep", "tmle", "both"]
Fluctuation = Literal["weighted", "covariate"]
OutputFormat = Literal["csv", "json", "both"]

DEFAULT_STACK: tuple[str, ...] = ("mean", "glm_main", "glm_twoway", "glm_saturated", "lasso_saturated")


@dataclass(frozen=True)
class EstimationOptions:
    estimator: EstimatorKind = "both"
    folds: int = 10
    learners: tuple[str, ...] = DEFAULT_STACK
    # g is fit with the mean model when treatment was randomized
    randomized: bool = False
    ensemble_folds: int = 5
    lasso_folds: int = 10
    prob_bound: float = field(default_factory=lambda: settings.prob_bound)
    ratio_bound: float | None = field(default_factory=lambda: settings.ratio_bound)
    fluctuation: Fluctuation = "weighted"
    max_tmle_iter: int = 50
    seed: int = 1
    workers: int = field(default_factory=lambda: settings.workers)

    @property
    def exposure_learners(self) -> tuple[str, ...]:
        return ("mean",) if self.randomized else self.learners


def _split_list(v: Any) -> list[str]:
    if v is None:
        return []
    if isinstance(v, (list, tuple)):
        return [str(x).strip() for x in v if str(x).strip()]
    return [p.strip() for p in str(v).split(",") if p.strip()]


class RunConfig(BaseModel):
    """Flat KEY=VALUE run configuration; list values are comma-separated."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    data: Path
    family: Family = "nontransported"

    s: str | None = None
    w: list[str] = Field(default_factory=list)
    a: str
    z: list[str] = Field(default_factory=list)
    m: list[str] = Field(default_factory=list)
    y: str

    contrasts: list[Literal["IDE", "IIE"]] = Field(default_factory=lambda: ["IDE", "IIE"])
    estimator: EstimatorKind = "both"
    folds: int = 10
    learners: list[str] = Field(default_factory=lambda: list(DEFAULT_STACK))
    randomized: bool = False
    ensemble_folds: int = 5
    lasso_folds: int = 10
    prob_bound: float = Field(default_factory=lambda: settings.prob_bound, gt=0.0, lt=0.5)
    ratio_bound: Annotated[float, Field(gt=1.0)] | None = Field(default_factory=lambda: settings.ratio_bound)
    fluctuation: Fluctuation = "weighted"
    max_tmle_iter: int = Field(default=50, ge=1)
    seed: int = 1

    output: Path = Path("intermed_report")
    format: OutputFormat = "both"
    workers: int = Field(default_factory=lambda: settings.workers, ge=1)

    @field_validator("w", "z", "m", "learners", "contrasts", mode="before")
    @classmethod
    def _lists(cls, v: Any) -> list[str]:
        return _split_list(v)

    @field_validator("s", mode="before")
    @classmethod
    def _blank_site(cls, v: Any) -> Any:
        if v is None or (isinstance(v, str) and not v.strip()):
            return None
        return v

    def roles(self) -> VariableRoles:
        return VariableRoles(s=self.s, w=tuple(self.w), a=self.a, z=tuple(self.z), m=tuple(self.m), y=self.y)

    def effect_spec(self) -> EffectSpec:
        return EffectSpec(family=self.family, contrasts=tuple(dict.fromkeys(self.contrasts)))

    def options(self) -> EstimationOptions:
        return EstimationOptions(
            estimator=self.estimator,
            folds=self.folds,
            learners=tuple(self.learners),
            randomized=self.randomized,
            ensemble_folds=self.ensemble_folds,
            lasso_folds=self.lasso_folds,
            prob_bound=self.prob_bound,
            ratio_bound=self.ratio_bound,
            fluctuation=self.fluctuation,
            max_tmle_iter=self.max_tmle_iter,
            seed=self.seed,
            workers=self.workers,
        )


def _config_error(e: ValidationError) -> Exception:
    for err in e.errors():
        if err.get("type") == "extra_forbidden":
            return UnknownConfigKey(str(err["loc"][0]))
    first = e.errors()[0]
    loc = ".".join(str(p) for p in first.get("loc", ()))
    return InvalidConfig(f"{loc}: {first.get('msg')}")


def parse_run_config(values: dict[str, Any], *, base_dir: Path | None = None) -> RunConfig:
    clean = {k.strip().lower(): v for k, v in values.items() if v is not None}
    try:
        cfg = RunConfig(**clean)
    except ValidationError as e:
        raise _config_error(e) from None
    if base_dir is not None and not cfg.data.is_absolute():
        cfg = cfg.model_copy(update={"data": base_dir / cfg.data})
    # role consistency is part of config validity
    cfg.roles().validate(cfg.family)
    cfg.effect_spec()
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise InvalidConfig(f"config file not found: {p}")
    values = dotenv_values(p, interpolate=False)
    return parse_run_config(dict(values), base_dir=p.resolve().parent)
