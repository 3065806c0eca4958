from __future__ import annotations

import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd
import pytest

# Ensure repo root is importable so `import src...` works when running pytest from anywhere
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.dataset import Dataset, VariableRoles, make_dataset  # noqa: E402
from src.nuisance import NuisanceFits  # noqa: E402
from src.simulation import generate  # noqa: E402


@pytest.fixture
def write_csv(tmp_path: Path) -> Callable[[Dataset, str], Path]:
    def writer(d: Dataset, name: str = "data.csv") -> Path:
        path = tmp_path / name
        pd.DataFrame({c: np.asarray(v) for c, v in d.columns.items()}).to_csv(path, index=False)
        return path

    return writer


@pytest.fixture
def binary_nt() -> Dataset:
    return generate("binary_nt", 600, seed=11)


@pytest.fixture
def binary_t() -> Dataset:
    return generate("binary_t", 800, seed=12)


@pytest.fixture
def toy() -> Dataset:
    """Small hand-made nontransported table: two W, one Z, two M."""
    rng = np.random.default_rng(0)
    n = 40
    cols = {
        "w1": rng.integers(0, 2, n).astype(float),
        "w2": rng.normal(size=n),
        "a": np.tile([0.0, 1.0], n // 2),
        "z": rng.integers(0, 2, n).astype(float),
        "m1": rng.integers(0, 2, n).astype(float),
        "m2": rng.integers(0, 2, n).astype(float),
        "y": rng.random(n),
    }
    roles = VariableRoles(a="a", m=("m1", "m2"), y="y", w=("w1", "w2"), z=("z",))
    return make_dataset(cols, roles, "nontransported")


@pytest.fixture
def make_fits() -> Callable[..., NuisanceFits]:
    """Builds NuisanceFits with constant defaults for every array; keyword overrides replace them."""

    def factory(n: int, a_prime: int = 1, a_star: int = 0, **overrides: Any) -> NuisanceFits:
        base: dict[str, Any] = {
            "g1": np.full(n, 0.5),
            "e1": np.full(n, 0.5),
            "b": np.full(n, 0.5),
            "h_z": np.ones(n),
            "h_m": np.ones(n),
            "u": np.zeros(n),
            "ubar": np.zeros(n),
            "v": np.zeros(n),
            "vbar": np.zeros(n),
        }
        base.update(overrides)
        return NuisanceFits(a_prime=a_prime, a_star=a_star, **base)

    return factory


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[..., Path]:
    def writer(name: str = "run.env", **values: Any) -> Path:
        path = tmp_path / name
        lines = [f"{k}={','.join(map(str, v)) if isinstance(v, (list, tuple)) else v}" for k, v in values.items()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return writer
