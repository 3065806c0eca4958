from __future__ import annotations

import numpy as np
import pytest

from src.dataset import CONTRAST_COMPONENTS
from src.errors import InvalidConfig, UnknownDgm
from src.simulation import (
    DGMS,
    STUDY_COLUMNS,
    Oracle,
    _observed_cells,
    _oracle_eif,
    efficiency_bound,
    gcomp_oracle,
    generate,
    get_dgm,
    run_study,
    true_values,
)


# published effects carry four decimals
PUBLISHED_UNIT = 1e-4
# two published values sit one unit in the last place from the rounded enumeration;
# both still lie within one unit of the exact value
ROUNDED_ELSEWHERE = {("binary_t", "IIE"): 0.0521, ("multi_t", "IDE"): 0.0314}


@pytest.mark.parametrize("effect", ["IDE", "IIE"])
@pytest.mark.parametrize("dgm", sorted(DGMS))
def test_oracle_reproduces_published_effects(dgm: str, effect: str) -> None:
    hi, lo = CONTRAST_COMPONENTS[effect]
    exact = gcomp_oracle(dgm, *hi) - gcomp_oracle(dgm, *lo)
    published = true_values(dgm).effect(effect)
    assert exact == pytest.approx(published, abs=PUBLISHED_UNIT)
    assert round(exact, 4) == pytest.approx(ROUNDED_ELSEWHERE.get((dgm, effect), published))


def test_binary_efficiency_bound() -> None:
    bound = efficiency_bound("binary_nt")
    truth = true_values("binary_nt")
    assert bound["IIE"] == pytest.approx(truth.iie_bound, rel=0.005)
    assert bound["IDE"] == pytest.approx(truth.ide_bound, rel=0.005)


@pytest.mark.parametrize("dgm", ["binary_t", "multi_t"])
def test_transported_bound_matches_sampled_influence_function(dgm: str) -> None:
    # the enumerated variance must agree with the oracle EIF averaged over draws from the same law
    o = Oracle(dgm)
    d = generate(dgm, 40_000, seed=13)
    cells = {"s": d.s, "w": d.w[:, 0], "a": d.a, "z": d.z, "m": d.m, "y": np.nan_to_num(d.y)}
    bound = efficiency_bound(dgm)
    for effect, (hi, lo) in CONTRAST_COMPONENTS.items():
        eif = _oracle_eif(o, cells, *hi) - _oracle_eif(o, cells, *lo)
        assert bound[effect] > 0
        assert abs(eif.mean()) < 4.0 * np.sqrt(bound[effect] / d.n)
        assert float(np.mean(eif**2)) == pytest.approx(bound[effect], rel=0.05)


@pytest.mark.parametrize("dgm", sorted(DGMS))
def test_oracle_influence_function_is_centered(dgm: str) -> None:
    o = Oracle(dgm)
    cells, prob = _observed_cells(o)
    assert prob.sum() == pytest.approx(1.0)
    for comp in ((1, 0), (0, 0), (1, 1)):
        assert float(np.dot(prob, _oracle_eif(o, cells, *comp))) == pytest.approx(0.0, abs=1e-12)


def test_oracle_identities() -> None:
    o = Oracle("multi_nt")
    w = np.array([0.0, 1.0, 1.0])
    m = np.array([[0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(o.e(1, m, w) + o.e(0, m, w), 1.0)
    total = sum(o.p_m(np.tile(ml, (3, 1)), 1, w) for ml in o.m_levels)
    np.testing.assert_allclose(total, 1.0)
    # with a' = a*, h_M reduces to h_Z
    z = np.array([[1.0, 0.0]] * 3)
    np.testing.assert_allclose(o.h_m(1, 1, z, m, w), o.h_z(1, z, m, w))


def test_generate_is_deterministic() -> None:
    a = generate("multi_t", 200, seed=5)
    b = generate("multi_t", 200, seed=5)
    for name, col in a.columns.items():
        np.testing.assert_array_equal(col, b.columns[name])
    assert a.roles.m == ("m1", "m2")
    assert a.roles.z == ("z1", "z2")


def test_generate_frequencies() -> None:
    d = generate("binary_nt", 20_000, seed=6)
    assert abs(d.w.mean() - 0.4) < 0.02
    assert abs(d.a.mean() - 0.5) < 0.02


def test_transported_outcome_missing_in_target() -> None:
    d = generate("binary_t", 500, seed=7)
    assert d.transported
    assert np.all(np.isnan(d.y[d.s == 0]))
    assert not np.any(np.isnan(d.y[d.s == 1]))


def test_unknown_dgm() -> None:
    with pytest.raises(UnknownDgm):
        get_dgm("nope")
    with pytest.raises(UnknownDgm):
        run_study("nope", [100], reps=1)


def test_study_needs_a_replicate() -> None:
    with pytest.raises(InvalidConfig):
        run_study("binary_nt", [100], reps=0)


def test_single_replicate_study() -> None:
    result = run_study("binary_nt", [300], reps=1, seed=3, folds=3)
    frame = result.to_frame()
    assert list(frame.columns) == STUDY_COLUMNS
    assert len(frame) == 4
    assert set(frame["estimator"]) == {"onestep", "tmle"}
    assert set(frame["coverage95"]) <= {0.0, 1.0}
    assert (frame["failures"] == 0).all()


@pytest.mark.slow
@pytest.mark.parametrize("dgm", ["binary_nt", "binary_t"])
def test_monte_carlo_bias_and_coverage(dgm: str) -> None:
    n = 2000
    frame = run_study(dgm, [n], reps=40, seed=17).to_frame()
    assert (frame["failures"] == 0).all()
    for row in frame.itertuples():
        # 40 replicates: Monte Carlo SE of the mean is about sd_est / 6.3
        assert row.abs_bias <= max(0.02, 3.0 * row.sd_est / np.sqrt(row.reps))
        # transported coverage is known to run below nominal at moderate n
        assert row.coverage95 >= 0.75
