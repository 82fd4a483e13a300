import math

import numpy as np
import pandas as pd
import pytest
from scipy import integrate, stats

from refract.errors import DomainError
from refract.levy_model import ExponentialLaw, JumpSpec, LevyModel, PointMassLaw, RefractedModel
from refract.occupation import OccupationQuery, censor_level, laplace_transform
from refract.scale_functions import ScaleFunctionSet, overshoot_kernel
from refract.simulator import (
    EULER,
    EXACT,
    HIT_HI,
    HIT_LO,
    HORIZON,
    RETURN_LEVEL,
    block_rng,
    estimate_from_paths,
    mc_laplace,
    sample_first_passage_below,
    simulate_euler,
    simulate_exact_bv,
    simulate_paths,
)

CL1_GAMMA = 1.7357588823428847


def bm1(delta=0.0):
    return RefractedModel(x_model=LevyModel(gamma=1.0, sigma2=2.0), delta=delta)


def cl1(delta=0.5):
    jumps = JumpSpec(rate=1.0, magnitude=ExponentialLaw(mean=1.0))
    return RefractedModel(x_model=LevyModel(gamma=CL1_GAMMA, jumps=jumps), delta=delta)


def drift_only(delta=0.5):
    return RefractedModel(x_model=LevyModel(gamma=2.0), delta=delta)


def big_jumps(delta=0.5):
    jumps = JumpSpec(rate=1.0, magnitude=PointMassLaw(size=5.0))
    return RefractedModel(x_model=LevyModel(gamma=2.0, jumps=jumps), delta=delta)


# Single paths


def test_path_without_jumps_creeps_to_hi():
    path = simulate_exact_bv(drift_only(0.5), -1.0, 3.0, block_rng(0, 0))
    assert path.exit == HIT_HI
    assert path.occupation_below_b == 0.0
    assert path.exit_time == pytest.approx(2.0, rel=1e-12), "3 / (2 - 0.5)"
    assert path.final_value == pytest.approx(3.0, rel=1e-12)


def test_path_horizon():
    path = simulate_exact_bv(drift_only(0.5), -1.0, 3.0, block_rng(0, 0), t_max=1.0)
    assert path.exit == HORIZON
    assert path.exit_time == pytest.approx(1.0)
    assert path.final_value == pytest.approx(1.5)


def test_jump_past_lo_ends_path_without_occupation():
    paths, _ = simulate_paths(big_jumps(0.5), OccupationQuery(theta=1.0, lo=-1.0, hi=100.0), 2000, seed=3)
    # a jump of 5 from below 4 lands under lo = -1
    early = paths[(paths["exit"] == HIT_LO) & (paths["exit_time"] < 4.0 / 1.5 - 1e-9)]
    assert len(early) > 1000
    assert np.all(early["occupation"] == 0.0)
    assert np.all(early["final_value"] < -1.0)


def test_path_invariants():
    paths, bias = simulate_paths(cl1(0.5), OccupationQuery(theta=1.0, lo=-2.0, hi=2.0), 5000, seed=11)
    assert bias == 0.0
    assert set(paths["exit"]) <= {HIT_HI, HIT_LO}
    assert np.all(paths["occupation"] <= paths["exit_time"] + 1e-12)
    assert np.all(paths.loc[paths["exit"] == HIT_HI, "final_value"] == 2.0)
    assert np.all(paths.loc[paths["exit"] == HIT_LO, "final_value"] < -2.0)


def test_euler_single_path():
    path = simulate_euler(bm1(0.5), -1.0, 1.0, 1e-3, block_rng(5, 0))
    assert path.exit in (HIT_HI, HIT_LO)
    assert 0.0 <= path.occupation_below_b <= path.exit_time
    with pytest.raises(DomainError):
        simulate_euler(bm1(0.5), -1.0, 1.0, 0.0, block_rng(5, 0))


# Reproducibility


def test_same_seed_same_paths():
    query = OccupationQuery(theta=0.5, lo=-2.0, hi=2.0)
    first, _ = simulate_paths(cl1(0.5), query, 3000, seed=42)
    second, _ = simulate_paths(cl1(0.5), query, 3000, seed=42)
    pd.testing.assert_frame_equal(first, second)
    other, _ = simulate_paths(cl1(0.5), query, 3000, seed=43)
    assert not first["occupation"].equals(other["occupation"])


def test_thread_count_does_not_change_paths(monkeypatch):
    query = OccupationQuery(theta=0.5, lo=-2.0, hi=2.0)
    monkeypatch.setenv("REFRACT_MC_BLOCK", "1000")
    monkeypatch.setenv("REFRACT_THREADS", "1")
    single, _ = simulate_paths(cl1(0.5), query, 5000, seed=7)
    monkeypatch.setenv("REFRACT_THREADS", "4")
    pooled, _ = simulate_paths(cl1(0.5), query, 5000, seed=7)
    pd.testing.assert_frame_equal(single, pooled)


# Estimates


def test_theta_zero_is_exact():
    estimate = mc_laplace(cl1(0.5), OccupationQuery(theta=0.0, lo=-1.0, hi=1.0), 1000)
    assert estimate.mean == 1.0 and estimate.stderr == 0.0


def test_horizon_paths_are_counted():
    estimate = mc_laplace(drift_only(0.5), OccupationQuery(theta=1.0, hi=100.0), 500, t_max=0.5)
    assert estimate.n_horizon == 500
    assert estimate.mean == 1.0


def test_total_query_is_censored():
    paths, bias = simulate_paths(cl1(0.5), OccupationQuery(theta=1.0), 2000, seed=1)
    assert bias == pytest.approx(1e-4)
    level = censor_level(cl1(0.5), 1e-4)
    assert np.allclose(paths.loc[paths["exit"] == HIT_HI, "final_value"], level)


def test_euler_total_query_regenerates_at_b():
    rmodel = bm1(0.5)
    paths, bias = simulate_paths(rmodel, OccupationQuery(theta=2.0), 4000, EULER, seed=4, h=2e-3)
    assert bias == 0.0, "returns are sampled, not censored"
    assert set(paths["exit"]) == {HIT_HI}
    assert np.all(paths["final_value"] >= rmodel.b + RETURN_LEVEL)
    assert np.all(paths["occupation"] <= paths["exit_time"])
    estimate = estimate_from_paths(paths, 2.0, 4, EULER, 2e-3, bias)
    assert abs(estimate.mean - 1.0 / 3.0) <= max(3.0 * estimate.stderr, 5e-2)


def test_scheme_errors():
    query = OccupationQuery(theta=1.0, lo=-1.0, hi=1.0)
    with pytest.raises(DomainError):
        mc_laplace(bm1(0.5), query, 100, scheme=EXACT)
    with pytest.raises(DomainError):
        mc_laplace(cl1(0.5), query, 100, scheme="milstein")
    with pytest.raises(DomainError):
        mc_laplace(cl1(1.5), OccupationQuery(theta=1.0), 100)


def test_ruin_frequency():
    rmodel = cl1(0.5)
    cap = 4.0
    _, ruined = sample_first_passage_below(rmodel, cap, 50_000, seed=2)
    y_scale = ScaleFunctionSet(rmodel.y_model, 0.0)
    expected = 1.0 - y_scale.w0 / y_scale.w(cap)
    stderr = math.sqrt(expected * (1.0 - expected) / ruined.size)
    assert abs(ruined.mean() - expected) <= 3.0 * stderr


def test_undershoot_law():
    rmodel = cl1(0.5)
    cap = 2.0
    n = 50_000
    undershoot, ruined = sample_first_passage_below(rmodel, cap, n, seed=9)
    assert np.all(np.isnan(undershoot[~ruined]))
    assert np.all(undershoot[ruined] < 0.0)

    y_scale = ScaleFunctionSet(rmodel.y_model, 0.0)
    edges = [-np.inf, -3.0, -2.0, -1.5, -1.0, -0.75, -0.5, -0.3, -0.15, 0.0]
    probs = [
        integrate.quad(lambda z: overshoot_kernel(rmodel, z, cap, y_scale), a, b, epsabs=1e-10)[0]
        for a, b in zip(edges[:-1], edges[1:])
    ]
    counts, _ = np.histogram(undershoot[ruined], bins=edges)
    observed = np.append(counts, n - ruined.sum())
    expected = np.append(n * np.array(probs), n * (1.0 - sum(probs)))
    assert stats.chisquare(observed, expected).pvalue > 1e-3


@pytest.mark.slow
@pytest.mark.parametrize(
    "query",
    [
        OccupationQuery(theta=0.5, lo=-2.0, hi=2.0),
        OccupationQuery(theta=2.0, hi=2.0),
        OccupationQuery(theta=0.5, lo=-2.0),
        OccupationQuery(theta=2.0),
    ],
    ids=["both", "up", "down", "total"],
)
def test_exact_scheme_matches_analytic(query):
    rmodel = cl1(0.5)
    analytic = laplace_transform(rmodel, query).value
    estimate = mc_laplace(rmodel, query, 200_000, seed=2024)
    assert abs(analytic - estimate.mean) <= 3.0 * estimate.stderr + estimate.bias_bound, (analytic, estimate)


@pytest.mark.slow
def test_euler_exit_probability():
    rmodel = bm1(0.0)
    paths, _ = simulate_paths(rmodel, OccupationQuery(theta=1.0, lo=-1.0, hi=1.0), 10_000, EULER, seed=5, h=1e-3)
    # W(1) / W(2) with W(x) = 1 - e^{-x}
    expected = (1.0 - math.exp(-1.0)) / (1.0 - math.exp(-2.0))
    frequency = (paths["exit"] == HIT_HI).mean()
    stderr = math.sqrt(expected * (1.0 - expected) / len(paths))
    assert abs(frequency - expected) <= max(3.0 * stderr, 2e-2)


@pytest.mark.slow
def test_euler_agrees_with_exact_without_diffusion():
    query = OccupationQuery(theta=1.0, lo=-2.0, hi=2.0)
    exact, _ = simulate_paths(cl1(0.5), query, 10_000, EXACT, seed=6)
    euler, _ = simulate_paths(cl1(0.5), query, 10_000, EULER, seed=8, h=1e-3)
    assert stats.ks_2samp(exact["occupation"], euler["occupation"]).pvalue > 1e-3


@pytest.mark.slow
def test_euler_bias_shrinks_with_step():
    query = OccupationQuery(theta=1.0, lo=-1.0, hi=1.0)
    coarse = mc_laplace(bm1(0.5), query, 20_000, EULER, seed=12, h=2e-3)
    fine = mc_laplace(bm1(0.5), query, 20_000, EULER, seed=12, h=1e-3)
    assert abs(coarse.mean - fine.mean) < 2e-2


@pytest.mark.slow
@pytest.mark.parametrize(
    "query",
    [OccupationQuery(theta=1.0, lo=-1.0, hi=1.0), OccupationQuery(theta=1.0)],
    ids=["both", "total"],
)
def test_euler_matches_analytic_with_diffusion(query):
    rmodel = bm1(0.5)
    paths, bias = simulate_paths(rmodel, query, 100_000, EULER, seed=2024, h=1e-3)
    for theta in (1.0, 2.0):
        analytic = laplace_transform(rmodel, query.model_copy(update={"theta": theta})).value
        estimate = estimate_from_paths(paths, theta, 2024, EULER, 1e-3, bias)
        assert abs(analytic - estimate.mean) <= max(3.0 * estimate.stderr, 2e-2), (theta, analytic, estimate)


if __name__ == "__main__":
    test_path_without_jumps_creeps_to_hi()
    test_path_invariants()
    test_same_seed_same_paths()
    test_ruin_frequency()
    print("All simulator tests passed!")
