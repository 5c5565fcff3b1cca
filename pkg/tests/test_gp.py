import math

import numpy as np
import pytest

from smcsr.evidence import Dataset, EvidenceConfig
from smcsr.generate import GenerationConfig
from smcsr.gp import GpConfig, crowding, matched_generations, run_gp, tournament
from smcsr.smc import SmcConfig, run
from smcsr.variation import VariationConfig

GEN = GenerationConfig(operator_set=("+", "*"), max_nodes=9)
VAR = VariationConfig(max_nodes=9)
EVI = EvidenceConfig(restarts=1)


def linear_data():
    x = np.linspace(-2, 2, 15)
    return Dataset(x, 3.0 * x + 1.0)


def gp_config(variant, seed=0, **kw):
    base = dict(population_size=30, n_generations=6, generation=GEN, variation=VAR, evidence=EVI)
    base.update(kw)
    return GpConfig(variant=variant, seed=seed, **base)


def test_crowding_rejects_worse_offspring():
    parent = np.array([1.0, 2.0, 3.0])
    assert not crowding(parent, parent + 0.5).any()
    np.testing.assert_array_equal(crowding(parent, [1.0, 5.0, 0.1]), [True, False, True])


def test_min_mse_nonincreasing():
    res = run_gp(gp_config("gp-mse", seed=1, n_generations=10), linear_data())
    mins = [r["min_loss"] for r in res.trace]
    assert all(b <= a for a, b in zip(mins, mins[1:]))


def test_crowding_is_per_slot_elitist():
    losses = []
    run_gp(gp_config("gp-nml", seed=2, n_generations=5), linear_data(),
           on_generation=lambda rec, members, fits: losses.append([-f.log_nml for f in fits]))
    for a, b in zip(losses, losses[1:]):
        assert np.all(np.array(b) <= np.array(a))


def test_degenerate_tournament():
    rng = np.random.default_rng(0)
    pool = rng.normal(size=40)
    winners = tournament(pool, 20, 40, rng)
    assert np.all(winners == np.argmin(pool))


def test_tournament_size_two_keeps_best_often_enough():
    n = 20
    rng = np.random.default_rng(1)
    pool = rng.permutation(2 * n).astype(float)
    best = int(np.argmin(pool))
    trials = 4000
    kept = sum(best in tournament(pool, n, 2, rng) for _ in range(trials))
    bound = 1 - (1 - 2 / (2 * n)) ** n
    se = math.sqrt(bound * (1 - bound) / trials)
    assert kept / trials >= bound - 3 * se


def test_gp_agg_runs_tournament():
    res = run_gp(gp_config("gp-agg", seed=3, tournament_size=4), linear_data())
    assert len(res.trace) == 6
    assert all(r["phi"] is None for r in res.trace)


def test_matched_generations():
    assert matched_generations([{}] * 7, 10) == 70
    assert matched_generations([{}], 4) == 4


def test_matched_compute_and_shared_hash():
    data = linear_data()
    smc = run(SmcConfig(seed=4, population_size=30, n_mcmc=3, generation=GEN, variation=VAR,
                        evidence=EVI), data)
    n_gen = matched_generations(smc.trace, 3)
    gp = run_gp(gp_config("gp-mse", seed=4, n_generations=n_gen), data)
    assert gp.trace[-1]["evaluations"] == smc.trace[-1]["evaluations"]
    assert gp.trace[-1]["config_hash"] == smc.trace[-1]["config_hash"]


def test_determinism():
    a = run_gp(gp_config("gp-agg", seed=5), linear_data())
    b = run_gp(gp_config("gp-agg", seed=5), linear_data())
    assert a.trace == b.trace


def test_config_validation():
    with pytest.raises(ValueError):
        GpConfig(variant="gp-xyz", seed=0, n_generations=1)
    with pytest.raises(ValueError):
        GpConfig(variant="gp-agg", seed=0, n_generations=1, tournament_size=1)
    with pytest.raises(ValueError):
        GpConfig(variant="gp-mse", seed=0, n_generations=0)
    assert GpConfig(variant="gp-agg", seed=0, n_generations=1).selection == "tournament"
    assert GpConfig(variant="gp-nml", seed=0, n_generations=1).selection == "deterministic-crowding"
