import math

import numpy as np
import pytest

from smcsr import benchmark
from smcsr.benchmark import (CampaignConfig, ProblemSpec, SpecError, builtin_problem,
                             carve_validation, ground_truth_identified, population_nrmse,
                             posterior_predictive_histogram, read_results, run_campaign,
                             select_model, split_nrmse, synthesize, synthesize_with_truth)
from smcsr.config import ConfigError
from smcsr.evidence import Dataset, DatasetError
from smcsr.expression import evaluate
from smcsr.smc import Population
from smcsr.text import parse

LINE = {"name": "line", "expression": "2*x0 + 1", "ranges": [{"low": -1, "high": 1}],
        "n_total": 30, "n_train": 20, "noise_fraction": 0.1, "seed": 3}


def pop_of(texts, lq, params=None):
    members = [parse(t, p) for t, p in zip(texts, params or [None] * len(texts))]
    n = len(members)
    return Population(members, np.full(n, 1 / n), lq)


def tiny_campaign(**kw):
    base = dict(problems=[LINE], algorithms=["smc", "gp-agg"], repetitions=2, seed=11,
                population_size=16, n_mcmc=1, generation={"operator_set": ["+", "*"], "max_nodes": 7},
                evidence={"restarts": 1})
    base.update(kw)
    return CampaignConfig.from_dict(base)


class TestSynthesis:
    def test_zero_noise(self):
        spec = ProblemSpec.from_dict({**LINE, "noise_fraction": 0.0})
        data, clean = synthesize_with_truth(spec)
        np.testing.assert_array_equal(data.y, clean)
        np.testing.assert_allclose(data.y, 2 * data.X[:, 0] + 1)

    def test_noise_level(self):
        spec = ProblemSpec.from_dict({**LINE, "n_total": 1200, "n_train": 1000, "seed": 5})
        data, clean = synthesize_with_truth(spec)
        train = data.splits["train"]
        noise = data.y[train] - clean[train]
        assert abs(noise.std() / (0.1 * np.median(np.abs(clean))) - 1) < 0.1
        test = data.splits["test"]
        np.testing.assert_array_equal(data.y[test], clean[test])

    def test_deterministic_and_disjoint(self):
        spec = builtin_problem("coulomb")
        a, b = synthesize(spec), synthesize(spec)
        np.testing.assert_array_equal(a.y, b.y)
        assert not set(a.splits["train"]) & set(a.splits["test"])

    def test_demo_problem(self):
        data = synthesize(builtin_problem("demo"))
        assert data.n_rows == 25 and data.n_features == 1
        assert np.all(np.abs(data.X) <= 3)

    def test_builtin_truths_are_identified(self):
        for name in ("coulomb", "kinetic", "ratio", "torque"):
            spec = builtin_problem(name)
            assert ground_truth_identified(spec.truth, synthesize(spec))

    def test_bad_specs(self):
        with pytest.raises(SpecError):
            ProblemSpec.from_dict({**LINE, "ranges": [{"low": 2, "high": 1}]})
        with pytest.raises(SpecError):
            ProblemSpec.from_dict({**LINE, "expression": "c0*x0"})
        with pytest.raises(SpecError):
            ProblemSpec.from_dict({**LINE, "n_train": 40})
        with pytest.raises(SpecError):
            ProblemSpec.from_dict({**LINE, "colour": "red"})

    def test_non_finite_truth(self):
        spec = ProblemSpec.from_dict({**LINE, "expression": "log(x0 - 5)"})
        with pytest.raises(DatasetError):
            synthesize(spec)

    def test_carve_validation(self):
        data = synthesize(ProblemSpec.from_dict(LINE))
        carved = carve_validation(data, np.random.default_rng(0))
        assert carved.splits["validation"].size == 4
        assert carved.splits["train"].size == 16
        assert set(carved.splits["validation"]) | set(carved.splits["train"]) == set(data.splits["train"])


class TestSelection:
    def test_mode_plurality(self):
        pop = pop_of(["x0 + c0", "c0 + x0", "x0*x0"], [-5.0, -4.0, -1.0])
        assert select_model(pop, "mode").nodes == pop.members[1].nodes

    def test_all_distinct_mode_is_max_nml(self):
        pop = pop_of(["x0", "x0*x0", "x0 + c0", "c0"], [-3.0, -1.0, -2.0, -9.0])
        assert select_model(pop, "mode") is select_model(pop, "max-nml")

    def test_mode_is_permutation_invariant(self):
        texts = ["x0", "x0*x0", "x0 + c0", "c0 + x0", "x0*x0", "c0"]
        lq = [-3.0, -1.0, -2.0, -2.5, -1.0, -9.0]
        pick = select_model(pop_of(texts, lq), "mode")
        rng = np.random.default_rng(0)
        for _ in range(20):
            perm = rng.permutation(len(texts))
            other = select_model(pop_of([texts[i] for i in perm], [lq[i] for i in perm]), "mode")
            assert (other.nodes, other.params) == (pick.nodes, pick.params)

    def test_validation_matches_exhaustive_scoring(self):
        data = carve_validation(synthesize(ProblemSpec.from_dict(LINE)), np.random.default_rng(1))
        texts = ["c0*x0 + c1", "x0 + c0", "c0", "x0*x0 + c0"]
        params = [[2.0, 1.0], [1.0], [1.0], [1.0]]
        pop = pop_of(texts, [-1.0, 5.0, -3.0, 0.0], params)
        X, y = data.subset("validation")
        scores = [math.sqrt(np.mean((evaluate(m, X) - y) ** 2)) / data.magnitude for m in pop.members]
        assert select_model(pop, "validation", data) is pop.members[int(np.argmin(scores))]
        assert select_model(pop, "max-nml", data) is pop.members[1]

    def test_validation_needs_split(self):
        with pytest.raises(DatasetError):
            select_model(pop_of(["x0"], [0.0]), "validation", Dataset([[1.0]], [1.0]))

    def test_best_loss_depends_on_variant(self):
        data = synthesize(ProblemSpec.from_dict({**LINE, "noise_fraction": 0.0}))
        pop = pop_of(["c0*x0 + c1", "c0"], [-10.0, 3.0], [[2.0, 1.0], [1.0]])
        assert select_model(pop, "best-loss", data, "gp-mse") is pop.members[0]
        assert select_model(pop, "best-loss", data, "smc") is pop.members[1]


class TestGroundTruth:
    def setup_method(self):
        self.spec = builtin_problem("coulomb")
        self.data = synthesize(self.spec)

    def test_exact(self):
        assert ground_truth_identified(self.spec.truth, self.data)

    def test_perturbed_constants(self):
        assert ground_truth_identified(parse("c0*x0*x1/(x2*x2)", [1.7]), self.data)

    def test_rearranged(self):
        assert ground_truth_identified(parse("c0*(1 + c1)*x0*x1/(x2*x2)", [0.3, 4.0]), self.data)

    def test_constant_model(self):
        assert not ground_truth_identified(parse("c0", [1.0]), self.data)

    def test_noisy_split_is_not_a_hit(self):
        assert not ground_truth_identified(self.spec.truth, self.data, split="train")


class TestFigures:
    def test_point_mass_histogram(self):
        pop = pop_of(["x0*x0"] * 7, [0.0] * 7)
        counts = posterior_predictive_histogram(pop, np.linspace(-1, 1, 5), np.linspace(0, 1, 11))
        assert np.all(counts.sum(axis=0) == 7)
        assert np.all((counts > 0).sum(axis=0) == 1)

    def test_conservation_with_overflow(self):
        pop = pop_of(["log(x0)", "x0", "sqrt(x0)", "x0*x0*x0"], [0.0] * 4)
        grid = np.linspace(-2, 2, 9)
        counts = posterior_predictive_histogram(pop, grid, np.linspace(-1, 1, 5))
        assert np.all(counts.sum(axis=0) == 4)
        assert counts[-1, 0] == 2 and counts[-1, -1] == 0

    def test_population_nrmse_matches_split_nrmse(self):
        data = synthesize(ProblemSpec.from_dict(LINE))
        pop = pop_of(["c0*x0 + c1", "x0"], [0.0, 0.0], [[2.0, 1.0], None])
        np.testing.assert_allclose(population_nrmse(pop.members, data, "test"),
                                   [split_nrmse(m, data, "test") for m in pop.members])


class TestCampaign:
    def test_bookkeeping(self):
        rows = run_campaign(tiny_campaign(algorithms=["smc"], selections=["max-nml"]))
        assert len(rows) == 2
        assert rows[0]["seed"] != rows[1]["seed"]
        assert {r["repetition"] for r in rows} == {0, 1}

    def test_outputs_resume_and_worker_invariance(self, tmp_path, monkeypatch):
        cfg = tiny_campaign(selections=["max-nml", "mode", "best-loss", "validation"])
        rows = run_campaign(cfg, tmp_path / "a")
        table = read_results(tmp_path / "a" / "results.csv")
        assert len(table) == len(rows)
        assert all(r["status"] == "ok" for r in table)
        assert {r["selection"] for r in table if r["algorithm"] == "smc"} == {"max-nml", "mode", "best-loss",
                                                                               "validation"}
        gp_gens = {r["generations"] for r in table if r["algorithm"] == "gp-agg"}
        smc_gens = {r["generations"] for r in table if r["algorithm"] == "smc" and r["selection"] == "mode"}
        assert gp_gens == smc_gens
        before = (tmp_path / "a" / "results.csv").read_bytes()

        def boom(*a, **k):
            raise AssertionError("completed cells must not rerun")

        monkeypatch.setattr(benchmark, "run_cell", boom)
        run_campaign(cfg, tmp_path / "a")
        assert (tmp_path / "a" / "results.csv").read_bytes() == before
        monkeypatch.undo()

        run_campaign(tiny_campaign(selections=["max-nml", "mode", "best-loss", "validation"], workers=2),
                     tmp_path / "b")
        assert (tmp_path / "b" / "results.csv").read_bytes() == before
        assert (tmp_path / "b" / "figures.json").read_bytes() == (tmp_path / "a" / "figures.json").read_bytes()

    def test_order_independence(self):
        a = run_campaign(tiny_campaign(algorithms=["smc"], selections=["mode"], repetitions=2))
        spec2 = {**LINE, "name": "line2"}
        b = run_campaign(tiny_campaign(problems=[spec2, LINE], algorithms=["smc"], selections=["mode"],
                                       repetitions=2))
        assert [r for r in b if r["problem"] == "line"] == a

    def test_failures_are_recorded(self, monkeypatch):
        def fail(*a, **k):
            raise RuntimeError("kaput")

        monkeypatch.setattr(benchmark, "run_smc", fail)
        rows = run_campaign(tiny_campaign(algorithms=["smc"], repetitions=1))
        assert rows[0]["status"].startswith("error")

    def test_config_errors(self):
        with pytest.raises(ConfigError):
            tiny_campaign(algorithms=["smc", "gp-xyz"])
        with pytest.raises(ConfigError):
            tiny_campaign(bogus=1)
        with pytest.raises(ConfigError):
            tiny_campaign(algorithms=["gp-mse"])
