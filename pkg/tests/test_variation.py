import numpy as np
import pytest
from scipy import stats

from smcsr.canonical import structure_key
from smcsr.expression import Builder, copy_subgraph, is_valid
from smcsr.generate import GenerationConfig, enumerate_expressions, generate_random
from smcsr.text import format_expression, parse
from smcsr.variation import VariationConfig, crossover, mutate, propose, propose_one

GEN = GenerationConfig(operator_set=("+", "-", "*"), max_nodes=15)


def differs(a, b):
    return a.nodes != b.nodes or a.params != b.params


def test_single_node_crossover():
    rng = np.random.default_rng(0)
    outs = {format_expression(crossover(parse("x0"), parse("x1"), rng)) for _ in range(50)}
    assert outs == {"x1"}


def test_crossover_closure():
    rng = np.random.default_rng(1)
    a, b = parse("(x0 + c0)*x1"), parse("x2 - sin(x0)")
    allowed = {(nd.op, nd.value) for nd in a.nodes + b.nodes if nd.op != "c"}
    for _ in range(200):
        child = crossover(a, b, rng)
        assert is_valid(child)
        assert {(nd.op, nd.value) for nd in child.nodes if nd.op != "c"} <= allowed


def test_cut_points_are_uniform():
    parent = parse("(x0 + x1)*(x0 - c0)")
    assert parent.n_nodes == 7
    donor = parse("x2")
    outcome = {}
    for cut in range(7):
        b = Builder()
        copy_subgraph(b, parent, parent.root, replace={cut: lambda bld: bld.add("x", (), 2)})
        outcome[format_expression(b.build())] = cut
    assert len(outcome) == 7
    rng = np.random.default_rng(2)
    counts = np.zeros(7)
    for _ in range(10_000):
        counts[outcome[format_expression(crossover(parent, donor, rng))]] += 1
    assert stats.chisquare(counts).pvalue > 0.01


def test_point_mutation_on_a_variable():
    rng = np.random.default_rng(3)
    outs = {format_expression(mutate(parse("x0"), "point", rng, GEN, 2)) for _ in range(200)}
    assert outs == {"x1", "c0"}


def test_prune_falls_back_to_point():
    rng = np.random.default_rng(4)
    outs = {format_expression(mutate(parse("x0"), "prune", rng, GEN, 2)) for _ in range(200)}
    assert outs == {"x1", "c0"}


def test_prune_keeps_a_child():
    rng = np.random.default_rng(5)
    e = parse("x0*x1")
    outs = {format_expression(mutate(e, "prune", rng, GEN, 2)) for _ in range(100)}
    assert outs == {"x0", "x1"}


def test_parameter_mutation_only_moves_a_constant():
    rng = np.random.default_rng(6)
    e = parse("c0*x0 + c1", [1.0, 2.0])
    child = mutate(e, "parameter", rng, GEN, 1)
    assert child.nodes == e.nodes and child.params != e.params


@pytest.mark.parametrize("kind", ["point", "subtree", "prune", "parameter"])
def test_mutation_always_changes_something(kind):
    rng = np.random.default_rng(7)
    for _ in range(500):
        e = generate_random(GEN, 2, rng)
        e = e.with_params(rng.normal(size=e.n_params))
        assert differs(mutate(e, kind, rng, GEN, 2), e)


def test_forced_mutation_when_nothing_fires():
    cfg = VariationConfig(crossover_probability=0.0, mutation_probability=0.0, max_nodes=15)
    rng = np.random.default_rng(8)
    pop = [generate_random(GEN, 2, rng) for _ in range(300)]
    kids = propose(pop, cfg, rng, GEN, 2)
    assert all(differs(k, p) for k, p in zip(kids, pop))


def test_self_crossover():
    cfg = VariationConfig(crossover_probability=1.0, mutation_probability=0.0, max_nodes=15)
    rng = np.random.default_rng(9)
    pop = [parse("x0*(x1 + c0)")]
    for _ in range(200):
        (child,) = propose(pop, cfg, rng, GEN, 2)
        assert is_valid(child, 2) and child.n_nodes <= 15


def test_offspring_are_valid_and_bounded():
    cfg = VariationConfig(max_nodes=12)
    gen = GenerationConfig(operator_set=("+", "-", "*", "sin", "exp", "pow"), max_nodes=12)
    rng = np.random.default_rng(10)
    pop = [generate_random(gen, 3, rng) for _ in range(100)]
    for _ in range(100):
        kids = propose(pop, cfg, rng, gen, 3)
        assert len(kids) == len(pop)
        for k in kids:
            assert is_valid(k, 3) and k.n_nodes <= 12
        pop = kids if rng.random() < 0.5 else pop


def test_parents_are_not_modified():
    rng = np.random.default_rng(11)
    pop = [generate_random(GEN, 2, rng) for _ in range(50)]
    snapshot = [(p.nodes, p.params) for p in pop]
    propose(pop, VariationConfig(), rng, GEN, 2)
    assert snapshot == [(p.nodes, p.params) for p in pop]


def test_subtree_mutation_respects_bound():
    rng = np.random.default_rng(12)
    for _ in range(10_000):
        e = generate_random(GenerationConfig(max_nodes=9), 2, rng)
        assert mutate(e, "subtree", rng, GEN, 2, max_nodes=9).n_nodes <= 9


def test_every_small_expression_is_reachable():
    gen = GenerationConfig(operator_set=("+", "-", "*"), max_nodes=3)
    cfg = VariationConfig(max_nodes=3)
    targets = {structure_key(e) for e in enumerate_expressions(gen.operator_set, 1, 3)}
    rng = np.random.default_rng(13)
    current, seen = parse("x0"), set()
    for _ in range(100_000):
        current = propose_one([current], 0, cfg, rng, gen, 1)
        seen.add(structure_key(current))
        if targets <= seen:
            break
    assert targets <= seen


def test_deterministic_under_seed():
    pop = [generate_random(GEN, 2, np.random.default_rng(i)) for i in range(20)]
    a = propose(pop, VariationConfig(), np.random.default_rng(5), GEN, 2)
    b = propose(pop, VariationConfig(), np.random.default_rng(5), GEN, 2)
    assert [(x.nodes, x.params) for x in a] == [(x.nodes, x.params) for x in b]


def test_config_validation():
    with pytest.raises(ValueError):
        VariationConfig(crossover_probability=1.5)
    with pytest.raises(ValueError):
        VariationConfig(mutation_kind_weights={"point": 0.0})
    with pytest.raises(ValueError):
        VariationConfig(mutation_kind_weights={"swap": 1.0})
