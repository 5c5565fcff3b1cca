"""Proposal operators: subtree crossover and four kinds of mutation.

Every offspring is built fresh; parents are never modified.  Nodes are
addressed by index in the flat graph, so "replacing a subtree" swaps one node
(and everything only it referenced) for a new subgraph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expression import ARITY, Builder, Expression, copy_subgraph
from .generate import POW_EXPONENTS, GenerationConfig, grow

MUTATION_KINDS = ("point", "subtree", "prune", "parameter")
MAX_RETRIES = 5
SUBTREE_DEPTH = 2


@dataclass
class VariationConfig:
    crossover_probability: float = 0.4
    mutation_probability: float = 0.4
    mutation_kind_weights: dict = field(
        default_factory=lambda: {k: 1.0 for k in MUTATION_KINDS})
    max_nodes: int = 32

    def __post_init__(self):
        for name in ("crossover_probability", "mutation_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        unknown = set(self.mutation_kind_weights) - set(MUTATION_KINDS)
        if unknown:
            raise ValueError(f"unknown mutation kinds {sorted(unknown)}")
        w = [float(self.mutation_kind_weights.get(k, 0.0)) for k in MUTATION_KINDS]
        if min(w) < 0 or sum(w) <= 0:
            raise ValueError("mutation weights must be nonnegative and not all zero")
        if self.max_nodes < 1:
            raise ValueError("max_nodes must be positive")

    def kind_probabilities(self) -> np.ndarray:
        w = np.array([float(self.mutation_kind_weights.get(k, 0.0)) for k in MUTATION_KINDS])
        return w / w.sum()


def _replace(expr: Expression, index: int, emit) -> Expression:
    """Copy ``expr`` with node ``index`` replaced by whatever ``emit(builder)`` adds."""
    b = Builder()
    copy_subgraph(b, expr, expr.root, replace={index: emit})
    return b.build()


def crossover(a: Expression, b: Expression, rng, max_nodes: int | None = None) -> Expression:
    """Replace a uniformly chosen node of ``a`` by a uniformly chosen subgraph of ``b``.

    Retries up to MAX_RETRIES times when the child exceeds ``max_nodes``, then
    returns ``a`` unchanged.
    """
    for _ in range(MAX_RETRIES):
        cut = int(rng.integers(a.n_nodes))
        donor = int(rng.integers(b.n_nodes))
        child = _replace(a, cut, lambda bld: copy_subgraph(bld, b, donor))
        if max_nodes is None or child.n_nodes <= max_nodes:
            return child
    return a


def _point_alternatives(nd, operators, n_features):
    op = nd.op
    if op in ("x", "c", "lit"):
        alts = [("x", i) for i in range(n_features) if not (op == "x" and nd.value == i)]
        if op != "c":
            alts.append(("c", None))
        return alts
    same_arity = [o for o in operators if ARITY[o] == ARITY[op] and o != op]
    alts = [(o, None) for o in same_arity]
    if op == "pow":
        alts.extend(("pow", e) for e in POW_EXPONENTS if e != nd.value)
    return alts


def _point(e: Expression, gen: GenerationConfig, n_features: int, rng):
    order = rng.permutation(e.n_nodes)
    for i in order:
        nd = e.nodes[int(i)]
        alts = _point_alternatives(nd, gen.operator_set, n_features)
        if not alts:
            continue
        op, value = alts[int(rng.integers(len(alts)))]
        if op == "x":
            return _replace(e, int(i), lambda bld: bld.add("x", (), value))
        if op == "c":
            return _replace(e, int(i), lambda bld: bld.constant(0.0))
        if op == "pow" and value is None:
            value = POW_EXPONENTS[int(rng.integers(len(POW_EXPONENTS)))]

        def emit(bld, nd=nd, op=op, value=value):
            kids = tuple(copy_subgraph(bld, e, c, memo) for c in nd.children)
            return bld.add(op, kids, value if op == "pow" else 0)

        memo: dict = {}
        return _replace_with_memo(e, int(i), emit, memo)
    return None


def _replace_with_memo(expr, index, emit, memo):
    # shared memo keeps subgraphs referenced both inside and outside the node single
    b = Builder()
    copy_subgraph(b, expr, expr.root, memo=memo, replace={index: emit})
    return b.build()


def _subtree(e: Expression, gen: GenerationConfig, n_features: int, rng, max_nodes):
    for _ in range(MAX_RETRIES):
        i = int(rng.integers(e.n_nodes))
        child = _replace(e, i, lambda bld: grow(bld, gen, n_features, rng, 0,
                                                max_nodes, SUBTREE_DEPTH + 1))
        if child.n_nodes <= max_nodes:
            return child
    return e


def _prune(e: Expression, rng):
    internal = [i for i, nd in enumerate(e.nodes) if nd.children]
    if not internal:
        return None
    i = internal[int(rng.integers(len(internal)))]
    kids = e.nodes[i].children
    keep = kids[int(rng.integers(len(kids)))]
    memo: dict = {}
    return _replace_with_memo(e, i, lambda bld: copy_subgraph(bld, e, keep, memo), memo)


def _parameter(e: Expression, rng):
    if e.n_params == 0:
        return None
    slot = int(rng.integers(e.n_params))
    params = list(e.params)
    base = params[slot] if params[slot] != 0.0 else 1.0
    params[slot] = base * float(rng.lognormal(0.0, 1.0))
    return e.with_params(params)


def mutate(e: Expression, kind: str, rng, gen: GenerationConfig, n_features: int,
           max_nodes: int | None = None) -> Expression:
    """Apply one mutation; inapplicable kinds fall back to a point mutation.

    ``parameter`` rescales one stored constant by a lognormal factor.  Stored
    constants only seed the optimizer when the evidence config asks for warm
    starts, so by default this move amounts to a fresh refit of the parent.
    """
    max_nodes = max_nodes or gen.max_nodes
    if kind not in MUTATION_KINDS:
        raise ValueError(f"unknown mutation kind {kind!r}")
    child = None
    if kind == "subtree":
        child = _subtree(e, gen, n_features, rng, max_nodes)
        if child.nodes != e.nodes:
            return child
        # regenerated the same subtree; a point change always alters something
        child = None
    elif kind == "prune":
        child = _prune(e, rng)
    elif kind == "parameter":
        child = _parameter(e, rng)
    if child is None:
        child = _point(e, gen, n_features, rng)
        if child is not None and child.n_nodes > max_nodes:
            child = None
    if child is None:
        child = _subtree(e, gen, n_features, rng, max_nodes)
    return child


def propose_one(population, i: int, config: VariationConfig, rng, gen: GenerationConfig,
                n_features: int) -> Expression:
    """Offspring of parent ``i``; the crossover mate is drawn uniformly from the population."""
    child = population[i]
    do_crossover = rng.random() < config.crossover_probability
    do_mutation = rng.random() < config.mutation_probability
    if do_crossover:
        mate = population[int(rng.integers(len(population)))]
        child = crossover(child, mate, rng, config.max_nodes)
    if do_mutation or not do_crossover:
        kind = MUTATION_KINDS[int(rng.choice(len(MUTATION_KINDS), p=config.kind_probabilities()))]
        child = mutate(child, kind, rng, gen, n_features, config.max_nodes)
    return child


def propose(population, config: VariationConfig, rng, gen: GenerationConfig,
            n_features: int) -> list[Expression]:
    if not population:
        raise ValueError("population is empty")
    return [propose_one(population, i, config, rng, gen, n_features) for i in range(len(population))]
