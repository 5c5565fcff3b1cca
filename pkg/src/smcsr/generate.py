from __future__ import annotations

from dataclasses import dataclass

from .expression import (ARITY, DEFAULT_OPERATORS, Builder, Expression, ExpressionError,
                         normalize_operators)

POW_EXPONENTS = (2.0, 3.0)


@dataclass
class GenerationConfig:
    operator_set: tuple = DEFAULT_OPERATORS
    max_nodes: int = 32
    max_depth: int = 8
    terminal_probability: float = 0.3
    constant_probability: float = 0.3

    def __post_init__(self):
        self.operator_set = normalize_operators(self.operator_set)
        if self.max_nodes < 1 or self.max_depth < 1:
            raise ExpressionError("max_nodes and max_depth must be positive")
        for name in ("terminal_probability", "constant_probability"):
            p = getattr(self, name)
            if not 0.0 < p < 1.0:
                raise ExpressionError(f"{name} must lie in (0, 1), got {p}")


def random_terminal(b: Builder, n_features: int, constant_probability: float, rng) -> int:
    if rng.random() < constant_probability:
        return b.constant(0.0)
    return b.add("x", (), int(rng.integers(n_features)))


def grow(b: Builder, config: GenerationConfig, n_features: int, rng,
         depth: int, budget: int, max_depth: int) -> int:
    """Grow a random subtree into ``b`` using at most ``budget`` nodes.

    The chance of stopping at a terminal rises linearly with depth from
    ``terminal_probability`` at the root to 1 at ``max_depth - 1``.
    """
    ops = [op for op in config.operator_set if ARITY[op] + 1 <= budget]
    p_term = config.terminal_probability + (1.0 - config.terminal_probability) * depth / max(max_depth - 1, 1)
    if not ops or depth >= max_depth - 1 or rng.random() < p_term:
        return random_terminal(b, n_features, config.constant_probability, rng)
    op = ops[int(rng.integers(len(ops)))]
    if ARITY[op] == 1:
        child = grow(b, config, n_features, rng, depth + 1, budget - 1, max_depth)
        value = POW_EXPONENTS[int(rng.integers(len(POW_EXPONENTS)))] if op == "pow" else 0
        return b.add(op, (child,), value)
    before = len(b.nodes)
    left = grow(b, config, n_features, rng, depth + 1, budget - 2, max_depth)
    used = len(b.nodes) - before
    right = grow(b, config, n_features, rng, depth + 1, budget - 1 - used, max_depth)
    return b.add(op, (left, right))


def generate_random(config: GenerationConfig, n_features: int, rng, max_depth: int | None = None,
                    max_nodes: int | None = None) -> Expression:
    if n_features < 1:
        raise ExpressionError("n_features must be at least 1")
    b = Builder()
    grow(b, config, n_features, rng, 0, max_nodes or config.max_nodes, max_depth or config.max_depth)
    return b.build()


def enumerate_expressions(operators, n_features: int, max_nodes: int) -> list[Expression]:
    """Every tree with at most ``max_nodes`` nodes over variables and fitted constants.

    Duplicates under the canonical form are kept only once (first occurrence).
    Literal nodes and ``pow`` are not enumerated.
    """
    from .canonical import structure_key

    ops = [op for op in normalize_operators(operators) if op != "pow"]
    # trees[n] = list of (op, value, children-trees) with exactly n nodes
    trees: dict[int, list] = {1: [("x", i, ()) for i in range(n_features)] + [("c", 0, ())]}
    for n in range(2, max_nodes + 1):
        out = []
        for op in ops:
            if ARITY[op] == 1:
                out.extend((op, 0, (t,)) for t in trees[n - 1])
            else:
                for left in range(1, n - 1):
                    for a in trees[left]:
                        out.extend((op, 0, (a, b)) for b in trees[n - 1 - left])
        trees[n] = out

    def emit(b: Builder, t) -> int:
        op, value, kids = t
        if op == "c":
            return b.constant(0.0)
        return b.add(op, tuple(emit(b, k) for k in kids), value)

    result, seen = [], set()
    for n in range(1, max_nodes + 1):
        for t in trees[n]:
            b = Builder()
            emit(b, t)
            e = b.build()
            key = structure_key(e)
            if key not in seen:
                seen.add(key)
                result.append(e)
    return result
