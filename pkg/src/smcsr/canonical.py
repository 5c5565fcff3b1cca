"""Canonical forms, structural equality and complexity.

The canonical form sorts the operands of commutative operators, flattens
nested ``+``/``*`` chains, folds literal-only subtrees and drops additive and
multiplicative identities.  Identical subtrees are merged into shared nodes,
so the node count of a canonical expression is the size of its graph.  This
is a cheap normal form, not a computer-algebra simplifier: equivalences such
as ``c0*(1 + c1)`` versus ``c0 + c1`` are not detected.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .expression import Builder, Expression, Node
from .text import format_expression

# sort rank: operators < variables < fitted constants < literals
_RANK_OP, _RANK_VAR, _RANK_CONST, _RANK_LIT = 0, 1, 2, 3


def _fold_unary(op, a, exponent):
    with np.errstate(all="ignore"):
        if op == "pow":
            v = float(np.power(a, exponent))
        else:
            v = float(getattr(np, op)(a))
    return v if math.isfinite(v) else None


def _fold_binary(op, a, b):
    with np.errstate(all="ignore"):
        if op == "sub":
            v = a - b
        elif op == "div":
            v = float(np.divide(a, b))
        elif op == "add":
            v = a + b
        else:
            v = a * b
    return v if math.isfinite(v) else None


def _terms(expr: Expression):
    """Bottom-up canonical terms as nested tuples.

    Terms: ("x", i) | ("c", slot) | ("lit", v) | (op, children, value) where
    ``add``/``mul`` carry a sorted tuple of any length >= 2.
    """
    terms: list = [None] * len(expr.nodes)
    keys: dict = {}

    def key(t):
        k = keys.get(t)
        if k is None:
            tag = t[0]
            if tag == "x":
                k = (_RANK_VAR, t[1])
            elif tag == "c":
                k = (_RANK_CONST,)
            elif tag == "lit":
                k = (_RANK_LIT, t[1])
            else:
                k = (_RANK_OP, tag, t[2], tuple(key(c) for c in t[1]))
            keys[t] = k
        return k

    for i, nd in enumerate(expr.nodes):
        op = nd.op
        if op == "x":
            t = ("x", int(nd.value))
        elif op == "c":
            t = ("c", int(nd.value))
        elif op == "lit":
            t = ("lit", float(nd.value))
        elif len(nd.children) == 1:
            a = terms[nd.children[0]]
            t = None
            if a[0] == "lit":
                v = _fold_unary(op, a[1], nd.value)
                if v is not None:
                    t = ("lit", v)
            if t is None:
                t = (op, (a,), float(nd.value) if op == "pow" else 0)
        else:
            a, b = terms[nd.children[0]], terms[nd.children[1]]
            t = _binary_term(op, a, b, key)
        terms[i] = t
    return terms, key


def _binary_term(op, a, b, key):
    if a[0] == "lit" and b[0] == "lit":
        v = _fold_binary(op, a[1], b[1])
        if v is not None:
            return ("lit", v)
    if op in ("add", "mul"):
        identity = 0.0 if op == "add" else 1.0
        operands = []
        for t in (a, b):
            operands.extend(t[1] if t[0] == op else (t,))
        lits = [t[1] for t in operands if t[0] == "lit"]
        rest = [t for t in operands if t[0] != "lit"]
        if len(lits) > 1:
            acc = identity
            for v in sorted(lits):
                acc = acc + v if op == "add" else acc * v
            if math.isfinite(acc):
                lits = [acc]
        rest.extend(("lit", v) for v in lits if v != identity)
        if not rest:
            return ("lit", identity)
        if len(rest) == 1:
            return rest[0]
        return (op, tuple(sorted(rest, key=key)), 0)
    if op == "sub" and b == ("lit", 0.0):
        return a
    if op == "div" and b == ("lit", 1.0):
        return a
    return (op, (a, b), 0)


def _emit(builder: Builder, t, params, slot_map) -> int:
    tag = t[0]
    if tag == "x":
        return builder.add("x", (), t[1])
    if tag == "lit":
        return builder.add("lit", (), t[1])
    if tag == "c":
        idx = slot_map.get(t[1])
        if idx is None:
            idx = builder.constant(params[t[1]])
            slot_map[t[1]] = idx
        return idx
    children = t[1]
    if tag in ("add", "mul"):
        # left-leaning binary chain
        acc = _emit(builder, children[0], params, slot_map)
        for c in children[1:]:
            acc = builder.add(tag, (acc, _emit(builder, c, params, slot_map)))
        return acc
    kids = tuple(_emit(builder, c, params, slot_map) for c in children)
    return builder.add(tag, kids, t[2])


def canonicalize(expr: Expression) -> Expression:
    """Semantically equivalent canonical form; idempotent."""
    terms, _ = _terms(expr)
    b = Builder(share=True)
    _emit(b, terms[-1], expr.params, {})
    return Expression(tuple(b.nodes), tuple(b.params))


@lru_cache(maxsize=200_000)
def _key_of_nodes(nodes: tuple[Node, ...]) -> str:
    canon = canonicalize(Expression(nodes))
    return format_expression(canon)


def structure_key(expr: Expression) -> str:
    """Hashable canonical text; constants are compared by position, not value."""
    return _key_of_nodes(expr.nodes)


def structural_equal(a: Expression, b: Expression) -> bool:
    return structure_key(a) == structure_key(b)


def complexity(expr: Expression) -> int:
    """Node count of the canonical graph."""
    return len(canonicalize(expr).nodes)
