"""Flat-array symbolic expressions with fitted constant slots.

An expression is a tuple of nodes in postfix order: every child index is
smaller than its parent's index and the root is the last node.  Nodes may be
shared by several parents, so the structure is an acyclic graph rather than
a strict tree.  Constant nodes (``op == "c"``) refer to a slot of the
parameter vector; literal nodes (``op == "lit"``) hold a fixed number that is
never optimized.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import NamedTuple, Sequence

import numpy as np

BINARY = ("add", "sub", "mul", "div")
UNARY = ("sin", "cos", "exp", "log", "sqrt", "pow")
TERMINALS = ("x", "c", "lit")

ARITY = {**{op: 2 for op in BINARY}, **{op: 1 for op in UNARY}, **{t: 0 for t in TERMINALS}}

# accepted spellings in operator_set configs
OPERATOR_ALIASES = {
    "+": "add", "add": "add",
    "-": "sub", "sub": "sub",
    "*": "mul", "\u00d7": "mul", "mul": "mul",
    "/": "div", "div": "div",
    "^": "pow", "pow": "pow", "pow-const": "pow",
    "sin": "sin", "cos": "cos", "exp": "exp", "log": "log", "sqrt": "sqrt",
}

DEFAULT_OPERATORS = ("add", "sub", "mul")


class ExpressionError(ValueError):
    """Raised for malformed expressions or inputs that do not fit them."""


class Node(NamedTuple):
    op: str
    children: tuple = ()
    # variable index for "x", slot for "c", number for "lit", exponent for "pow"
    value: float = 0


def normalize_operators(operators: Sequence[str]) -> tuple[str, ...]:
    out = []
    for tag in operators:
        try:
            name = OPERATOR_ALIASES[str(tag).strip().lower()]
        except KeyError:
            raise ExpressionError(f"unknown operator {tag!r}") from None
        if name not in out:
            out.append(name)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class Expression:
    nodes: tuple[Node, ...]
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.nodes:
            raise ExpressionError("expression has no nodes")
        if len(self.params) != self.n_params:
            object.__setattr__(self, "params", tuple(float(p) for p in self.params)
                               + (0.0,) * (self.n_params - len(self.params)))
            if len(self.params) != self.n_params:
                raise ExpressionError(
                    f"{len(self.params)} params for {self.n_params} constant slots")

    @property
    def root(self) -> int:
        return len(self.nodes) - 1

    @cached_property
    def n_params(self) -> int:
        return sum(1 for nd in self.nodes if nd.op == "c")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @cached_property
    def max_feature(self) -> int:
        """Largest variable index used, or -1 for variable-free expressions."""
        return max((int(nd.value) for nd in self.nodes if nd.op == "x"), default=-1)

    def with_params(self, params) -> "Expression":
        return Expression(self.nodes, tuple(float(p) for p in params))

    def __repr__(self):
        from .text import format_expression
        return f"Expression({format_expression(self)!r}, params={list(self.params)})"


def validate(expr: Expression, n_features: int | None = None) -> None:
    """Raise ExpressionError if any structural invariant is violated."""
    slots = []
    reachable = {expr.root}
    for i in range(expr.root, -1, -1):
        if i in reachable:
            reachable.update(expr.nodes[i].children)
    for i, nd in enumerate(expr.nodes):
        if nd.op not in ARITY:
            raise ExpressionError(f"node {i}: unknown op {nd.op!r}")
        if len(nd.children) != ARITY[nd.op]:
            raise ExpressionError(f"node {i}: {nd.op} expects {ARITY[nd.op]} children")
        for ch in nd.children:
            if not 0 <= ch < i:
                raise ExpressionError(f"node {i}: child {ch} breaks postfix order")
        if nd.op == "x":
            if int(nd.value) != nd.value or nd.value < 0:
                raise ExpressionError(f"node {i}: bad variable index {nd.value}")
            if n_features is not None and nd.value >= n_features:
                raise ExpressionError(f"node {i}: x{nd.value} out of range for {n_features} features")
        elif nd.op == "c":
            slots.append(nd.value)
        if i not in reachable:
            raise ExpressionError(f"node {i} is unreachable from the root")
    if sorted(slots) != list(range(len(slots))):
        raise ExpressionError(f"constant slots {slots} are not a permutation of 0..{len(slots) - 1}")
    if len(expr.params) != len(slots):
        raise ExpressionError("params length does not match constant count")


def is_valid(expr: Expression, n_features: int | None = None) -> bool:
    try:
        validate(expr, n_features)
    except ExpressionError:
        return False
    return True


def _check_inputs(expr: Expression, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ExpressionError(f"X must be 2-D, got shape {X.shape}")
    if expr.max_feature >= X.shape[1]:
        raise ExpressionError(
            f"expression uses x{expr.max_feature} but X has {X.shape[1]} columns")
    return X


def _unary(op, a, exponent):
    if op == "sin":
        return np.sin(a)
    if op == "cos":
        return np.cos(a)
    if op == "exp":
        return np.exp(a)
    if op == "log":
        return np.log(a)
    if op == "sqrt":
        return np.sqrt(a)
    return np.power(a, exponent)


def _unary_deriv(op, a, v, exponent):
    if op == "sin":
        return np.cos(a)
    if op == "cos":
        return -np.sin(a)
    if op == "exp":
        return v
    if op == "log":
        return 1.0 / a
    if op == "sqrt":
        return 0.5 / v
    return exponent * np.power(a, exponent - 1.0)


def _scale(g, s):
    # g: None, (k,) or (n, k); s: scalar or (n,)
    if g is None:
        return None
    if np.ndim(s) == 0:
        return g * s
    return g * s[:, None]


def _plus(ga, gb, sign=1.0):
    if gb is None:
        return ga
    if ga is None:
        return gb if sign > 0 else -gb
    return ga + gb if sign > 0 else ga - gb


def _forward(expr: Expression, X: np.ndarray, theta, with_grad: bool):
    k = expr.n_params
    theta = np.asarray(expr.params if theta is None else theta, dtype=float)
    if theta.shape != (k,):
        raise ExpressionError(f"theta has shape {theta.shape}, expected ({k},)")
    vals = [None] * len(expr.nodes)
    grads = [None] * len(expr.nodes)
    eye = np.eye(k) if with_grad else None
    for i, nd in enumerate(expr.nodes):
        op = nd.op
        g = None
        if op == "x":
            v = X[:, int(nd.value)]
        elif op == "c":
            v = float(theta[int(nd.value)])
            if with_grad:
                g = eye[int(nd.value)]
        elif op == "lit":
            v = float(nd.value)
        elif len(nd.children) == 2:
            a, b = vals[nd.children[0]], vals[nd.children[1]]
            ga, gb = grads[nd.children[0]], grads[nd.children[1]]
            if op == "add":
                v = a + b
                if with_grad:
                    g = _plus(ga, gb)
            elif op == "sub":
                v = a - b
                if with_grad:
                    g = _plus(ga, gb, -1.0)
            elif op == "mul":
                v = a * b
                if with_grad:
                    g = _plus(_scale(ga, b), _scale(gb, a))
            else:
                v = a / b
                if with_grad:
                    inv = 1.0 / b
                    g = _plus(_scale(ga, inv), _scale(gb, -v * inv))
        else:
            a = vals[nd.children[0]]
            v = _unary(op, a, nd.value)
            if with_grad:
                ga = grads[nd.children[0]]
                if ga is not None:
                    g = _scale(ga, _unary_deriv(op, a, v, nd.value))
        vals[i] = v
        grads[i] = g
    return vals[-1], grads[-1]


_ONE = "1.0"
_DERIV = {"sin": "np.cos({a})", "cos": "-np.sin({a})", "exp": "{v}", "log": "1.0 / {a}",
          "sqrt": "0.5 / {v}"}


@lru_cache(maxsize=100_000)
def compile_nodes(nodes: tuple[Node, ...], with_grad: bool):
    """Straight-line numpy code for one graph, built once per structure.

    The returned function maps ``(X, theta)`` to the root value, or to
    ``(value, jacobian)`` when ``with_grad``; gradient columns are tracked
    symbolically so constant-free branches cost nothing.
    """
    lines: list[str] = []
    counter = [0]

    def tmp(src):
        name = f"t{counter[0]}"
        counter[0] += 1
        lines.append(f"    {name} = {src}")
        return name

    def mul(p, q):
        if p == _ONE:
            return q
        if q == _ONE:
            return p
        return tmp(f"{p} * {q}")

    k = sum(1 for nd in nodes if nd.op == "c")
    vals: list[str] = []
    grads: list[dict] = []
    for nd in nodes:
        op = nd.op
        g: dict = {}
        if op == "x":
            v = tmp(f"X[:, {int(nd.value)}]")
        elif op == "c":
            v = tmp(f"theta[{int(nd.value)}]")
            g = {int(nd.value): _ONE}
        elif op == "lit":
            v = f"({float(nd.value)!r})"
        elif len(nd.children) == 2:
            a, b = (vals[c] for c in nd.children)
            ga, gb = (grads[c] for c in nd.children)
            if op in ("add", "sub"):
                sym = "+" if op == "add" else "-"
                v = tmp(f"{a} {sym} {b}")
                if with_grad:
                    for s in ga.keys() | gb.keys():
                        if s in ga and s in gb:
                            g[s] = tmp(f"{ga[s]} {sym} {gb[s]}")
                        elif s in ga:
                            g[s] = ga[s]
                        else:
                            g[s] = gb[s] if op == "add" else tmp(f"-{gb[s]}")
            elif op == "mul":
                v = tmp(f"{a} * {b}")
                if with_grad:
                    for s in ga.keys() | gb.keys():
                        if s in ga and s in gb:
                            g[s] = tmp(f"{mul(ga[s], b)} + {mul(gb[s], a)}")
                        else:
                            g[s] = mul(ga[s], b) if s in ga else mul(gb[s], a)
            else:
                v = tmp(f"{a} / {b}")
                if with_grad and (ga or gb):
                    inv = tmp(f"1.0 / {b}")
                    if gb:
                        dvb = tmp(f"-{v} * {inv}")
                    for s in ga.keys() | gb.keys():
                        terms = []
                        if s in ga:
                            terms.append(mul(ga[s], inv))
                        if s in gb:
                            terms.append(mul(gb[s], dvb))
                        g[s] = terms[0] if len(terms) == 1 else tmp(" + ".join(terms))
        else:
            a = vals[nd.children[0]]
            ga = grads[nd.children[0]]
            if op == "pow":
                e = float(nd.value)
                v = tmp(f"np.power({a}, {e!r})")
                d_src = f"{e!r} * np.power({a}, {e - 1.0!r})"
            else:
                v = tmp(f"np.{op}({a})")
                d_src = _DERIV[op].format(a=a, v=v)
            if with_grad and ga:
                d = tmp(d_src)
                g = {s: mul(col, d) for s, col in ga.items()}
        vals.append(v)
        grads.append(g)
    root, groot = vals[-1], grads[-1]
    if with_grad:
        lines.append(f"    J = np.zeros((X.shape[0], {k}))")
        lines.extend(f"    J[:, {s}] = {col}" for s, col in sorted(groot.items()))
        lines.append(f"    return {root}, J")
    else:
        lines.append(f"    return {root}")
    src = "def _f(X, theta):\n" + "\n".join(lines) + "\n"
    scope = {"np": np}
    exec(compile(src, "<expression>", "exec"), scope)
    return scope["_f"]


def evaluate(expr: Expression, X, theta=None) -> np.ndarray:
    """Evaluate at every row of X; non-finite results are returned, not raised."""
    X = _check_inputs(expr, X)
    with np.errstate(all="ignore"):
        v, _ = _forward(expr, X, theta, with_grad=False)
    return np.broadcast_to(np.asarray(v, dtype=float), (X.shape[0],)).copy()


def evaluate_with_gradient(expr: Expression, X, theta=None):
    """Values and the (n_rows, n_params) Jacobian with respect to the constants."""
    X = _check_inputs(expr, X)
    n, k = X.shape[0], expr.n_params
    with np.errstate(all="ignore"):
        v, g = _forward(expr, X, theta, with_grad=True)
    values = np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
    if g is None:
        jac = np.zeros((n, k))
    else:
        jac = np.broadcast_to(g, (n, k)).copy()
    return values, jac



class Builder:
    """Append-only node list that assigns constant slots in order of creation.

    With ``share=True`` identical non-constant nodes are emitted once, which
    turns repeated subtrees into shared graph nodes.
    """

    def __init__(self, share: bool = False):
        self.nodes: list[Node] = []
        self.params: list[float] = []
        self.share = share
        self._seen: dict[Node, int] = {}

    def add(self, op: str, children=(), value=0) -> int:
        node = Node(op, tuple(children), value)
        if self.share:
            idx = self._seen.get(node)
            if idx is not None:
                return idx
        self.nodes.append(node)
        idx = len(self.nodes) - 1
        if self.share:
            self._seen[node] = idx
        return idx

    def constant(self, value: float = 0.0) -> int:
        slot = len(self.params)
        self.params.append(float(value))
        self.nodes.append(Node("c", (), slot))
        return len(self.nodes) - 1

    def build(self, root: int | None = None) -> Expression:
        expr = Expression(tuple(self.nodes), tuple(self.params))
        root = expr.root if root is None else root
        if root == expr.root and is_compact(expr):
            return expr
        return compact(expr, root)


def copy_subgraph(builder: Builder, expr: Expression, index: int, memo: dict | None = None,
                  replace: dict | None = None) -> int:
    """Copy the subgraph of ``expr`` rooted at ``index`` into ``builder``.

    ``replace`` maps node indices of ``expr`` to callables ``f(builder) -> int``
    that emit a substitute for that node (its children are not visited).
    Constants receive fresh slots and keep their parameter values.
    """
    replace = replace or {}
    memo = {} if memo is None else memo
    needed = {index}
    for i in range(index, -1, -1):
        if i in needed and i not in replace:
            needed.update(expr.nodes[i].children)
    for i in sorted(needed):
        if i in memo:
            continue
        if i in replace:
            memo[i] = replace[i](builder)
            continue
        nd = expr.nodes[i]
        if nd.op == "c":
            memo[i] = builder.constant(expr.params[int(nd.value)])
        else:
            memo[i] = builder.add(nd.op, tuple(memo[c] for c in nd.children), nd.value)
    return memo[index]


def compact(expr: Expression, root: int | None = None) -> Expression:
    """Drop unreachable nodes and renumber slots in postfix order of appearance."""
    b = Builder()
    copy_subgraph(b, expr, expr.root if root is None else root)
    return Expression(tuple(b.nodes), tuple(b.params))


def is_compact(expr: Expression) -> bool:
    slots = [int(nd.value) for nd in expr.nodes if nd.op == "c"]
    if slots != list(range(len(slots))):
        return False
    reachable = {expr.root}
    for i in range(expr.root, -1, -1):
        if i in reachable:
            reachable.update(expr.nodes[i].children)
    return len(reachable) == len(expr.nodes)


def subtree_size(expr: Expression, index: int) -> int:
    """Number of distinct nodes reachable from ``index``."""
    needed = {index}
    for i in range(index, -1, -1):
        if i in needed:
            needed.update(expr.nodes[i].children)
    return len(needed)
