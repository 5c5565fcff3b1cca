"""Infix text form of expressions.

Grammar (whitespace-insensitive)::

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := unary ("^" exponent)?
    unary  := "-" unary | atom
    atom   := NUMBER | "x<i>" | "c<i>" | FUNC "(" expr ")" | "(" expr ")"

``exponent`` must be a (possibly signed, possibly parenthesized) number.
Fitted constants ``cK`` are renumbered in order of first appearance; repeated
names refer to the same constant node.
"""

from __future__ import annotations

import re

from .expression import Builder, Expression, ExpressionError

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


class ParseError(ExpressionError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownSymbolError(ParseError):
    pass


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0
        self.b = Builder()
        self.const_nodes: dict[str, int] = {}

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.take()
        if text != value or kind == "end":
            raise ParseError(f"expected {value!r}", pos)

    def parse(self) -> int:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {text!r}", pos)
        return node

    def expr(self) -> int:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = "add" if self.take()[1] == "+" else "sub"
            left = self.b.add(op, (left, self.term()))
        return left

    def term(self) -> int:
        left = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = "mul" if self.take()[1] == "*" else "div"
            left = self.b.add(op, (left, self.factor()))
        return left

    def factor(self) -> int:
        base = self.unary()
        if self.peek()[1] == "^":
            self.take()
            base = self.b.add("pow", (base,), self.exponent())
        return base

    def exponent(self) -> float:
        kind, text, pos = self.take()
        paren = text == "("
        if paren:
            kind, text, pos = self.take()
        sign = 1.0
        while text in ("-", "+") and kind == "op":
            sign = -sign if text == "-" else sign
            kind, text, pos = self.take()
        if kind != "num":
            raise ParseError("exponent must be a number", pos)
        if paren:
            self.expect(")")
        return sign * float(text)

    def unary(self) -> int:
        kind, text, pos = self.peek()
        if kind == "op" and text == "-":
            self.take()
            if self.peek()[0] == "num":
                return self.b.add("lit", (), -float(self.take()[1]))
            operand = self.unary()
            zero = self.b.add("lit", (), 0.0)
            return self.b.add("sub", (zero, operand))
        return self.atom()

    def atom(self) -> int:
        kind, text, pos = self.take()
        if kind == "num":
            return self.b.add("lit", (), float(text))
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return self.b.add(text, (arg,))
            m = re.fullmatch(r"([xc])(\d+)", text)
            if not m:
                raise UnknownSymbolError(f"unknown symbol {text!r}", pos)
            if m.group(1) == "x":
                return self.b.add("x", (), int(m.group(2)))
            if text not in self.const_nodes:
                self.const_nodes[text] = self.b.constant(0.0)
            return self.const_nodes[text]
        if kind == "end":
            raise ParseError("unexpected end of input", pos)
        raise ParseError(f"unexpected {text!r}", pos)


def parse(text: str, params=None) -> Expression:
    """Parse infix text.  ``params`` optionally gives values for c0, c1, ... ."""
    p = _Parser(text)
    root = p.parse()
    expr = p.b.build(root)
    if params is not None:
        # constants are renumbered by first appearance; map by original name
        names = sorted(p.const_nodes, key=lambda n: p.const_nodes[n])
        values = {f"c{k}": float(v) for k, v in enumerate(params)}
        raw = [values.get(n, 0.0) for n in names]
        # slot order after compaction follows node order, same as creation order
        expr = expr.with_params(raw)
    return expr


_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "pow": 3}
_SYMBOL = {"add": " + ", "sub": " - ", "mul": "*", "div": "/"}


def _number(value: float) -> str:
    s = repr(float(value))
    return f"({s})" if s.startswith("-") else s


def format_expression(expr: Expression, placeholder: bool = False) -> str:
    """Infix text.  With ``placeholder`` every fitted constant prints as ``c``."""
    out: list = [None] * len(expr.nodes)
    prec: list = [None] * len(expr.nodes)
    for i, nd in enumerate(expr.nodes):
        op = nd.op
        if op == "x":
            out[i], prec[i] = f"x{int(nd.value)}", 9
        elif op == "c":
            out[i], prec[i] = ("c" if placeholder else f"c{int(nd.value)}"), 9
        elif op == "lit":
            out[i], prec[i] = _number(nd.value), 9
        elif op == "pow":
            (a,) = nd.children
            base = out[a] if prec[a] > 3 else f"({out[a]})"
            out[i], prec[i] = f"{base}^{_number(nd.value)}", 3
        elif op in FUNCTIONS:
            out[i], prec[i] = f"{op}({out[nd.children[0]]})", 9
        else:
            a, b = nd.children
            p = _PREC[op]
            left = out[a] if prec[a] >= p else f"({out[a]})"
            # left-associative grammar: an equal-precedence right operand keeps its parentheses
            right = out[b] if prec[b] > p else f"({out[b]})"
            out[i], prec[i] = f"{left}{_SYMBOL[op]}{right}", p
    return out[-1]
