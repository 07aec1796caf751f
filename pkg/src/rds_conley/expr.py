"""Arithmetic expressions for user-defined vector fields.

Grammar (see docs/expressions.md)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = ("+" | "-") unary | power ;
    power   = primary [ "^" unary ] ;
    primary = number | name | func "(" expr ")" | "(" expr ")" ;
    func    = "sin" | "cos" | "tanh" | "exp" ;

``^`` is right associative and binds tighter than unary minus, so
``-x^2`` is ``-(x^2)``.
"""

from __future__ import annotations

import re

import numpy as np

FUNCS = {"sin": np.sin, "cos": np.cos, "tanh": np.tanh, "exp": np.exp}

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_][A-Za-z_0-9]*)|(\S))")


class ExprError(ValueError):
    pass


def tokenize(text):
    out = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ExprError(f"cannot tokenize {text[pos:]!r}")
        num, name, op = m.groups()
        if num is not None:
            out.append(("num", float(num)))
        elif name is not None:
            out.append(("name", name))
        else:
            if op not in "+-*/^()":
                raise ExprError(f"unexpected character {op!r} in {text!r}")
            out.append(("op", op))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, op=None):
        tok = self.peek()
        if op is not None and tok != ("op", op):
            raise ExprError(f"expected {op!r} in {self.text!r}")
        self.i += 1
        return tok

    def parse(self):
        if not self.toks:
            raise ExprError("empty expression")
        node = self.expr()
        if self.i != len(self.toks):
            raise ExprError(f"trailing input in {self.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            node = (op, node, self.unary())
        return node

    def unary(self):
        if self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            operand = self.unary()
            return ("neg", operand) if op == "-" else operand
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek() == ("op", "^"):
            self.take()
            return ("^", base, self.unary())
        return base

    def primary(self):
        kind, val = self.peek()
        if kind == "num":
            self.take()
            return ("num", val)
        if kind == "name":
            self.take()
            if val in FUNCS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return ("call", val, arg)
            return ("var", val)
        if (kind, val) == ("op", "("):
            self.take()
            node = self.expr()
            self.take(")")
            return node
        raise ExprError(f"unexpected token {val!r} in {self.text!r}")


def parse(text):
    return _Parser(text).parse()


def names(node):
    """Variable names referenced by a parsed expression."""
    tag = node[0]
    if tag == "var":
        return {node[1]}
    if tag == "num":
        return set()
    if tag == "call":
        return names(node[2])
    if tag == "neg":
        return names(node[1])
    return names(node[1]) | names(node[2])


def evaluate(node, env):
    tag = node[0]
    if tag == "num":
        return node[1]
    if tag == "var":
        try:
            return env[node[1]]
        except KeyError:
            raise ExprError(f"unknown variable {node[1]!r}") from None
    if tag == "neg":
        return -evaluate(node[1], env)
    if tag == "call":
        return FUNCS[node[1]](evaluate(node[2], env))
    a = evaluate(node[1], env)
    b = evaluate(node[2], env)
    if tag == "+":
        return a + b
    if tag == "-":
        return a - b
    if tag == "*":
        return a * b
    if tag == "/":
        return a / b
    return a ** b


class Expression:
    """A parsed expression bound to a fixed set of allowed names."""

    def __init__(self, text, allowed=None):
        self.text = text
        self.tree = parse(text)
        if allowed is not None:
            unknown = names(self.tree) - set(allowed)
            if unknown:
                raise ExprError(f"unknown name(s) {sorted(unknown)} in {text!r}")

    def __call__(self, env):
        return evaluate(self.tree, env)

    def __repr__(self):
        return f"Expression({self.text!r})"
