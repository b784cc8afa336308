"""Small arithmetic-expression language for initial data and forcing terms.

Grammar (``^`` and ``**`` both mean power, right associative)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("-" | "+") unary | power
    power  := atom (("^" | "**") unary)?
    atom   := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

Expressions are parsed once into a tree and evaluated with numpy over
arrays of coordinates, so a whole grid is evaluated in one pass.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np


class ExpressionError(ValueError):
    """Parse or evaluation failure; carries a character position or cell index."""

    def __init__(self, message: str, position: int | None = None, index: int | None = None):
        super().__init__(message)
        self.position = position
        self.index = index


CONSTANTS = {"pi": np.pi, "e": np.e}

# name -> (arity, implementation); arity None means two or more
FUNCTIONS = {
    "exp": (1, np.exp),
    "log": (1, np.log),
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "tan": (1, np.tan),
    "tanh": (1, np.tanh),
    "sqrt": (1, np.sqrt),
    "abs": (1, np.abs),
    "min": (None, np.minimum),
    "max": (None, np.maximum),
}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Node", ...]


Node = Union[Num, Var, Neg, BinOp, Call]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        match = _TOKEN.match(text, pos)
        if match is None or match.end() == pos:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExpressionError(f"unexpected character {text[bad]!r} at position {bad}", bad)
        kind = match.lastgroup
        start = match.start(kind)
        tokens.append((kind, match.group(kind), start))
        pos = match.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise ExpressionError(f"expected {value!r} at position {pos}, found {found}", pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected {val!r} at position {pos}", pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        kind, val, _ = self.peek()
        if kind == "op" and val in ("-", "+"):
            self.take()
            operand = self.unary()
            return Neg(operand) if val == "-" else operand
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val in ("^", "**"):
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if self.peek()[1] == "(":
                return self.call(val, pos)
            return Var(val)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ExpressionError(f"unexpected {found} at position {pos}", pos)

    def call(self, name: str, pos: int) -> Node:
        if name not in FUNCTIONS:
            raise ExpressionError(f"unknown function {name!r} at position {pos}", pos)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        arity = FUNCTIONS[name][0]
        if arity is None and len(args) < 2:
            raise ExpressionError(f"{name} needs at least two arguments (position {pos})", pos)
        if arity is not None and len(args) != arity:
            raise ExpressionError(
                f"{name} takes {arity} argument(s), got {len(args)} (position {pos})", pos
            )
        return Call(name, tuple(args))


def parse(text: str) -> Node:
    return _Parser(text).parse()


def unparse(node: Node) -> str:
    """Fully parenthesised source text that re-parses to the same tree."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{unparse(node.operand)})"
    if isinstance(node, BinOp):
        return f"({unparse(node.left)} {node.op} {unparse(node.right)})"
    return f"{node.name}({', '.join(unparse(a) for a in node.args)})"


def variables(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Neg):
        return variables(node.operand)
    if isinstance(node, BinOp):
        return variables(node.left) | variables(node.right)
    if isinstance(node, Call):
        return set().union(*(variables(a) for a in node.args))
    return set()


def _first_bad(mask) -> int | None:
    mask = np.atleast_1d(mask)
    hits = np.flatnonzero(mask)
    return int(hits[0]) if hits.size else None


def _eval(node: Node, env: Mapping[str, np.ndarray]):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name in env:
            return env[node.name]
        if node.name in CONSTANTS:
            return CONSTANTS[node.name]
        raise ExpressionError(f"unknown variable {node.name!r}")
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, Call):
        args = [np.asarray(_eval(a, env), dtype=float) for a in node.args]
        if node.name == "sqrt":
            bad = _first_bad(args[0] < 0)
            if bad is not None:
                raise ExpressionError("sqrt of a negative value", index=bad)
        if node.name == "log":
            bad = _first_bad(args[0] <= 0)
            if bad is not None:
                raise ExpressionError("log of a nonpositive value", index=bad)
        func = FUNCTIONS[node.name][1]
        out = args[0]
        if len(args) == 1:
            return func(out)
        for arg in args[1:]:
            out = func(out, arg)
        return out
    left = np.asarray(_eval(node.left, env), dtype=float)
    right = np.asarray(_eval(node.right, env), dtype=float)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        bad = _first_bad(np.broadcast_to(right, np.broadcast(left, right).shape) == 0)
        if bad is not None:
            raise ExpressionError("division by zero", index=bad)
        return left / right
    # power: a negative base needs an integer exponent
    shape = np.broadcast(left, right).shape
    neg_base = np.broadcast_to(left < 0, shape)
    frac_expo = np.broadcast_to(right != np.round(right), shape)
    bad = _first_bad(neg_base & frac_expo)
    if bad is not None:
        raise ExpressionError("negative base raised to a fractional power", index=bad)
    return np.power(left, right)


def evaluate(node: Node | str, **env) -> np.ndarray:
    """Evaluate ``node`` with the given variable bindings (arrays broadcast).

    Raises ExpressionError with ``index`` set to the first offending entry
    when a value falls outside the domain of a function.
    """
    if isinstance(node, str):
        node = parse(node)
    env = {k: np.asarray(v, dtype=float) for k, v in env.items()}
    with np.errstate(all="ignore"):
        out = np.asarray(_eval(node, env), dtype=float)
    bad = _first_bad(~np.isfinite(out))
    if bad is not None:
        raise ExpressionError("expression produced a non-finite value", index=bad)
    return out


class Expression:
    """Parsed expression that remembers its source text."""

    def __init__(self, text: str):
        self.text = text
        self.tree = parse(text)

    def __call__(self, **env) -> np.ndarray:
        return evaluate(self.tree, **env)

    def __repr__(self):
        return f"Expression({self.text!r})"
