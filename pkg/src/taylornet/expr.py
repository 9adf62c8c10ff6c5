"""Expression grammar for PDE residuals and boundary data.

Grammar: numbers, `pi`, coordinates x1..xp (`t` aliases x1), derivative
atoms D(k1,...,kp) — D(0,...,0) is the field value itself — functions
sin/cos/exp, operators + - * / ^int, parentheses. Whitespace is
insignificant. Parse errors carry the offending position.

Evaluation binds coordinates to a batch of points and derivative atoms to
values supplied by a derivative engine; it works identically on plain
arrays and on taped tensors.
"""

import math
import re
from dataclasses import dataclass

import numpy as np

from .tape import Tensor, vact, vexp


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Coord:
    index: int  # 0-based


@dataclass(frozen=True)
class Deriv:
    alpha: tuple


@dataclass(frozen=True)
class Unary:
    op: str  # sin | cos | exp | neg
    arg: object


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / ^
    left: object
    right: object


class ExpressionError(ValueError):
    def __init__(self, message, position, text):
        super().__init__(f"{message} at position {position}: {text!r}")
        self.position = position


_NUM = re.compile(r"(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?")


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _NUM.match(text, pos)
        if m:
            tokens.append(("num", m.group(0), pos))
            pos = m.end()
            continue
        m = re.match(r"[A-Za-z_][A-Za-z_0-9]*", text[pos:])
        if m:
            tokens.append(("ident", m.group(0), pos))
            pos += m.end()
            continue
        if text[pos] in "-+*/^(),":
            tokens.append(("op", text[pos], pos))
            pos += 1
            continue
        raise ExpressionError(f"unexpected character {text[pos]!r}", pos, text)
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, dims):
        self.text = text
        self.dims = dims
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        raise ExpressionError(message, tok[2], self.text)

    def expect_op(self, op):
        kind, val, pos = self.peek()
        if kind != "op" or val != op:
            self.fail(f"expected {op!r}")
        return self.advance()

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail("trailing input")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.advance()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.advance()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val in "+-":
            self.advance()
            arg = self.unary()
            return arg if val == "+" else Unary("neg", arg)
        return self.power()

    def power(self):
        node = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.advance()
            kind, val, pos = self.advance()
            if kind != "num" or "." in val or "e" in val.lower():
                raise ExpressionError("exponent must be an integer literal", pos, self.text)
            node = Binary("^", node, Const(float(int(val))))
        return node

    def atom(self):
        kind, val, pos = self.advance()
        if kind == "num":
            return Const(float(val))
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if kind == "ident":
            if val == "pi":
                return Const(math.pi)
            if val == "t":
                return Coord(0)
            if val in ("sin", "cos", "exp"):
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Unary(val, arg)
            if val == "D":
                self.expect_op("(")
                orders = [self._int_literal()]
                while self.peek()[:2] == ("op", ","):
                    self.advance()
                    orders.append(self._int_literal())
                self.expect_op(")")
                if len(orders) != self.dims:
                    raise ExpressionError(
                        f"derivative arity {len(orders)} does not match dimension {self.dims}",
                        pos,
                        self.text,
                    )
                return Deriv(tuple(orders))
            m = re.fullmatch(r"x(\d+)", val)
            if m:
                idx = int(m.group(1))
                if not 1 <= idx <= self.dims:
                    raise ExpressionError(f"coordinate {val} out of range 1..{self.dims}", pos, self.text)
                return Coord(idx - 1)
            raise ExpressionError(f"unknown symbol {val!r}", pos, self.text)
        raise ExpressionError("expected a value", pos, self.text)

    def _int_literal(self):
        kind, val, pos = self.advance()
        if kind != "num" or "." in val or "e" in val.lower():
            raise ExpressionError("derivative orders must be integer literals", pos, self.text)
        return int(val)


def parse_expression(text, dims):
    """Parse `text` into an AST; `dims` fixes coordinate range and D arity."""
    if dims < 1:
        raise ValueError("dims must be >= 1")
    return _Parser(text, dims).parse()


# --------------------------------------------------------------- analysis


def derivative_indices(node):
    """Set of multi-indices referenced by D(...) atoms in the tree."""
    if isinstance(node, Deriv):
        return {node.alpha}
    if isinstance(node, Unary):
        return derivative_indices(node.arg)
    if isinstance(node, Binary):
        return derivative_indices(node.left) | derivative_indices(node.right)
    return set()


def max_derivative_order(node):
    return max((sum(a) for a in derivative_indices(node)), default=0)


# -------------------------------------------------------------- evaluation


def _sin(v):
    if isinstance(v, Tensor):
        return vact("sine", v, 0)
    return np.sin(v)


def _cos(v):
    if isinstance(v, Tensor):
        return vact("sine", v, 1)
    return np.cos(v)


def eval_ast(node, coords, derivs=None):
    """Evaluate over a batch: coords (B, p) array, derivs {alpha: value}.

    Derivative atoms with no entry in `derivs` are an error; division by
    a vanishing denominator raises.
    """
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Coord):
        return coords[:, node.index]
    if isinstance(node, Deriv):
        if derivs is None or node.alpha not in derivs:
            raise ValueError(f"no derivative value bound for multi-index {node.alpha}")
        return derivs[node.alpha]
    if isinstance(node, Unary):
        v = eval_ast(node.arg, coords, derivs)
        if node.op == "neg":
            return -v
        if node.op == "sin":
            return _sin(v)
        if node.op == "cos":
            return _cos(v)
        if node.op == "exp":
            return vexp(v) if isinstance(v, Tensor) else np.exp(v)
        raise ValueError(f"unknown unary op {node.op!r}")
    if isinstance(node, Binary):
        a = eval_ast(node.left, coords, derivs)
        if node.op == "^":
            k = int(node.right.value)
            if k == 0:
                return np.ones(coords.shape[0]) if not isinstance(a, Tensor) else a * 0.0 + 1.0
            return a**k
        b = eval_ast(node.right, coords, derivs)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if not isinstance(b, Tensor) and np.any(np.asarray(b) == 0.0):
                raise ZeroDivisionError("division by zero in expression")
            return a / b
        raise ValueError(f"unknown binary op {node.op!r}")
    raise TypeError(f"not an expression node: {node!r}")
