"""Scalar field expressions V(t, x): parser, printer, symbolic derivatives, vectorized evaluation.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := unary ('^' factor)?
    unary  := '-' unary | atom
    atom   := number | ident | ident '(' expr ')' | '(' expr ')'

Identifiers are ``t``, ``x1`` .. ``x9`` and the functions
``sin cos exp tanh sqrt abs``.  Note that ``-x^2`` parses as ``(-x)^2``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np


class ExpressionError(ValueError):
    pass


class ExprSyntaxError(ExpressionError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprSyntaxError):
    pass


class ArityError(ExprSyntaxError):
    pass


class NonSmoothPointError(ArithmeticError):
    """Derivative requested where abs() or sqrt() is not differentiable."""


FUNCTIONS = ("sin", "cos", "exp", "tanh", "sqrt", "abs")
# derivative helpers; never produced by the parser
_INTERNAL = ("_sign", "_halfrsqrt", "_log")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str  # "t" or "x<k>"

    @property
    def index(self) -> int:
        return -1 if self.name == "t" else int(self.name[1:]) - 1


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]

ZERO = Num(0.0)
ONE = Num(1.0)

# ---------------------------------------------------------------- tokenizer

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    raw = source.encode("utf-8")
    # offsets are byte offsets; map char index -> byte offset lazily
    char_to_byte = None
    if len(raw) != len(source):
        char_to_byte = [len(source[:i].encode("utf-8")) for i in range(len(source) + 1)]

    def boff(i: int) -> int:
        return char_to_byte[i] if char_to_byte else i

    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {source[bad]!r}", boff(bad))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), boff(start)))
        pos = m.end()
    tokens.append(("end", "", boff(len(source))))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, off = self.take()
        if text != value or kind != "op":
            what = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {what}", off)

    def parse(self) -> Node:
        node = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", off)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        base = self.unary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.factor())
        return base

    def unary(self) -> Node:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self) -> Node:
        kind, text, off = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            if text in FUNCTIONS:
                nxt = self.peek()
                if not (nxt[0] == "op" and nxt[1] == "("):
                    raise ArityError(f"function {text!r} expects one parenthesized argument", nxt[2])
                self.take()
                if self.peek()[0] == "op" and self.peek()[1] == ")":
                    raise ArityError(f"function {text!r} expects one argument, got none", self.peek()[2])
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            if text == "t" or re.fullmatch(r"x[1-9]", text):
                nxt = self.peek()
                if nxt[0] == "op" and nxt[1] == "(":
                    raise ArityError(f"variable {text!r} is not callable", nxt[2])
                return Var(text)
            raise UnknownIdentifierError(f"unknown identifier {text!r}", off)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {what}", off)


def parse(source: str) -> Node:
    """Parse ``source`` into an expression tree; raises ExprSyntaxError subclasses."""
    return _Parser(source).parse()


# ----------------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}


def _fmt_num(v: float) -> str:
    r = repr(float(v))
    return r[:-2] if r.endswith(".0") else r


def to_string(node: Node) -> str:
    """Render with the minimal parentheses needed so that parse(to_string(n)) == n."""
    if isinstance(node, Num):
        if node.value < 0 or not math.isfinite(node.value):
            raise ExpressionError(f"literal {node.value!r} is not representable in the grammar")
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({to_string(node.arg)})"
    if isinstance(node, Neg):
        inner = to_string(node.arg)
        if isinstance(node.arg, (Num, Var, Call, Neg)):
            return "-" + inner
        return f"-({inner})"
    p = _PREC[node.op]
    if node.op == "^":
        # base must be a unary; exponent is a factor
        base = to_string(node.left)
        if not isinstance(node.left, (Num, Var, Call, Neg)):
            base = f"({base})"
        expo = to_string(node.right)
        if isinstance(node.right, BinOp) and node.right.op != "^":
            expo = f"({expo})"
        return f"{base}^{expo}"
    left = to_string(node.left)
    if isinstance(node.left, BinOp) and _PREC[node.left.op] < p:
        left = f"({left})"
    right = to_string(node.right)
    if isinstance(node.right, BinOp) and _PREC[node.right.op] <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def variables(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, (Neg, Call)):
        return variables(node.arg)
    return variables(node.left) | variables(node.right)


def max_x_index(node: Node) -> int:
    """Largest k such that x<k> occurs (0 when no spatial variable occurs)."""
    ks = [int(v[1:]) for v in variables(node) if v != "t"]
    return max(ks, default=0)


# ------------------------------------------------------ symbolic derivative


def _add(a: Node, b: Node) -> Node:
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if isinstance(b, Neg):
        return _sub(a, b.arg)
    return BinOp("+", a, b)


def _sub(a: Node, b: Node) -> Node:
    if b == ZERO:
        return a
    if a == ZERO:
        return _neg(b)
    if isinstance(a, Num) and isinstance(b, Num) and a.value >= b.value:
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def _neg(a: Node) -> Node:
    if a == ZERO:
        return ZERO
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a: Node, b: Node) -> Node:
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if isinstance(a, Neg):
        return _neg(_mul(a.arg, b))
    if isinstance(b, Neg):
        return _neg(_mul(a, b.arg))
    return BinOp("*", a, b)


def _div(a: Node, b: Node) -> Node:
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    return BinOp("/", a, b)


def diff(node: Node, var: str) -> Node:
    """Symbolic partial derivative of ``node`` with respect to ``var`` ("t" or "x<k>")."""
    if isinstance(node, Num):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.name == var else ZERO
    if isinstance(node, Neg):
        return _neg(diff(node.arg, var))
    if isinstance(node, Call):
        f = node.arg
        df = diff(f, var)
        if df == ZERO:
            return ZERO
        name = node.func
        if name == "sin":
            outer = Call("cos", f)
        elif name == "cos":
            outer = _neg(Call("sin", f))
        elif name == "exp":
            outer = node
        elif name == "tanh":
            outer = _sub(ONE, BinOp("^", Call("tanh", f), Num(2.0)))
        elif name == "sqrt":
            outer = Call("_halfrsqrt", f)
        elif name == "abs":
            outer = Call("_sign", f)
        elif name == "_sign":
            # derivative of sign away from 0; evaluation at 0 already raised
            outer = ZERO
        elif name == "_halfrsqrt":
            # d/dz (1/(2 sqrt z)) = -1/(4 z^1.5)
            outer = _neg(_div(Num(0.25), BinOp("^", f, Num(1.5))))
        elif name == "_log":
            outer = _div(ONE, f)
        else:  # pragma: no cover - parser rejects anything else
            raise ExpressionError(f"no derivative rule for {name}")
        return _mul(outer, df)
    a, b = node.left, node.right
    da, db = diff(a, var), diff(b, var)
    if node.op == "+":
        return _add(da, db)
    if node.op == "-":
        return _sub(da, db)
    if node.op == "*":
        return _add(_mul(da, b), _mul(a, db))
    if node.op == "/":
        if db == ZERO:
            return _div(da, b)
        return _div(_sub(_mul(da, b), _mul(a, db)), BinOp("^", b, Num(2.0)))
    # power
    if db == ZERO:
        if da == ZERO:
            return ZERO
        if isinstance(b, Num):
            if b.value == 0.0:
                return ZERO
            if b.value == 1.0:
                return da
            new_exp = Num(b.value - 1.0) if b.value >= 1.0 else _neg(Num(1.0 - b.value))
            return _mul(_mul(b, BinOp("^", a, new_exp)), da)
        return _mul(_mul(b, BinOp("^", a, _sub(b, ONE))), da)
    # general a^b = exp(b log a)
    return _mul(node, _add(_mul(db, Call("_log", a)), _div(_mul(b, da), a)))


# --------------------------------------------------------------- evaluation


def _sign_checked(z):
    z = np.asarray(z, dtype=float)
    if np.any(z == 0.0):
        raise NonSmoothPointError("abs() is not differentiable at 0")
    return np.sign(z)


def _halfrsqrt_checked(z):
    z = np.asarray(z, dtype=float)
    if np.any(z == 0.0):
        raise NonSmoothPointError("sqrt() is not differentiable at 0")
    return 0.5 / np.sqrt(z)


_NUMPY_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "_sign": _sign_checked,
    "_halfrsqrt": _halfrsqrt_checked,
    "_log": np.log,
}


def evaluate(node: Node, t, x):
    """Evaluate on broadcastable inputs: ``t`` shape (...), ``x`` shape (..., n)."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        return _eval(node, t, x)


def _eval(node: Node, t, x):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return t if node.name == "t" else x[..., node.index]
    if isinstance(node, Neg):
        return -_eval(node.arg, t, x)
    if isinstance(node, Call):
        return _NUMPY_FUNCS[node.func](_eval(node.arg, t, x))
    a = _eval(node.left, t, x)
    b = _eval(node.right, t, x)
    op = node.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return a / b
    if isinstance(node.right, Num) and node.right.value == 2.0:
        return a * a
    return np.power(a, b)
