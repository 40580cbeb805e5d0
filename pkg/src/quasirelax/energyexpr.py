"""A small expression language for user-defined energy densities W(F).

Grammar (EBNF, also documented in FORMATS.md)::

    expr    := sum
    sum     := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" unary)?
    atom    := NUMBER | call | "(" expr ")"
    call    := ("norm" | "det" | "cross") "(" "F" ")"
             | ("abs" | "inv") "(" expr ")"
             | ("min" | "max") "(" expr "," expr ")"
             | "finite_if" "(" cond "," expr ")"
    cond    := sum (RELOP sum)+        RELOP := "<" | "<=" | ">" | ">="

``F`` is the matrix argument and may only appear inside norm/det/cross;
``cross(F)`` is the norm of the column cross product (3x2 matrices only),
``inv(x)`` is 1/x. Evaluation is total over extended reals: division by
zero, NaN-producing operations, and negative final values all collapse to
+inf (the single absorbing error value), never NaN.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .matspace import cross_cols_many, det_many

__all__ = [
    "EnergyExpr",
    "ExprSyntaxError",
    "ExprShapeError",
    "parse",
    "to_text",
    "eval_expr",
    "eval_many",
]


class ExprSyntaxError(InvalidArgumentError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class ExprShapeError(InvalidArgumentError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class MatFunc:
    name: str  # norm | det | cross, applied to the matrix symbol F


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * / ^
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str  # abs | inv | min | max
    args: tuple


@dataclass(frozen=True)
class Cmp:
    """Comparison chain t0 op0 t1 op1 t2 ... over scalar terms."""

    terms: tuple
    ops: tuple  # each < | <= | > | >=


@dataclass(frozen=True)
class FiniteIf:
    cond: Cmp
    body: object


@dataclass(frozen=True)
class EnergyExpr:
    """A parsed energy density with its declared matrix dimensions."""

    root: object
    m: int
    n: int


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op><=|>=|[-+*/^(),<>]))"
)

_MAT_FUNCS = {"norm", "det", "cross"}
_SCALAR_FUNCS = {"abs": 1, "inv": 1, "min": 2, "max": 2}


class _Parser:
    def __init__(self, text: str, m: int, n: int):
        self.text = text
        self.m = m
        self.n = n
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            mt = _TOKEN_RE.match(text, pos)
            if mt is None or mt.end() == pos:
                if not text[pos:].strip():
                    break  # trailing whitespace
                bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
                raise ExprSyntaxError(f"unexpected character {text[bad]!r}", bad)
            if mt.lastgroup is not None:
                self.tokens.append((mt.lastgroup, mt.group(mt.lastgroup), mt.start(mt.lastgroup)))
            pos = mt.end()
        self.tokens.append(("end", "", len(text)))
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.peek()
        if val != value:
            raise ExprSyntaxError(f"expected {value!r}, found {val or 'end of input'!r}", pos)
        return self.advance()

    def parse(self):
        node = self.sum()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"trailing input {val!r}", pos)
        return node

    def sum(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        node = self.atom()
        if self.peek()[1] == "^":
            self.advance()
            node = BinOp("^", node, self.unary())
        return node

    def atom(self):
        kind, val, pos = self.peek()
        if kind == "num":
            self.advance()
            return Num(float(val))
        if val == "(":
            self.advance()
            node = self.sum()
            self.expect(")")
            return node
        if kind == "ident":
            return self.call()
        raise ExprSyntaxError(f"expected a value, found {val or 'end of input'!r}", pos)

    def call(self):
        kind, name, pos = self.advance()
        if name == "F":
            raise ExprShapeError("the matrix F may only appear inside norm/det/cross", pos)
        if name in _MAT_FUNCS:
            self.expect("(")
            _, fval, fpos = self.advance()
            if fval != "F":
                raise ExprSyntaxError(f"{name}() takes the matrix symbol F", fpos)
            self.expect(")")
            if name == "det" and self.m != self.n:
                raise ExprShapeError(f"det(F) needs a square matrix, dims are {self.m}x{self.n}", pos)
            if name == "cross" and (self.m, self.n) != (3, 2):
                raise ExprShapeError(f"cross(F) needs a 3x2 matrix, dims are {self.m}x{self.n}", pos)
            return MatFunc(name)
        if name in _SCALAR_FUNCS:
            self.expect("(")
            args = [self.sum()]
            for _ in range(_SCALAR_FUNCS[name] - 1):
                self.expect(",")
                args.append(self.sum())
            self.expect(")")
            return Call(name, tuple(args))
        if name == "finite_if":
            self.expect("(")
            cond = self.cond()
            self.expect(",")
            body = self.sum()
            self.expect(")")
            return FiniteIf(cond, body)
        raise ExprSyntaxError(f"unknown function {name!r}", pos)

    def cond(self):
        terms = [self.sum()]
        ops = []
        kind, val, pos = self.peek()
        if val not in ("<", "<=", ">", ">="):
            raise ExprSyntaxError("finite_if needs a comparison chain as its condition", pos)
        while self.peek()[1] in ("<", "<=", ">", ">="):
            ops.append(self.advance()[1])
            terms.append(self.sum())
        return Cmp(tuple(terms), tuple(ops))


def parse(text: str, m: int, n: int) -> EnergyExpr:
    """Parse an energy expression, shape-checked against (m, n)."""
    if not isinstance(text, str) or not text.strip():
        raise InvalidArgumentError("expression text must be nonempty")
    return EnergyExpr(_Parser(text, m, n).parse(), m, n)


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _fmt(node, parent_prec: int = 0) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, MatFunc):
        return f"{node.name}(F)"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(_fmt(a) for a in node.args)})"
    if isinstance(node, Neg):
        s = f"-{_fmt(node.arg, _PREC['neg'])}"
        return f"({s})" if parent_prec > _PREC["neg"] else s
    if isinstance(node, BinOp):
        p = _PREC[node.op]
        # ^ is right associative, everything else left associative
        lp = p + 1 if node.op == "^" else p
        rp = p if node.op == "^" else p + 1
        s = f"{_fmt(node.left, lp)} {node.op} {_fmt(node.right, rp)}"
        return f"({s})" if parent_prec > p else s
    if isinstance(node, FiniteIf):
        return f"finite_if({_fmt_cond(node.cond)}, {_fmt(node.body)})"
    raise InvalidArgumentError(f"unknown node {node!r}")


def _fmt_cond(cond: Cmp) -> str:
    parts = [_fmt(cond.terms[0])]
    for op, term in zip(cond.ops, cond.terms[1:]):
        parts.append(f" {op} {_fmt(term)}")
    return "".join(parts)


def to_text(e: EnergyExpr) -> str:
    """Canonical text form; parse(to_text(e), m, n) is structurally equal to e."""
    return _fmt(e.root)


def _purge_nan(x: np.ndarray) -> np.ndarray:
    # +inf is the single absorbing error value; there is no NaN channel
    return np.where(np.isnan(x), np.inf, x)


def _eval_node(node, fs: np.ndarray) -> np.ndarray:
    n_batch = fs.shape[0]
    if isinstance(node, Num):
        return np.full(n_batch, node.value)
    if isinstance(node, MatFunc):
        if node.name == "norm":
            return np.linalg.norm(fs.reshape(n_batch, -1), axis=1)
        if node.name == "det":
            return det_many(fs)
        return np.linalg.norm(cross_cols_many(fs), axis=1)
    if isinstance(node, Neg):
        return -_eval_node(node.arg, fs)
    if isinstance(node, Call):
        args = [_eval_node(a, fs) for a in node.args]
        if node.name == "abs":
            return np.abs(args[0])
        if node.name == "inv":
            with np.errstate(divide="ignore", invalid="ignore"):
                return _purge_nan(np.where(args[0] == 0.0, np.inf, 1.0 / args[0]))
        if node.name == "min":
            return np.minimum(args[0], args[1])
        return np.maximum(args[0], args[1])
    if isinstance(node, BinOp):
        left = _eval_node(node.left, fs)
        right = _eval_node(node.right, fs)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if node.op == "+":
                out = left + right
            elif node.op == "-":
                out = left - right
            elif node.op == "*":
                out = left * right
            elif node.op == "/":
                out = np.where(right == 0.0, np.inf, left / right)
            else:
                out = np.power(left, right)
        return _purge_nan(out)
    if isinstance(node, FiniteIf):
        cond = _eval_cond(node.cond, fs)
        body = _eval_node(node.body, fs)
        return np.where(cond, body, np.inf)
    raise InvalidArgumentError(f"unknown node {node!r}")


def _eval_cond(cond: Cmp, fs: np.ndarray) -> np.ndarray:
    terms = [_eval_node(t, fs) for t in cond.terms]
    ok = np.ones(fs.shape[0], dtype=bool)
    for op, a, b in zip(cond.ops, terms, terms[1:]):
        if op == "<":
            ok &= a < b
        elif op == "<=":
            ok &= a <= b
        elif op == ">":
            ok &= a > b
        else:
            ok &= a >= b
    return ok


def eval_many(e: EnergyExpr, fs: np.ndarray) -> np.ndarray:
    """Evaluate over a (batch, m, n) stack of matrices; extended-real output.

    Negative and NaN final values collapse to +inf so the result is always
    a valid energy value in [0, +inf].
    """
    fs = np.asarray(fs, dtype=float)
    if fs.ndim != 3 or fs.shape[1:] != (e.m, e.n):
        raise InvalidArgumentError(f"expected matrices of shape ({e.m}, {e.n}), got {fs.shape[1:]}")
    out = _eval_node(e.root, fs)
    out = np.asarray(out, dtype=float)
    if out.ndim == 0:
        out = np.full(fs.shape[0], float(out))
    return np.where(np.isnan(out) | (out < 0.0), np.inf, out)


def eval_expr(e: EnergyExpr, f) -> float:
    """Evaluate at a single matrix; returns a finite value >= 0 or +inf."""
    f = np.asarray(f, dtype=float)
    if f.shape != (e.m, e.n):
        raise InvalidArgumentError(f"expected a ({e.m}, {e.n}) matrix, got {f.shape}")
    return float(eval_many(e, f[None, :, :])[0])
