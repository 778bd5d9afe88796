"""Potential-function expressions u(x, a1..aT).

A small arithmetic language over the support variable ``x`` and the
parameters ``a1 .. aT``.  Expressions are parsed once into an immutable
tree and then evaluated either for plain values or as second-order
forward-mode jets carrying exact first and second partials with respect
to the parameters.

Grammar (whitespace-insensitive)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" ["-"] NUMBER)?
    atom    := NUMBER | "x" | "a" INT | FUNC "(" expr ")" | "(" expr ")"
    FUNC    := "ln" | "exp" | "abs"

Precedence from tightest to loosest: function call and parentheses,
``^`` (numeric-literal exponent only), unary minus, ``* /``, ``+ -``.
So ``-x^2`` is ``-(x^2)`` and ``-(x - a1)/a2`` is ``(-(x - a1))/a2``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ArityError, DomainError, PotentialSyntaxError, UnknownSymbol

FUNCTIONS = ("ln", "exp", "abs")


# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Param:
    index: int  # 1-based, matches the a1..aT spelling


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: float


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Param, Neg, BinOp, Pow, Call]


def _number(v) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_source(node: Node) -> str:
    """Canonical text for ``node``; parsing it yields an equal tree."""
    if isinstance(node, Num):
        return _number(node.value)
    if isinstance(node, Var):
        return "x"
    if isinstance(node, Param):
        return f"a{node.index}"
    if isinstance(node, Neg):
        return "-" + to_source(node.operand)
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Pow):
        base = to_source(node.base)
        if isinstance(node.base, (Neg, Pow)):
            base = f"({base})"
        return f"{base}^{_number(node.exponent)}"
    if isinstance(node, Call):
        return f"{node.func}({_bare(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def _bare(node: Node) -> str:
    text = to_source(node)
    return text[1:-1] if isinstance(node, BinOp) else text


def _params_in(node: Node) -> frozenset:
    if isinstance(node, Param):
        return frozenset((node.index,))
    if isinstance(node, (Neg,)):
        return _params_in(node.operand)
    if isinstance(node, BinOp):
        return _params_in(node.left) | _params_in(node.right)
    if isinstance(node, Pow):
        return _params_in(node.base)
    if isinstance(node, Call):
        return _params_in(node.arg)
    return frozenset()


# ---------------------------------------------------------------------------
# Parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.lastgroup is None:
            start = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise PotentialSyntaxError(f"unexpected character {source[start]!r}", source, start)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, num_params: int):
        self.source = source
        self.num_params = num_params
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def fail(self, message, expected=()):
        raise PotentialSyntaxError(message, self.source, self.tok[2], expected)

    def accept(self, text):
        if self.tok[0] == "op" and self.tok[1] == text:
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            got = self.tok[1] or "end of input"
            self.fail(f"unexpected {got!r}", (repr(text),))

    def parse(self) -> Node:
        node = self.expr()
        if self.tok[0] != "end":
            self.fail(f"unexpected {self.tok[1]!r}", ("operator", "end of input"))
        return node

    def expr(self):
        node = self.term()
        while self.tok[0] == "op" and self.tok[1] in "+-":
            op = self.tok[1]
            self.i += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok[0] == "op" and self.tok[1] in "*/":
            op = self.tok[1]
            self.i += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.accept("-"):
            return Neg(self.unary())
        return self.power()

    def power(self):
        node = self.atom()
        if self.accept("^"):
            sign = -1.0 if self.accept("-") else 1.0
            if self.tok[0] != "num":
                self.fail("exponent must be a numeric literal", ("number",))
            node = Pow(node, sign * float(self.tok[1]))
            self.i += 1
        return node

    def atom(self):
        kind, text, pos = self.tok
        if kind == "num":
            self.i += 1
            return Num(float(text))
        if kind == "name":
            self.i += 1
            if text == "x":
                return Var()
            if re.fullmatch(r"a[1-9]\d*", text):
                index = int(text[1:])
                if index > self.num_params:
                    raise UnknownSymbol(
                        f"parameter {text!r} at position {pos} exceeds the "
                        f"{self.num_params} declared parameter(s)"
                    )
                return Param(index)
            if text in FUNCTIONS:
                if not self.accept("("):
                    self.fail(f"function {text!r} needs an argument list", ("'('",))
                args = []
                if not (self.tok[0] == "op" and self.tok[1] == ")"):
                    args.append(self.expr())
                    while self.accept(","):
                        args.append(self.expr())
                self.expect(")")
                if len(args) != 1:
                    raise ArityError(f"{text}() takes exactly 1 argument, got {len(args)} (position {pos})")
                return Call(text, args[0])
            raise UnknownSymbol(f"unknown symbol {text!r} at position {pos}")
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        got = text or "end of input"
        self.fail(f"unexpected {got!r}", ("number", "'x'", "parameter", "function", "'('"))


# ---------------------------------------------------------------------------
# Evaluation

class Jet:
    """Values with exact first and second partials over a batch of points.

    ``v`` has shape (m,), ``d1`` (m, T) and ``d2`` (m, T, T).
    """

    __slots__ = ("v", "d1", "d2")

    def __init__(self, v, d1, d2):
        self.v = v
        self.d1 = d1
        self.d2 = d2

    @classmethod
    def constant(cls, v, T):
        v = np.asarray(v, dtype=float)
        m = v.shape[0]
        return cls(v, np.zeros((m, T)), np.zeros((m, T, T)))

    def chain(self, f, f1, f2):
        """Compose with a scalar function given f, f' and f'' at ``self.v``."""
        g1 = self.d1
        outer = g1[:, :, None] * g1[:, None, :]
        # 0 * inf must stay 0 where the inner expression does not depend on the parameters
        d2 = _times(f2[:, None, None], outer) + _times(f1[:, None, None], self.d2)
        return Jet(f, _times(f1[:, None], g1), d2)


def _times(scale, d):
    return np.where(d == 0.0, 0.0, scale * d)


def _sym_outer(a, b):
    return a[:, :, None] * b[:, None, :] + b[:, :, None] * a[:, None, :]


def _check_finite(values, node, what="value"):
    if not np.all(np.isfinite(values)):
        raise DomainError(f"non-finite {what}", to_source(node))


def _pow_domain(base, exponent, node, order=0):
    if float(exponent).is_integer():
        if exponent < 0 and np.any(base == 0):
            raise DomainError("zero raised to a negative power", to_source(node))
    else:
        if np.any(base < 0):
            raise DomainError("negative base with non-integer exponent", to_source(node))
        if np.any(base == 0) and exponent - order < 0:
            raise DomainError("power not differentiable at zero", to_source(node))


def _value(node: Node, x, alpha):
    if isinstance(node, Num):
        return np.full(x.shape, node.value)
    if isinstance(node, Var):
        return x
    if isinstance(node, Param):
        return np.full(x.shape, alpha[node.index - 1])
    if isinstance(node, Neg):
        return -_value(node.operand, x, alpha)
    if isinstance(node, BinOp):
        a = _value(node.left, x, alpha)
        b = _value(node.right, x, alpha)
        if node.op == "+":
            out = a + b
        elif node.op == "-":
            out = a - b
        elif node.op == "*":
            out = a * b
        else:
            if np.any(b == 0):
                raise DomainError("division by zero", to_source(node))
            out = a / b
        _check_finite(out, node)
        return out
    if isinstance(node, Pow):
        b = _value(node.base, x, alpha)
        _pow_domain(b, node.exponent, node)
        out = b ** node.exponent
        _check_finite(out, node)
        return out
    if isinstance(node, Call):
        a = _value(node.arg, x, alpha)
        if node.func == "ln":
            if np.any(a <= 0):
                raise DomainError("logarithm of a non-positive value", to_source(node))
            return np.log(a)
        if node.func == "exp":
            out = np.exp(a)
            _check_finite(out, node)
            return out
        return np.abs(a)
    raise TypeError(f"not an expression node: {node!r}")


def _jet(node: Node, x, alpha, T) -> Jet:
    if isinstance(node, Num):
        return Jet.constant(np.full(x.shape, node.value), T)
    if isinstance(node, Var):
        return Jet.constant(x, T)
    if isinstance(node, Param):
        out = Jet.constant(np.full(x.shape, alpha[node.index - 1]), T)
        out.d1[:, node.index - 1] = 1.0
        return out
    if isinstance(node, Neg):
        a = _jet(node.operand, x, alpha, T)
        return Jet(-a.v, -a.d1, -a.d2)
    if isinstance(node, BinOp):
        a = _jet(node.left, x, alpha, T)
        b = _jet(node.right, x, alpha, T)
        if node.op == "+":
            out = Jet(a.v + b.v, a.d1 + b.d1, a.d2 + b.d2)
        elif node.op == "-":
            out = Jet(a.v - b.v, a.d1 - b.d1, a.d2 - b.d2)
        elif node.op == "*":
            av, bv = a.v[:, None], b.v[:, None]
            out = Jet(
                a.v * b.v,
                a.d1 * bv + av * b.d1,
                a.d2 * bv[:, :, None] + av[:, :, None] * b.d2 + _sym_outer(a.d1, b.d1),
            )
        else:
            if np.any(b.v == 0):
                raise DomainError("division by zero", to_source(node))
            q = a.v / b.v
            bv = b.v[:, None]
            q1 = (a.d1 - q[:, None] * b.d1) / bv
            q2 = (a.d2 - q[:, None, None] * b.d2 - _sym_outer(q1, b.d1)) / bv[:, :, None]
            out = Jet(q, q1, q2)
        _check_finite(out.v, node)
        _check_finite(out.d2, node, "derivative")
        return out
    if isinstance(node, Pow):
        b = _jet(node.base, x, alpha, T)
        n = node.exponent
        _pow_domain(b.v, n, node, order=2)
        f = b.v ** n
        if n == 0:
            f1 = np.zeros_like(b.v)
            f2 = np.zeros_like(b.v)
        elif n == 1:
            f1 = np.ones_like(b.v)
            f2 = np.zeros_like(b.v)
        else:
            f1 = n * b.v ** (n - 1)
            f2 = n * (n - 1) * b.v ** (n - 2) if n != 2 else np.full(b.v.shape, 2.0)
        out = b.chain(f, f1, f2)
        _check_finite(out.v, node)
        _check_finite(out.d2, node, "derivative")
        return out
    if isinstance(node, Call):
        a = _jet(node.arg, x, alpha, T)
        if node.func == "ln":
            if np.any(a.v <= 0):
                raise DomainError("logarithm of a non-positive value", to_source(node))
            inv = 1.0 / a.v
            return a.chain(np.log(a.v), inv, -inv * inv)
        if node.func == "exp":
            e = np.exp(a.v)
            _check_finite(e, node)
            out = a.chain(e, e, e)
            _check_finite(out.d2, node, "derivative")
            return out
        # abs: subgradient 0 at the kink
        return a.chain(np.abs(a.v), np.sign(a.v), np.zeros_like(a.v))
    raise TypeError(f"not an expression node: {node!r}")


@dataclass(frozen=True)
class DualValue:
    value: float
    first: np.ndarray
    second: np.ndarray


@dataclass(frozen=True)
class PotentialExpr:
    """A parsed potential u(x, a1..aT); immutable and safe to share."""

    ast: Node
    num_params: int
    params_used: frozenset = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        used = _params_in(self.ast)
        if used and max(used) > self.num_params:
            raise UnknownSymbol(f"expression references a{max(used)} but only {self.num_params} parameter(s) declared")
        object.__setattr__(self, "params_used", used)

    def __str__(self):
        return _bare(self.ast)

    def _alpha(self, alpha):
        alpha = np.asarray(alpha if alpha is not None else (), dtype=float).reshape(-1)
        if alpha.shape[0] != self.num_params:
            raise ValueError(f"expected {self.num_params} parameter value(s), got {alpha.shape[0]}")
        return alpha

    def values(self, xs, alpha=None) -> np.ndarray:
        """Vectorized evaluation over an array of support points."""
        xs = np.asarray(xs, dtype=float).reshape(-1)
        with np.errstate(all="ignore"):
            return np.array(_value(self.ast, xs, self._alpha(alpha)), dtype=float, copy=True)

    def jet(self, xs, alpha=None) -> Jet:
        """Vectorized value, gradient and Hessian with respect to the parameters."""
        xs = np.asarray(xs, dtype=float).reshape(-1)
        with np.errstate(all="ignore"):
            out = _jet(self.ast, xs, self._alpha(alpha), self.num_params)
        return Jet(np.array(out.v, dtype=float, copy=True), out.d1, out.d2)

    def eval(self, x: float, alpha=None) -> float:
        return float(self.values([x], alpha)[0])

    def eval_dual(self, x: float, alpha=None) -> DualValue:
        j = self.jet([x], alpha)
        return DualValue(float(j.v[0]), j.d1[0].copy(), j.d2[0].copy())


def parse_potential(source: str, num_params: int = 0) -> PotentialExpr:
    if not isinstance(source, str) or not source.strip():
        raise PotentialSyntaxError("empty expression", source or "", 0, ("expression",))
    if num_params < 0:
        raise ValueError("num_params must be non-negative")
    return PotentialExpr(_Parser(source, num_params).parse(), num_params)


def eval(expr: PotentialExpr, x: float, alpha=None) -> float:  # noqa: A001
    return expr.eval(x, alpha)


def eval_dual(expr: PotentialExpr, x: float, alpha=None) -> DualValue:
    return expr.eval_dual(x, alpha)
