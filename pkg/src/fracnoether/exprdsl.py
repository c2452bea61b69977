"""Scalar expression language: parsing, evaluation and symbolic differentiation.

Grammar (whitespace-insensitive)::

    expr     := term (('+' | '-') term)*
    term     := unary (('*' | '/') unary)*
    unary    := '-' unary | power
    power    := base ('^' unary)?          # right associative, exponent must be constant
    base     := number | identifier | function '(' expr ')' | '(' expr ')'
    function := 'sin' | 'cos' | 'exp' | 'ln' | 'sqrt'

so ``-x^2`` is ``-(x^2)`` and ``x^2^3`` is ``x^(2^3)``.  Evaluation works on
floats and on numpy arrays alike (one entry per grid node).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt")
UNARY_OPS = ("neg",) + FUNCTIONS
BINARY_OPS = ("+", "-", "*", "/", "^")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, column: int):
        super().__init__(f"{message} at column {column}")
        self.column = column


class UndeclaredIdentifierError(ExprError):
    def __init__(self, name: str, column: int):
        super().__init__(f'undeclared identifier "{name}" at column {column}')
        self.name = name
        self.column = column


class MissingBindingError(ExprError, KeyError):
    def __init__(self, name: str):
        ExprError.__init__(self, f'no value bound to "{name}"')
        self.name = name

    def __str__(self):
        return self.args[0]


class DomainError(ExprError, ArithmeticError):
    """Evaluation left the real domain; ``index`` is the first bad node for array input."""

    def __init__(self, message: str, index: int | None = None):
        if index is not None:
            message = f"{message} (node {index})"
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class Variable:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Expression"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expression"
    right: "Expression"


Expression = Union[Constant, Variable, Unary, Binary]

ZERO = Constant(0.0)
ONE = Constant(1.0)


# -- tokenizer / parser -----------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            col = pos + len(text[pos:]) - len(text[pos:].lstrip()) + 1
            raise ExprSyntaxError(f"unexpected character {text[col - 1]!r}", col)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind) + 1))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, symbols: frozenset[str]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.symbols = symbols

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, col = self.take()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", col)

    def parse(self) -> Expression:
        e = self.expr()
        kind, text, col = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", col)
        return e

    def expr(self) -> Expression:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = Binary(op, left, self.term())
        return left

    def term(self) -> Expression:
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = Binary(op, left, self.unary())
        return left

    def unary(self) -> Expression:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Expression:
        base = self.base()
        if self.peek()[:2] == ("op", "^"):
            col = self.take()[2]
            exponent = fold(self.unary())
            if not isinstance(exponent, Constant):
                raise ExprSyntaxError("exponent must be a constant", col)
            return Binary("^", base, exponent)
        return base

    def base(self) -> Expression:
        kind, text, col = self.take()
        if kind == "num":
            return Constant(float(text))
        if kind == "id":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(text, arg)
            if text not in self.symbols:
                raise UndeclaredIdentifierError(text, col)
            return Variable(text)
        if (kind, text) == ("op", "("):
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {found}", col)


def parse(text: str, symbols: Iterable[str]) -> Expression:
    """Parse ``text`` into an expression tree over the declared ``symbols``."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 1)
    return _Parser(text, frozenset(symbols)).parse()


# -- printing ---------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _fmt_number(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _prec(e: Expression) -> int:
    if isinstance(e, Constant):
        return 3 if e.value < 0 else 5
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary):
        return _PREC["neg"] if e.op == "neg" else 5
    return 5


def to_text(e: Expression) -> str:
    """Canonical text form; ``parse(to_text(e))`` prints back identically."""
    if isinstance(e, Constant):
        return _fmt_number(e.value)
    if isinstance(e, Variable):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = to_text(e.child)
            return f"-{inner}" if _prec(e.child) >= 3 else f"-({inner})"
        return f"{e.op}({to_text(e.child)})"
    p = _PREC[e.op]
    left, right = to_text(e.left), to_text(e.right)
    if e.op == "^":
        if _prec(e.left) <= p:
            left = f"({left})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    if e.op in "+-":
        return f"{left} {e.op} {right}"
    return f"{left}{e.op}{right}"


# -- structure --------------------------------------------------------------


def free_symbols(e: Expression) -> set[str]:
    if isinstance(e, Variable):
        return {e.name}
    if isinstance(e, Unary):
        return free_symbols(e.child)
    if isinstance(e, Binary):
        return free_symbols(e.left) | free_symbols(e.right)
    return set()


def find_path(e: Expression, name: str, path: str = "") -> str | None:
    """Location of the first occurrence of variable ``name``, e.g. ``"left.right"``."""
    if isinstance(e, Variable):
        return path or "." if e.name == name else None
    children: list[tuple[str, Expression]] = []
    if isinstance(e, Unary):
        children = [("child", e.child)]
    elif isinstance(e, Binary):
        children = [("left", e.left), ("right", e.right)]
    for label, child in children:
        found = find_path(child, name, f"{path}.{label}" if path else label)
        if found is not None:
            return found
    return None


def rename(e: Expression, mapping: Mapping[str, str]) -> Expression:
    """Copy of ``e`` with variables renamed; names absent from ``mapping`` are kept."""
    if isinstance(e, Variable):
        return Variable(mapping.get(e.name, e.name))
    if isinstance(e, Unary):
        return Unary(e.op, rename(e.child, mapping))
    if isinstance(e, Binary):
        return Binary(e.op, rename(e.left, mapping), rename(e.right, mapping))
    return e


# -- evaluation -------------------------------------------------------------

Value = Union[float, np.ndarray]


def _first_bad(mask) -> int | None:
    mask = np.asarray(mask)
    if mask.ndim == 0:
        return None
    return int(np.flatnonzero(mask)[0])


def _check(result, message: str) -> Value:
    bad = ~np.isfinite(result)
    if np.any(bad):
        raise DomainError(message, _first_bad(bad))
    return result


def _eval(e: Expression, env: Mapping[str, Value]) -> Value:
    if isinstance(e, Constant):
        return e.value
    if isinstance(e, Variable):
        try:
            return env[e.name]
        except KeyError:
            raise MissingBindingError(e.name) from None
    if isinstance(e, Unary):
        x = _eval(e.child, env)
        if e.op == "neg":
            return -x
        if e.op == "ln":
            if np.any(np.asarray(x) <= 0):
                raise DomainError("ln of a non-positive value", _first_bad(np.asarray(x) <= 0))
            return np.log(x)
        if e.op == "sqrt":
            if np.any(np.asarray(x) < 0):
                raise DomainError("sqrt of a negative value", _first_bad(np.asarray(x) < 0))
            return np.sqrt(x)
        with np.errstate(over="ignore"):
            if e.op == "exp":
                return _check(np.exp(x), "exp overflow")
            return getattr(np, e.op)(x)
    x = _eval(e.left, env)
    y = _eval(e.right, env)
    if e.op == "+":
        return x + y
    if e.op == "-":
        return x - y
    if e.op == "*":
        return x * y
    if e.op == "/":
        y_arr = np.asarray(y)
        if np.any(y_arr == 0):
            raise DomainError("division by zero", _first_bad(y_arr == 0))
        return x / y
    with np.errstate(all="ignore"):
        return _check(np.power(np.asarray(x, dtype=float), y), f"power with exponent {y} undefined")


def evaluate(e: Expression, env: Mapping[str, Value]) -> Value:
    """Evaluate ``e``; array bindings broadcast, constants stay scalar."""
    result = _eval(e, env)
    result = _check(result, "non-finite result")
    if isinstance(result, np.ndarray) and result.ndim == 0:
        return float(result)
    return result


def evaluate_on(e: Expression, env: Mapping[str, np.ndarray], n: int) -> np.ndarray:
    """Evaluate and broadcast to a length-``n`` array."""
    return np.broadcast_to(np.asarray(evaluate(e, env), dtype=float), (n,)).copy()


# -- differentiation --------------------------------------------------------


def _is(e: Expression, v: float) -> bool:
    return isinstance(e, Constant) and e.value == v


def add(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Constant) and isinstance(b, Constant):
        return Constant(a.value + b.value)
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    return Binary("+", a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Constant) and isinstance(b, Constant):
        return Constant(a.value - b.value)
    if _is(b, 0):
        return a
    if _is(a, 0):
        return neg(b)
    return Binary("-", a, b)


def neg(a: Expression) -> Expression:
    if isinstance(a, Constant):
        return Constant(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.child
    return Unary("neg", a)


def mul(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Constant) and isinstance(b, Constant):
        return Constant(a.value * b.value)
    if _is(a, 0) or _is(b, 0):
        return ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if isinstance(b, Constant):
        a, b = b, a
    if isinstance(a, Constant) and isinstance(b, Binary) and b.op == "*" and isinstance(b.left, Constant):
        return mul(Constant(a.value * b.left.value), b.right)
    return Binary("*", a, b)


def div(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Constant) and isinstance(b, Constant) and b.value != 0:
        return Constant(a.value / b.value)
    if _is(a, 0):
        return ZERO
    if _is(b, 1):
        return a
    return Binary("/", a, b)


def power(a: Expression, c: float) -> Expression:
    if c == 0:
        return ONE
    if c == 1:
        return a
    if isinstance(a, Constant):
        with np.errstate(all="ignore"):
            value = float(np.power(a.value, c))
        if math.isfinite(value):
            return Constant(value)
    return Binary("^", a, Constant(c))


def fold(e: Expression) -> Expression:
    """Rebuild ``e`` through the folding constructors."""
    if isinstance(e, Unary):
        child = fold(e.child)
        if e.op == "neg":
            return neg(child)
        if isinstance(child, Constant):
            try:
                value = evaluate(Unary(e.op, child), {})
                return Constant(float(value))
            except ExprError:
                pass
        return Unary(e.op, child)
    if isinstance(e, Binary):
        left, right = fold(e.left), fold(e.right)
        if e.op == "^":
            return power(left, right.value) if isinstance(right, Constant) else Binary("^", left, right)
        return {"+": add, "-": sub, "*": mul, "/": div}[e.op](left, right)
    return e


def differentiate(e: Expression, var: str) -> Expression:
    """Symbolic partial derivative of ``e`` with respect to ``var``."""
    if isinstance(e, Constant):
        return ZERO
    if isinstance(e, Variable):
        return ONE if e.name == var else ZERO
    if isinstance(e, Unary):
        du = differentiate(e.child, var)
        if _is(du, 0):
            return ZERO
        u = e.child
        outer = {
            "neg": lambda: Constant(-1.0),
            "sin": lambda: Unary("cos", u),
            "cos": lambda: neg(Unary("sin", u)),
            "exp": lambda: e,
            "ln": lambda: div(ONE, u),
            "sqrt": lambda: div(Constant(0.5), e),
        }[e.op]()
        return mul(outer, du)
    a, b = e.left, e.right
    if e.op == "+":
        return add(differentiate(a, var), differentiate(b, var))
    if e.op == "-":
        return sub(differentiate(a, var), differentiate(b, var))
    if e.op == "*":
        return add(mul(differentiate(a, var), b), mul(a, differentiate(b, var)))
    if e.op == "/":
        da, db = differentiate(a, var), differentiate(b, var)
        if _is(db, 0):
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, 2.0))
    c = b.value  # constant exponent, guaranteed by the grammar
    da = differentiate(a, var)
    if _is(da, 0):
        return ZERO
    return mul(mul(Constant(c), power(a, c - 1.0)), da)


# -- problem symbol sets ----------------------------------------------------


def indexed(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i}" for i in range(1, n + 1)]


def lagrangian_symbols(n: int) -> list[str]:
    return ["t"] + indexed("q", n) + indexed("v", n) + indexed("w", n)


@dataclass(frozen=True, eq=False)
class Lagrangian:
    """``L(t, q, v, w)`` with ``v`` standing for dq/dt and ``w`` for the left RL derivative of q."""

    expr: Expression
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ExprError(f"dimension must be positive, got {self.dim}")
        undeclared = free_symbols(self.expr) - set(self.symbols)
        if undeclared:
            raise UndeclaredIdentifierError(sorted(undeclared)[0], 0)

    @classmethod
    def parse(cls, text: str, dim: int) -> Lagrangian:
        return cls(parse(text, lagrangian_symbols(dim)), dim)

    @property
    def symbols(self) -> list[str]:
        return lagrangian_symbols(self.dim)

    def names(self, slot: str) -> list[str]:
        return indexed(slot, self.dim)

    def partial(self, var: str) -> Expression:
        cache = self.__dict__.setdefault("_partials", {})
        if var not in cache:
            cache[var] = differentiate(self.expr, var)
        return cache[var]

    def gradient(self, slot: str) -> list[Expression]:
        """Partials with respect to every component of ``slot`` ('q', 'v' or 'w')."""
        return [self.partial(name) for name in self.names(slot)]

    def second(self, x: str, y: str) -> Expression:
        cache = self.__dict__.setdefault("_seconds", {})
        key = (x, y)
        if key not in cache:
            cache[key] = differentiate(self.partial(x), y)
        return cache[key]


def parse_list(texts: Sequence[str], symbols: Iterable[str]) -> list[Expression]:
    symbols = list(symbols)
    return [parse(text, symbols) for text in texts]


def is_zero(e: Expression) -> bool:
    e = fold(e)
    return isinstance(e, Constant) and e.value == 0.0
