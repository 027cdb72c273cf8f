"""Scalar expressions over state, control and time symbols.

Expressions are immutable trees built from :class:`Const`, :class:`Var`,
:class:`Unary` and :class:`Binary` nodes.  They are produced by :func:`parse`
(the textual syntax used for dynamics, cost and constraint definitions) or
assembled programmatically with the arithmetic operators, which simplify as
they build.

Derivatives come in three flavours:

* :func:`diff_symbolic` returns a new tree for one partial derivative;
* :func:`grad` propagates dual numbers forward through the tree;
* :func:`hessian` differentiates the symbolic gradient with dual numbers,
  seeding one direction per colour of a greedy distance-2 colouring of the
  structural Hessian pattern.

Every evaluator works on plain floats as well as on numpy arrays, so a single
tree can be evaluated at all grid points of a discretisation at once.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

STATE = "state"
CONTROL = "control"
TIME = "time"
FINAL_TIME = "final_time"
STATE_INITIAL = "state_initial"
STATE_FINAL = "state_final"
PARAM = "param"

_KIND_ORDER = {STATE: 0, CONTROL: 1, TIME: 2, FINAL_TIME: 3, STATE_INITIAL: 4, STATE_FINAL: 5, PARAM: 6}

FUNCTIONS = ("sin", "cos", "tan", "atan", "sqrt", "exp", "log", "abs", "tanh")
UNARY_OPS = ("neg",) + FUNCTIONS + ("sign",)
BINARY_OPS = ("add", "sub", "mul", "div", "pow")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    """Malformed expression text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownVariable(ExprError):
    pass


class ArityError(ExprError):
    pass


class DomainError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# nodes


class Expr:
    """Base class of expression nodes; adds simplifying arithmetic."""

    __slots__ = ()

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __neg__(self):
        return neg(self)

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True, eq=True, slots=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=True, slots=True)
class Var(Expr):
    kind: str
    index: int = 0

    @property
    def name(self) -> str:
        if self.kind == STATE:
            return f"x{self.index + 1}"
        if self.kind == CONTROL:
            return f"u{self.index + 1}"
        if self.kind == TIME:
            return "t"
        if self.kind == FINAL_TIME:
            return "tf"
        if self.kind == STATE_INITIAL:
            return f"x{self.index + 1}_0"
        if self.kind == STATE_FINAL:
            return f"x{self.index + 1}_f"
        return f"p{self.index}"


@dataclass(frozen=True, eq=True, slots=True)
class Unary(Expr):
    op: str
    child: Expr


@dataclass(frozen=True, eq=True, slots=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return Const(float(value))


def var_sort_key(v: Var):
    return (_KIND_ORDER[v.kind], v.index)


def state(i: int) -> Var:
    return Var(STATE, i)


def control(i: int) -> Var:
    return Var(CONTROL, i)


T = Var(TIME)
TF = Var(FINAL_TIME)


# ---------------------------------------------------------------------------
# simplifying constructors (constant folding and 0/1 absorption only)


def _is_const(e, value=None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def _fold(e: Expr) -> Expr:
    try:
        with np.errstate(all="raise"):
            v = evaluate(e, {})
    except (DomainError, FloatingPointError, OverflowError):
        return e
    if not math.isfinite(v):
        return e
    return Const(float(v))


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    return Binary("add", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    return Binary("sub", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a, -1.0):
        return neg(b)
    if _is_const(b, -1.0):
        return neg(a)
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    return Binary("mul", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return Const(0.0)
    if _is_const(a) and _is_const(b):
        return _fold(Binary("div", a, b))
    return Binary("div", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return Const(1.0)
    if _is_const(a) and _is_const(b):
        return _fold(Binary("pow", a, b))
    return Binary("pow", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.child
    return Unary("neg", a)


def func(op: str, a: Expr) -> Expr:
    if op == "neg":
        return neg(a)
    if isinstance(a, Const):
        return _fold(Unary(op, a))
    return Unary(op, a)


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z][A-Za-z0-9]*(?:_[0f])?)
  | (?P<suffix>\[j\])
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)

_STATE_RE = re.compile(r"x(\d+)(?:_([0f]))?$")
_CONTROL_RE = re.compile(r"u(\d+)$")


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str, n_st: int, n_ctr: int):
        self.text = text
        self.n_st = n_st
        self.n_ctr = n_ctr
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        return ExprSyntaxError(message, _byte_offset(self.text, tok[2]))

    def expect(self, value):
        tok = self.take()
        if tok[1] != value:
            raise self.error(f"expected {value!r}", tok)
        return tok

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            raise self.error("empty expression")
        e = self.expr()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected token {self.peek()[1]!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = "add" if self.take()[1] == "+" else "sub"
            e = Binary(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = "mul" if self.take()[1] == "*" else "div"
            e = Binary(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.peek()[1] == "-":
            self.take()
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return Binary("pow", base, self.unary())
        return base

    def atom(self) -> Expr:
        tok = self.take()
        kind, value, _ = tok
        if kind == "number":
            return Const(float(value))
        if value == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "ident":
            if self.peek()[1] == "(":
                return self.call(tok)
            if value in FUNCTIONS:
                raise self.error(f"function {value!r} needs an argument list")
            var = self.variable(tok)
            if self.peek()[0] == "suffix":
                self.take()
            return var
        if kind == "end":
            raise self.error("unexpected end of expression", tok)
        raise self.error(f"unexpected token {value!r}", tok)

    def call(self, tok) -> Expr:
        name = tok[1]
        if name not in FUNCTIONS:
            raise UnknownVariable(f"unknown function {name!r}")
        self.expect("(")
        if self.peek()[1] == ")":
            raise ArityError(f"{name}() takes exactly one argument, got 0")
        arg = self.expr()
        if self.peek()[1] == ",":
            count = 1
            while self.peek()[1] == ",":
                self.take()
                self.expr()
                count += 1
            raise ArityError(f"{name}() takes exactly one argument, got {count}")
        self.expect(")")
        return Unary(name, arg)

    def variable(self, tok) -> Var:
        name = tok[1]
        if name == "t":
            return Var(TIME)
        if name == "tf":
            return Var(FINAL_TIME)
        m = _STATE_RE.match(name)
        if m:
            i = int(m.group(1))
            if not 1 <= i <= self.n_st:
                raise UnknownVariable(f"{name!r}: state index out of range 1..{self.n_st}")
            kind = {None: STATE, "0": STATE_INITIAL, "f": STATE_FINAL}[m.group(2)]
            return Var(kind, i - 1)
        m = _CONTROL_RE.match(name)
        if m:
            i = int(m.group(1))
            if not 1 <= i <= self.n_ctr:
                raise UnknownVariable(f"{name!r}: control index out of range 1..{self.n_ctr}")
            return Var(CONTROL, i - 1)
        raise UnknownVariable(f"unknown variable {name!r}")


def parse(text: str, n_st: int, n_ctr: int) -> Expr:
    """Parse ``text`` into an expression tree.

    Variables are ``x1..x{n_st}``, ``u1..u{n_ctr}``, ``t`` and ``tf``; the
    endpoint symbols ``x{i}_0`` and ``x{i}_f`` are accepted for Mayer terms.
    A trailing ``[j]`` on a variable is ignored.  Precedence, highest first:
    ``^`` (right associative), unary minus, ``* /``, ``+ -``.
    """
    return _Parser(text, n_st, n_ctr).parse()


# ---------------------------------------------------------------------------
# printing

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return 3
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return 0
    return 5


def _wrap(e: Expr, min_prec: int) -> str:
    s = to_text(e)
    return f"({s})" if _prec(e) < min_prec else s


def to_text(e: Expr) -> str:
    """Render ``e`` in the parser's syntax with the fewest parentheses."""
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            return "-" + _wrap(e.child, 3)
        return f"{e.op}({to_text(e.child)})"
    p = _PREC[e.op]
    if e.op == "pow":
        return f"{_wrap(e.left, 5)}^{_wrap(e.right, 3)}"
    return f"{_wrap(e.left, p)} {_SYMBOL[e.op]} {_wrap(e.right, p + 1)}"


# ---------------------------------------------------------------------------
# structure


def walk(e: Expr) -> Iterable[Expr]:
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Unary):
            stack.append(node.child)
        elif isinstance(node, Binary):
            stack.append(node.right)
            stack.append(node.left)


def sparsity(e: Expr) -> frozenset:
    """All :class:`Var` nodes reachable in ``e`` (structural, not value based)."""
    return frozenset(node for node in walk(e) if isinstance(node, Var))


def substitute(e: Expr, mapping: Mapping[Var, Expr]) -> Expr:
    if isinstance(e, Var):
        return mapping.get(e, e)
    if isinstance(e, Const):
        return e
    if isinstance(e, Unary):
        child = substitute(e.child, mapping)
        return e if child is e.child else Unary(e.op, child)
    left = substitute(e.left, mapping)
    right = substitute(e.right, mapping)
    if left is e.left and right is e.right:
        return e
    return Binary(e.op, left, right)


def depth(e: Expr) -> int:
    if isinstance(e, Unary):
        return 1 + depth(e.child)
    if isinstance(e, Binary):
        return 1 + max(depth(e.left), depth(e.right))
    return 0


# ---------------------------------------------------------------------------
# dual numbers


class Dual:
    """Forward-mode dual number carrying ``k`` tangent directions.

    ``val`` is a float or an array of shape ``S``; ``der`` has shape ``(k, *S)``.
    """

    __slots__ = ("val", "der")

    def __init__(self, val, der):
        self.val = val
        self.der = der

    def __repr__(self):
        return f"Dual({self.val!r}, {self.der!r})"


def _unpack(a):
    if isinstance(a, Dual):
        return a.val, a.der
    return a, None


def _scale(factor, der):
    return None if der is None else factor * der


def _plus(d1, d2):
    if d1 is None:
        return d2
    if d2 is None:
        return d1
    return d1 + d2


def _make(val, der):
    return val if der is None else Dual(val, der)


def _is_integer_const(e: Expr) -> bool:
    return isinstance(e, Const) and float(e.value).is_integer() and abs(e.value) <= 64


def _ipow(a, n: int):
    if n == 0:
        return np.ones_like(a) if isinstance(a, np.ndarray) else 1.0
    if n < 0:
        base = _ipow(a, -n)
        _check(np.any(base == 0), "division by zero in negative integer power")
        return 1.0 / base
    result = None
    square = a
    while n:
        if n & 1:
            result = square if result is None else result * square
        n >>= 1
        if n:
            square = square * square
    return result


def _check(bad, message):
    if bad:
        raise DomainError(message)


def _v_sqrt(a):
    _check(np.any(a < 0), "sqrt of negative value")
    return np.sqrt(a)


def _v_log(a):
    _check(np.any(a <= 0), "log of nonpositive value")
    return np.log(a)


_UNARY_VALUE: dict[str, Callable] = {
    "neg": lambda a: -a,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "atan": np.arctan,
    "sqrt": _v_sqrt,
    "exp": np.exp,
    "log": _v_log,
    "abs": np.abs,
    "tanh": np.tanh,
    "sign": np.sign,
}

# derivative given (argument value, function value)
_UNARY_SLOPE: dict[str, Callable] = {
    "neg": lambda a, f: -1.0,
    "sin": lambda a, f: np.cos(a),
    "cos": lambda a, f: -np.sin(a),
    "tan": lambda a, f: 1.0 + f * f,
    "atan": lambda a, f: 1.0 / (1.0 + a * a),
    "sqrt": lambda a, f: 0.5 / f,
    "exp": lambda a, f: f,
    "log": lambda a, f: 1.0 / a,
    "abs": lambda a, f: np.sign(a),
    "tanh": lambda a, f: 1.0 - f * f,
    "sign": lambda a, f: 0.0 * a,
}


def _apply_unary(op, a):
    av, ad = _unpack(a)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        fv = _UNARY_VALUE[op](av)
        if ad is None:
            return fv
        return Dual(fv, _UNARY_SLOPE[op](av, fv) * ad)


def _apply_binary(op, a, b, int_exponent=None):
    av, ad = _unpack(a)
    bv, bd = _unpack(b)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if op == "add":
            return _make(av + bv, _plus(ad, bd))
        if op == "sub":
            return _make(av - bv, _plus(ad, _scale(-1.0, bd)))
        if op == "mul":
            return _make(av * bv, _plus(_scale(bv, ad), _scale(av, bd)))
        if op == "div":
            _check(np.any(bv == 0), "division by zero")
            q = av / bv
            der = None
            if ad is not None or bd is not None:
                der = _plus(_scale(1.0 / bv, ad), _scale(-q / bv, bd))
            return _make(q, der)
        # pow
        if int_exponent is not None:
            n = int_exponent
            val = _ipow(av, n)
            if ad is None:
                return val
            if n == 0:
                return Dual(val, 0.0 * ad)
            return Dual(val, (n * _ipow(av, n - 1)) * ad)
        _check(np.any(av < 0), "non-integer power of negative base")
        _check(np.any((av == 0) & (bv < 0)), "zero base with negative exponent")
        val = np.power(av, bv)
        der = None
        if ad is not None:
            # d/da a^b = b a^(b-1); written without a division so a = 0 is safe
            der = _scale(bv * np.power(av, bv - 1.0), ad)
        if bd is not None:
            _check(np.any(av <= 0), "log of nonpositive base in power derivative")
            der = _plus(der, _scale(val * np.log(av), bd))
        return _make(val, der)


def evaluate(e: Expr, lookup: Mapping[Var, object] | Callable):
    """Evaluate ``e`` with variable values taken from ``lookup``.

    ``lookup`` maps :class:`Var` to a float, an array or a :class:`Dual`; a
    callable is used as ``lookup(var)``.
    """
    get = lookup if callable(lookup) else lookup.__getitem__
    return _eval(e, get)


def _eval(e, get):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return get(e)
        except (KeyError, IndexError) as exc:
            raise ExprError(f"no value for variable {e.name}") from exc
    if isinstance(e, Unary):
        return _apply_unary(e.op, _eval(e.child, get))
    left = _eval(e.left, get)
    if e.op == "pow" and _is_integer_const(e.right):
        return _apply_binary("pow", left, None, int_exponent=int(e.right.value))
    return _apply_binary(e.op, left, _eval(e.right, get))


# ---------------------------------------------------------------------------
# environments


@dataclass(frozen=True)
class EvalEnv:
    """Values of every symbol an expression may reference (times in s)."""

    x: tuple = ()
    u: tuple = ()
    t: float = 0.0
    tf: float = float("nan")
    x_initial: tuple | None = None
    x_final: tuple | None = None

    def __post_init__(self):
        for name in ("x", "u", "x_initial", "x_final"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(float(v) for v in np.ravel(value)))

    def lookup(self, v: Var) -> float:
        if v.kind == TIME:
            return float(self.t)
        if v.kind == FINAL_TIME:
            return float(self.tf)
        source = {
            STATE: self.x,
            CONTROL: self.u,
            STATE_INITIAL: self.x_initial,
            STATE_FINAL: self.x_final,
        }.get(v.kind)
        if source is None or not 0 <= v.index < len(source):
            raise ExprError(f"environment has no value for {v.name}")
        return source[v.index]

    def variables(self, uses: frozenset = frozenset()) -> list[Var]:
        """Canonical derivative ordering: states, controls, t, then tf and endpoints if used."""
        out = [Var(STATE, i) for i in range(len(self.x))]
        out += [Var(CONTROL, i) for i in range(len(self.u))]
        out.append(Var(TIME))
        if Var(FINAL_TIME) in uses:
            out.append(Var(FINAL_TIME))
        for kind in (STATE_INITIAL, STATE_FINAL):
            extra = sorted((v for v in uses if v.kind == kind), key=var_sort_key)
            out += extra
        return out


def eval(e: Expr, env: EvalEnv) -> float:  # noqa: A001 - mirrors the operation name
    """Evaluate ``e`` at a single point."""
    return float(evaluate(e, env.lookup))


# ---------------------------------------------------------------------------
# symbolic differentiation


def diff_symbolic(e: Expr, v: Var) -> Expr:
    """Partial derivative of ``e`` with respect to ``v`` as a new tree.

    ``abs`` differentiates to ``sign`` with sign(0) = 0.
    """
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0 if e == v else 0.0)
    if isinstance(e, Unary):
        da = diff_symbolic(e.child, v)
        if _is_const(da, 0.0):
            return Const(0.0)
        a = e.child
        op = e.op
        if op == "neg":
            return neg(da)
        if op == "sin":
            slope = func("cos", a)
        elif op == "cos":
            slope = neg(func("sin", a))
        elif op == "tan":
            slope = add(Const(1.0), power(e, Const(2.0)))
        elif op == "atan":
            slope = div(Const(1.0), add(Const(1.0), power(a, Const(2.0))))
        elif op == "sqrt":
            return div(da, mul(Const(2.0), e))
        elif op == "exp":
            slope = e
        elif op == "log":
            return div(da, a)
        elif op == "abs":
            slope = func("sign", a)
        elif op == "tanh":
            slope = sub(Const(1.0), power(e, Const(2.0)))
        elif op == "sign":
            return Const(0.0)
        else:
            raise ExprError(f"unknown unary op {op}")
        return mul(slope, da)
    a, b = e.left, e.right
    da = diff_symbolic(a, v)
    db = diff_symbolic(b, v)
    if e.op == "add":
        return add(da, db)
    if e.op == "sub":
        return sub(da, db)
    if e.op == "mul":
        return add(mul(da, b), mul(a, db))
    if e.op == "div":
        # (da*b - a*db) / b^2
        return div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
    # pow
    if isinstance(b, Const):
        if _is_const(da, 0.0):
            return Const(0.0)
        return mul(mul(b, power(a, Const(b.value - 1.0))), da)
    term_a = Const(0.0) if _is_const(da, 0.0) else mul(mul(b, power(a, sub(b, Const(1.0)))), da)
    term_b = Const(0.0) if _is_const(db, 0.0) else mul(mul(e, func("log", a)), db)
    return add(term_a, term_b)


# ---------------------------------------------------------------------------
# colouring and compressed derivatives


def greedy_coloring(columns: list[Iterable[int]]) -> list[int]:
    """Greedy distance-2 colouring of a column pattern.

    ``columns[j]`` holds the structural row indices of column ``j``; two columns
    that share a row never share a colour, so each row of a colour group has
    at most one structural nonzero.
    """
    colors: list[int] = []
    row_colors: dict[int, set] = {}
    for rows in columns:
        rows = list(rows)
        used = set()
        for r in rows:
            used |= row_colors.get(r, set())
        c = 0
        while c in used:
            c += 1
        colors.append(c)
        for r in rows:
            row_colors.setdefault(r, set()).add(c)
    return colors


def _seeded(lookup_get, support, seeds, k, shape_of):
    def get(v):
        value = lookup_get(v)
        pos = seeds.get(v)
        if pos is None:
            return value
        arr = np.asarray(value, dtype=float)
        der = np.zeros((k,) + arr.shape)
        der[pos] = 1.0
        return Dual(value, der)

    return get


class CompiledExpr:
    """An expression bundled with its symbolic gradient and Hessian structure.

    ``support`` lists the differentiable variables (parameters excluded).
    ``hess_pairs`` lists the structural lower-triangle pairs ``(a, b)`` with
    ``a >= b`` indexing into ``support``.
    """

    def __init__(self, e: Expr):
        self.expr = e
        self.support = sorted((v for v in sparsity(e) if v.kind != PARAM), key=var_sort_key)
        self.position = {v: i for i, v in enumerate(self.support)}
        self.grad_exprs = [diff_symbolic(e, v) for v in self.support]
        pattern = []
        for g in self.grad_exprs:
            pattern.append({self.position[w] for w in sparsity(g) if w in self.position})
        # symmetrise: structural second derivatives are symmetric, but symbolic
        # simplification may hide one side
        for a, rows in enumerate(pattern):
            for b in list(rows):
                pattern[b].add(a)
        self.pattern = pattern
        self.colors = greedy_coloring(pattern)
        self.n_colors = max(self.colors, default=-1) + 1
        pairs = []
        for a, rows in enumerate(pattern):
            for b in sorted(rows):
                if b <= a:
                    pairs.append((a, b))
        self.hess_pairs = pairs

    def value(self, lookup):
        get = lookup if callable(lookup) else lookup.__getitem__
        return _eval(self.expr, get)

    def gradient(self, lookup):
        """Return ``(value, grads)`` with ``grads[i]`` the derivative along ``support[i]``."""
        get = lookup if callable(lookup) else lookup.__getitem__
        k = len(self.support)
        seeds = {v: i for i, v in enumerate(self.support)}
        out = _eval(self.expr, _seeded(get, self.support, seeds, k, None))
        value, der = _unpack(out)
        shape = np.shape(value)
        if der is None:
            der = np.zeros((k,) + shape)
        else:
            der = np.broadcast_to(der, (k,) + shape) if np.shape(der) != (k,) + shape else der
        return value, der

    def hessian(self, lookup):
        """Second derivatives for ``hess_pairs``; shape ``(len(hess_pairs), *S)``."""
        get = lookup if callable(lookup) else lookup.__getitem__
        k = self.n_colors
        seeds = {v: self.colors[i] for i, v in enumerate(self.support)}
        seeded = _seeded(get, self.support, seeds, k, None)
        rows = {}
        needed = sorted({a for a, _ in self.hess_pairs})
        for a in needed:
            rows[a] = _unpack(_eval(self.grad_exprs[a], seeded))
        shape = None
        out = []
        for a, b in self.hess_pairs:
            val, der = rows[a]
            if shape is None:
                shape = np.shape(val)
            if der is None:
                out.append(np.zeros(np.shape(val)))
            else:
                out.append(np.broadcast_to(der[self.colors[b]], np.shape(val)))
        if not out:
            return np.zeros((0,))
        return np.array(out, dtype=float)


def grad(e: Expr, env: EvalEnv) -> np.ndarray:
    """Gradient of ``e`` over ``env.variables(sparsity(e))``."""
    c = CompiledExpr(e)
    variables = env.variables(sparsity(e))
    _, der = c.gradient(env.lookup)
    out = np.zeros(len(variables))
    index = {v: i for i, v in enumerate(variables)}
    for i, v in enumerate(c.support):
        out[index[v]] = float(der[i])
    return out


def hessian(e: Expr, env: EvalEnv) -> dict:
    """Sparse symmetric Hessian as ``{(v, w): value}`` holding both orientations.

    Only structurally possible pairs appear.
    """
    c = CompiledExpr(e)
    values = c.hessian(env.lookup)
    out = {}
    for (a, b), val in zip(c.hess_pairs, values):
        va, vb = c.support[a], c.support[b]
        out[(va, vb)] = float(val)
        out[(vb, va)] = float(val)
    return out
