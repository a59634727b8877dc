"""A small expression language for vector fields, guards and signals.

Grammar (EBNF)::

    expr    = term , { ("+" | "-") , term } ;
    term    = power , { ("*" | "/") , power } ;
    power   = unary , { "^" , unary } ;          (* left-associative *)
    unary   = ("-" | "+") , unary | primary ;
    primary = number | name | name , "(" , expr , { "," , expr } , ")"
            | "(" , expr , ")" ;
    number  = digits , [ "." , digits ] , [ ("e" | "E") , [ "+" | "-" ] , digits ] ;

Unary minus binds tighter than ``^``, so ``-x^2`` means ``(-x)^2``.

Functions: ``sin cos exp log sqrt abs`` take one argument, ``min max`` take
two. ``pi`` is a predefined constant. There is no conditional expression:
discontinuities live in guards and switching signals.

Trees are immutable; :func:`evaluate` is a plain recursive interpreter and
:func:`compile_scalar` / :func:`compile_vectorized` / :func:`to_bytecode`
produce fast evaluators for integration and grid sampling.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import ExprError

__all__ = [
    "Const", "Var", "Unary", "Binary", "Call", "ExprNode", "GuardExpr",
    "parse_expr", "parse_guard", "evaluate", "diff", "simplify", "to_text",
    "free_vars", "substitute", "compile_scalar", "compile_vectorized", "to_bytecode",
    "FUNCTIONS",
]


@dataclass(frozen=True)
class Const:
    value: float

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Unary:
    op: str
    child: "ExprNode"

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "ExprNode"
    right: "ExprNode"

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple

    def __str__(self):
        return to_text(self)


ExprNode = Union[Const, Var, Unary, Binary, Call]

# name -> arity. ``sign`` and ``step`` only appear in derivatives and are not parseable.
FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "log": 1, "sqrt": 1, "abs": 1, "min": 2, "max": 2}
_INTERNAL = {"sign": 1, "step": 1}
RESERVED_CONSTANTS = {"pi": math.pi}

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op><=|>=|[-+*/^(),<>]))"
)


def _tokenize(src: str):
    tokens = []
    pos = 0
    n = len(src)
    while pos < n:
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            if src[pos:].strip() == "":
                break
            line, col = _line_col(src, pos + (len(src[pos:]) - len(src[pos:].lstrip())))
            raise ExprError(f"unexpected character {src[pos:].lstrip()[:1]!r}", line, col)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


def _line_col(src: str, pos: int):
    line = src.count("\n", 0, pos) + 1
    col = pos - (src.rfind("\n", 0, pos) + 1) + 1
    return line, col


class _Parser:
    def __init__(self, src, allowed, constants, macros):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0
        self.allowed = allowed
        self.constants = constants
        self.macros = macros

    def error(self, msg, tok=None):
        tok = tok or self.tokens[self.i]
        line, col = _line_col(self.src, tok[2])
        raise ExprError(msg, line, col)

    def peek(self):
        return self.tokens[self.i]

    def take(self, value=None):
        tok = self.tokens[self.i]
        if value is not None and tok[1] != value:
            found = "end of input" if tok[0] == "end" else repr(tok[1])
            self.error(f"expected {value!r}, found {found}")
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.power()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.power())
        return node

    def power(self):
        node = self.unary()
        while self.peek()[1] == "^":
            self.take()
            node = Binary("^", node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] in ("-", "+"):
            self.take()
            child = self.unary()
            return Unary("-", child) if tok[1] == "-" else child
        return self.primary()

    def primary(self):
        tok = self.peek()
        kind, text, _ = tok
        if kind == "num":
            self.take()
            return Const(float(text))
        if kind == "name":
            self.take()
            if self.peek()[1] == "(":
                return self.call(text, tok)
            if text in self.macros:
                return self.macros[text]
            if text in self.constants:
                return Const(float(self.constants[text]))
            if text in RESERVED_CONSTANTS and (self.allowed is None or text not in self.allowed):
                return Const(RESERVED_CONSTANTS[text])
            if text in FUNCTIONS:
                self.error(f"function {text!r} used without arguments", tok)
            if self.allowed is not None and text not in self.allowed:
                self.error(f"undeclared identifier {text!r}", tok)
            return Var(text)
        if text == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        if kind == "end":
            self.error("unexpected end of input")
        self.error(f"unexpected token {text!r}")

    def call(self, name, tok):
        if name not in FUNCTIONS:
            self.error(f"unknown function {name!r}", tok)
        self.take("(")
        args = [self.expr()]
        while self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.take(")")
        if len(args) != FUNCTIONS[name]:
            self.error(f"{name}() takes {FUNCTIONS[name]} argument(s), got {len(args)}", tok)
        return Call(name, tuple(args))


def parse_expr(
    source: str,
    allowed_vars: Iterable[str] | None = None,
    constants: Mapping[str, float] | None = None,
    macros: Mapping[str, ExprNode] | None = None,
) -> ExprNode:
    """Parse ``source`` into an expression tree.

    Parameters
    ----------
    allowed_vars
        Identifiers that may remain as variables. ``None`` accepts any name.
    constants
        Named parameters, substituted by their values at parse time.
    macros
        Named sub-expressions, substituted as trees.

    Raises
    ------
    ExprError
        On syntax errors (with line/column), undeclared identifiers, unknown
        functions or wrong arity.
    """
    if not isinstance(source, str) or not source.strip():
        raise ExprError("empty expression")
    allowed = None if allowed_vars is None else set(allowed_vars)
    return _Parser(source, allowed, dict(constants or {}), dict(macros or {})).parse()


@dataclass(frozen=True)
class GuardExpr:
    """Inequality ``lhs <rel> rhs``; its boundary is the zero set of ``lhs - rhs``."""

    lhs: ExprNode
    relation: str
    rhs: ExprNode

    def residual(self) -> ExprNode:
        """Expression that is ``<= 0`` on the closure of the guarded region."""
        if self.relation in ("<=", "<"):
            return simplify(Binary("-", self.lhs, self.rhs))
        return simplify(Binary("-", self.rhs, self.lhs))

    @property
    def strict(self) -> bool:
        return self.relation in ("<", ">")

    def holds(self, bindings: Mapping[str, float]) -> bool:
        r = evaluate(self.residual(), bindings)
        return r < 0 if self.strict else r <= 0

    def __str__(self):
        return f"{to_text(self.lhs)} {self.relation} {to_text(self.rhs)}"


def parse_guard(source, allowed_vars=None, constants=None, macros=None) -> GuardExpr:
    """Parse ``"<expr> <rel> <expr>"`` with ``rel`` one of ``<= < >= >``."""
    m = re.search(r"<=|>=|<|>", source or "")
    if m is None:
        raise ExprError(f"guard {source!r} has no relation (<=, <, >=, >)")
    if re.search(r"<=|>=|<|>", source[m.end():]):
        raise ExprError(f"guard {source!r} has more than one relation")
    lhs = parse_expr(source[: m.start()], allowed_vars, constants, macros)
    rhs = parse_expr(source[m.end():], allowed_vars, constants, macros)
    return GuardExpr(lhs, m.group(0), rhs)


# ---------------------------------------------------------------- printing

def _fmt_const(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        s = str(int(v))
    else:
        s = repr(float(v))
    return f"({s})" if v < 0 or s.startswith("-") else s


def to_text(e: ExprNode) -> str:
    """Canonical text with minimal parentheses; ``parse_expr(to_text(e))`` rebuilds ``e``."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_text(a) for a in e.args)})"
    if isinstance(e, Unary):
        inner = to_text(e.child)
        if isinstance(e.child, Binary):
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Binary):
        p = _PREC[e.op]
        left = to_text(e.left)
        right = to_text(e.right)
        if isinstance(e.left, Binary) and _PREC[e.left.op] < p:
            left = f"({left})"
        if isinstance(e.right, Binary) and _PREC[e.right.op] <= p:
            right = f"({right})"
        if e.op == "^":
            return f"{left}^{right}"
        return f"{left} {e.op} {right}"
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------- evaluation

def _ieee_div(a, b):
    try:
        return a / b
    except ZeroDivisionError:
        if a == 0 or math.isnan(a):
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)


def _ieee_pow(a, b):
    try:
        return math.pow(a, b)
    except (ValueError, OverflowError):
        # C pow semantics for the edge cases: 0^-1 = inf, (-10)^401 = -inf, (-1)^0.5 = nan
        with np.errstate(all="ignore"):
            return float(np.power(np.float64(a), np.float64(b)))


def _ieee_exp(a):
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


def _ieee_log(a):
    if a > 0:
        return math.log(a)
    return -math.inf if a == 0 else math.nan


def _ieee_sqrt(a):
    return math.sqrt(a) if a >= 0 else math.nan


def _sign(a):
    return 1.0 if a > 0 else (-1.0 if a < 0 else 0.0)


def _step(a):
    return 1.0 if a >= 0 else 0.0


# nan-propagating, matching np.minimum / np.maximum
def _fmax(a, b):
    return a if a >= b or a != a else b


def _fmin(a, b):
    return a if a <= b or a != a else b


_SCALAR_FUNCS = {
    "sin": math.sin, "cos": math.cos, "exp": _ieee_exp, "log": _ieee_log,
    "sqrt": _ieee_sqrt, "abs": abs, "sign": _sign, "step": _step,
    "min": _fmin, "max": _fmax,
}


def evaluate(e: ExprNode, bindings: Mapping[str, float]) -> float:
    """Evaluate ``e`` in IEEE double precision.

    Raises
    ------
    ExprError
        If a variable is not bound.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(bindings[e.name])
        except KeyError:
            raise ExprError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Unary):
        return -evaluate(e.child, bindings)
    if isinstance(e, Binary):
        a = evaluate(e.left, bindings)
        b = evaluate(e.right, bindings)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            return _ieee_div(a, b)
        return _ieee_pow(a, b)
    if isinstance(e, Call):
        return float(_SCALAR_FUNCS[e.func](*(evaluate(a, bindings) for a in e.args)))
    raise TypeError(f"not an expression node: {e!r}")


def free_vars(e: ExprNode) -> set:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    if isinstance(e, Unary):
        return free_vars(e.child)
    if isinstance(e, Binary):
        return free_vars(e.left) | free_vars(e.right)
    out = set()
    for a in e.args:
        out |= free_vars(a)
    return out


def substitute(e: ExprNode, mapping: Mapping[str, ExprNode]) -> ExprNode:
    """Replace variables by sub-trees."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Const):
        return e
    if isinstance(e, Unary):
        return Unary(e.op, substitute(e.child, mapping))
    if isinstance(e, Binary):
        return Binary(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
    return Call(e.func, tuple(substitute(a, mapping) for a in e.args))


# ---------------------------------------------------------------- differentiation

def _is(e, v):
    return isinstance(e, Const) and e.value == v


def simplify(e: ExprNode) -> ExprNode:
    """Constant folding plus the identities ``x+0``, ``x*1``, ``x*0``, ``x^1``.

    Not a CAS: the goal is keeping derivative trees small. The zero
    identities (``x*0 -> 0``, ``0/x -> 0``) assume finite operands, so the
    result can differ from the original where the original is inf or nan.
    """
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Unary):
        c = simplify(e.child)
        if isinstance(c, Const):
            return Const(-c.value)
        if isinstance(c, Unary):
            return c.child
        return Unary("-", c)
    if isinstance(e, Call):
        args = tuple(simplify(a) for a in e.args)
        if all(isinstance(a, Const) for a in args):
            return Const(float(_SCALAR_FUNCS[e.func](*(a.value for a in args))))
        return Call(e.func, args)
    a, b = simplify(e.left), simplify(e.right)
    op = e.op
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(evaluate(Binary(op, a, b), {}))
    if op == "+":
        if _is(a, 0):
            return b
        if _is(b, 0):
            return a
        if isinstance(b, Unary):
            return Binary("-", a, b.child)
    elif op == "-":
        if _is(b, 0):
            return a
        if _is(a, 0):
            return simplify(Unary("-", b))
        if isinstance(b, Unary):
            return Binary("+", a, b.child)
    elif op == "*":
        if _is(a, 0) or _is(b, 0):
            return Const(0.0)
        if _is(a, 1):
            return b
        if _is(b, 1):
            return a
        if _is(a, -1):
            return simplify(Unary("-", b))
        if _is(b, -1):
            return simplify(Unary("-", a))
    elif op == "/":
        if _is(a, 0):
            return Const(0.0)
        if _is(b, 1):
            return a
    elif op == "^":
        if _is(b, 1):
            return a
        if _is(b, 0):
            return Const(1.0)
    return Binary(op, a, b)


def diff(e: ExprNode, wrt: str) -> ExprNode:
    """Symbolic derivative of ``e`` with respect to variable ``wrt``.

    Conventions at non-smooth points: ``d|u| = sign(u) du`` with
    ``sign(0) = 0``; ``min``/``max`` follow the active argument and ties go
    to the first argument.
    """
    return simplify(_d(e, wrt))


def _d(e, x):
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0 if e.name == x else 0.0)
    if isinstance(e, Unary):
        return Unary("-", _d(e.child, x))
    if isinstance(e, Binary):
        u, v = e.left, e.right
        du, dv = _d(u, x), _d(v, x)
        if e.op in ("+", "-"):
            return Binary(e.op, du, dv)
        if e.op == "*":
            return Binary("+", Binary("*", du, v), Binary("*", u, dv))
        if e.op == "/":
            return Binary("/", Binary("-", Binary("*", du, v), Binary("*", u, dv)), Binary("^", v, Const(2.0)))
        # power
        if x not in free_vars(v):
            return Binary("*", Binary("*", v, Binary("^", u, Binary("-", v, Const(1.0)))), du)
        return Binary(
            "*", e,
            Binary("+", Binary("*", dv, Call("log", (u,))), Binary("/", Binary("*", v, du), u)),
        )
    f = e.func
    if f in ("sign", "step"):
        return Const(0.0)
    if f in ("min", "max"):
        a, b = e.args
        da, db = _d(a, x), _d(b, x)
        gap = Binary("-", a, b) if f == "max" else Binary("-", b, a)
        pick_a = Call("step", (gap,))
        return Binary("+", Binary("*", pick_a, da), Binary("*", Binary("-", Const(1.0), pick_a), db))
    (u,) = e.args
    du = _d(u, x)
    if f == "sin":
        outer = Call("cos", (u,))
    elif f == "cos":
        outer = Unary("-", Call("sin", (u,)))
    elif f == "exp":
        outer = e
    elif f == "log":
        outer = Binary("/", Const(1.0), u)
    elif f == "sqrt":
        outer = Binary("/", Const(0.5), e)
    elif f == "abs":
        outer = Call("sign", (u,))
    else:  # pragma: no cover
        raise ExprError(f"cannot differentiate {f}")
    return Binary("*", outer, du)


# ---------------------------------------------------------------- compilation

_NP_FUNCS = {
    "sin": "np.sin", "cos": "np.cos", "exp": "np.exp", "log": "np.log", "sqrt": "np.sqrt",
    "abs": "np.abs", "sign": "np.sign", "step": "_np_step", "min": "np.minimum", "max": "np.maximum",
}
_PY_FUNCS = {
    "sin": "_sin", "cos": "_cos", "exp": "_exp", "log": "_log", "sqrt": "_sqrt",
    "abs": "abs", "sign": "_sign", "step": "_step", "min": "_fmin", "max": "_fmax",
}


def _np_step(a):
    return np.where(a >= 0, 1.0, 0.0)


def _source(e, names, vectorized):
    if isinstance(e, Const):
        # numpy scalars keep IEEE semantics (0/0 -> nan) when both operands are constant
        return f"np.float64({float(e.value)!r})" if vectorized else repr(float(e.value))
    if isinstance(e, Var):
        if e.name not in names:
            raise ExprError(f"unbound variable {e.name!r}")
        return names[e.name]
    if isinstance(e, Unary):
        return f"(-{_source(e.child, names, vectorized)})"
    if isinstance(e, Binary):
        a = _source(e.left, names, vectorized)
        b = _source(e.right, names, vectorized)
        if e.op == "^":
            if vectorized:
                return f"np.power({a}, {b})"
            if isinstance(e.left, Var) and _is(e.right, 2):
                return f"({a} * {a})"
            return f"_pow({a}, {b})"
        if e.op == "/" and not vectorized and not (isinstance(e.right, Const) and e.right.value != 0):
            return f"_div({a}, {b})"
        return f"({a} {e.op} {b})"
    table = _NP_FUNCS if vectorized else _PY_FUNCS
    return f"{table[e.func]}({', '.join(_source(a, names, vectorized) for a in e.args)})"


_PY_NAMESPACE = {
    "_sin": math.sin, "_cos": math.cos, "_exp": _ieee_exp, "_log": _ieee_log, "_sqrt": _ieee_sqrt,
    "_sign": _sign, "_step": _step, "_fmin": _fmin, "_fmax": _fmax, "_pow": _ieee_pow,
    "_div": _ieee_div,
}


def compile_scalar(exprs: Sequence[ExprNode], var_names: Sequence[str]) -> Callable:
    """Compile expressions into ``f(*values) -> tuple`` of floats.

    Variables are positional in ``var_names`` order.
    """
    names = {v: f"v{i}" for i, v in enumerate(var_names)}
    body = ", ".join(_source(e, names, False) for e in exprs)
    args = ", ".join(names[v] for v in var_names)
    src = f"def _f({args}):\n    return ({body}{',' if len(exprs) == 1 else ''})\n"
    ns = dict(_PY_NAMESPACE)
    exec(compile(src, "<contrakt-expr>", "exec"), ns)
    return ns["_f"]


def compile_vectorized(exprs: Sequence[ExprNode], var_names: Sequence[str]) -> Callable:
    """Compile expressions into ``f(*arrays) -> list`` of broadcast numpy arrays."""
    names = {v: f"v{i}" for i, v in enumerate(var_names)}
    body = ", ".join(_source(e, names, True) for e in exprs)
    args = ", ".join(names[v] for v in var_names)
    src = (
        f"def _f({args}):\n"
        f"    with np.errstate(all='ignore'):\n"
        f"        return [{body}]\n"
    )
    ns = {"np": np, "_np_step": _np_step}
    exec(compile(src, "<contrakt-vexpr>", "exec"), ns)
    return ns["_f"]


# Postfix opcodes consumed by the integration kernels.
OP_CONST, OP_VAR, OP_NEG, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW = range(8)
OP_SIN, OP_COS, OP_EXP, OP_LOG, OP_SQRT, OP_ABS, OP_SIGN, OP_STEP, OP_MIN, OP_MAX = range(8, 18)
_BIN_OPS = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "^": OP_POW}
_CALL_OPS = {
    "sin": OP_SIN, "cos": OP_COS, "exp": OP_EXP, "log": OP_LOG, "sqrt": OP_SQRT, "abs": OP_ABS,
    "sign": OP_SIGN, "step": OP_STEP, "min": OP_MIN, "max": OP_MAX,
}


def to_bytecode(exprs: Sequence[ExprNode], var_names: Sequence[str]):
    """Flatten expressions to postfix code.

    Returns
    -------
    ops : int32 array
    args : float64 array
        Constant value for ``OP_CONST``, variable index for ``OP_VAR``.
    starts : int64 array, length ``len(exprs) + 1``
        Output ``k`` is computed by ``ops[starts[k]:starts[k+1]]``.
    """
    index = {v: i for i, v in enumerate(var_names)}
    ops: list = []
    args: list = []
    starts = [0]

    def emit(e):
        if isinstance(e, Const):
            ops.append(OP_CONST)
            args.append(e.value)
        elif isinstance(e, Var):
            if e.name not in index:
                raise ExprError(f"unbound variable {e.name!r}")
            ops.append(OP_VAR)
            args.append(float(index[e.name]))
        elif isinstance(e, Unary):
            emit(e.child)
            ops.append(OP_NEG)
            args.append(0.0)
        elif isinstance(e, Binary):
            emit(e.left)
            emit(e.right)
            ops.append(_BIN_OPS[e.op])
            args.append(0.0)
        else:
            for a in e.args:
                emit(a)
            ops.append(_CALL_OPS[e.func])
            args.append(0.0)

    for e in exprs:
        emit(e)
        starts.append(len(ops))
    return (
        np.asarray(ops, dtype=np.int32),
        np.asarray(args, dtype=np.float64),
        np.asarray(starts, dtype=np.int64),
    )
