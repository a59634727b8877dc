import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from contrakt import _backend
from contrakt.errors import ExprError
from contrakt.exprlang import (
    Binary, Call, Const, Unary, Var, compile_scalar, compile_vectorized, diff, evaluate, free_vars,
    parse_expr, parse_guard, simplify, substitute, to_bytecode, to_text,
)

from oracles import five_point_difference, random_smooth

# ---------------------------------------------------------------- parsing


@pytest.mark.parametrize("src, value", [
    ("1 + 2 * 3", 7.0),
    ("(1 + 2) * 3", 9.0),
    ("2 ^ 3 ^ 2", 64.0),          # left-associative
    ("-2 ^ 2", 4.0),              # unary minus binds tighter than ^
    ("8 / 4 / 2", 1.0),
    ("10 - 4 - 3", 3.0),
    ("2 * -3", -6.0),
    ("--2", 2.0),
    ("+3", 3.0),
    ("1.5e2 + .5", 150.5),
    ("max(1, 2) - min(1, 2)", 1.0),
    ("sqrt(16) + abs(-3) + log(exp(2))", 9.0),
    ("pi", math.pi),
])
def test_precedence_and_values(src, value):
    assert evaluate(parse_expr(src), {}) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("src, line, col", [
    ("x + * 2", 1, 5),
    ("x +\n  * 2", 2, 3),
    ("sin(x", 1, 6),
    ("foo(x)", 1, 1),
    ("x $ y", 1, 3),
    ("max(x)", 1, 1),
    ("sin", 1, 1),
    ("(x + 1))", 1, 8),
])
def test_parse_errors_carry_position(src, line, col):
    with pytest.raises(ExprError) as info:
        parse_expr(src, allowed_vars=("x", "y"))
    assert (info.value.line, info.value.column) == (line, col)
    assert f"line {line}, column {col}" in str(info.value)


def test_undeclared_and_empty():
    with pytest.raises(ExprError):
        parse_expr("x + z", allowed_vars=("x",))
    with pytest.raises(ExprError):
        parse_expr("   ")
    with pytest.raises(ExprError):
        parse_expr("sign(x)")  # internal function, not part of the language


def test_constants_and_macros():
    e = parse_expr("k * u", allowed_vars=("t",), constants={"k": 2.0},
                   macros={"u": parse_expr("sin(t)")})
    assert free_vars(e) == {"t"}
    assert evaluate(e, {"t": 0.5}) == pytest.approx(2 * math.sin(0.5))


def test_guards():
    g = parse_guard("x - y <= 0.01")
    assert not g.strict
    assert g.holds({"x": 0.01, "y": 0.0})
    assert not g.holds({"x": 0.02, "y": 0.0})
    g = parse_guard("x > 1")
    assert g.strict and not g.holds({"x": 1.0}) and g.holds({"x": 1.5})
    assert evaluate(g.residual(), {"x": 3.0}) == -2.0
    for bad in ("x", "x < 1 < 2", "x <= "):
        with pytest.raises(ExprError):
            parse_guard(bad)


def test_unbound_variable_in_evaluation():
    with pytest.raises(ExprError):
        evaluate(parse_expr("x + 1"), {})


def test_ieee_semantics():
    assert evaluate(parse_expr("1 / 0"), {}) == math.inf
    assert evaluate(parse_expr("-1 / 0"), {}) == -math.inf
    assert math.isnan(evaluate(parse_expr("0 / 0"), {}))
    assert math.isnan(evaluate(parse_expr("sqrt(0 - 1)"), {}))
    assert evaluate(parse_expr("log(0)"), {}) == -math.inf
    assert evaluate(parse_expr("exp(1000)"), {}) == math.inf
    assert evaluate(parse_expr("10 ^ 400"), {}) == math.inf


# ---------------------------------------------------------------- printing

names = st.sampled_from(["x", "y", "t"])
leaves = st.one_of(names.map(Var), st.floats(0, 100, allow_nan=False).map(Const))


def _extend(children):
    return st.one_of(
        st.tuples(st.sampled_from("+-*/^"), children, children).map(lambda a: Binary(*a)),
        children.map(lambda c: Unary("-", c)),
        st.tuples(st.sampled_from(["sin", "cos", "exp", "log", "sqrt", "abs"]), children).map(
            lambda a: Call(a[0], (a[1],))),
        st.tuples(st.sampled_from(["min", "max"]), children, children).map(lambda a: Call(a[0], (a[1], a[2]))),
    )


trees = st.recursive(leaves, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(trees)
def test_text_roundtrip(e):
    assert parse_expr(to_text(e)) == e


@settings(max_examples=300, deadline=None)
@given(trees, st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 3))
def test_simplify_and_compilers_agree(e, x, y, t):
    b = {"x": x, "y": y, "t": t}
    ref = evaluate(e, b)
    vals = [
        compile_scalar([e], ("x", "y", "t"))(x, y, t)[0],
        float(np.ravel(compile_vectorized([e], ("x", "y", "t"))(np.array([x]), np.array([y]), np.array([t]))[0])[0]),
    ]
    for backend, mod in _backend.available().items():
        ops, args, starts = to_bytecode([e], ("x", "y", "t"))
        vals.append(float(mod.Program(ops, args, starts, 3).evaluate([x, y, t])[0]))
    if math.isfinite(ref):
        # zero identities in simplify assume finite operands
        vals.append(evaluate(simplify(e), b))
    for v in vals:
        if math.isnan(ref):
            assert math.isnan(v)
        else:
            assert v == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_substitute():
    e = substitute(parse_expr("x * y"), {"y": parse_expr("t + 1")})
    assert to_text(e) == "x * (t + 1)"


# ---------------------------------------------------------------- differentiation

def _to_sympy(e, syms):
    if isinstance(e, Const):
        return sympy.Float(e.value, 30)
    if isinstance(e, Var):
        return syms[e.name]
    if isinstance(e, Unary):
        return -_to_sympy(e.child, syms)
    if isinstance(e, Binary):
        a, b = _to_sympy(e.left, syms), _to_sympy(e.right, syms)
        return {"+": a + b, "-": a - b, "*": a * b, "/": a / b, "^": a ** b}[e.op]
    fn = {"sin": sympy.sin, "cos": sympy.cos, "exp": sympy.exp, "log": sympy.log, "sqrt": sympy.sqrt}[e.func]
    return fn(_to_sympy(e.args[0], syms))


def test_jacobians_against_sympy_and_finite_differences():
    rng = np.random.default_rng(2024)
    syms = {"x": sympy.Symbol("x"), "y": sympy.Symbol("y")}
    worst = 0.0
    for k in range(1000):
        e = random_smooth(rng, 4)
        b = {"x": float(rng.uniform(-1, 1)), "y": float(rng.uniform(-1, 1))}
        for var in ("x", "y"):
            got = evaluate(diff(e, var), b)
            scale = max(1.0, abs(got))
            worst = max(worst, abs(got - five_point_difference(e, var, b)) / scale)
            if k < 150:
                ref = float(sympy.diff(_to_sympy(e, syms), syms[var]).evalf(subs={syms["x"]: b["x"], syms["y"]: b["y"]}))
                assert got == pytest.approx(ref, rel=1e-10, abs=1e-10)
    assert worst < 1e-6


def test_nonsmooth_conventions():
    x = parse_expr("abs(x)")
    assert evaluate(diff(x, "x"), {"x": 0.0}) == 0.0
    assert evaluate(diff(x, "x"), {"x": -2.0}) == -1.0
    m = parse_expr("max(x, y)")
    assert evaluate(diff(m, "x"), {"x": 1.0, "y": 1.0}) == 1.0  # tie goes to the first argument
    assert evaluate(diff(m, "y"), {"x": 1.0, "y": 1.0}) == 0.0
    assert evaluate(diff(parse_expr("min(x, y)"), "y"), {"x": 2.0, "y": 1.0}) == 1.0


def test_derivative_examples():
    e = parse_expr("x^2 * y + sin(x)")
    assert to_text(diff(e, "y")) == "x^2"
    assert evaluate(diff(e, "x"), {"x": 1.0, "y": 2.0}) == pytest.approx(4 + math.cos(1.0))
    assert evaluate(diff(parse_expr("x^y"), "y"), {"x": 2.0, "y": 3.0}) == pytest.approx(8 * math.log(2))
    assert diff(parse_expr("3*t + 2"), "x") == Const(0.0)


def test_bytecode_unbound():
    with pytest.raises(ExprError):
        to_bytecode([parse_expr("z")], ("x",))
    with pytest.raises(ExprError):
        compile_scalar([parse_expr("z")], ("x",))


def test_pow_edge_cases():
    assert evaluate(parse_expr("0 ^ (0 - 1)"), {}) == math.inf
    assert evaluate(parse_expr("(0 - 10) ^ 401"), {}) == -math.inf
    assert math.isnan(evaluate(parse_expr("(0 - 1) ^ 0.5"), {}))


def test_input_signal_tree():
    e = parse_expr("1.5+2*sin(10*t)", allowed_vars=("t",))
    assert e == Binary("+", Const(1.5), Binary("*", Const(2.0), Call("sin", (Binary("*", Const(10.0), Var("t")),))))
    assert evaluate(e, {"t": 0.0}) == 1.5
    assert abs(evaluate(parse_expr("abs(sin(t))"), {"t": math.pi})) < 1e-12
    assert parse_expr("x", allowed_vars=("x",)) == Var("x")


def test_switched_degradation_term_and_promoter_derivative():
    params = {"beta": 1.0, "h": 0.01, "k1": 0.5, "k2": 5.0, "eT": 1.0}
    e = parse_expr("-beta*(xt - y - h)", ("xt", "y"), params)
    assert evaluate(e, {"xt": 0.5, "y": 0.2}) == pytest.approx(-0.29)
    ydot = parse_expr("-k1*y + k2*(eT - y)*(xt - y)", ("xt", "y"), params)
    for xt, y in [(0.3, 0.1), (1.7, 0.9)]:
        got = evaluate(diff(ydot, "y"), {"xt": xt, "y": y})
        assert got == pytest.approx(-0.5 + 5.0 * (-1.0 - xt + 2 * y), rel=1e-14)
    assert evaluate(diff(parse_expr("x*x"), "x"), {"x": 3.0}) == 6.0
