import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from contrakt import _backend, _pykernels
from contrakt.exprlang import parse_expr, to_bytecode
from contrakt.measures import mu
from contrakt.model import load_system_file
from contrakt.simulate import integrate

BACKENDS = _backend.available()
needs_compiled = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")


def program(mod, sources, names):
    ops, args, starts = to_bytecode([parse_expr(s) for s in sources], names)
    return mod.Program(ops, args, starts, len(names))


def test_selected_backend_is_available():
    assert _backend.BACKEND in BACKENDS
    assert BACKENDS["python"] is _pykernels


@needs_compiled
@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (3,), elements=st.floats(-4, 4)))
def test_program_parity(v):
    src = ["sin(x) * exp(y) - z^3 / (1 + x^2)", "max(x, y) - min(z, abs(x))", "sqrt(abs(y)) + log(1 + z^2)",
           "x^y", "cos(t) * 0 - -x"]
    names = ("x", "y", "z", "t")
    vals = np.append(v, 0.3)
    outs = [program(mod, src, names).evaluate(vals) for mod in BACKENDS.values()]
    np.testing.assert_allclose(outs[0], outs[1], rtol=1e-14, atol=1e-300, equal_nan=True)


@needs_compiled
def test_program_ieee_parity():
    names = ("x",)
    src = ["1 / x", "log(x)", "sqrt(x - 1)", "x^0.5", "0 / x", "max(x / x, 1)"]
    for mod in BACKENDS.values():
        out = program(mod, src, names).evaluate([0.0])
        assert out[0] == np.inf and out[1] == -np.inf
        assert np.isnan(out[2]) and out[3] == 0.0 and np.isnan(out[4]) and np.isnan(out[5])


@needs_compiled
def test_rk4_step_parity():
    names = ("x1", "x2", "t")
    src = ["-x1 + 1.5*x2 + sin(t)", "0.8*x1 - 3*x2*x2"]
    outs = [mod.rk4_step(program(mod, src, names), np.array([0.3, -0.2]), 0.1, 0.05) for mod in BACKENDS.values()]
    np.testing.assert_allclose(outs[0], outs[1], rtol=1e-15)


@pytest.mark.parametrize("backend", list(BACKENDS))
def test_rk4_advance_status_codes(backend):
    mod = BACKENDS[backend]
    names = ("x", "t")
    field = program(mod, ["1"], names)
    guard = program(mod, ["x - 0.5"], names)

    def run(g, lo, hi, f=field, n=100):
        times = np.zeros(n + 1)
        states = np.zeros((n + 1, 1))
        k, status = mod.rk4_advance(f, g, None, np.array([0.0]), 0.0, 0.01, n, np.array([lo]), np.array([hi]),
                                    1e-9, times, states)
        return k, status, times, states

    k, status, times, states = run(None, -1.0, 2.0)
    assert (k, status) == (100, 0) and states[-1, 0] == pytest.approx(1.0, abs=1e-12)
    k, status, _, states = run(guard, -1.0, 2.0)
    assert status == 1 and states[k, 0] <= 0.5 < states[k, 0] + 0.01 + 1e-12
    k, status, _, _ = run(None, -1.0, 0.255)
    assert status == 2 and k == 25
    blow = program(mod, ["1 / (0.05 - t)"], names)
    k, status, _, _ = run(None, -1e300, 1e300, f=blow)
    assert status == 3


@needs_compiled
@settings(max_examples=200, deadline=None)
@given(st.integers(1, 20), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_row_column_measure_parity(m, n, seed):
    stack = np.random.default_rng(seed).normal(size=(m, n, n))
    for axis in (0, 1):
        a = BACKENDS["python"].mu_rowcol_batch(stack, axis)
        b = BACKENDS["cython"].mu_rowcol_batch(np.ascontiguousarray(stack), axis)
        np.testing.assert_allclose(a, b, rtol=1e-15, atol=1e-15)
        tag = "1" if axis == 0 else "inf"
        np.testing.assert_allclose(a, [mu(x, tag) for x in stack], rtol=1e-14, atol=1e-14)


@needs_compiled
def test_integration_parity(monkeypatch, fixtures_dir):
    results = {}
    for name, mod in BACKENDS.items():
        monkeypatch.setattr(_backend, "kernels", mod)
        sys = load_system_file(fixtures_dir / "transcriptional.sys")  # fresh compiled programs
        results[name] = integrate(sys, [0.2, 0.1], 0.0, 2.0, 1e-3)
    a, b = results["python"], results["cython"]
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_allclose(a.states, b.states, rtol=1e-12, atol=1e-14)
    assert [e.from_mode for e in a.events] == [e.from_mode for e in b.events]
    np.testing.assert_allclose([e.time for e in a.events], [e.time for e in b.events], atol=1e-12)
