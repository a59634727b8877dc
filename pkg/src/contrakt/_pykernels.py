"""Pure-Python implementation of the hot kernels.

Mirrors ``_ckernels.pyx`` function for function. Postfix programs are turned
back into Python source and compiled once, so per-call cost is a single
Python function call.
"""

import math

import numpy as np

from . import exprlang as _ex

BACKEND = "python"

_BIN = {_ex.OP_ADD: "+", _ex.OP_SUB: "-", _ex.OP_MUL: "*"}
_UNARY_CALL = {
    _ex.OP_SIN: "_sin", _ex.OP_COS: "_cos", _ex.OP_EXP: "_exp", _ex.OP_LOG: "_log",
    _ex.OP_SQRT: "_sqrt", _ex.OP_ABS: "abs", _ex.OP_SIGN: "_sign", _ex.OP_STEP: "_step",
}


def _postfix_to_source(ops, args, lo, hi):
    stack = []
    for k in range(lo, hi):
        op = ops[k]
        if op == _ex.OP_CONST:
            stack.append(repr(float(args[k])))
        elif op == _ex.OP_VAR:
            stack.append(f"v[{int(args[k])}]")
        elif op == _ex.OP_NEG:
            stack.append(f"(-{stack.pop()})")
        elif op in _BIN:
            b = stack.pop()
            a = stack.pop()
            stack.append(f"({a} {_BIN[op]} {b})")
        elif op == _ex.OP_DIV:
            b = stack.pop()
            a = stack.pop()
            stack.append(f"_div({a}, {b})")
        elif op == _ex.OP_POW:
            b = stack.pop()
            a = stack.pop()
            stack.append(f"_pow({a}, {b})")
        elif op in (_ex.OP_MIN, _ex.OP_MAX):
            b = stack.pop()
            a = stack.pop()
            stack.append(f"{'_fmin' if op == _ex.OP_MIN else '_fmax'}({a}, {b})")
        else:
            stack.append(f"{_UNARY_CALL[op]}({stack.pop()})")
    if len(stack) != 1:
        raise ValueError("malformed postfix program")
    return stack[0]


class Program:
    """Compiled list of expressions over a fixed variable vector."""

    def __init__(self, ops, args, starts, n_vars):
        ops = np.asarray(ops, dtype=np.int32)
        args = np.asarray(args, dtype=np.float64)
        starts = np.asarray(starts, dtype=np.int64)
        self.n_out = len(starts) - 1
        self.n_vars = int(n_vars)
        parts = [_postfix_to_source(ops, args, starts[i], starts[i + 1]) for i in range(self.n_out)]
        src = f"def _f(v):\n    return [{', '.join(parts)}]\n"
        ns = dict(_ex._PY_NAMESPACE)
        exec(compile(src, "<contrakt-program>", "exec"), ns)
        self._fn = ns["_f"]

    def evaluate(self, values):
        v = [float(x) for x in values]
        if len(v) != self.n_vars:
            raise ValueError(f"program expects {self.n_vars} variables, got {len(v)}")
        return np.array(self._fn(v), dtype=float)


def _rk4(fn, x, t, h):
    n = len(x)
    k1 = fn(x + [t])
    x2 = [x[i] + 0.5 * h * k1[i] for i in range(n)]
    k2 = fn(x2 + [t + 0.5 * h])
    x3 = [x[i] + 0.5 * h * k2[i] for i in range(n)]
    k3 = fn(x3 + [t + 0.5 * h])
    x4 = [x[i] + h * k3[i] for i in range(n)]
    k4 = fn(x4 + [t + h])
    return [x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(n)]


def rk4_step(field, x, t, h):
    """One classical RK4 step of size ``h`` from ``(t, x)``."""
    return np.array(_rk4(field._fn, [float(v) for v in x], float(t), float(h)))


def rk4_advance(field, guard, cons, x0, t0, dt, nsteps, lo, hi, tol, times_out, states_out):
    """Fixed-step RK4 from ``t0`` on the grid ``t0 + k*dt``.

    Stops early when a guard residual becomes positive (status 1), the
    state leaves the box/constraints (status 2) or turns non-finite
    (status 3). Returns ``(k, status)`` with ``states_out[k]`` the last
    accepted state.
    """
    fn = field._fn
    gfn = guard._fn if guard is not None and guard.n_out else None
    cfn = cons._fn if cons is not None and cons.n_out else None
    n = len(x0)
    x = [float(v) for v in x0]
    lo = [float(v) for v in lo]
    hi = [float(v) for v in hi]
    states_out[0, :] = x
    times_out[0] = t0
    for k in range(nsteps):
        t = t0 + k * dt
        xn = _rk4(fn, x, t, (t0 + (k + 1) * dt) - t)
        tn = t0 + (k + 1) * dt
        for v in xn:
            if not math.isfinite(v):
                return k, 3
        for i in range(n):
            slack = tol * (1.0 + abs(lo[i]) + abs(hi[i]))
            if xn[i] < lo[i] - slack or xn[i] > hi[i] + slack:
                return k, 2
        vars_ = xn + [tn]
        if cfn is not None:
            for r in cfn(vars_):
                if r > tol:
                    return k, 2
        if gfn is not None:
            for r in gfn(vars_):
                if r > 0.0:
                    return k, 1
        x = xn
        states_out[k + 1, :] = x
        times_out[k + 1] = tn
    return nsteps, 0


def mu_rowcol_batch(stack, axis):
    """mu_1 (``axis=0``) or mu_inf (``axis=1``) of every matrix in a stack."""
    off = np.abs(stack)
    idx = np.arange(stack.shape[1])
    off[:, idx, idx] = 0.0
    diag = np.diagonal(stack, axis1=1, axis2=2)
    return (diag + off.sum(axis=1 + axis)).max(axis=1)
