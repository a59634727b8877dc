# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: postfix expression evaluation, fixed-step RK4 with
guard monitoring, and batched mu_1 / mu_inf.

Same interface as ``_pykernels``.
"""

import numpy as np
from libc.math cimport sin, cos, exp, log, sqrt, fabs, pow, isfinite, NAN

BACKEND = "cython"

cdef enum:
    OP_CONST = 0
    OP_VAR = 1
    OP_NEG = 2
    OP_ADD = 3
    OP_SUB = 4
    OP_MUL = 5
    OP_DIV = 6
    OP_POW = 7
    OP_SIN = 8
    OP_COS = 9
    OP_EXP = 10
    OP_LOG = 11
    OP_SQRT = 12
    OP_ABS = 13
    OP_SIGN = 14
    OP_STEP = 15
    OP_MIN = 16
    OP_MAX = 17


cdef class Program:
    """Compiled list of expressions over a fixed variable vector."""

    cdef readonly int n_out
    cdef readonly int n_vars
    cdef int[::1] ops
    cdef double[::1] args
    cdef long long[::1] starts
    cdef double[::1] stack

    def __init__(self, ops, args, starts, n_vars):
        self.ops = np.ascontiguousarray(ops, dtype=np.int32)
        self.args = np.ascontiguousarray(args, dtype=np.float64)
        self.starts = np.ascontiguousarray(starts, dtype=np.int64)
        self.n_out = len(starts) - 1
        self.n_vars = n_vars
        depth = 0
        best = 1
        for op in np.asarray(self.ops):
            if op <= OP_VAR:
                depth += 1
            elif op in (OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW, OP_MIN, OP_MAX):
                depth -= 1
            best = max(best, depth)
        self.stack = np.zeros(best + 1)

    cdef void run(self, const double* v, double* out) noexcept nogil:
        cdef int k, j, top, op
        cdef double a, b
        cdef double* st = &self.stack[0]
        for j in range(self.n_out):
            top = -1
            for k in range(self.starts[j], self.starts[j + 1]):
                op = self.ops[k]
                if op == OP_CONST:
                    top += 1
                    st[top] = self.args[k]
                elif op == OP_VAR:
                    top += 1
                    st[top] = v[<int>self.args[k]]
                elif op == OP_NEG:
                    st[top] = -st[top]
                elif op <= OP_POW:
                    b = st[top]
                    top -= 1
                    a = st[top]
                    if op == OP_ADD:
                        st[top] = a + b
                    elif op == OP_SUB:
                        st[top] = a - b
                    elif op == OP_MUL:
                        st[top] = a * b
                    elif op == OP_DIV:
                        st[top] = a / b
                    else:
                        st[top] = pow(a, b)
                elif op == OP_MIN or op == OP_MAX:
                    b = st[top]
                    top -= 1
                    a = st[top]
                    if op == OP_MIN:
                        st[top] = a if a <= b or a != a else b
                    else:
                        st[top] = a if a >= b or a != a else b
                else:
                    a = st[top]
                    if op == OP_SIN:
                        st[top] = sin(a)
                    elif op == OP_COS:
                        st[top] = cos(a)
                    elif op == OP_EXP:
                        st[top] = exp(a)
                    elif op == OP_LOG:
                        st[top] = log(a) if a >= 0 else NAN
                    elif op == OP_SQRT:
                        st[top] = sqrt(a) if a >= 0 else NAN
                    elif op == OP_ABS:
                        st[top] = fabs(a)
                    elif op == OP_SIGN:
                        st[top] = 1.0 if a > 0 else (-1.0 if a < 0 else 0.0)
                    else:
                        st[top] = 1.0 if a >= 0 else 0.0
            out[j] = st[0]

    def evaluate(self, values):
        cdef double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
        if v.shape[0] != self.n_vars:
            raise ValueError(f"program expects {self.n_vars} variables, got {v.shape[0]}")
        out = np.zeros(self.n_out)
        cdef double[::1] o = out
        if self.n_out:
            self.run(&v[0], &o[0])
        return out


cdef void _rk4(Program f, int n, double* x, double t, double h, double* xn,
               double* w, double* k1, double* k2, double* k3, double* k4) noexcept nogil:
    # w holds n state slots followed by the time slot
    cdef int i
    for i in range(n):
        w[i] = x[i]
    w[n] = t
    f.run(w, k1)
    for i in range(n):
        w[i] = x[i] + 0.5 * h * k1[i]
    w[n] = t + 0.5 * h
    f.run(w, k2)
    for i in range(n):
        w[i] = x[i] + 0.5 * h * k2[i]
    f.run(w, k3)
    for i in range(n):
        w[i] = x[i] + h * k3[i]
    w[n] = t + h
    f.run(w, k4)
    for i in range(n):
        xn[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


def rk4_step(Program field, x, double t, double h):
    """One classical RK4 step of size ``h`` from ``(t, x)``."""
    cdef int n = field.n_out
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    out = np.zeros(n)
    cdef double[::1] o = out
    cdef double[::1] buf = np.zeros(5 * n + 1)
    _rk4(field, n, &xv[0], t, h, &o[0], &buf[0], &buf[n + 1], &buf[2 * n + 1], &buf[3 * n + 1], &buf[4 * n + 1])
    return out


def rk4_advance(Program field, Program guard, Program cons, x0, double t0, double dt, long nsteps,
                lo, hi, double tol, double[::1] times_out, double[:, ::1] states_out):
    """Fixed-step RK4 on the grid ``t0 + k*dt``; see ``_pykernels.rk4_advance``."""
    cdef int n = field.n_out
    cdef int ng = guard.n_out if guard is not None else 0
    cdef int nc = cons.n_out if cons is not None else 0
    cdef double[::1] lov = np.ascontiguousarray(lo, dtype=np.float64)
    cdef double[::1] hiv = np.ascontiguousarray(hi, dtype=np.float64)
    cdef double[::1] buf = np.zeros(7 * n + 2)
    cdef double[::1] res = np.zeros(max(ng, nc, 1))
    cdef double* x = &buf[0]
    cdef double* xn = &buf[n]
    cdef double* w = &buf[2 * n]
    cdef double* ks = &buf[3 * n + 1]
    cdef long k
    cdef int i, status = 0
    cdef double t, tn, slack
    cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    for i in range(n):
        x[i] = x0v[i]
        states_out[0, i] = x[i]
    times_out[0] = t0
    with nogil:
        k = 0
        while k < nsteps:
            t = t0 + k * dt
            tn = t0 + (k + 1) * dt
            _rk4(field, n, x, t, tn - t, xn, w, ks, ks + n, ks + 2 * n, ks + 3 * n)
            for i in range(n):
                if not isfinite(xn[i]):
                    status = 3
                    break
            if status:
                break
            for i in range(n):
                slack = tol * (1.0 + fabs(lov[i]) + fabs(hiv[i]))
                if xn[i] < lov[i] - slack or xn[i] > hiv[i] + slack:
                    status = 2
                    break
            if status:
                break
            for i in range(n):
                w[i] = xn[i]
            w[n] = tn
            if nc:
                cons.run(w, &res[0])
                for i in range(nc):
                    if res[i] > tol:
                        status = 2
                        break
                if status:
                    break
            if ng:
                guard.run(w, &res[0])
                for i in range(ng):
                    if res[i] > 0.0:
                        status = 1
                        break
                if status:
                    break
            for i in range(n):
                x[i] = xn[i]
                states_out[k + 1, i] = x[i]
            times_out[k + 1] = tn
            k += 1
    return k, status


def mu_rowcol_batch(double[:, :, ::1] stack, int axis):
    """mu_1 (``axis=0``) or mu_inf (``axis=1``) of every matrix in a stack."""
    cdef Py_ssize_t m = stack.shape[0], n = stack.shape[1]
    out = np.empty(m)
    cdef double[::1] o = out
    cdef Py_ssize_t p, i, j
    cdef double s, best
    with nogil:
        for p in range(m):
            best = -1e308
            for j in range(n):
                s = 0.0
                for i in range(n):
                    if i != j:
                        s = s + (fabs(stack[p, i, j]) if axis == 0 else fabs(stack[p, j, i]))
                s = stack[p, j, j] + s
                if s > best:
                    best = s
            o[p] = best
    return out
