"""Time the compiled and pure-Python kernels side by side.

Run from the repository root after ``python3 setup.py build_ext --inplace``::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each row reports the best wall time over ``--repeat`` runs per backend and
the speed-up of the compiled kernels. Outputs are compared first, so a
mismatch aborts the benchmark instead of timing wrong code.
"""

import argparse
import time
from pathlib import Path

import numpy as np

import contrakt
from contrakt import _backend
from contrakt.exprlang import parse_expr, to_bytecode
from contrakt.model import load_system_file
from contrakt.simulate import integrate

FIXTURES = Path(contrakt.__file__).parent / "fixtures"
FIELD = ["-x1 + 1.5*x2 + sin(t)", "0.8*x1 - 3*x2*x2 + max(x1, 0)"]
NAMES = ("x1", "x2", "t")


def program(mod, sources):
    ops, args, starts = to_bytecode([parse_expr(s) for s in sources], NAMES)
    return mod.Program(ops, args, starts, len(NAMES))


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def evaluate_loop(mod, n=20000):
    prog = program(mod, FIELD)
    v = np.array([0.3, -0.2, 0.1])
    return lambda: [prog.evaluate(v) for _ in range(n)]


def advance(mod, n=20000):
    field = program(mod, FIELD)
    times = np.zeros(n + 1)
    states = np.zeros((n + 1, 2))
    lo, hi = np.full(2, -1e9), np.full(2, 1e9)
    return lambda: mod.rk4_advance(field, None, None, np.array([0.3, -0.2]), 0.0, 1e-3, n, lo, hi, 1e-9,
                                   times, states) and states[-1].copy()


def rowcol(mod, m=20000):
    stack = np.ascontiguousarray(np.random.default_rng(0).normal(size=(m, 3, 3)))
    return lambda: mod.mu_rowcol_batch(stack, 0)


def full_integration(mod):
    def go():
        _backend.kernels = mod  # systems bind their kernels when loaded
        sys = load_system_file(FIXTURES / "transcriptional.sys")
        return integrate(sys, [0.2, 0.1], 0.0, 5.0, 1e-3).final_state
    return go


CASES = [
    ("Program.evaluate x20000", evaluate_loop),
    ("rk4_advance 20000 steps", advance),
    ("mu_rowcol_batch 20000x3x3", rowcol),
    ("integrate transcriptional t=5", full_integration),
]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = _backend.available()
    if "cython" not in backends:
        print("compiled extension not built; run python3 setup.py build_ext --inplace")
    selected = _backend.kernels
    print(f"{'kernel':32s}" + "".join(f"{name:>12s}" for name in backends) + ("     speed-up" if len(backends) > 1 else ""))
    try:
        for label, make in CASES:
            fns = {name: make(mod) for name, mod in backends.items()}
            outs = [np.asarray(fn()) for fn in fns.values()]
            for other in outs[1:]:
                np.testing.assert_allclose(outs[0], other, rtol=1e-12, atol=1e-14)
            secs = {name: best_of(fn, args.repeat) for name, fn in fns.items()}
            row = f"{label:32s}" + "".join(f"{s * 1e3:10.2f}ms" for s in secs.values())
            if len(secs) > 1:
                row += f"{secs['python'] / secs['cython']:12.1f}x"
            print(row)
    finally:
        _backend.kernels = selected


if __name__ == "__main__":
    main()
