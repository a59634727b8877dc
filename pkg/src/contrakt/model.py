"""Switched-system models and their text format.

Two kinds of system are supported:

``pwsc``
    Piecewise-smooth continuous: each mode owns a region of state space
    described by a conjunction of guards, and neighbouring vector fields
    agree on shared boundaries.
``tss``
    Time-switched: the active mode is chosen by a right-continuous,
    piecewise-constant signal with a minimum dwell time.

System file format
------------------
::

    # comment
    [system]
    name = transcriptional
    kind = pwsc                 # or tss
    states = xt, y
    domain.xt = 0 2             # one "lo hi" line per state
    domain.y = 0 1
    constraint = "xt - y >= -0.02"   # optional, repeatable (convex cuts)
    period = 0.6283185307179586      # optional input period (time sampling)

    [params]
    k1 = 0.5

    [defs]                      # optional named sub-expressions
    u = "1.5 + 2*sin(10*t)"

    [mode.smooth]
    dxt = "u*(1 - xt) - 20*xt + 20*y"
    dy = "-k1*y"
    guard = "xt - y <= 0.01"    # repeatable, conjunction

    [signal]                    # tss only
    dwell = 0.1
    period = 2                  # optional: breakpoints repeat
    t=0 mode=a
    t=1 mode=b

A virtual system (used for partial contraction) additionally declares
``inputs = x1, x2`` and ``domain.x1 = lo hi`` lines; its expressions may
reference those exogenous names.

Only axis-aligned boxes (optionally cut by convex constraints) are supported
as domains, so the reachability constant is always 1.
"""

from __future__ import annotations

import math
import re
import shlex
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import _backend
from .errors import ExprError, ModelError
from .exprlang import (
    Const, ExprNode, GuardExpr, compile_scalar, compile_vectorized, diff, evaluate,
    free_vars, parse_expr, parse_guard, to_bytecode, to_text,
)

__all__ = [
    "Box", "ModeDef", "SwitchingSignal", "SwitchedSystemModel",
    "load_system", "load_system_file", "mode_at",
    "check_partition", "check_continuity", "check_one_sided_lipschitz",
    "PartitionReport", "ContinuityReport",
]

PWSC = "pwsc"
TSS = "tss"


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lo_i, hi_i]``; convex, hence 1-reachable."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ModelError("box bounds must be non-empty and of equal length")
        for a, b in zip(lo, hi):
            if not (math.isfinite(a) and math.isfinite(b)) or a > b:
                raise ModelError(f"invalid interval [{a}, {b}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.lo)

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.hi)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        slack = tol * (1.0 + np.abs(self.lower) + np.abs(self.upper))
        return bool(np.all(x >= self.lower - slack) and np.all(x <= self.upper + slack))

    def grid(self, counts) -> list:
        """Per-axis ``linspace`` vectors for a tensor grid."""
        if np.isscalar(counts):
            counts = [int(counts)] * self.dim
        if len(counts) != self.dim:
            raise ModelError(f"grid needs {self.dim} counts, got {len(counts)}")
        return [np.linspace(a, b, int(c)) if a < b else np.array([a]) for a, b, c in zip(self.lo, self.hi, counts)]

    def sample(self, rng, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))


@dataclass(frozen=True)
class ModeDef:
    """One smooth mode: its vector field and (for PWSC) its region."""

    name: str
    field: tuple
    region: tuple = ()


@dataclass(frozen=True)
class SwitchingSignal:
    """Right-continuous piecewise-constant mode signal.

    ``breakpoints`` is a sequence of ``(time, mode_index)``. Before the first
    breakpoint the first mode is active. With ``period`` set, the pattern
    inside ``[t_first, t_first + period)`` repeats forever.
    """

    breakpoints: tuple
    dwell: float
    period: float | None = None

    def __post_init__(self):
        bps = tuple((float(t), int(m)) for t, m in self.breakpoints)
        if not bps:
            raise ModelError("switching signal needs at least one breakpoint")
        if not (self.dwell > 0 and math.isfinite(self.dwell)):
            raise ModelError("minimum dwell time must be positive")
        times = [t for t, _ in bps]
        gaps = np.diff(times)
        if np.any(gaps <= 0):
            raise ModelError("switching times must be strictly increasing")
        tol = 1e-12 * max(1.0, abs(times[-1]))
        if np.any(gaps < self.dwell - tol):
            raise ModelError(f"dwell violation: gap {gaps.min():.6g} < minimum dwell {self.dwell:.6g}")
        if self.period is not None:
            if times[-1] - times[0] >= self.period:
                raise ModelError("periodic signal: breakpoints must lie within one period")
            if times[0] + self.period - times[-1] < self.dwell - tol:
                raise ModelError("dwell violation across the period boundary")
        object.__setattr__(self, "breakpoints", bps)

    @property
    def modes_used(self) -> set:
        return {m for _, m in self.breakpoints}

    def value_at(self, t: float) -> int:
        bps = self.breakpoints
        t0 = bps[0][0]
        if self.period is not None and t >= t0:
            t = t0 + math.fmod(t - t0, self.period)
        mode = bps[0][1]
        for time, m in bps:
            if time <= t:
                mode = m
            else:
                break
        return mode

    def switches_between(self, t0: float, t1: float) -> list:
        """``(time, new_mode)`` pairs with ``t0 < time < t1``, in order."""
        out = []
        if self.period is None:
            return [(t, m) for t, m in self.breakpoints if t0 < t < t1]
        first = self.breakpoints[0][0]
        k = math.floor((t0 - first) / self.period) - 1
        while True:
            base = first + k * self.period
            if base >= t1:
                break
            for t, m in self.breakpoints:
                tt = base + (t - first)
                if t0 < tt < t1:
                    out.append((tt, m))
            k += 1
        return out

    @classmethod
    def random(cls, n_modes: int, horizon: float, rng, min_dwell: float = 0.1, max_dwell: float = 2.0):
        """Random signal on ``[0, horizon]`` with dwell times in ``[min_dwell, max_dwell]``."""
        t = 0.0
        bps = []
        mode = int(rng.integers(n_modes))
        while t <= horizon:
            bps.append((t, mode))
            t += float(rng.uniform(min_dwell, max_dwell))
            if n_modes > 1:
                mode = (mode + 1 + int(rng.integers(n_modes - 1))) % n_modes
        return cls(tuple(bps), min_dwell)


@dataclass(frozen=True, eq=False)
class SwitchedSystemModel:
    """A PWSC or TSS system. Immutable; compiled evaluators are cached lazily."""

    name: str
    kind: str
    states: tuple
    modes: tuple
    domain: Box
    params: Mapping = field(default_factory=dict)
    signal: SwitchingSignal | None = None
    constraints: tuple = ()
    inputs: tuple = ()
    input_domain: Box | None = None
    period: float | None = None

    def __post_init__(self):
        if self.kind not in (PWSC, TSS):
            raise ModelError(f"unknown system kind {self.kind!r}")
        n = len(self.states)
        if n == 0 or len(set(self.states)) != n:
            raise ModelError("state names must be non-empty and unique")
        if "t" in self.states or "t" in self.inputs:
            raise ModelError("'t' is reserved for time")
        if self.domain.dim != n:
            raise ModelError(f"domain has {self.domain.dim} axes for {n} states")
        if not self.modes:
            raise ModelError("system has no modes")
        if len({m.name for m in self.modes}) != len(self.modes):
            raise ModelError("mode names must be unique")
        allowed = set(self.states) | set(self.inputs) | {"t"}
        for m in self.modes:
            if len(m.field) != n:
                raise ModelError(f"mode {m.name!r}: {len(m.field)} field components for {n} states")
            names = set()
            for e in m.field:
                names |= free_vars(e)
            for g in m.region:
                names |= free_vars(g.lhs) | free_vars(g.rhs)
            if names - allowed:
                raise ModelError(f"mode {m.name!r} references unknown names {sorted(names - allowed)}")
        if self.inputs and (self.input_domain is None or self.input_domain.dim != len(self.inputs)):
            raise ModelError("inputs need a matching input domain")
        if self.kind == TSS:
            if self.signal is None:
                raise ModelError("tss system needs a switching signal")
            if any(m.region for m in self.modes):
                raise ModelError("tss modes must not carry guards")
            bad = [i for i in self.signal.modes_used if not 0 <= i < len(self.modes)]
            if bad:
                raise ModelError(f"signal references unknown mode indices {bad}")

    # ------------------------------------------------------------ naming
    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def var_names(self) -> tuple:
        """Variable order of every compiled evaluator: states, inputs, then ``t``."""
        return tuple(self.states) + tuple(self.inputs) + ("t",)

    def mode_index(self, name: str) -> int:
        for i, m in enumerate(self.modes):
            if m.name == name:
                return i
        raise ModelError(f"unknown mode {name!r}")

    def bindings(self, x, t, u=None) -> dict:
        b = dict(zip(self.states, map(float, x)))
        if self.inputs:
            if u is None:
                raise ModelError("this system needs exogenous input values")
            b.update(zip(self.inputs, map(float, u)))
        b["t"] = float(t)
        return b

    # ------------------------------------------------------------ compiled pieces
    @cached_property
    def jacobian_exprs(self) -> tuple:
        """Per mode, the ``n x n`` tuple of symbolic partial derivatives."""
        return tuple(
            tuple(tuple(diff(f, s) for s in self.states) for f in m.field) for m in self.modes
        )

    @cached_property
    def _field_scalar(self):
        return [compile_scalar(m.field, self.var_names) for m in self.modes]

    @cached_property
    def _field_vec(self):
        return [compile_vectorized(m.field, self.var_names) for m in self.modes]

    @cached_property
    def _jac_vec(self):
        return [
            compile_vectorized([e for row in jac for e in row], self.var_names) for jac in self.jacobian_exprs
        ]

    @cached_property
    def _residuals(self):
        return [tuple(g.residual() for g in m.region) for m in self.modes]

    @cached_property
    def _residual_scalar(self):
        return [compile_scalar(r, self.var_names) if r else None for r in self._residuals]

    @cached_property
    def _constraint_residuals(self):
        return tuple(g.residual() for g in self.constraints)

    @cached_property
    def _constraint_scalar(self):
        r = self._constraint_residuals
        return compile_scalar(r, self.var_names) if r else None

    def _program(self, exprs):
        if self.inputs:
            raise ModelError("systems with exogenous inputs cannot be integrated directly")
        ops, args, starts = to_bytecode(exprs, self.var_names)
        return _backend.kernels.Program(ops, args, starts, len(self.var_names))

    @cached_property
    def field_programs(self):
        return [self._program(m.field) for m in self.modes]

    @cached_property
    def guard_programs(self):
        return [self._program(r) for r in self._residuals]

    @cached_property
    def constraint_program(self):
        return self._program(self._constraint_residuals)

    @cached_property
    def constant_jacobians(self):
        """Per mode, the Jacobian as an array when it is constant, else ``None``."""
        out = []
        for jac in self.jacobian_exprs:
            if all(isinstance(e, Const) for row in jac for e in row):
                out.append(np.array([[e.value for e in row] for row in jac]))
            else:
                out.append(None)
        return out

    @cached_property
    def time_dependent_jacobian(self) -> list:
        return [any("t" in free_vars(e) for row in jac for e in row) for jac in self.jacobian_exprs]

    # ------------------------------------------------------------ evaluation
    def _values(self, x, t, u) -> list:
        x = list(map(float, x))
        u = [] if u is None else list(map(float, u))
        if len(x) != self.dim or len(u) != len(self.inputs):
            raise ModelError(f"expected {self.dim} states and {len(self.inputs)} inputs, got {len(x)} and {len(u)}")
        return x + u + [float(t)]

    def field(self, mode: int, x, t, u=None) -> np.ndarray:
        """Vector field of ``mode`` at ``(x, t)`` (``u``: exogenous inputs)."""
        vals = self._values(x, t, u)
        return np.array(self._field_scalar[mode](*vals))

    def f(self, x, t, u=None) -> np.ndarray:
        """The switched vector field: active mode's field at ``(x, t)``."""
        return self.field(mode_at(self, x, t, u), x, t, u)

    def field_batch(self, mode: int, points: np.ndarray, times) -> np.ndarray:
        """Field of ``mode`` at many points; ``points`` has shape ``(m, n + n_inputs)``."""
        cols = [points[:, i] for i in range(points.shape[1])]
        out = self._field_vec[mode](*cols, np.broadcast_to(np.asarray(times, float), (points.shape[0],)))
        return np.stack([np.broadcast_to(np.asarray(c, float), (points.shape[0],)) for c in out], axis=1)

    def jacobian_batch(self, mode: int, points: np.ndarray, times) -> np.ndarray:
        """Jacobians of ``mode`` at many points, shape ``(m, n, n)``."""
        m = points.shape[0]
        n = self.dim
        cols = [points[:, i] for i in range(points.shape[1])]
        flat = self._jac_vec[mode](*cols, np.broadcast_to(np.asarray(times, float), (m,)))
        out = np.empty((m, n * n))
        for k, c in enumerate(flat):
            out[:, k] = c
        return out.reshape(m, n, n)

    def residuals(self, mode: int, x, t, u=None) -> np.ndarray:
        fn = self._residual_scalar[mode]
        if fn is None:
            return np.empty(0)
        vals = self._values(x, t, u)
        return np.array(fn(*vals))

    def region_holds(self, mode: int, x, t, u=None, closure: bool = False, tol: float = 0.0) -> bool:
        region = self.modes[mode].region
        if not region:
            return True
        r = self.residuals(mode, x, t, u)
        for g, val in zip(region, r):
            if closure:
                if val > tol:
                    return False
            elif (val >= 0) if g.strict else (val > 0):
                return False
        return True

    def in_domain(self, x, t=0.0, u=None, tol: float = 1e-9) -> bool:
        if not self.domain.contains(x, tol):
            return False
        if self.inputs and u is not None and not self.input_domain.contains(u, tol):
            return False
        if self._constraint_scalar is not None:
            vals = self._values(x, t, u)
            if max(self._constraint_scalar(*vals)) > tol:
                return False
        return True

    def constraint_mask(self, points: np.ndarray, times, tol: float = 1e-12) -> np.ndarray:
        if not self.constraints:
            return np.ones(points.shape[0], dtype=bool)
        fn = compile_vectorized(self._constraint_residuals, self.var_names)
        cols = [points[:, i] for i in range(points.shape[1])]
        vals = fn(*cols, np.broadcast_to(np.asarray(times, float), (points.shape[0],)))
        mask = np.ones(points.shape[0], dtype=bool)
        for v in vals:
            mask &= np.broadcast_to(v, mask.shape) <= tol
        return mask

    def region_residual_batch(self, mode: int, points: np.ndarray, times) -> np.ndarray:
        """Guard residuals of ``mode`` at many points, shape ``(m, n_guards)``."""
        res = self._residuals[mode]
        if not res:
            return np.empty((points.shape[0], 0))
        fn = compile_vectorized(res, self.var_names)
        cols = [points[:, i] for i in range(points.shape[1])]
        vals = fn(*cols, np.broadcast_to(np.asarray(times, float), (points.shape[0],)))
        return np.stack([np.broadcast_to(v, (points.shape[0],)) for v in vals], axis=1)

    def full_domain(self) -> Box:
        """State box extended by the input box (virtual systems)."""
        if not self.inputs:
            return self.domain
        return Box(self.domain.lo + self.input_domain.lo, self.domain.hi + self.input_domain.hi)

    def default_time_samples(self, count: int = 65) -> np.ndarray:
        span = self.period if self.period else 10.0
        return np.linspace(0.0, span, count)

    def describe(self) -> str:
        lines = [f"system {self.name} ({self.kind}), states {', '.join(self.states)}"]
        for m in self.modes:
            lines.append(f"  mode {m.name}:")
            for s, e in zip(self.states, m.field):
                lines.append(f"    d{s}/dt = {to_text(e)}")
            for g in m.region:
                lines.append(f"    where {g}")
        return "\n".join(lines)


def mode_at(sys: SwitchedSystemModel, x, t, u=None) -> int:
    """Index of the active mode at ``(x, t)``.

    PWSC: the first mode whose region holds; on a boundary where no region
    holds strictly, the first mode whose closure contains the point. TSS:
    the signal value at ``t`` (right-continuous).
    """
    if sys.kind == TSS:
        return sys.signal.value_at(float(t))
    for i in range(len(sys.modes)):
        if sys.region_holds(i, x, t, u):
            return i
    for i in range(len(sys.modes)):
        if sys.region_holds(i, x, t, u, closure=True, tol=1e-12):
            return i
    raise ModelError(f"no mode region contains x={list(map(float, x))} at t={t}")


# ---------------------------------------------------------------- loading

_SECTION = re.compile(r"^\[([^\]]+)\]\s*$")
_SIGNAL_LINE = re.compile(r"^t\s*=\s*(\S+)\s+mode\s*=\s*(\S+)\s*$")


def _split_value(raw: str, lineno: int) -> str:
    raw = raw.strip()
    if raw.startswith('"'):
        end = raw.find('"', 1)
        if end < 0:
            raise ModelError(f"line {lineno}: unterminated quoted value")
        rest = raw[end + 1:].strip()
        if rest and not rest.startswith("#"):
            raise ModelError(f"line {lineno}: unexpected text after quoted value")
        return raw[1:end]
    return raw.split("#", 1)[0].strip()


def parse_sections(text: str) -> list:
    """Split a document into ``(section, [(lineno, key, value) | (lineno, None, raw)])``."""
    sections = []
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        m = _SECTION.match(stripped)
        if m:
            current = (m.group(1).strip(), [])
            sections.append(current)
            continue
        if current is None:
            raise ModelError(f"line {lineno}: content before the first [section]")
        sig = _SIGNAL_LINE.match(stripped.split("#", 1)[0].strip())
        if sig:
            current[1].append((lineno, None, (sig.group(1), sig.group(2))))
        elif "=" in stripped:
            key, raw = stripped.split("=", 1)
            current[1].append((lineno, key.strip(), _split_value(raw, lineno)))
        else:
            current[1].append((lineno, None, stripped.split("#", 1)[0].strip()))
    return sections


def _const_value(text: str, params: Mapping[str, float], what: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    try:
        node = parse_expr(text, allowed_vars=(), constants=params)
        return float(evaluate(node, {}))
    except ExprError as exc:
        raise ModelError(f"{what}: {exc}") from None


def _names(raw: str) -> tuple:
    return tuple(s.strip() for s in raw.split(",") if s.strip())


def _bounds(raw: str, params, what) -> tuple:
    parts = shlex.split(raw.replace(",", " "))
    if len(parts) != 2:
        raise ModelError(f"{what}: expected 'lo hi'")
    return _const_value(parts[0], params, what), _const_value(parts[1], params, what)


def load_system(document: str, check: bool = True) -> SwitchedSystemModel:
    """Parse and validate a system description.

    With ``check`` set, PWSC systems are also sampled for overlapping or
    missing regions (see :func:`check_partition`).

    Raises
    ------
    ModelError
        On any syntax, naming, dimension, partition or dwell problem.
    """
    sections = parse_sections(document)
    by_name: dict = {}
    for name, items in sections:
        if name in by_name and not name.startswith("mode."):
            raise ModelError(f"duplicate section [{name}]")
        if name in by_name:
            raise ModelError(f"duplicate mode section [{name}]")
        by_name[name] = items
    if "system" not in by_name:
        raise ModelError("missing [system] section")

    system = {}
    constraints_src = []
    domain = {}
    for lineno, key, value in by_name["system"]:
        if key is None:
            raise ModelError(f"line {lineno}: expected 'key = value'")
        if key == "constraint":
            constraints_src.append((lineno, value))
        elif key.startswith("domain."):
            domain[key[len("domain."):]] = (lineno, value)
        else:
            system[key] = value
    kind = system.get("kind", PWSC).lower()
    states = _names(system.get("states", ""))
    if not states:
        raise ModelError("[system] needs 'states'")
    inputs = _names(system.get("inputs", ""))

    params: dict = {}
    for lineno, key, value in by_name.get("params", []):
        if key is None:
            raise ModelError(f"line {lineno}: expected 'name = value' in [params]")
        if key in states or key in inputs or key == "t":
            raise ModelError(f"line {lineno}: parameter {key!r} shadows a variable")
        params[key] = _const_value(value, params, f"line {lineno}")

    allowed = set(states) | set(inputs) | {"t"}
    macros: dict = {}
    for lineno, key, value in by_name.get("defs", []):
        if key is None:
            raise ModelError(f"line {lineno}: expected 'name = \"expr\"' in [defs]")
        macros[key] = _parse(value, allowed, params, macros, lineno)

    def bounds_for(names):
        lo, hi = [], []
        for s in names:
            if s not in domain:
                raise ModelError(f"[system] missing 'domain.{s} = lo hi'")
            lineno, raw = domain[s]
            a, b = _bounds(raw, params, f"line {lineno}")
            lo.append(a)
            hi.append(b)
        return Box(tuple(lo), tuple(hi))

    unknown = set(domain) - set(states) - set(inputs)
    if unknown:
        raise ModelError(f"domain given for unknown names {sorted(unknown)}")
    box = bounds_for(states)
    input_box = bounds_for(inputs) if inputs else None

    constraints = tuple(_parse_guard(v, allowed, params, macros, ln) for ln, v in constraints_src)

    modes = []
    mode_items = [(name[len("mode."):], items) for name, items in sections if name.startswith("mode.")]
    for mname, items in mode_items:
        comps = {}
        region = []
        for lineno, key, value in items:
            if key == "guard":
                region.append(_parse_guard(value, allowed, params, macros, lineno))
            elif key is not None and key.startswith("d") and key[1:] in states:
                if key[1:] in comps:
                    raise ModelError(f"line {lineno}: duplicate component {key}")
                comps[key[1:]] = _parse(value, allowed, params, macros, lineno)
            else:
                raise ModelError(f"line {lineno}: unexpected entry in [mode.{mname}]")
        missing = [s for s in states if s not in comps]
        if missing:
            raise ModelError(f"mode {mname!r} lacks components for {missing}")
        modes.append(ModeDef(mname, tuple(comps[s] for s in states), tuple(region)))

    signal = None
    if "signal" in by_name:
        names = [m.name for m in modes]
        dwell = None
        speriod = None
        bps = []
        for lineno, key, value in by_name["signal"]:
            if key == "dwell":
                dwell = _const_value(value, params, f"line {lineno}")
            elif key == "period":
                speriod = _const_value(value, params, f"line {lineno}")
            elif key is None and isinstance(value, tuple):
                t_raw, mode_name = value
                if mode_name not in names:
                    raise ModelError(f"line {lineno}: unknown mode {mode_name!r}")
                bps.append((_const_value(t_raw, params, f"line {lineno}"), names.index(mode_name)))
            else:
                raise ModelError(f"line {lineno}: unexpected entry in [signal]")
        if dwell is None:
            raise ModelError("[signal] needs 'dwell'")
        signal = SwitchingSignal(tuple(bps), dwell, speriod)
    elif kind == TSS:
        raise ModelError("tss system needs a [signal] section")

    period = _const_value(system["period"], params, "period") if "period" in system else None
    if period is None and signal is not None and signal.period is not None:
        period = signal.period
    sys = SwitchedSystemModel(
        name=system.get("name", "system"),
        kind=kind,
        states=states,
        modes=tuple(modes),
        domain=box,
        params=dict(params),
        signal=signal,
        constraints=constraints,
        inputs=inputs,
        input_domain=input_box,
        period=period,
    )
    if check and kind == PWSC and len(modes) > 1:
        report = check_partition(sys)
        if not report.passed:
            raise ModelError(f"mode regions do not partition the domain: {report.summary()}")
    return sys


def _parse(src, allowed, params, macros, lineno):
    try:
        return parse_expr(src, allowed, params, macros)
    except ExprError as exc:
        raise ModelError(f"line {lineno}: {exc}") from None


def _parse_guard(src, allowed, params, macros, lineno):
    try:
        return parse_guard(src, allowed, params, macros)
    except ExprError as exc:
        raise ModelError(f"line {lineno}: {exc}") from None


def load_system_file(path, check: bool = True) -> SwitchedSystemModel:
    with open(path, encoding="utf-8") as fh:
        return load_system(fh.read(), check=check)


# ---------------------------------------------------------------- sampling checks

def _sample_points(sys, rng, size):
    box = sys.full_domain()
    pts = box.sample(rng, size)
    span = sys.period if sys.period else 10.0
    ts = rng.uniform(0.0, span, size=size)
    keep = sys.constraint_mask(pts, ts)
    return pts[keep], ts[keep]


def _split(sys, p):
    n = sys.dim
    return p[:n], (p[n:] if sys.inputs else None)


@dataclass
class PartitionReport:
    samples: int
    overlaps: int
    gaps: int
    example_overlap: tuple | None = None
    example_gap: tuple | None = None

    @property
    def passed(self) -> bool:
        return self.overlaps == 0 and self.gaps == 0

    def summary(self) -> str:
        parts = [f"{self.samples} samples"]
        if self.overlaps:
            parts.append(f"{self.overlaps} in several regions (e.g. {self.example_overlap})")
        if self.gaps:
            parts.append(f"{self.gaps} in no region (e.g. {self.example_gap})")
        return ", ".join(parts)


def check_partition(sys: SwitchedSystemModel, samples: int = 2000, seed: int = 0, tol: float = 1e-9) -> PartitionReport:
    """Sample the domain and count points covered by zero or several regions.

    Points within ``tol`` of any guard boundary are skipped.
    """
    rng = np.random.default_rng(seed)
    pts, ts = _sample_points(sys, rng, samples)
    res = [sys.region_residual_batch(i, pts, ts) for i in range(len(sys.modes))]
    near = np.zeros(len(pts), dtype=bool)
    holds = np.zeros((len(pts), len(sys.modes)), dtype=bool)
    for i, r in enumerate(res):
        if r.shape[1] == 0:
            holds[:, i] = True
            continue
        near |= np.any(np.abs(r) <= tol, axis=1)
        ok = np.ones(len(pts), dtype=bool)
        for j, g in enumerate(sys.modes[i].region):
            ok &= (r[:, j] < 0) if g.strict else (r[:, j] <= 0)
        holds[:, i] = ok
    count = holds.sum(axis=1)
    over = (count > 1) & ~near
    gap = (count == 0) & ~near
    report = PartitionReport(int(len(pts)), int(over.sum()), int(gap.sum()))
    if report.overlaps:
        report.example_overlap = tuple(np.round(pts[np.argmax(over)], 6))
    if report.gaps:
        report.example_gap = tuple(np.round(pts[np.argmax(gap)], 6))
    return report


@dataclass
class ContinuityReport:
    """Largest field mismatch found on sampled mode boundaries."""

    pairs: dict
    max_mismatch: float
    field_scale: float
    threshold: float
    boundary_points: int

    @property
    def passed(self) -> bool:
        return self.max_mismatch < self.threshold

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{verdict}: max |F_i - F_j| = {self.max_mismatch:.3e} on {self.boundary_points} boundary points "
            f"(threshold {self.threshold:.3e})"
        )


def check_continuity(sys: SwitchedSystemModel, samples_per_boundary: int = 20, seed: int = 0,
                     max_chords: int = 20000) -> ContinuityReport:
    """Look for jumps of the vector field across mode boundaries.

    Random chords of the domain whose end points lie in different modes are
    bisected down to the switching point, where the two adjacent fields are
    compared. Passes when the largest mismatch is below
    ``1e-8 * (1 + field scale)``.
    """
    if sys.kind != PWSC:
        raise ModelError("continuity check applies to pwsc systems")
    if len(sys.modes) == 1:
        return ContinuityReport({}, 0.0, 0.0, 1e-8, 0)
    rng = np.random.default_rng(seed)
    box = sys.full_domain()
    span = sys.period if sys.period else 10.0
    pairs: dict = {}
    worst = 0.0
    scale = 0.0
    n_points = 0
    n_pairs_possible = len(sys.modes) * (len(sys.modes) - 1) // 2
    for _ in range(max_chords):
        if len(pairs) == n_pairs_possible and all(c >= samples_per_boundary for c, _ in pairs.values()):
            break
        a, b = box.sample(rng, 2)
        t = float(rng.uniform(0.0, span))
        if not (sys.in_domain(*_unpack(sys, a, t)) and sys.in_domain(*_unpack(sys, b, t))):
            continue
        ma = mode_at(sys, *_unpack(sys, a, t))
        mb = mode_at(sys, *_unpack(sys, b, t))
        if ma == mb:
            continue
        lo, hi = 0.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            p = a + mid * (b - a)
            xs, us = _split(sys, p)
            if mode_at(sys, xs, t, us) == ma:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-15:
                break
        pl = a + lo * (b - a)
        ph = a + hi * (b - a)
        xl, ul = _split(sys, pl)
        xh, uh = _split(sys, ph)
        i, j = mode_at(sys, xl, t, ul), mode_at(sys, xh, t, uh)
        if i == j:
            continue
        xb, ub = _split(sys, 0.5 * (pl + ph))
        fi = sys.field(i, xb, t, ub)
        fj = sys.field(j, xb, t, ub)
        mismatch = float(np.max(np.abs(fi - fj)))
        key = (min(i, j), max(i, j))
        count, best = pairs.get(key, (0, 0.0))
        pairs[key] = (count + 1, max(best, mismatch))
        worst = max(worst, mismatch)
        scale = max(scale, float(np.max(np.abs(fi))), float(np.max(np.abs(fj))))
        n_points += 1
    named = {(sys.modes[i].name, sys.modes[j].name): v for (i, j), v in pairs.items()}
    return ContinuityReport(named, worst, scale, 1e-8 * (1.0 + scale), n_points)


def _unpack(sys, p, t):
    xs, us = _split(sys, p)
    return xs, t, us


def check_one_sided_lipschitz(sys: SwitchedSystemModel, pair_samples: int = 2000, time_samples: int = 16,
                              seed: int = 0) -> float:
    """Monte-Carlo estimate of ``max (x-y)^T (f(x,t) - f(y,t)) / |x-y|^2``.

    Sampled evidence only. For TSS systems every mode is tried at each
    sample, so the estimate covers arbitrary switching.
    """
    if sys.inputs:
        raise ModelError("one-sided Lipschitz check needs a closed system")
    rng = np.random.default_rng(seed)
    span = sys.period if sys.period else 10.0
    times = np.linspace(0.0, span, time_samples)
    best = -math.inf
    per_t = max(1, pair_samples // max(1, time_samples))
    for t in times:
        xs = sys.domain.sample(rng, per_t)
        ys = sys.domain.sample(rng, per_t)
        keep = sys.constraint_mask(xs, t) & sys.constraint_mask(ys, t)
        xs, ys = xs[keep], ys[keep]
        if not len(xs):
            continue
        d = xs - ys
        nd = np.einsum("ij,ij->i", d, d)
        ok = nd > 0
        if sys.kind == TSS:
            for m in range(len(sys.modes)):
                diff_f = sys.field_batch(m, xs, t) - sys.field_batch(m, ys, t)
                q = np.einsum("ij,ij->i", d, diff_f)[ok] / nd[ok]
                if q.size:
                    best = max(best, float(q.max()))
        else:
            fx = np.array([sys.f(x, t) for x in xs])
            fy = np.array([sys.f(y, t) for y in ys])
            q = np.einsum("ij,ij->i", d, fx - fy)[ok] / nd[ok]
            if q.size:
                best = max(best, float(q.max()))
    return best
