"""Fixed-step RK4 integration of switched systems with exact switch handling.

Steps lie on the global grid ``t0 + k*dt``. Signal breakpoints (TSS) split
a step exactly; guard crossings (PWSC) are located by bisection on a partial
RK4 step and integration restarts in the new mode from the crossing. Grid
samples are bit-reproducible and shared between runs with the same ``t0``
and ``dt``, which is what trajectory comparisons rely on.
"""

from __future__ import annotations

import collections
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import ModelError, SimulationError
from .exprlang import GuardExpr, Var, substitute
from .measures import MeasureKind, vector_norm
from .model import PWSC, TSS, Box, ModeDef, SwitchedSystemModel, mode_at

__all__ = [
    "Event", "Trajectory", "DivergenceReport", "ConvergenceReport",
    "integrate", "divergence", "distance_series", "fit_slope", "simulate_virtual",
    "combine_virtual", "write_trajectory_csv", "write_events_csv", "config_header",
]

EVENT_WINDOW = 1e-10
MAX_EVENT_RATE = 1e4
_GRID_EPS = 1e-9


@dataclass(frozen=True)
class Event:
    time: float
    from_mode: int
    to_mode: int
    state: tuple


@dataclass
class Trajectory:
    """Sampled solution. ``modes[i]`` is the mode active from ``times[i]`` on."""

    times: np.ndarray
    states: np.ndarray
    modes: np.ndarray
    events: list
    on_grid: np.ndarray
    state_names: tuple = ()
    mode_names: tuple = ()

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def grid_samples(self):
        """``(times, states, modes)`` restricted to grid (non-event) samples."""
        m = self.on_grid
        return self.times[m], self.states[m], self.modes[m]

    def state_at(self, t: float) -> np.ndarray:
        """Linear interpolation between samples (plotting and diagnostics)."""
        return np.array([np.interp(t, self.times, self.states[:, i]) for i in range(self.states.shape[1])])

    def mode_sequence(self) -> list:
        """Modes in order of activation, repeats collapsed."""
        seq = [int(self.modes[0])]
        for e in self.events:
            if e.to_mode != seq[-1]:
                seq.append(e.to_mode)
        return seq


class _Run:
    """Mutable integration state for one call of :func:`integrate`."""

    def __init__(self, sys, t0, dt, tol):
        self.sys = sys
        self.t0 = t0
        self.dt = dt
        self.tol = tol
        self.kern = _backend.kernels
        self.times = []
        self.states = []
        self.modes = []
        self.grid = []
        self.events = []
        self.recent = collections.deque()
        self.lo = sys.domain.lower
        self.hi = sys.domain.upper
        self.cons = sys.constraint_program if sys.constraints else None

    def grid_time(self, k):
        return self.t0 + k * self.dt

    def grid_index(self, t):
        """``(k, on_grid)`` with ``k`` the grid index at or just before ``t``."""
        x = (t - self.t0) / self.dt
        k = round(x)
        if abs(x - k) <= _GRID_EPS:
            return int(k), True
        return int(math.floor(x)), False

    def push(self, t, x, mode, on_grid):
        self.times.append(t)
        self.states.append(np.array(x, dtype=float))
        self.modes.append(mode)
        self.grid.append(on_grid)

    def one_step(self, mode, guard, x, t, t_next, on_grid_end):
        """Single RK4 step to ``t_next`` (possibly partial). Returns ``(status, x_new)``."""
        times_out = np.empty(2)
        states_out = np.empty((2, len(x)))
        k, status = self.kern.rk4_advance(
            self.sys.field_programs[mode], guard, self.cons, np.asarray(x, float), t, t_next - t, 1,
            self.lo, self.hi, self.tol, times_out, states_out,
        )
        if status == 0:
            self.push(t_next, states_out[1], mode, on_grid_end)
            return 0, states_out[1].copy()
        return status, None

    def advance(self, mode, guard, x, t, t_end):
        """Integrate in ``mode`` from ``t`` to ``t_end``.

        Returns ``(None, x_end)`` on success, or ``(stop, info)`` where stop is
        ``"guard"`` with ``info = (t_a, x_a, t_b)`` bracketing the crossing.
        """
        field_prog = self.sys.field_programs[mode]
        k_t, on_t = self.grid_index(t)
        k_e, on_e = self.grid_index(t_end)
        if on_e:
            t_end = self.grid_time(k_e)
        # off-grid start: partial step to the next grid point (or to t_end)
        if not on_t:
            k_next = k_t + 1
            t_next = self.grid_time(k_next) if k_next <= k_e else t_end
            on_next = k_next <= k_e
            if t_next > t_end:
                t_next, on_next = t_end, on_e
            status, xn = self.one_step(mode, guard, x, t, t_next, on_next)
            if status:
                return self._stop(status, mode, x, t, t_next)
            x, t = xn, t_next
            k_t = k_next
            if t >= t_end:
                return None, x
        # whole grid steps
        nsteps = k_e - k_t
        if nsteps > 0:
            times_out = np.empty(nsteps + 1)
            states_out = np.empty((nsteps + 1, len(x)))
            t_start = self.grid_time(k_t)
            k, status = self.kern.rk4_advance(
                field_prog, guard, self.cons, np.asarray(x, float), t_start, self.dt, nsteps,
                self.lo, self.hi, self.tol, times_out, states_out,
            )
            for j in range(1, k + 1):
                self.push(self.grid_time(k_t + j), states_out[j], mode, True)
            x = states_out[k].copy()
            t = self.grid_time(k_t + k)
            if status:
                return self._stop(status, mode, x, t, self.grid_time(k_t + k + 1))
        # off-grid end
        if t < t_end and not on_e:
            status, xn = self.one_step(mode, guard, x, t, t_end, False)
            if status:
                return self._stop(status, mode, x, t, t_end)
            x, t = xn, t_end
        return None, x

    def _stop(self, status, mode, x, t, t_next):
        if status == 1:
            return "guard", (t, np.asarray(x, float), t_next)
        if status == 2:
            raise SimulationError(f"state left the domain between t={t:.10g} and t={t_next:.10g}", t_next)
        raise SimulationError(f"non-finite state between t={t:.10g} and t={t_next:.10g}", t_next)

    def note_event(self, t, frm, to, x):
        self.events.append(Event(float(t), int(frm), int(to), tuple(float(v) for v in x)))
        self.recent.append(t)
        while self.recent and self.recent[0] < t - 1.0:
            self.recent.popleft()
        if len(self.recent) > MAX_EVENT_RATE:
            raise SimulationError(
                f"more than {MAX_EVENT_RATE:g} switching events per unit time (chattering); "
                "sliding motion is not supported", t,
            )


def _locate_crossing(run, mode, guard, x_a, t_a, t_b):
    """Bisection for the first time the mode's guards are violated on the step.

    Returns ``(tau, x_tau)`` with ``x_tau`` just past the boundary (old
    region's guard residual > 0), ``t_b - t_a`` shrunk below the event window.
    """
    field_prog = run.sys.field_programs[mode]
    kern = run.kern
    lo, hi = t_a, t_b
    x_hi = kern.rk4_step(field_prog, x_a, t_a, t_b - t_a)
    while hi - lo > EVENT_WINDOW:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        xm = kern.rk4_step(field_prog, x_a, t_a, mid - t_a)
        if np.max(guard.evaluate(np.append(xm, mid))) > 0.0:
            hi, x_hi = mid, xm
        else:
            lo = mid
    return hi, x_hi


def integrate(sys: SwitchedSystemModel, x0, t0: float, t1: float, dt: float = 1e-3,
              tol: float = 1e-9) -> Trajectory:
    """Integrate the switched system from ``(t0, x0)`` to ``t1``.

    Parameters
    ----------
    sys
        Closed PWSC or TSS model (no exogenous inputs).
    dt
        Grid step. Steps are split at breakpoints and guard crossings.
    tol
        Relative slack on the domain box and constraints before an escape
        is reported.

    Raises
    ------
    SimulationError
        On domain escape (with the escape time), non-finite states or
        chattering above ``1e4`` events per unit time.
    """
    if sys.inputs:
        raise SimulationError("systems with exogenous inputs cannot be integrated directly", t0)
    if not (dt > 0 and math.isfinite(dt)):
        raise SimulationError("dt must be positive", t0)
    if not t1 > t0:
        raise SimulationError("t1 must exceed t0 (forward time only)", t0)
    x = np.asarray(x0, dtype=float)
    if x.shape != (sys.dim,):
        raise SimulationError(f"initial state must have {sys.dim} entries", t0)
    if not sys.in_domain(x, t0, tol=tol):
        raise SimulationError(f"initial state {x.tolist()} is outside the domain", t0)
    run = _Run(sys, float(t0), float(dt), tol)
    t = float(t0)
    try:
        mode = mode_at(sys, x, t)
    except ModelError as exc:
        raise SimulationError(str(exc), t) from None
    run.push(t, x, mode, True)

    if sys.kind == TSS:
        splits = [(tb, m) for tb, m in sys.signal.switches_between(t, t1)]
        for tb, new in splits + [(t1, None)]:
            _, x = run.advance(mode, None, x, t, tb)
            t = tb
            if new is not None and new != mode:
                run.note_event(t, mode, new, x)
                run.modes[-1] = new
                mode = new
    else:
        while t < t1:
            guard = sys.guard_programs[mode] if sys.modes[mode].region else None
            stop, info = run.advance(mode, guard, x, t, t1)
            if stop is None:
                x = info
                t = run.times[-1]
                break
            t_a, x_a, t_b = info
            tau, x_tau = _locate_crossing(run, mode, guard, x_a, t_a, t_b)
            k_b, on_b = run.grid_index(tau)
            on_b = on_b and abs(tau - t_b) <= _GRID_EPS * dt
            if on_b:
                tau = t_b
            try:
                new = mode_at(sys, x_tau, tau)
            except ModelError:
                raise SimulationError(f"no mode region contains the state after the crossing at t={tau:.10g}", tau) from None
            if new == mode:
                # crossing into a strict guard's boundary: step past it
                new = next((i for i in range(len(sys.modes)) if i != mode
                            and sys.region_holds(i, x_tau, tau, closure=True, tol=1e-9)), None)
                if new is None:
                    raise SimulationError(f"no adjacent mode at the crossing t={tau:.10g}", tau)
            run.push(tau, x_tau, new, on_b)
            run.note_event(tau, mode, new, x_tau)
            mode, x, t = new, x_tau, tau
    return Trajectory(
        times=np.array(run.times),
        states=np.array(run.states),
        modes=np.array(run.modes, dtype=int),
        events=run.events,
        on_grid=np.array(run.grid, dtype=bool),
        state_names=tuple(sys.states),
        mode_names=tuple(m.name for m in sys.modes),
    )


# ---------------------------------------------------------------- divergence

@dataclass
class DivergenceReport:
    """Distance between two solutions against the exponential envelope."""

    horizon: tuple
    times: np.ndarray
    distances: np.ndarray
    slope: float
    rate: float
    norm: str
    initial_distance: float
    violations: int
    first_violation: float | None = None
    transient: float = 0.1
    fit_points: int = 0

    @property
    def violated(self) -> bool:
        return self.violations > 0

    @property
    def log_distances(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.distances)

    def summary(self) -> str:
        lines = [
            f"horizon: [{self.horizon[0]:g}, {self.horizon[1]:g}]",
            f"norm: {self.norm}",
            f"initial distance: {self.initial_distance:.6g}",
            f"final distance: {self.distances[-1]:.6g}",
            f"fitted slope: {self.slope:.6g} (over {self.fit_points} samples after {self.transient:.0%} transient)",
            f"certified rate: {self.rate:.6g}",
            f"envelope violations: {self.violations}",
        ]
        return "\n".join(lines) + "\n"


def distance_series(a: Trajectory, b: Trajectory, kind: MeasureKind | str = "2"):
    """Distances at the grid samples the two trajectories share."""
    kind = MeasureKind.parse(kind)
    ta, xa, _ = a.grid_samples()
    tb, xb, _ = b.grid_samples()
    common, ia, ib = np.intersect1d(ta, tb, assume_unique=True, return_indices=True)
    diff = xa[ia] - xb[ib]
    d = np.array([vector_norm(v, kind) for v in diff]) if len(diff) else np.empty(0)
    return common, d


def fit_slope(times, values, start: float | None = None, floor: float = 0.0) -> tuple:
    """Least-squares slope of ``log(values)`` over ``times >= start``, values above ``floor``."""
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    mask = values > floor
    if start is not None:
        mask &= times >= start
    if mask.sum() < 2:
        return math.nan, int(mask.sum())
    slope = np.polyfit(times[mask], np.log(values[mask]), 1)[0]
    return float(slope), int(mask.sum())


def divergence(sys: SwitchedSystemModel, x0, y0, t0: float, t1: float, dt: float, certificate=None,
               kind: MeasureKind | str | None = None, transient: float = 0.1,
               noise_floor: float = 1e-12) -> DivergenceReport:
    """Integrate from two initial states and test ``|x-y| <= e^{-c(t-t0)} |x0-y0|``.

    The distance uses the certificate's norm (weighted norms as
    ``|theta (x - y)|``). Samples are grid times only, so switching instants
    are excluded. The slope fit skips the first ``transient`` fraction of the
    horizon and distances below ``noise_floor * (1 + |x|)``.
    """
    if kind is None:
        kind = certificate.measure if certificate is not None else MeasureKind("2")
    kind = MeasureKind.parse(kind)
    rate = certificate.rate if certificate is not None else 0.0
    a = integrate(sys, x0, t0, t1, dt)
    b = integrate(sys, y0, t0, t1, dt)
    times, d = distance_series(a, b, kind)
    d0 = float(vector_norm(np.asarray(x0, float) - np.asarray(y0, float), kind))
    envelope = d0 * np.exp(-rate * (times - t0)) * (1.0 + 1e-6)
    bad = d > envelope
    scale = 1.0 + float(np.max(np.abs(a.states)))
    slope, used = fit_slope(times, d, t0 + transient * (t1 - t0), noise_floor * scale)
    return DivergenceReport(
        horizon=(float(t0), float(t1)), times=times, distances=d, slope=slope, rate=rate,
        norm=kind.describe(), initial_distance=d0, violations=int(bad.sum()),
        first_violation=float(times[np.argmax(bad)]) if bad.any() else None,
        transient=transient, fit_points=used,
    )


# ---------------------------------------------------------------- virtual systems

def combine_virtual(real: SwitchedSystemModel, virtual: SwitchedSystemModel) -> SwitchedSystemModel:
    """Product system ``(x, y)`` with ``x' = f(x, t)`` and ``y' = v(y, x, t)``.

    Virtual state names that clash with real ones get a ``_v`` suffix. Modes
    are pairs ``real|virtual`` (PWSC); TSS virtual systems must share the
    real system's signal and mode count, and are paired by index.
    """
    if virtual.inputs and tuple(virtual.inputs) != tuple(real.states):
        raise ModelError("virtual inputs must be the real system's states, in order")
    taken = set(real.states)
    ren = {}
    for s in virtual.states:
        new = s
        while new in taken:
            new += "_v"
        taken.add(new)
        ren[s] = Var(new)
    mapping = dict(ren)
    mapping.update({u: Var(x) for u, x in zip(virtual.inputs, real.states)})

    def sub_guard(g):
        return GuardExpr(substitute(g.lhs, mapping), g.relation, substitute(g.rhs, mapping))

    states = tuple(real.states) + tuple(v.name for v in ren.values())
    domain = Box(real.domain.lo + virtual.domain.lo, real.domain.hi + virtual.domain.hi)
    constraints = tuple(real.constraints) + tuple(sub_guard(g) for g in virtual.constraints)
    modes = []
    if real.kind == TSS or virtual.kind == TSS:
        if real.kind != virtual.kind or len(real.modes) != len(virtual.modes):
            raise ModelError("a time-switched virtual system must mirror the real system's modes")
        for rm, vm in zip(real.modes, virtual.modes):
            modes.append(ModeDef(f"{rm.name}|{vm.name}", rm.field + tuple(substitute(e, mapping) for e in vm.field)))
        signal = real.signal
    else:
        for rm in real.modes:
            for vm in virtual.modes:
                modes.append(ModeDef(
                    f"{rm.name}|{vm.name}",
                    rm.field + tuple(substitute(e, mapping) for e in vm.field),
                    rm.region + tuple(sub_guard(g) for g in vm.region),
                ))
        signal = None
    return SwitchedSystemModel(
        name=f"{real.name}+{virtual.name}", kind=real.kind, states=states, modes=tuple(modes),
        domain=domain, params={**real.params, **virtual.params}, signal=signal,
        constraints=constraints, period=real.period or virtual.period,
    )


@dataclass
class ConvergenceReport:
    times: np.ndarray
    distances: np.ndarray
    slope: float
    rate: float
    monotone_after_transient: bool
    converged: bool

    def time_below(self, level: float) -> float | None:
        """First sample time from which the distance stays below ``level``."""
        above = np.nonzero(self.distances >= level)[0]
        if not len(above):
            return float(self.times[0])
        k = above[-1] + 1
        return float(self.times[k]) if k < len(self.times) else None


def simulate_virtual(real: SwitchedSystemModel, virtual: SwitchedSystemModel, x0, y0, t0: float, t1: float,
                     dt: float = 1e-3, certificate=None, transient: float = 0.1, noise_floor: float = 1e-12):
    """Co-integrate the real state ``x`` and the virtual state ``y`` driven by ``x``.

    Returns
    -------
    (Trajectory, Trajectory, ConvergenceReport)
        Real and virtual trajectories (sharing sample times) and the decay
        of ``|x - y|`` in the certificate's norm (2-norm by default).
    """
    combo = combine_virtual(real, virtual)
    z0 = np.concatenate([np.asarray(x0, float), np.asarray(y0, float)])
    traj = integrate(combo, z0, t0, t1, dt)
    n = real.dim

    def part(sl, names, mode_names):
        return Trajectory(traj.times, traj.states[:, sl], traj.modes, traj.events, traj.on_grid, names, mode_names)

    tx = part(slice(0, n), tuple(real.states), tuple(m.name for m in combo.modes))
    ty = part(slice(n, None), tuple(combo.states[n:]), tuple(m.name for m in combo.modes))
    kind = certificate.measure if certificate is not None else MeasureKind("2")
    times, xs, _ = tx.grid_samples()
    _, ys, _ = ty.grid_samples()
    d = np.array([vector_norm(a - b, kind) for a, b in zip(xs, ys)])
    start = t0 + transient * (t1 - t0)
    scale = 1.0 + float(np.max(np.abs(traj.states)))
    floor = noise_floor * scale
    slope, _ = fit_slope(times, d, start, floor)
    late = d[(times >= start) & (d > floor)]
    monotone = bool(np.all(np.diff(late) <= 1e-12 * scale))
    converged = bool(d[-1] <= floor or (math.isfinite(slope) and slope < 0 and d[-1] < d[0]))
    rate = certificate.rate if certificate is not None else math.nan
    return tx, ty, ConvergenceReport(times, d, slope, rate, monotone, converged)


# ---------------------------------------------------------------- output

def config_header(config: dict | None) -> str:
    if not config:
        return ""
    return "".join(f"# {k} = {config[k]}\n" for k in sorted(config))


def write_trajectory_csv(traj: Trajectory, path, config: dict | None = None) -> None:
    """CSV with header ``t,<states>,mode`` (mode by name)."""
    names = traj.state_names or tuple(f"x{i + 1}" for i in range(traj.states.shape[1]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_header(config))
        fh.write(",".join(("t",) + tuple(names) + ("mode",)) + "\n")
        for t, x, m in zip(traj.times, traj.states, traj.modes):
            label = traj.mode_names[m] if traj.mode_names else str(m)
            fh.write(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in x) + f",{label}\n")


def write_events_csv(traj: Trajectory, path, config: dict | None = None) -> None:
    """Sidecar CSV ``t,from,to``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_header(config))
        fh.write("t,from,to\n")
        for e in traj.events:
            frm = traj.mode_names[e.from_mode] if traj.mode_names else e.from_mode
            to = traj.mode_names[e.to_mode] if traj.mode_names else e.to_mode
            fh.write(f"{e.time:.17g},{frm},{to}\n")
