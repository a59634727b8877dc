"""Reproduction suite for the worked examples.

Each runner loads its fixtures and thresholds from ``fixtures/manifest.json``,
writes CSV/SVG artifacts into an output directory and returns a
:class:`ReproResult` with one PASS/FAIL :class:`Check` per threshold.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .certify import certify_pwl_exact, certify_pwsc, certify_virtual
from .measures import MeasureKind, load_matrix, mu, vector_norm
from .model import SwitchingSignal, load_system_file
from .network import (
    block_system, certify_sync, load_network_file, simulate_network, threshold_k,
)
from .simulate import (
    config_header, distance_series, divergence, integrate, simulate_virtual, write_events_csv,
    write_trajectory_csv,
)
from .svg import line_plot

__all__ = ["FIXTURES", "load_manifest", "Check", "ReproResult", "RUNNERS", "run", "period_estimate",
           "mode_agreement"]

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def fixture(name: str) -> Path:
    return FIXTURES / name


def load_manifest() -> dict:
    with open(FIXTURES / "manifest.json", encoding="utf-8") as fh:
        return json.load(fh)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class ReproResult:
    name: str
    checks: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    runtime: float = 0.0
    data: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        lines = [c.line() for c in self.checks]
        lines.append(f"{'PASS' if self.passed else 'FAIL'} {self.name} ({self.runtime:.2f} s)")
        return "\n".join(lines) + "\n"


def _add(result, name, passed, detail):
    result.checks.append(Check(name, bool(passed), detail))


def _outdir(out, name):
    if out is None:
        return None
    path = Path(out) / name
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------- pwl

def run_pwl(seed: int = 42, out=None, spec: dict | None = None) -> ReproResult:
    """Switched linear pair: exact mu_1 certificate and random switching runs."""
    spec = spec or load_manifest()["pwl"]
    res = ReproResult("pwl")
    start = time.perf_counter()
    mats = [load_matrix(fixture(m)) for m in spec["matrices"]]
    kind = MeasureKind.parse(spec["measure"])
    values = [mu(a, kind) for a in mats]
    ok = all(abs(v - e) <= spec["mu_tol"] for v, e in zip(values, spec["mu_expected"]))
    _add(res, "measures", ok, "mu = " + ", ".join(f"{v:.17g}" for v in values))
    cert = certify_pwl_exact(mats, kind)
    ok = cert.valid and cert.exact and abs(cert.rate - spec["rate_expected"]) <= spec["rate_tol"]
    _add(res, "certificate", ok, f"{'VALID' if cert.valid else 'INVALID'}, c = {cert.rate:.17g}, exact = {cert.exact}")

    base = load_system_file(fixture(spec["system"]))
    rng = np.random.default_rng(seed)
    horizon, dt = spec["horizon"], spec["dt"]
    lo, hi = spec["norm_window"]
    worst_ratio = -math.inf
    envelope_bad = 0
    curves = []
    outdir = _outdir(out, "pwl")
    for k in range(spec["signals"]):
        signal = SwitchingSignal.random(len(base.modes), horizon, rng, spec["min_dwell"], spec["max_dwell"])
        sys = dataclasses.replace(base, signal=signal)
        x0 = rng.uniform(-spec["ic_box"], spec["ic_box"], size=base.dim)
        y0 = rng.uniform(-spec["ic_box"], spec["ic_box"], size=base.dim)
        traj = integrate(sys, x0, 0.0, horizon, dt)
        t, xs, _ = traj.grid_samples()
        norms = np.abs(xs).sum(axis=1)
        window = (t >= lo) & (t <= hi)
        bound = np.abs(x0).sum() * np.exp(-spec["norm_rate"] * t[window])
        worst_ratio = max(worst_ratio, float(np.max(norms[window] / bound)))
        rep = divergence(sys, x0, y0, 0.0, horizon, dt, cert)
        envelope_bad += rep.violations
        if k < 4:
            curves.append((t, norms, f"run {k}"))
            if outdir is not None:
                cfg = {"command": "repro pwl", "seed": seed, "run": k, "dt": dt}
                write_trajectory_csv(traj, outdir / f"run{k}.csv", cfg)
                write_events_csv(traj, outdir / f"run{k}_events.csv", cfg)
    _add(res, "norm_decay", worst_ratio <= 1.0,
         f"max |x(t)|_1 / (|x0|_1 e^(-{spec['norm_rate']} t)) = {worst_ratio:.6g} over {spec['signals']} signals")
    _add(res, "envelope", envelope_bad == 0, f"{envelope_bad} envelope violations")
    if outdir is not None:
        line_plot(curves, outdir / "norms.svg", "switched linear system: |x(t)|_1", ylabel="|x|_1", logy=True,
                  config={"seed": seed})
        res.artifacts.append(str(outdir))
    res.runtime = time.perf_counter() - start
    return res


# ---------------------------------------------------------------- transcriptional

def period_estimate(times, values, window) -> float:
    """Mean spacing of upward mean-crossings of ``values`` inside ``window``."""
    times = np.asarray(times)
    values = np.asarray(values)
    m = (times >= window[0]) & (times <= window[1])
    t, v = times[m], values[m]
    v = v - v.mean()
    idx = np.nonzero((v[:-1] < 0) & (v[1:] >= 0))[0]
    if len(idx) < 2:
        return math.nan
    cross = t[idx] - v[idx] * (t[idx + 1] - t[idx]) / (v[idx + 1] - v[idx])
    return float((cross[-1] - cross[0]) / (len(cross) - 1))


def mode_agreement(a, b, after: float, window: float) -> tuple:
    """Compare switching after ``after``.

    Returns ``(ok, max_mismatch, disagreements)``: event lists must pair up
    one to one with equal transitions and times closer than ``window``, and
    grid samples may disagree in mode only within ``window`` of an event.
    """
    ea = [e for e in a.events if e.time > after]
    eb = [e for e in b.events if e.time > after]
    mismatch = math.inf
    paired = len(ea) == len(eb) and all(
        (x.from_mode, x.to_mode) == (y.from_mode, y.to_mode) for x, y in zip(ea, eb)
    )
    if paired:
        mismatch = max((abs(x.time - y.time) for x, y in zip(ea, eb)), default=0.0)
    ta, _, ma = a.grid_samples()
    tb, _, mb = b.grid_samples()
    common, ia, ib = np.intersect1d(ta, tb, assume_unique=True, return_indices=True)
    sel = common > after
    bad_t = common[sel][ma[ia][sel] != mb[ib][sel]]
    ev = np.array([e.time for e in ea + eb])
    unexplained = [t for t in bad_t if not (len(ev) and np.min(np.abs(ev - t)) < window)]
    ok = paired and mismatch < window and not unexplained
    return ok, mismatch, len(bad_t)


def run_transcriptional(seed: int = 42, out=None, spec: dict | None = None) -> ReproResult:
    """Transcriptional module: weighted mu_inf certificate, convergence, entrainment."""
    spec = spec or load_manifest()["transcriptional"]
    res = ReproResult("transcriptional")
    start = time.perf_counter()
    sys = load_system_file(fixture(spec["system"]))
    kind = MeasureKind.diagonal(spec["measure"], spec["weight"])
    cert = certify_pwsc(sys, kind, spec["grid"], sys.default_time_samples(spec["time_samples"]))
    _add(res, "certificate", cert.valid, f"{'VALID' if cert.valid else 'INVALID'} under {kind.describe()}, "
         f"c = {cert.rate:.6g} ({cert.evidence})")
    plain = certify_pwsc(sys, spec["measure"], spec["grid"], sys.default_time_samples(spec["time_samples"]))
    res.data["unweighted_rate"] = plain.rate
    res.data["certificate"] = cert

    horizon, dt = spec["horizon"], spec["dt"]
    x0, y0 = (np.array(v, float) for v in spec["ics"])
    a = integrate(sys, x0, 0.0, horizon, dt)
    b = integrate(sys, y0, 0.0, horizon, dt)
    t, d = distance_series(a, b, kind)
    d_at = float(d[np.searchsorted(t, spec["distance_time"])])
    below = np.nonzero(d < spec["distance_max"])[0]
    reached = float(t[below[0]]) if len(below) else math.inf
    _add(res, "distance", d_at < spec["distance_max"],
         f"|x - y| = {d_at:.3e} at t = {spec['distance_time']:g} (needs < {spec['distance_max']:g}; "
         f"first below at t = {reached:.3g})")
    ta, xa, _ = a.grid_samples()
    period = period_estimate(ta, xa[:, 1], spec["period_window"])
    rel = abs(period - spec["period"]) / spec["period"]
    _add(res, "period", rel <= spec["period_rtol"], f"period {period:.8g} vs {spec['period']:.8g} (rel. error {rel:.2e})")
    ok, mismatch, disagree = mode_agreement(a, b, spec["sync_after"], spec["event_mismatch"])
    later = _first_sync_time(a, b, spec["event_mismatch"])
    _add(res, "mode_sync", ok, f"after t = {spec['sync_after']:g}: max event-time mismatch {mismatch:.3e}, "
         f"{disagree} disagreeing samples (switching agrees within {spec['event_mismatch']:g} from t = {later:.3g})")
    rep = divergence(sys, x0, y0, 0.0, horizon, dt, cert)
    _add(res, "envelope", rep.violations == 0, f"{rep.violations} violations, fitted slope {rep.slope:.4g}, c = {cert.rate:.4g}")
    res.data.update(trajectories=(a, b), distance=(t, d), divergence=rep)

    outdir = _outdir(out, "transcriptional")
    if outdir is not None:
        cfg = {"command": "repro transcriptional", "seed": seed, "dt": dt, "horizon": horizon}
        for name, tr in (("a", a), ("b", b)):
            write_trajectory_csv(tr, outdir / f"traj_{name}.csv", cfg)
            write_events_csv(tr, outdir / f"events_{name}.csv", cfg)
        line_plot([(a.times, a.states[:, 1], "y from IC 1"), (b.times, b.states[:, 1], "y from IC 2")],
                  outdir / "convergence.svg", "transcriptional module", ylabel="y", config=cfg)
        line_plot([(t, d, "distance")], outdir / "distance.svg", "distance between trajectories",
                  ylabel="|x - y|", logy=True, config=cfg)
        res.artifacts.append(str(outdir))
    res.runtime = time.perf_counter() - start
    return res


def _first_sync_time(a, b, window) -> float:
    """Earliest event time from which all later events pair up within ``window``."""
    times = sorted({e.time for e in a.events})
    for t in times:
        if mode_agreement(a, b, t - 1e-12, window)[0]:
            return t
    return math.inf


# ---------------------------------------------------------------- network

def run_network(seed: int = 42, out=None, spec: dict | None = None) -> ReproResult:
    """Three-node network: gain threshold, coupled and uncoupled runs."""
    spec = spec or load_manifest()["network"]
    res = ReproResult("network")
    start = time.perf_counter()
    net = load_network_file(fixture(spec["network"]))
    kind = MeasureKind.parse(spec["measure"])
    k_star = threshold_k(net, kind, tuple(spec["k_range"]), tol=1e-10)
    _add(res, "threshold", abs(k_star - spec["k_star"]) <= spec["k_tol"], f"k* = {k_star:.12g}")
    on = certify_sync(net.with_gain(spec["k_on"]), kind)
    off = certify_sync(net.with_gain(spec["k_invalid"]), kind)
    _add(res, "certificates", on.valid and not off.valid,
         f"k = {spec['k_on']:g}: c = {on.rate:.6g}; k = {spec['k_invalid']:g}: c = {off.rate:.6g}")

    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-spec["ic_box"], spec["ic_box"], size=(net.nodes, net.dim))
    dt = spec["dt"]
    rep_on, nodes_on, stack_on = simulate_network(net.with_gain(spec["k_on"]), x0, 0.0, spec["horizon_on"], dt, kind)
    rep_off, nodes_off, _ = simulate_network(net.with_gain(0.0), x0, 0.0, spec["horizon_off"], dt, kind)
    _add(res, "coupled_decay", rep_on.slope <= spec["slope_on_max"], f"k = {spec['k_on']:g}: slope {rep_on.slope:.4g}")
    _add(res, "uncoupled_no_decay", rep_off.slope >= spec["slope_off_min"], f"k = 0: slope {rep_off.slope:.4g}")

    # transversal blocks: envelope in the certified norm, and agreement with the projected stack
    coupled = net.with_gain(spec["k_on"])
    _, q = coupled.spectrum()
    qn = np.kron(q, np.eye(net.dim))
    z0 = qn.T @ x0.reshape(-1)
    t_s, x_s, _ = stack_on.grid_samples()
    z_stack = x_s @ qn
    bad = 0
    worst_gap = 0.0
    for i in range(net.nodes):
        block = block_system(coupled, i)
        zi0 = z0[i * net.dim:(i + 1) * net.dim]
        tr = integrate(block, zi0, 0.0, spec["horizon_on"], dt)
        tb, zb, _ = tr.grid_samples()
        common, ia, ib = np.intersect1d(t_s, tb, assume_unique=True, return_indices=True)
        gap = np.max(np.abs(z_stack[ia, i * net.dim:(i + 1) * net.dim] - zb[ib]))
        worst_gap = max(worst_gap, float(gap))
        if i >= 1:
            norms = np.array([vector_norm(v, kind) for v in zb])
            env = vector_norm(zi0, kind) * np.exp(-on.rate * tb) * (1 + 1e-6)
            bad += int(np.sum(norms > env))
    _add(res, "envelope", bad == 0, f"{bad} violations on transversal blocks (c = {on.rate:.4g})")
    _add(res, "decomposition", worst_gap <= spec["block_tol"], f"max |(Q kron I)^T X - z| = {worst_gap:.3e}")
    res.data.update(on=rep_on, off=rep_off, k_star=k_star)

    outdir = _outdir(out, "network")
    if outdir is not None:
        for label, rep, nodes in (("k0", rep_off, nodes_off), ("k04", rep_on, nodes_on)):
            cfg = {"command": "repro network", "seed": seed, "dt": dt, "gain": rep.gain}
            for i, tr in enumerate(nodes):
                write_trajectory_csv(tr, outdir / f"{label}_node{i}.csv", cfg)
            _write_coordination(outdir / f"{label}_coordination.csv", rep, cfg)
            line_plot([(tr.times, tr.states[:, 0], f"node {i} x1") for i, tr in enumerate(nodes)],
                      outdir / f"{label}_states.svg", f"network, k = {rep.gain:g}", ylabel="x1", config=cfg)
        res.artifacts.append(str(outdir))
    res.runtime = time.perf_counter() - start
    return res


def _write_coordination(path, rep, cfg):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_header(cfg))
        fh.write("t,error\n")
        for t, e in zip(rep.times, rep.errors):
            fh.write(f"{t:.17g},{e:.17g}\n")


# ---------------------------------------------------------------- virtual

def run_virtual(seed: int = 42, out=None, spec: dict | None = None) -> ReproResult:
    """Partial contraction through a virtual system driven by the real state."""
    spec = spec or load_manifest()["virtual"]
    res = ReproResult("virtual")
    start = time.perf_counter()
    real = load_system_file(fixture(spec["real"]))
    virt = load_system_file(fixture(spec["virtual"]))
    cert = certify_virtual(virt, real, spec["measure"], spec["grid"])
    _add(res, "certificate", cert.valid, f"{'VALID' if cert.valid else 'INVALID'}, c = {cert.rate:.6g} ({cert.evidence})")
    rng = np.random.default_rng(seed)
    box = spec["ic_box"]
    x0 = rng.uniform(-box, box, size=real.dim)
    y0 = rng.uniform(-box, box, size=real.dim)
    d0 = float(vector_norm(x0 - y0, cert.measure))
    horizon = math.log(d0 / spec["level"]) / cert.rate if d0 > spec["level"] else 1.0
    t1 = math.ceil(1.2 * horizon)
    tx, ty, rep = simulate_virtual(real, virt, x0, y0, 0.0, t1, spec["dt"], cert)
    k = int(np.searchsorted(rep.times, horizon))
    d_h = float(rep.distances[min(k, len(rep.distances) - 1)])
    stays = bool(np.all(rep.distances[k:] < spec["level"]))
    _add(res, "converged", d_h < spec["level"] and stays,
         f"|x - y| = {d_h:.3e} at the certified horizon t = {horizon:.4g} (level {spec['level']:g})")
    env = d0 * np.exp(-cert.rate * rep.times) * (1 + 1e-6)
    bad = int(np.sum(rep.distances > env))
    _add(res, "envelope", bad == 0, f"{bad} violations, fitted slope {rep.slope:.4g}, c = {cert.rate:.4g}")
    t, xs, _ = tx.grid_samples()
    resid = 0.0
    for tt, x in zip(t[::50], xs[::50]):
        f = real.f(x, tt)
        v = virt.f(x, tt, x)
        resid = max(resid, float(np.max(np.abs(v - f))))
    _add(res, "embedding", resid < spec["embedding_tol"], f"max |v(x,x,t) - f(x,t)| along the solution = {resid:.2e}")
    res.data.update(report=rep, horizon=horizon, certificate=cert)
    outdir = _outdir(out, "virtual")
    if outdir is not None:
        cfg = {"command": "repro virtual", "seed": seed, "dt": spec["dt"]}
        write_trajectory_csv(tx, outdir / "real.csv", cfg)
        write_trajectory_csv(ty, outdir / "virtual.csv", cfg)
        line_plot([(rep.times, rep.distances, "|x - y|"), (rep.times, env, "certified envelope")],
                  outdir / "distance.svg", "virtual system convergence", ylabel="|x - y|", logy=True, config=cfg)
        res.artifacts.append(str(outdir))
    res.runtime = time.perf_counter() - start
    return res


RUNNERS = {
    "pwl": run_pwl,
    "transcriptional": run_transcriptional,
    "network": run_network,
    "virtual": run_virtual,
}


def run(name: str, seed: int = 42, out=None) -> ReproResult:
    if name not in RUNNERS:
        raise KeyError(f"unknown reproduction {name!r}; choose from {', '.join(RUNNERS)}")
    result = RUNNERS[name](seed=seed, out=out)
    outdir = _outdir(out, name)
    if outdir is not None:
        with open(outdir / "summary.txt", "w", encoding="utf-8") as fh:
            fh.write(config_header({"command": f"repro {name}", "seed": seed, "out": os.fspath(out)}))
            fh.write(result.summary())
    return result
