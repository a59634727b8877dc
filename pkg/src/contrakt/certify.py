"""Contraction certificates for switched systems.

A certificate records, for one shared matrix measure, a contraction rate
``c_i`` per mode such that ``mu(dF_i/dx) <= -c_i`` on the mode's (closed)
region, and the overall rate ``c = min_i c_i``. It is VALID when ``c > 0``.

Rates are exact when every mode has a constant Jacobian. Otherwise they are
maxima over a finite grid of states and times: sampled evidence, not a proof,
and the certificate says so.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CertificationError, MeasureError
from .measures import MeasureKind, as_matrix, mu, mu_batch
from .model import PWSC, TSS, SwitchedSystemModel, mode_at

__all__ = [
    "ModeRate", "ContractionCertificate", "jacobian", "jacobian_fd",
    "certify_pwsc", "certify_tss", "certify_system", "certify_pwl_exact",
    "certify_virtual", "search_weight", "search_weight_for_system", "sample_jacobians",
]

DEFAULT_GRID = 33
DEFAULT_TIME_SAMPLES = 65
BOUNDARY_TOL = 1e-6


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("CONTRAKT_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class ModeRate:
    mode: str
    rate: float
    worst_state: tuple | None = None
    worst_time: float | None = None
    samples: int = 0


@dataclass
class ContractionCertificate:
    """Outcome of a contraction check under one matrix measure."""

    measure: MeasureKind
    per_mode: list
    exact: bool
    kind: str = "pwsc"
    sampling: dict | None = None
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def rate(self) -> float:
        return min(m.rate for m in self.per_mode)

    @property
    def valid(self) -> bool:
        return self.rate > 0

    @property
    def evidence(self) -> str:
        return "exact" if self.exact else "sampled evidence, not a proof"

    def mode_rate(self, name: str) -> float:
        for m in self.per_mode:
            if m.mode == name:
                return m.rate
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "measure": self.measure.to_dict(),
            "valid": self.valid,
            "rate": self.rate,
            "exact": self.exact,
            "per_mode": [
                {
                    "mode": m.mode, "rate": m.rate, "samples": m.samples,
                    "worst_state": None if m.worst_state is None else list(m.worst_state),
                    "worst_time": m.worst_time,
                }
                for m in self.per_mode
            ],
            "sampling": self.sampling,
            "notes": list(self.notes),
            **({"extra": self.extra} if self.extra else {}),
        }

    def report(self) -> str:
        """Human-readable report."""
        lines = [
            f"verdict: {'VALID' if self.valid else 'INVALID'}",
            f"measure: {self.measure.describe()}",
            f"overall rate c = {self.rate:.17g}",
            f"evidence: {self.evidence}",
        ]
        for m in self.per_mode:
            line = f"  mode {m.mode}: c = {m.rate:.17g}"
            if m.worst_state is not None:
                pt = ", ".join(f"{v:.6g}" for v in m.worst_state)
                line += f" (worst at x = [{pt}], t = {m.worst_time:.6g}; {m.samples} samples)"
            lines.append(line)
        if self.sampling:
            lines.append("sampling: " + json.dumps(self.sampling, sort_keys=True))
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        """Machine-readable ``key = value`` listing."""
        out = [
            f"valid = {str(self.valid).lower()}",
            f"rate = {self.rate:.17g}",
            f"measure = {self.measure.tag}",
            f"weight = {json.dumps(None if self.measure.weight is None else self.measure.weight.tolist())}",
            f"exact = {str(self.exact).lower()}",
        ]
        for m in self.per_mode:
            out.append(f"mode.{m.mode}.rate = {m.rate:.17g}")
            if m.worst_state is not None:
                out.append(f"mode.{m.mode}.worst_state = {json.dumps(list(m.worst_state))}")
                out.append(f"mode.{m.mode}.worst_time = {m.worst_time:.17g}")
                out.append(f"mode.{m.mode}.samples = {m.samples}")
        if self.sampling:
            for k in sorted(self.sampling):
                out.append(f"sampling.{k} = {json.dumps(self.sampling[k])}")
        return "\n".join(out) + "\n"


# ---------------------------------------------------------------- Jacobians

def jacobian(sys: SwitchedSystemModel, mode: int, x, t, u=None) -> np.ndarray:
    """Analytic Jacobian ``dF_mode/dx`` at ``(x, t)``."""
    p = np.concatenate([np.asarray(x, float), np.asarray(u if u is not None else [], float)])[None, :]
    return sys.jacobian_batch(mode, p, t)[0]


def jacobian_fd(sys: SwitchedSystemModel, mode: int, x, t, u=None, rel_step: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian (independent check of :func:`jacobian`)."""
    x = np.asarray(x, float)
    n = len(x)
    out = np.empty((n, n))
    for j in range(n):
        h = rel_step * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        out[:, j] = (sys.field(mode, xp, t, u) - sys.field(mode, xm, t, u)) / (2 * h)
    return out


# ---------------------------------------------------------------- sampling

def _grid_points(box, counts) -> np.ndarray:
    axes = box.grid(counts)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1), axes


def _boundary_points(sys, mode, axes, t, tol):
    """Points on the mode's guard surfaces, found by bisection along grid lines."""
    res_exprs = sys._residuals[mode]
    if not res_exprs:
        return np.empty((0, len(axes)))
    found = []
    mesh_axes = list(axes)
    for axis, line in enumerate(mesh_axes):
        if len(line) < 2:
            continue
        others = [a for k, a in enumerate(mesh_axes) if k != axis]
        base = np.stack([m.ravel() for m in np.meshgrid(*others, indexing="ij")], axis=1) if others else np.empty((1, 0))
        for seg in range(len(line) - 1):
            a = np.insert(base, axis, line[seg], axis=1)
            b = np.insert(base, axis, line[seg + 1], axis=1)
            ra = sys.region_residual_batch(mode, a, t)
            rb = sys.region_residual_batch(mode, b, t)
            for g in range(ra.shape[1]):
                change = (ra[:, g] > 0) != (rb[:, g] > 0)
                if not np.any(change):
                    continue
                lo = a[change].copy()
                hi = b[change].copy()
                rlo_pos = ra[change, g] > 0
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    rm = sys.region_residual_batch(mode, mid, t)[:, g] > 0
                    same = rm == rlo_pos
                    lo[same] = mid[same]
                    hi[~same] = mid[~same]
                found.append(np.where(rlo_pos[:, None], hi, lo))
    if not found:
        return np.empty((0, len(axes)))
    return np.concatenate(found)


def _closure_mask(sys, mode, pts, t, tol):
    r = sys.region_residual_batch(mode, pts, t)
    if r.shape[1] == 0:
        return np.ones(len(pts), dtype=bool)
    return np.all(r <= tol, axis=1)


def _mode_samples(sys, mode, counts, times, restrict_to_region):
    """Sample points (per time) for one mode: grid ∩ domain (∩ region closure)."""
    box = sys.full_domain()
    pts, axes = _grid_points(box, counts)
    region_t = any("t" in _free(g) for g in sys.modes[mode].region) or any("t" in _free(g) for g in sys.constraints)
    jac_t = sys.time_dependent_jacobian[mode]
    eval_times = times if (jac_t or region_t) else times[:1]
    per_time = []
    boundary_cache = None
    for t in eval_times:
        keep = sys.constraint_mask(pts, t)
        p = pts[keep]
        if restrict_to_region:
            p = p[_closure_mask(sys, mode, p, t, BOUNDARY_TOL)]
            if region_t or boundary_cache is None:
                bp = _boundary_points(sys, mode, axes, t, BOUNDARY_TOL)
                if len(bp):
                    bp = bp[sys.constraint_mask(bp, t) & _closure_mask(sys, mode, bp, t, BOUNDARY_TOL)]
                boundary_cache = bp
            if len(boundary_cache):
                p = np.concatenate([p, boundary_cache])
        per_time.append((t, p))
    # with a time-invariant Jacobian and region, the single slice stands for all times
    return per_time


def _free(g):
    from .exprlang import free_vars

    return free_vars(g.lhs) | free_vars(g.rhs)


def _sampled_rate(sys, mode, kind, counts, times, restrict_to_region):
    slices = _mode_samples(sys, mode, counts, times, restrict_to_region)
    worst = -math.inf
    worst_pt = None
    worst_t = None
    total = 0
    for t, pts in slices:
        if not len(pts):
            continue
        jac = sys.jacobian_batch(mode, pts, t)
        vals = mu_batch(jac, kind)
        k = int(np.argmax(vals))
        total += len(pts)
        if vals[k] > worst:
            worst = float(vals[k])
            worst_pt = tuple(float(v) for v in pts[k])
            worst_t = float(t)
    if total == 0:
        raise CertificationError(f"mode {sys.modes[mode].name!r} has no sample points in the domain")
    return ModeRate(sys.modes[mode].name, -worst, worst_pt, worst_t, total)


def _exact_rate(sys, mode, kind):
    jac = sys.constant_jacobians[mode]
    return ModeRate(sys.modes[mode].name, -mu(jac, kind), None, None, 0)


def _certify_modes(sys, kind, counts, times, restrict_to_region, label):
    kind = MeasureKind.parse(kind)
    if times is None:
        times = sys.default_time_samples(DEFAULT_TIME_SAMPLES)
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise CertificationError("need at least one time sample")
    exact = all(j is not None for j in sys.constant_jacobians)
    if exact:
        rates = [_exact_rate(sys, i, kind) for i in range(len(sys.modes))]
        # A constant-Jacobian mode still needs a non-empty region.
        if restrict_to_region and len(sys.modes) > 1:
            for i in range(len(sys.modes)):
                _sampled_rate(sys, i, kind, counts, times[:1], restrict_to_region)
        return ContractionCertificate(kind, rates, True, label)

    def one(i):
        if sys.constant_jacobians[i] is not None and not restrict_to_region:
            return _exact_rate(sys, i, kind)
        return _sampled_rate(sys, i, kind, counts, times, restrict_to_region)

    workers = _workers()
    if workers > 1 and len(sys.modes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rates = list(pool.map(one, range(len(sys.modes))))
    else:
        rates = [one(i) for i in range(len(sys.modes))]
    if np.isscalar(counts):
        counts = [int(counts)] * sys.full_domain().dim
    sampling = {
        "grid": [int(c) for c in counts],
        "time_samples": int(times.size),
        "time_range": [float(times[0]), float(times[-1])],
        "boundary_tol": BOUNDARY_TOL if restrict_to_region else None,
    }
    cert = ContractionCertificate(kind, rates, False, label, sampling)
    cert.notes.append("rates are maxima over a finite sample grid: evidence, not a proof")
    return cert


def certify_pwsc(sys: SwitchedSystemModel, measure="2", grid=DEFAULT_GRID, t_samples=None) -> ContractionCertificate:
    """Per-mode contraction rates of a PWSC system over its domain.

    Each mode is sampled on the grid points lying in the closure of its
    region, plus points on its guard surfaces located by bisection along
    grid lines.
    """
    if sys.kind != PWSC:
        raise CertificationError("certify_pwsc needs a pwsc system")
    return _certify_modes(sys, measure, grid, t_samples, True, "pwsc")


def certify_tss(sys: SwitchedSystemModel, measure="2", grid=DEFAULT_GRID, t_samples=None) -> ContractionCertificate:
    """Per-mode contraction rates of a time-switched system.

    Modes are selected by time, not state, so each one is sampled over the
    whole domain. Rates are stored as plain positive numbers ``c_sigma``.
    """
    if sys.kind != TSS:
        raise CertificationError("certify_tss needs a tss system")
    return _certify_modes(sys, measure, grid, t_samples, False, "tss")


def certify_system(sys: SwitchedSystemModel, measure="2", grid=DEFAULT_GRID, t_samples=None):
    if sys.kind == TSS:
        return certify_tss(sys, measure, grid, t_samples)
    return certify_pwsc(sys, measure, grid, t_samples)


def certify_pwl_exact(matrices: Sequence, measure="1", names: Sequence[str] | None = None) -> ContractionCertificate:
    """Exact certificate for ``x' = A(sigma) x`` under arbitrary switching.

    ``c_i = -mu(A_i)``; the family is VALID when every measure is negative.
    """
    kind = MeasureKind.parse(measure)
    mats = [as_matrix(a, square=True) for a in matrices]
    if not mats:
        raise CertificationError("empty matrix family")
    if len({m.shape for m in mats}) != 1:
        raise MeasureError("matrices in the family differ in size")
    names = list(names) if names is not None else [f"A{i + 1}" for i in range(len(mats))]
    rates = [ModeRate(name, -mu(a, kind)) for name, a in zip(names, mats)]
    return ContractionCertificate(kind, rates, True, "pwl")


def certify_virtual(virtual: SwitchedSystemModel, real: SwitchedSystemModel, measure="2", grid=9,
                    t_samples=None, embed_tol: float = 1e-9) -> ContractionCertificate:
    """Certify a virtual system ``y' = v(y, x, t)`` for partial contraction.

    ``virtual.inputs`` name the real system's states, in order. The
    embedding ``v(x, x, t) = f(x, t)`` is checked on a grid of the real
    domain first; contraction is then certified for ``dv/dy`` over the
    joint ``(y, x, t)`` grid.

    Raises
    ------
    CertificationError
        If the embedding check fails anywhere on the sample grid.
    """
    if virtual.dim != real.dim:
        raise CertificationError("virtual and real systems differ in dimension")
    if virtual.inputs and tuple(virtual.inputs) != tuple(real.states):
        raise CertificationError("virtual inputs must be the real system's states, in order")
    if t_samples is None:
        t_samples = (virtual if virtual.period else real).default_time_samples(17)
    times = np.asarray(t_samples, float)
    residual, where = embedding_residual(virtual, real, grid, times)
    if residual > embed_tol:
        raise CertificationError(f"embedding check failed: |v(x,x,t) - f(x,t)| = {residual:.3e} at {where}")
    label = "virtual"
    if virtual.kind == TSS:
        cert = _certify_modes(virtual, measure, grid, times, False, label)
    else:
        cert = _certify_modes(virtual, measure, grid, times, True, label)
    cert.extra["embedding_residual"] = residual
    return cert


def embedding_residual(virtual, real, grid, times):
    """Largest relative ``|v(x, x, t) - f(x, t)|`` over a grid of the real domain."""
    pts, _ = _grid_points(real.domain, grid)
    worst = 0.0
    where = None
    for t in times:
        keep = real.constraint_mask(pts, t)
        for x in pts[keep]:
            f = real.f(x, t)
            u = x if virtual.inputs else None
            v = virtual.f(x, t, u)
            err = float(np.max(np.abs(v - f)) / (1.0 + np.max(np.abs(f))))
            if err > worst:
                worst = err
                where = (tuple(float(c) for c in x), float(t))
    return worst, where


# ---------------------------------------------------------------- weight search

def _diag_transform(stack, theta):
    ratio = theta[:, None] / theta[None, :]
    return stack * ratio


def search_weight(matrices, tag="1", candidates=None, lo: float = 1e-2, hi: float = 1e2, points: int = 9):
    """Search diagonal weights ``theta`` maximising ``min_i -mu(theta A_i theta^-1)``.

    Parameters
    ----------
    matrices
        The family (any iterable of square arrays, or a ``(m, n, n)`` stack).
    candidates
        Explicit list of weight matrices to try instead of the log grid.
    lo, hi, points
        Log-spaced diagonal grid per axis. The first diagonal entry is fixed
        to 1 because the measure is invariant under scaling of ``theta``.

    Returns
    -------
    (MeasureKind, ContractionCertificate)
        Best weight and its exact certificate over the family (possibly
        INVALID). Ties keep the first candidate tried.
    """
    stack = np.asarray([as_matrix(a, square=True) for a in matrices]) if not isinstance(matrices, np.ndarray) or matrices.ndim != 3 else matrices
    if stack.shape[0] == 0:
        raise CertificationError("empty matrix family")
    n = stack.shape[1]
    best_val = -math.inf
    best_kind = None
    if candidates is not None:
        for theta in candidates:
            kind = MeasureKind(tag, theta)
            val = -float(mu_batch(stack, kind).max())
            if val > best_val:
                best_val, best_kind = val, kind
    else:
        if n > 4:
            raise CertificationError("diagonal grid search supports n <= 4")
        axis = np.logspace(math.log10(lo), math.log10(hi), points)
        base = MeasureKind(tag)
        for rest in itertools.product(axis, repeat=n - 1):
            theta = np.array((1.0,) + rest)
            val = -float(mu_batch(_diag_transform(stack, theta), base).max())
            if val > best_val:
                best_val, best_kind = val, MeasureKind.diagonal(tag, theta)
    if stack.shape[0] <= 64:
        cert = certify_pwl_exact(list(stack), best_kind)
    else:
        cert = ContractionCertificate(best_kind, [ModeRate("family", best_val, samples=int(stack.shape[0]))], True, "pwl")
    return best_kind, cert


def sample_jacobians(sys: SwitchedSystemModel, grid=9, t_samples=None) -> np.ndarray:
    """Stack of Jacobians of every mode over its sample set (coarse grid)."""
    times = sys.default_time_samples(17) if t_samples is None else np.asarray(t_samples, float)
    restrict = sys.kind == PWSC
    out = []
    for i in range(len(sys.modes)):
        if sys.constant_jacobians[i] is not None:
            out.append(sys.constant_jacobians[i][None])
            continue
        for t, pts in _mode_samples(sys, i, grid, times, restrict):
            if len(pts):
                out.append(sys.jacobian_batch(i, pts, t))
    return np.concatenate(out)


def search_weight_for_system(sys, tag="inf", search_grid=9, t_samples=None, lo=1e-2, hi=1e2, points=9,
                             grid=DEFAULT_GRID, cert_t_samples=None):
    """Pick a diagonal weight from coarse Jacobian samples, then certify on the full grid."""
    stack = sample_jacobians(sys, search_grid, t_samples)
    kind, _ = search_weight(stack, tag, lo=lo, hi=hi, points=points)
    cert = certify_system(sys, kind, grid, cert_t_samples)
    cert.notes.append(f"weight chosen by diagonal search over [{lo:g}, {hi:g}] with {points} points per axis")
    return kind, cert
