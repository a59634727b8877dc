"""Diffusively coupled networks of switched linear nodes.

Every node follows ``x_i' = A(sigma(t), t) x_i + Gamma sum_j w_ij (x_j - x_i)``
with one switching signal shared by all nodes. Stacked, this is
``X' = (I_N kron A - L kron Gamma) X``. In the Laplacian eigenbasis the
stack splits into blocks ``A - lambda_i Gamma``; block 1 is the synchronous
motion and the rest are transversal to the synchronization subspace.

Network file format
-------------------
::

    [network]
    name = three_node
    nodes = 3
    bound = 1e3                # optional half-width of the state box

    [graph]                    # 0-based edge list "i j [weight]"
    0 1
    0 2
    1 2

    [gamma]                    # inner coupling, one row per line
    1 0
    0 1

    [coupling]
    gain = 0.4                 # Gamma is gain * [gamma]

    [modes]                    # "name:" starts a block; entries are
    pos:                       # numbers or quoted expressions in t
    0 "sin(t)"
    -1 0
    neg:
    0 "-sin(t)"
    -1 0

    [signal]                   # as in system files
    dwell = 3
    period = "2*pi"
    t=0 mode=pos
    t=pi mode=neg
"""

from __future__ import annotations

import math
import shlex
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .certify import ContractionCertificate, ModeRate
from .errors import ExprError, ModelError, NetworkError
from .exprlang import Binary, Const, ExprNode, Var, compile_vectorized, evaluate, free_vars, parse_expr, simplify
from .measures import MeasureKind, as_matrix, laplacian_from_edges, laplacian_spectrum, mu, mu_batch
from .model import TSS, Box, ModeDef, SwitchedSystemModel, SwitchingSignal, parse_sections
from .simulate import Trajectory, fit_slope, integrate

__all__ = [
    "NetworkModel", "SyncCertificate", "CoordinationReport", "load_network", "load_network_file",
    "certify_sync", "threshold_k", "transversal_decompose", "simulate_network", "block_system",
    "coordination_error",
]


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Network of identical switched linear nodes with a shared signal.

    ``modes`` holds, per mode, an ``n x n`` tuple of expressions in ``t``.
    The effective inner coupling is ``gain * gamma``.
    """

    modes: tuple
    mode_names: tuple
    signal: SwitchingSignal
    gamma: np.ndarray
    adjacency: np.ndarray
    gain: float = 1.0
    name: str = "network"
    bound: float = 1e6
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.modes:
            raise NetworkError("network needs at least one node mode")
        n = len(self.modes[0])
        for m in self.modes:
            if len(m) != n or any(len(row) != n for row in m):
                raise NetworkError("mode matrices must all be n x n with the same n")
            for row in m:
                for e in row:
                    if free_vars(e) - {"t"}:
                        raise NetworkError(f"mode entries may only depend on t, got {sorted(free_vars(e))}")
        g = as_matrix(self.gamma, square=True, name="gamma")
        if g.shape[0] != n:
            raise NetworkError(f"gamma is {g.shape[0]}x{g.shape[0]} but node dimension is {n}")
        adj = as_matrix(self.adjacency, square=True, name="adjacency")
        if not np.allclose(adj, adj.T, rtol=0, atol=0):
            raise NetworkError("adjacency must be symmetric (undirected graph)")
        if np.any(adj < 0) or np.any(np.diag(adj) != 0):
            raise NetworkError("adjacency must be nonnegative with an empty diagonal")
        if len(self.mode_names) != len(self.modes):
            raise NetworkError("one name per mode required")
        bad = [i for i in self.signal.modes_used if not 0 <= i < len(self.modes)]
        if bad:
            raise NetworkError(f"signal references unknown modes {bad}")
        if not (math.isfinite(self.gain) and self.gain >= 0):
            raise NetworkError("coupling gain must be finite and nonnegative")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "adjacency", adj)

    @property
    def nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def dim(self) -> int:
        return len(self.modes[0])

    @property
    def coupling(self) -> np.ndarray:
        """Effective inner coupling ``gain * gamma``."""
        return self.gain * self.gamma

    @property
    def laplacian(self) -> np.ndarray:
        deg = np.diag(self.adjacency.sum(axis=1))
        return deg - self.adjacency

    def spectrum(self):
        return laplacian_spectrum(self.laplacian)

    @property
    def algebraic_connectivity(self) -> float:
        if self.nodes < 2:
            return 0.0
        return float(self.spectrum()[0][1])

    def with_gain(self, gain: float) -> "NetworkModel":
        return replace(self, gain=float(gain))

    def with_adjacency(self, adjacency) -> "NetworkModel":
        return replace(self, adjacency=np.asarray(adjacency, float))

    @property
    def time_dependent(self) -> bool:
        return any("t" in free_vars(e) for m in self.modes for row in m for e in row)

    def mode_matrix(self, mode: int, t: float) -> np.ndarray:
        return np.array([[evaluate(e, {"t": float(t)}) for e in row] for row in self.modes[mode]])

    def mode_matrices(self, mode: int, times) -> np.ndarray:
        """``A(mode, t)`` for every time, shape ``(len(times), n, n)``."""
        times = np.asarray(times, float)
        flat = [e for row in self.modes[mode] for e in row]
        vals = compile_vectorized(flat, ("t",))(times)
        n = self.dim
        out = np.empty((len(times), n * n))
        for k, v in enumerate(vals):
            out[:, k] = v
        return out.reshape(len(times), n, n)

    def default_times(self, count: int = 65) -> np.ndarray:
        span = self.signal.period if self.signal.period else 10.0
        return np.linspace(0.0, span, count)


# ---------------------------------------------------------------- loading

def _matrix_rows(items, params, what):
    rows = []
    for lineno, key, value in items:
        if key is not None:
            raise NetworkError(f"line {lineno}: unexpected 'key = value' in {what}")
        rows.append((lineno, value))
    return rows


def _entry(text, params, lineno):
    try:
        return simplify(parse_expr(text, allowed_vars=("t",), constants=params))
    except ExprError as exc:
        raise NetworkError(f"line {lineno}: {exc}") from None


def _const(text, params, lineno):
    e = _entry(text, params, lineno)
    if free_vars(e):
        raise NetworkError(f"line {lineno}: expected a constant, got {text!r}")
    return float(evaluate(e, {}))


def load_network(document: str) -> NetworkModel:
    """Parse a network description (see the module docstring)."""
    try:
        sections = dict((name, items) for name, items in parse_sections(document))
    except ModelError as exc:
        raise NetworkError(str(exc)) from None
    for req in ("graph", "gamma", "modes", "signal"):
        if req not in sections:
            raise NetworkError(f"missing [{req}] section")
    params: dict = {}
    for lineno, key, value in sections.get("params", []):
        if key is None:
            raise NetworkError(f"line {lineno}: expected 'name = value' in [params]")
        params[key] = _const(value, params, lineno)
    meta = {k: v for _, k, v in sections.get("network", []) if k is not None}

    edges = []
    max_node = -1
    for lineno, raw in _matrix_rows(sections["graph"], params, "[graph]"):
        parts = raw.split()
        if len(parts) not in (2, 3):
            raise NetworkError(f"line {lineno}: edge lines are 'i j [weight]'")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise NetworkError(f"line {lineno}: node indices must be integers") from None
        w = _const(parts[2], params, lineno) if len(parts) == 3 else 1.0
        edges.append((i, j, w))
        max_node = max(max_node, i, j)
    nodes = int(meta["nodes"]) if "nodes" in meta else max_node + 1
    try:
        lap = laplacian_from_edges(nodes, edges)
    except Exception as exc:
        raise NetworkError(str(exc)) from None
    adjacency = -lap
    np.fill_diagonal(adjacency, 0.0)

    gamma = []
    for lineno, raw in _matrix_rows(sections["gamma"], params, "[gamma]"):
        gamma.append([_const(p, params, lineno) for p in shlex.split(raw)])
    if len({len(r) for r in gamma}) != 1:
        raise NetworkError("[gamma] rows differ in length")

    gain = 1.0
    for lineno, key, value in sections.get("coupling", []):
        if key != "gain":
            raise NetworkError(f"line {lineno}: [coupling] only accepts 'gain'")
        gain = _const(value, params, lineno)

    names, blocks = [], []
    for lineno, key, value in sections["modes"]:
        if key is not None:
            raise NetworkError(f"line {lineno}: unexpected 'key = value' in [modes]")
        if value.endswith(":"):
            names.append(value[:-1].strip())
            blocks.append([])
            continue
        if not blocks:
            raise NetworkError(f"line {lineno}: matrix row before a 'name:' header")
        try:
            parts = shlex.split(value)
        except ValueError as exc:
            raise NetworkError(f"line {lineno}: {exc}") from None
        blocks[-1].append(tuple(_entry(p, params, lineno) for p in parts))
    modes = tuple(tuple(b) for b in blocks)

    dwell, speriod, bps = None, None, []
    for lineno, key, value in sections["signal"]:
        if key == "dwell":
            dwell = _const(value, params, lineno)
        elif key == "period":
            speriod = _const(value, params, lineno)
        elif key is None and isinstance(value, tuple):
            if value[1] not in names:
                raise NetworkError(f"line {lineno}: unknown mode {value[1]!r}")
            bps.append((_const(value[0], params, lineno), names.index(value[1])))
        else:
            raise NetworkError(f"line {lineno}: unexpected entry in [signal]")
    if dwell is None:
        raise NetworkError("[signal] needs 'dwell'")
    try:
        signal = SwitchingSignal(tuple(bps), dwell, speriod)
    except ModelError as exc:
        raise NetworkError(str(exc)) from None
    bound = _const(meta["bound"], params, 0) if "bound" in meta else 1e6
    return NetworkModel(
        modes=modes, mode_names=tuple(names), signal=signal, gamma=np.array(gamma, float),
        adjacency=adjacency, gain=gain, name=meta.get("name", "network"), bound=bound, params=params,
    )


def load_network_file(path) -> NetworkModel:
    with open(path, encoding="utf-8") as fh:
        return load_network(fh.read())


# ---------------------------------------------------------------- certification

def _envelope(stack: np.ndarray) -> np.ndarray:
    """Entrywise majorant: max diagonal, max |off-diagonal| over a stack.

    For mu_1 and mu_inf, ``mu(A(t)) <= mu(envelope)`` for every member.
    """
    env = np.abs(stack).max(axis=0)
    idx = np.arange(stack.shape[1])
    env[idx, idx] = stack[:, idx, idx].max(axis=0)
    return env


@dataclass
class SyncCertificate:
    """Synchronization verdict for a network.

    ``sampled`` takes the maximum of ``mu(A(sigma, t) - lambda_2 Gamma)`` over a
    time grid. ``envelope`` (mu_1 / mu_inf only) bounds it through an
    entrywise majorant of each mode over the same grid, which gives the
    worst case ``|sin t| = 1`` for trigonometric entries. The verdict uses
    the envelope when available.
    """

    measure: MeasureKind
    lambdas: np.ndarray
    sampled: ContractionCertificate
    envelope: ContractionCertificate | None
    block_rates: list
    binding_lambda2: bool

    @property
    def certificate(self) -> ContractionCertificate:
        return self.envelope if self.envelope is not None else self.sampled

    @property
    def rate(self) -> float:
        return self.certificate.rate

    @property
    def valid(self) -> bool:
        return self.certificate.valid

    def report(self) -> str:
        lines = [
            f"verdict: {'VALID' if self.valid else 'INVALID'}",
            f"measure: {self.measure.describe()}",
            f"laplacian eigenvalues: {', '.join(f'{v:.10g}' for v in self.lambdas)}",
            f"algebraic connectivity: {self.lambdas[1]:.17g}",
            f"rate c = {self.rate:.17g} ({'envelope' if self.envelope is not None else 'sampled'} path)",
            f"sampled-path rate: {self.sampled.rate:.17g}",
        ]
        if self.envelope is not None:
            lines.append(f"envelope-path rate: {self.envelope.rate:.17g}")
        for lam, rate in self.block_rates:
            lines.append(f"  block lambda = {lam:.10g}: c = {rate:.17g}")
        lines.append(f"lambda_2 block binding: {'yes' if self.binding_lambda2 else 'no'}")
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        out = [
            f"valid = {str(self.valid).lower()}",
            f"rate = {self.rate:.17g}",
            f"measure = {self.measure.tag}",
            f"lambda2 = {self.lambdas[1]:.17g}",
            f"sampled_rate = {self.sampled.rate:.17g}",
            f"binding_lambda2 = {str(self.binding_lambda2).lower()}",
        ]
        if self.envelope is not None:
            out.append(f"envelope_rate = {self.envelope.rate:.17g}")
        return "\n".join(out) + "\n"


def _block_rate(net, lam, kind, times, envelope):
    coupling = lam * net.coupling
    rates = []
    for i in range(len(net.modes)):
        stack = net.mode_matrices(i, times) - coupling
        if envelope:
            rates.append(-mu(_envelope(stack), kind))
        else:
            rates.append(-float(mu_batch(stack, kind).max()))
    return rates


def certify_sync(net: NetworkModel, measure="1", times=None, t_samples: int = 65) -> SyncCertificate:
    """Certify synchronization through ``mu(A(sigma) - lambda_2 Gamma) <= -c``.

    All transversal blocks ``lambda_i, i >= 2`` are evaluated too, and the
    report says whether ``lambda_2`` gives the smallest rate.

    Raises
    ------
    NetworkError
        For fewer than two nodes or a disconnected graph.
    """
    kind = MeasureKind.parse(measure)
    if net.nodes < 2:
        raise NetworkError("synchronization needs at least two nodes")
    lambdas, _ = net.spectrum()
    scale = max(1.0, float(np.max(np.abs(lambdas))))
    if lambdas[1] <= 1e-10 * scale:
        raise NetworkError("graph is disconnected (lambda_2 = 0)")
    times = net.default_times(t_samples) if times is None else np.asarray(times, float)
    if not net.time_dependent:
        times = times[:1]
    use_env = kind.tag in ("1", "inf") and net.time_dependent
    sampled_rates = _block_rate(net, lambdas[1], kind, times, False)
    sampled = ContractionCertificate(
        kind, [ModeRate(name, r, samples=len(times)) for name, r in zip(net.mode_names, sampled_rates)],
        exact=not net.time_dependent, kind="sync",
        sampling=None if not net.time_dependent else {"time_samples": int(len(times)),
                                                      "time_range": [float(times[0]), float(times[-1])]},
    )
    envelope = None
    if use_env:
        if kind.weight is not None:
            use_env = False
        else:
            env_rates = _block_rate(net, lambdas[1], kind, times, True)
            envelope = ContractionCertificate(
                kind, [ModeRate(name, r, samples=len(times)) for name, r in zip(net.mode_names, env_rates)],
                exact=False, kind="sync",
                sampling={"time_samples": int(len(times)), "path": "entrywise envelope"},
            )
    block_rates = []
    for lam in lambdas[1:]:
        r = _block_rate(net, lam, kind, times, envelope is not None)
        block_rates.append((float(lam), min(r)))
    best = min(r for _, r in block_rates)
    binding = abs(block_rates[0][1] - best) <= 1e-12 * max(1.0, abs(best))
    return SyncCertificate(kind, lambdas, sampled, envelope, block_rates, binding)


def threshold_k(net: NetworkModel, measure="1", k_range: tuple = (0.0, 10.0), tol: float = 1e-9,
                probes: int = 17) -> float:
    """Smallest coupling gain giving a VALID synchronization certificate.

    The verdict is first probed on an even grid of gains to confirm it flips
    once from INVALID to VALID; the flip is then bisected to ``tol``.
    Returns ``k_range[0]`` when the network is already certified there.

    Raises
    ------
    NetworkError
        When the verdict does not change over the range, or is not monotone.
    """
    lo, hi = map(float, k_range)
    if not (0 <= lo < hi):
        raise NetworkError("k range must satisfy 0 <= lo < hi")
    kind = MeasureKind.parse(measure)
    times = net.default_times()

    def ok(k):
        return certify_sync(net.with_gain(k), kind, times).valid

    verdicts = [ok(k) for k in np.linspace(lo, hi, probes)]
    flips = sum(1 for a, b in zip(verdicts, verdicts[1:]) if a != b)
    if verdicts[0]:
        if not all(verdicts):
            raise NetworkError("certificate is not monotone in the coupling gain")
        return lo
    if not verdicts[-1]:
        raise NetworkError(f"no VALID certificate for k in [{lo:g}, {hi:g}]")
    if flips != 1:
        raise NetworkError("certificate is not monotone in the coupling gain")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _sub(a: ExprNode, b: float) -> ExprNode:
    if b == 0:
        return a
    return simplify(Binary("-", a, Const(float(b))))


def transversal_decompose(net: NetworkModel) -> list:
    """Blocks ``(lambda_i, [A(sigma) - lambda_i Gamma per mode])``, ascending ``lambda_i``.

    Each mode block is an ``n x n`` tuple of expressions in ``t``. The first
    block (``lambda_1 = 0``) carries the synchronous dynamics.
    """
    lambdas, _ = net.spectrum()
    lambdas = lambdas.copy()
    lambdas[0] = 0.0 if abs(lambdas[0]) < 1e-10 * max(1.0, float(np.max(np.abs(lambdas)))) else lambdas[0]
    coupling = net.coupling
    out = []
    for lam in lambdas:
        blocks = []
        for m in net.modes:
            blocks.append(tuple(
                tuple(_sub(e, lam * coupling[r, c]) for c, e in enumerate(row)) for r, row in enumerate(m)
            ))
        out.append((float(lam), blocks))
    return out


def evaluate_block(block, t: float) -> np.ndarray:
    return np.array([[evaluate(e, {"t": float(t)}) for e in row] for row in block])


# ---------------------------------------------------------------- simulation

def _linear_field(matrix_exprs, names):
    """Expressions for ``M x`` where ``M`` holds expression entries."""
    out = []
    for row in matrix_exprs:
        acc = None
        for e, name in zip(row, names):
            if isinstance(e, Const) and e.value == 0:
                continue
            term = Var(name) if isinstance(e, Const) and e.value == 1 else Binary("*", e, Var(name))
            acc = term if acc is None else Binary("+", acc, term)
        out.append(simplify(acc) if acc is not None else Const(0.0))
    return tuple(out)


def _tss_model(name, states, mode_names, mode_fields, signal, bound):
    n = len(states)
    modes = tuple(ModeDef(nm, fld) for nm, fld in zip(mode_names, mode_fields))
    return SwitchedSystemModel(
        name=name, kind=TSS, states=tuple(states), modes=modes,
        domain=Box((-bound,) * n, (bound,) * n), signal=signal, period=signal.period,
    )


def stacked_system(net: NetworkModel) -> SwitchedSystemModel:
    """TSS model of ``X' = (I_N kron A(sigma) - L kron Gamma) X``.

    The coupling is written in its diffusive form ``Gamma sum_j w_ij (x_j - x_i)``,
    so every coupling term vanishes exactly on the synchronization subspace
    and identical node states stay bitwise identical.
    """
    N, n = net.nodes, net.dim
    names = [f"x{i}_{a}" for i in range(N) for a in range(n)]
    gamma = net.coupling
    adj = net.adjacency

    def var(i, b):
        return Var(names[i * n + b])

    fields = []
    for m in net.modes:
        rows = []
        for i in range(N):
            own = _linear_field(m, names[i * n:(i + 1) * n])
            for a in range(n):
                acc = own[a]
                for b in range(n):
                    if gamma[a, b] == 0:
                        continue
                    diffusion = None
                    for j in range(N):
                        if adj[i, j] == 0:
                            continue
                        term = Binary("-", var(j, b), var(i, b))
                        if adj[i, j] != 1:
                            term = Binary("*", Const(float(adj[i, j])), term)
                        diffusion = term if diffusion is None else Binary("+", diffusion, term)
                    if diffusion is not None:
                        acc = Binary("+", acc, Binary("*", Const(float(gamma[a, b])), diffusion))
                rows.append(simplify(acc))
        fields.append(tuple(rows))
    return _tss_model(net.name, names, net.mode_names, fields, net.signal, net.bound)


def block_system(net: NetworkModel, index: int) -> SwitchedSystemModel:
    """TSS model of the ``index``-th block ``z' = (A(sigma) - lambda Gamma) z``."""
    lam, blocks = transversal_decompose(net)[index]
    names = [f"z{a}" for a in range(net.dim)]
    fields = [_linear_field(b, names) for b in blocks]
    return _tss_model(f"{net.name}-block{index}", names, net.mode_names, fields, net.signal, net.bound)


def coordination_error(states: np.ndarray, nodes: int) -> np.ndarray:
    """``|X - 1_N kron mean(x_i)|_2`` per sample of stacked states ``(m, N*n)``."""
    m = states.shape[0]
    per_node = states.reshape(m, nodes, -1)
    # shift by node 0 first so exactly synchronized states give exactly zero
    rel = per_node - per_node[:, :1, :]
    dev = rel - rel.mean(axis=1, keepdims=True)
    return np.sqrt(np.einsum("mij,mij->m", dev, dev))


@dataclass
class CoordinationReport:
    times: np.ndarray
    errors: np.ndarray
    slope: float
    gain: float
    certified: bool | None
    rate: float | None

    @property
    def decaying(self) -> bool:
        return math.isfinite(self.slope) and self.slope < 0

    def summary(self) -> str:
        lines = [
            f"coupling gain: {self.gain:g}",
            f"initial coordination error: {self.errors[0]:.6g}",
            f"final coordination error: {self.errors[-1]:.6g}",
            f"fitted slope: {self.slope:.6g}",
        ]
        if self.certified is not None:
            lines.append(f"certificate: {'VALID' if self.certified else 'INVALID'} (rate {self.rate:.6g})")
        return "\n".join(lines) + "\n"


def simulate_network(net: NetworkModel, x0, t0: float, t1: float, dt: float = 1e-3, measure="1",
                     transient: float = 0.1, noise_floor: float = 1e-12):
    """Integrate the stacked network and measure its distance to synchrony.

    Parameters
    ----------
    x0
        Initial node states, shape ``(N, n)`` (or flat ``N*n``).

    Returns
    -------
    (CoordinationReport, list of Trajectory, Trajectory)
        Report, per-node trajectories and the stacked trajectory.
    """
    N, n = net.nodes, net.dim
    x0 = np.asarray(x0, float).reshape(N * n)
    sys = stacked_system(net)
    traj = integrate(sys, x0, t0, t1, dt)
    times, states, _ = traj.grid_samples()
    err = coordination_error(states, N)
    floor = noise_floor * (1.0 + float(np.max(np.abs(states))))
    slope, _ = fit_slope(times, err, t0 + transient * (t1 - t0), floor)
    certified, rate = None, None
    if N > 1:
        try:
            cert = certify_sync(net, measure)
            certified, rate = cert.valid, cert.rate
        except NetworkError:
            pass
    per_node = []
    for i in range(N):
        per_node.append(Trajectory(
            traj.times, traj.states[:, i * n:(i + 1) * n], traj.modes, traj.events, traj.on_grid,
            tuple(f"x{a + 1}" for a in range(n)), traj.mode_names,
        ))
    return CoordinationReport(times, err, slope, net.gain, certified, rate), per_node, traj
