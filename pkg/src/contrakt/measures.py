"""Matrix measures (logarithmic norms), induced norms and the small dense
linear-algebra kernel used throughout the package.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Every public
function validates its inputs through :func:`as_matrix`, which rejects
non-finite entries.

Three measures are supported, each with an optional constant invertible
weight ``theta``:

========  ===================================================================
``"1"``   ``max_j (a_jj + sum_{i != j} |a_ij|)``   (column sums)
``"2"``   largest eigenvalue of ``(A + A^T) / 2``
``"inf"`` ``max_i (a_ii + sum_{j != i} |a_ij|)``   (row sums)
========  ===================================================================

A weighted measure is evaluated as ``mu(theta @ A @ inv(theta))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import MeasureError

__all__ = [
    "MeasureKind",
    "as_matrix",
    "mu",
    "mu_batch",
    "induced_norm",
    "vector_norm",
    "mu_limit_probe",
    "symmetric_part_max_eig",
    "kron",
    "laplacian_from_edges",
    "laplacian_spectrum",
    "read_matrix",
    "write_matrix",
    "load_matrix",
]

_TAGS = {"1": "1", "one": "1", "2": "2", "two": "2", "inf": "inf", "infinity": "inf", "∞": "inf"}

#: Weights whose 1-norm condition estimate exceeds this are rejected.
MAX_WEIGHT_CONDITION = 1e12


def as_matrix(a, *, square: bool = False, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float array, raising :class:`MeasureError` otherwise."""
    try:
        m = np.array(a, dtype=float)
    except (TypeError, ValueError) as exc:
        raise MeasureError(f"{name}: not a real matrix ({exc})") from None
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2 or m.size == 0:
        raise MeasureError(f"{name}: expected a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise MeasureError(f"{name}: non-finite entries")
    if square and m.shape[0] != m.shape[1]:
        raise MeasureError(f"{name}: expected a square matrix, got shape {m.shape}")
    return m


@dataclass(frozen=True, eq=False)
class MeasureKind:
    """Which matrix measure to use, optionally weighted by ``theta``.

    Parameters
    ----------
    tag : {"1", "2", "inf"}
        Base vector norm.
    weight : array_like, optional
        Constant invertible matrix ``theta``; the vector norm becomes
        ``|theta @ x|``.
    """

    tag: str = "2"
    weight: np.ndarray | None = None
    _inverse: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        tag = _TAGS.get(str(self.tag).strip().lower())
        if tag is None:
            raise MeasureError(f"unknown measure {self.tag!r}; expected one of 1, 2, inf")
        object.__setattr__(self, "tag", tag)
        if self.weight is not None:
            theta = as_matrix(self.weight, square=True, name="weight")
            try:
                inv = np.linalg.inv(theta)
            except np.linalg.LinAlgError:
                raise MeasureError("weight matrix is singular") from None
            cond = np.abs(theta).sum(axis=0).max() * np.abs(inv).sum(axis=0).max()
            if not np.isfinite(cond) or cond > MAX_WEIGHT_CONDITION:
                raise MeasureError(f"weight matrix is numerically singular (condition ~ {cond:.3g})")
            theta.setflags(write=False)
            inv.setflags(write=False)
            object.__setattr__(self, "weight", theta)
            object.__setattr__(self, "_inverse", inv)

    @classmethod
    def parse(cls, spec, weight=None) -> "MeasureKind":
        """Build from a tag string (or pass an existing kind through)."""
        if isinstance(spec, MeasureKind):
            if weight is None:
                return spec
            return cls(spec.tag, weight)
        return cls(str(spec), weight)

    @classmethod
    def diagonal(cls, tag, diag: Sequence[float]) -> "MeasureKind":
        return cls(tag, np.diag(np.asarray(diag, dtype=float)))

    @property
    def weighted(self) -> bool:
        return self.weight is not None

    def transform(self, a: np.ndarray) -> np.ndarray:
        """Similarity transform ``theta @ a @ inv(theta)`` (identity when unweighted).

        Works on a single matrix or a stack of shape ``(..., n, n)``.
        """
        if self.weight is None:
            return a
        n = self.weight.shape[0]
        if a.shape[-1] != n or a.shape[-2] != n:
            raise MeasureError(f"weight is {n}x{n} but matrix is {a.shape[-2]}x{a.shape[-1]}")
        return self.weight @ a @ self._inverse

    def describe(self) -> str:
        name = {"1": "mu_1", "2": "mu_2", "inf": "mu_inf"}[self.tag]
        if self.weight is None:
            return name
        d = np.diag(self.weight)
        if np.allclose(self.weight, np.diag(d)):
            return f"{name} weighted by diag({', '.join(f'{v:.6g}' for v in d)})"
        return f"{name} weighted by a full {self.weight.shape[0]}x{self.weight.shape[0]} matrix"

    def to_dict(self) -> dict:
        return {"tag": self.tag, "weight": None if self.weight is None else self.weight.tolist()}


def _kind(kind) -> MeasureKind:
    return kind if isinstance(kind, MeasureKind) else MeasureKind.parse(kind)


def _mu_unweighted(a: np.ndarray, tag: str) -> float:
    if tag == "2":
        return _max_eigh(0.5 * (a + a.T))
    off = np.abs(a)
    np.fill_diagonal(off, 0.0)
    axis = 0 if tag == "1" else 1
    return float(np.max(np.diag(a) + off.sum(axis=axis)))


def mu(a, kind="2") -> float:
    """Matrix measure of a square matrix.

    Examples
    --------
    >>> mu([[-1.0, 1.5], [0.8, -3.0]], "1")  # doctest: +ELLIPSIS
    -0.1999999...
    """
    k = _kind(kind)
    m = as_matrix(a, square=True)
    return _mu_unweighted(k.transform(m), k.tag)


def mu_batch(stack, kind="2") -> np.ndarray:
    """Measure of every matrix in a ``(m, n, n)`` stack, returned as shape ``(m,)``."""
    from . import _backend

    k = _kind(kind)
    s = np.asarray(stack, dtype=float)
    if s.ndim != 3 or s.shape[1] != s.shape[2]:
        raise MeasureError(f"expected a stack of square matrices, got shape {s.shape}")
    if s.shape[0] == 0:
        return np.empty(0)
    if not np.all(np.isfinite(s)):
        raise MeasureError("non-finite entries in matrix stack")
    s = k.transform(s)
    if k.tag == "2":
        sym = 0.5 * (s + np.swapaxes(s, 1, 2))
        return np.linalg.eigvalsh(sym)[:, -1]
    return _backend.kernels.mu_rowcol_batch(np.ascontiguousarray(s), 0 if k.tag == "1" else 1)


def _max_eigh(sym: np.ndarray) -> float:
    # LAPACK syevd: Householder tridiagonalisation followed by implicit QL/QR.
    return float(np.linalg.eigvalsh(sym)[-1])


def symmetric_part_max_eig(a) -> float:
    """Largest eigenvalue of the symmetric part ``(A + A^T) / 2``."""
    m = as_matrix(a, square=True)
    return _max_eigh(0.5 * (m + m.T))


def induced_norm(a, kind="2") -> float:
    """Operator norm induced by the (possibly weighted) vector norm of ``kind``.

    The spectral norm is ``sqrt(lambda_max(A^T A))`` computed with the
    same symmetric eigensolver as ``mu_2``.
    """
    k = _kind(kind)
    m = k.transform(as_matrix(a, square=k.weighted))
    if k.tag == "1":
        return float(np.abs(m).sum(axis=0).max())
    if k.tag == "inf":
        return float(np.abs(m).sum(axis=1).max())
    return float(np.sqrt(max(_max_eigh(m.T @ m), 0.0)))


def vector_norm(v, kind="2") -> float:
    """Vector norm ``|theta @ v|_p`` matching ``kind``."""
    k = _kind(kind)
    x = np.asarray(v, dtype=float)
    if k.weight is not None:
        x = k.weight @ x
    order = {"1": 1, "2": 2, "inf": np.inf}[k.tag]
    return float(np.linalg.norm(x, ord=order))


def mu_limit_probe(a, kind, h_sequence: Iterable[float]) -> np.ndarray:
    """Difference quotients ``(||I + h A|| - 1) / h`` for each ``h``.

    The quotients decrease monotonically to ``mu(A)`` as ``h`` shrinks.
    """
    k = _kind(kind)
    m = as_matrix(a, square=True)
    hs = np.asarray(list(h_sequence), dtype=float)
    if hs.ndim != 1 or hs.size == 0 or np.any(hs <= 0) or np.any(np.diff(hs) >= 0):
        raise MeasureError("h_sequence must be non-empty, positive and strictly decreasing")
    eye = np.eye(m.shape[0])
    return np.array([(induced_norm(eye + h * m, k) - 1.0) / h for h in hs])


def kron(a, b) -> np.ndarray:
    """Kronecker product of two matrices (vectors are treated as columns)."""
    return np.kron(as_matrix(a, name="left factor"), as_matrix(b, name="right factor"))


def laplacian_from_edges(n: int, edges: Iterable[tuple]) -> np.ndarray:
    """Graph Laplacian ``D - W`` of an undirected graph on nodes ``0..n-1``.

    ``edges`` holds ``(i, j)`` or ``(i, j, weight)`` tuples; repeated edges add up.
    """
    if n < 1:
        raise MeasureError("graph needs at least one node")
    lap = np.zeros((n, n))
    for edge in edges:
        i, j = int(edge[0]), int(edge[1])
        w = float(edge[2]) if len(edge) > 2 else 1.0
        if not (0 <= i < n and 0 <= j < n):
            raise MeasureError(f"edge ({i}, {j}) out of range for {n} nodes")
        if i == j:
            raise MeasureError(f"self-loop at node {i}")
        if w < 0 or not np.isfinite(w):
            raise MeasureError(f"edge ({i}, {j}) has invalid weight {w}")
        lap[i, j] -= w
        lap[j, i] -= w
        lap[i, i] += w
        lap[j, j] += w
    return lap


def laplacian_spectrum(lap, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues of a symmetric Laplacian and an orthogonal diagonaliser.

    Returns
    -------
    eigenvalues : ndarray, shape (N,)
        ``eigenvalues[1]`` is the algebraic connectivity when ``N > 1``.
    q : ndarray, shape (N, N)
        Orthogonal matrix with ``q.T @ lap @ q == diag(eigenvalues)``.
    """
    m = as_matrix(lap, square=True, name="Laplacian")
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > tol * scale:
        raise MeasureError("Laplacian is not symmetric")
    if np.abs(m.sum(axis=1)).max() > tol * scale:
        raise MeasureError("Laplacian rows do not sum to zero")
    vals, q = np.linalg.eigh(0.5 * (m + m.T))
    return vals, q


def read_matrix(text: str) -> np.ndarray:
    """Parse the plain-text matrix format: ``rows cols`` then row-major values.

    Blank lines and ``#`` comments are ignored.
    """
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if len(tokens) < 2:
        raise MeasureError("matrix text: missing 'rows cols' header")
    try:
        rows, cols = int(tokens[0]), int(tokens[1])
    except ValueError:
        raise MeasureError("matrix text: header must be two integers") from None
    if rows <= 0 or cols <= 0:
        raise MeasureError("matrix text: dimensions must be positive")
    values = tokens[2:]
    if len(values) != rows * cols:
        raise MeasureError(f"matrix text: expected {rows * cols} entries, found {len(values)}")
    try:
        data = np.array([float(v) for v in values])
    except ValueError as exc:
        raise MeasureError(f"matrix text: {exc}") from None
    return as_matrix(data.reshape(rows, cols))


def write_matrix(a, header: str | None = None) -> str:
    """Serialise a matrix with 17 significant digits (round-trips exactly)."""
    m = as_matrix(a)
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    lines.append(f"{m.shape[0]} {m.shape[1]}")
    lines.extend(" ".join(format(v, ".17g") for v in row) for row in m)
    return "\n".join(lines) + "\n"


def load_matrix(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        return read_matrix(fh.read())
