"""Tolerance-aware linear subspaces of R^n.

A :class:`Subspace` stores an orthonormal column basis together with the
tolerance used to decide ranks and memberships.  All operations return new
objects; nothing is mutated after construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOL = 1e-9


class DimensionError(ValueError):
    """Raised when operands live in different ambient spaces."""


@dataclass(frozen=True, eq=False)
class Subspace:
    """Subspace of R^n given by an orthonormal basis (columns of ``basis``)."""

    basis: np.ndarray
    tol: float = DEFAULT_TOL
    _proj: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.ndim != 2:
            raise DimensionError("basis must be a 2-D array (ambient_dim x dim)")
        if b.shape[0] == 0:
            raise DimensionError("ambient dimension must be positive")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def projector(self) -> np.ndarray:
        """Orthogonal projector onto the subspace."""
        if self._proj is None:
            p = self.basis @ self.basis.T
            p.setflags(write=False)
            object.__setattr__(self, "_proj", p)
        return self._proj

    def complement(self) -> "Subspace":
        """Orthogonal complement in R^n."""
        n = self.ambient_dim
        if self.dim == 0:
            return Subspace(np.eye(n), self.tol)
        if self.dim == n:
            return zero(n, self.tol)
        u, _, _ = np.linalg.svd(self.basis, full_matrices=True)
        return Subspace(u[:, self.dim:], self.tol)

    def contains(self, other: "Subspace | np.ndarray") -> bool:
        """Containment test; vectors are checked relative to their norm."""
        if isinstance(other, Subspace):
            _check_same(self, other)
            if other.dim == 0:
                return True
            resid = other.basis - self.basis @ (self.basis.T @ other.basis)
            return float(np.linalg.norm(resid, 2)) <= self.tol
        x = np.asarray(other, dtype=float)
        if x.shape != (self.ambient_dim,):
            raise DimensionError(f"vector of shape {x.shape} in R^{self.ambient_dim}")
        return distance_to(x, self) <= self.tol * max(1.0, float(np.linalg.norm(x)))

    def equals(self, other: "Subspace") -> bool:
        return gap_metric(self, other) <= max(self.tol, other.tol)

    def __add__(self, other: "Subspace") -> "Subspace":
        return sum_subspaces(self, other)

    def __and__(self, other: "Subspace") -> "Subspace":
        return intersect(self, other)

    def __repr__(self):
        return f"Subspace(ambient_dim={self.ambient_dim}, dim={self.dim})"


def _check_same(V: Subspace, W: Subspace) -> None:
    if V.ambient_dim != W.ambient_dim:
        raise DimensionError(f"ambient mismatch: R^{V.ambient_dim} vs R^{W.ambient_dim}")


def zero(n: int, tol: float = DEFAULT_TOL) -> Subspace:
    """The zero subspace of R^n."""
    return Subspace(np.zeros((n, 0)), tol)


def full(n: int, tol: float = DEFAULT_TOL) -> Subspace:
    return Subspace(np.eye(n), tol)


def column_span(M, tol: float = DEFAULT_TOL) -> Subspace:
    """Column space of ``M``; rank cut at ``tol`` times the largest singular value."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise DimensionError("expected a matrix")
    if M.shape[0] == 0:
        raise DimensionError("ambient dimension must be positive")
    if M.shape[1] == 0:
        return zero(M.shape[0], tol)
    u, s, _ = np.linalg.svd(M, full_matrices=False)
    if s[0] == 0.0:
        return zero(M.shape[0], tol)
    rank = int(np.sum(s > tol * s[0]))
    return Subspace(u[:, :rank], tol)


def from_spanning_vectors(vectors, tol: float = DEFAULT_TOL, ambient_dim: int | None = None) -> Subspace:
    """Subspace spanned by a list of vectors.

    ``ambient_dim`` is only needed when ``vectors`` is empty.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    vectors = [np.asarray(v, dtype=float).ravel() for v in vectors]
    if not vectors:
        if not ambient_dim:
            raise DimensionError("empty vector list needs a positive ambient_dim")
        return zero(ambient_dim, tol)
    dims = {v.shape[0] for v in vectors}
    if len(dims) != 1:
        raise DimensionError(f"vectors of mixed dimensions {sorted(dims)}")
    n = dims.pop()
    if ambient_dim is not None and ambient_dim != n:
        raise DimensionError(f"vectors live in R^{n}, expected R^{ambient_dim}")
    return column_span(np.column_stack(vectors), tol)


def null_space(M, tol: float = DEFAULT_TOL, scale: float | None = None) -> Subspace:
    """Kernel of ``M``; singular values below ``tol * scale`` count as zero.

    ``scale`` defaults to ``max(1, ||M||)`` so that an all-noise matrix is
    treated as zero rather than as full rank.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[1]
    if M.shape[0] == 0:
        return full(n, tol)
    _, s, vt = np.linalg.svd(M, full_matrices=True)
    if scale is None:
        scale = max(1.0, float(s[0]) if s.size else 0.0)
    rank = int(np.sum(s > tol * scale))
    return Subspace(vt[rank:].T, tol)


def sum_subspaces(V: Subspace, W: Subspace) -> Subspace:
    """Smallest subspace containing both ``V`` and ``W``."""
    _check_same(V, W)
    return column_span(np.hstack([V.basis, W.basis]), min(V.tol, W.tol))


def intersect(V: Subspace, W: Subspace) -> Subspace:
    """Largest subspace contained in both, as a kernel of stacked complement projectors."""
    _check_same(V, W)
    tol = min(V.tol, W.tol)
    if V.dim == 0 or W.dim == 0:
        return zero(V.ambient_dim, tol)
    eye = np.eye(V.ambient_dim)
    stacked = np.vstack([eye - V.projector, eye - W.projector])
    return null_space(stacked, tol, scale=1.0)


def preimage(A, S: Subspace) -> Subspace:
    """``{x : A x in S}``."""
    A = np.asarray(A, dtype=float)
    n = S.ambient_dim
    if A.shape != (n, n):
        raise DimensionError(f"A has shape {A.shape}, expected {(n, n)}")
    M = (np.eye(n) - S.projector) @ A
    scale = max(1.0, float(np.linalg.norm(A, 2)))
    return null_space(M, S.tol, scale=scale)


def image(A, V: Subspace) -> Subspace:
    A = np.asarray(A, dtype=float)
    if A.shape[1] != V.ambient_dim:
        raise DimensionError("A columns must match the ambient dimension")
    return column_span(A @ V.basis, V.tol) if V.dim else zero(A.shape[0], V.tol)


def gap_metric(V: Subspace, W: Subspace) -> float:
    """Spectral norm of the difference of orthogonal projectors, in [0, 1]."""
    _check_same(V, W)
    d = V.projector - W.projector
    return min(1.0, float(np.linalg.norm(d, 2)))


def distance_to(x, V: Subspace) -> float:
    """Euclidean distance from ``x`` to ``V``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (V.ambient_dim,):
        raise DimensionError(f"vector of shape {x.shape} in R^{V.ambient_dim}")
    if V.dim == 0:
        return float(np.linalg.norm(x))
    return float(np.linalg.norm(x - V.basis @ (V.basis.T @ x)))


def to_rows(V: Subspace) -> list[list[float]]:
    """Basis matrix as a row-major nested list (ambient_dim rows)."""
    return [[float(a) for a in row] for row in V.basis]


def from_rows(rows, tol: float = DEFAULT_TOL) -> Subspace:
    """Inverse of :func:`to_rows`; the columns are taken as given."""
    b = np.asarray(rows, dtype=float)
    if b.ndim == 1:
        b = b.reshape(-1, 0) if b.size == 0 else b.reshape(-1, 1)
    return Subspace(b, tol)
