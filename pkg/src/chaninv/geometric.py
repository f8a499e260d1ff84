"""Controlled invariance: tests, supremal subspaces and friend synthesis."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ChannelPattern, MultiChannelSystem, input_matrix
from .subspace import (
    DimensionError,
    Subspace,
    column_span,
    distance_to,
    intersect,
    preimage,
    sum_subspaces,
)


class ToleranceFault(RuntimeError):
    """Fixed-point iteration failed to settle within its theoretical step count."""


class NotControlledInvariant(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class InvariancePattern:
    system: MultiChannelSystem
    pattern: ChannelPattern
    stacked_B: np.ndarray
    image: Subspace

    @classmethod
    def of(cls, system: MultiChannelSystem, pattern: ChannelPattern, tol: float = 1e-9):
        B = input_matrix(system, pattern)
        return cls(system, pattern, B, column_span(B, tol))


@dataclass(frozen=True, eq=False)
class Friend:
    """Feedback gains ``K_i`` (keyed by channel) keeping ``target`` invariant."""

    gains: dict[int, np.ndarray]
    target: Subspace
    residual: float
    patterns: tuple[ChannelPattern, ...]

    def stacked_gain(self, system: MultiChannelSystem, pattern: ChannelPattern) -> np.ndarray:
        """Gain rows for the alive channels of ``pattern`` (missing gains are zero)."""
        rows = [self.gains.get(j, np.zeros((system.channels[j - 1].width, system.n)))
                for j in pattern.channels()]
        return np.vstack(rows) if rows else np.zeros((0, system.n))

    def full_gain(self, system: MultiChannelSystem) -> np.ndarray:
        return self.stacked_gain(system, ChannelPattern.all_alive(system.N))

    def closed_loop(self, system: MultiChannelSystem, pattern: ChannelPattern) -> np.ndarray:
        return system.A + input_matrix(system, pattern) @ self.stacked_gain(system, pattern)


def _check_A(A, n):
    A = np.asarray(A, dtype=float)
    if A.shape != (n, n):
        raise DimensionError(f"A has shape {A.shape}, expected {(n, n)}")
    return A


def is_controlled_invariant(A, pattern_image: Subspace, V: Subspace) -> bool:
    """``A V`` contained in ``V + Im B`` (checked on the basis of ``V``)."""
    A = _check_A(A, V.ambient_dim)
    if pattern_image.ambient_dim != V.ambient_dim:
        raise DimensionError("input image and V live in different spaces")
    if V.dim == 0:
        return True
    S = sum_subspaces(V, pattern_image)
    for v in V.basis.T:
        Av = A @ v
        if distance_to(Av, S) > V.tol * max(1.0, float(np.linalg.norm(Av))):
            return False
    return True


def supremal_invariant(A, pattern_image: Subspace, F: Subspace) -> Subspace:
    """Largest ``(A, B)``-invariant subspace inside ``F`` (invariant subspace algorithm)."""
    A = _check_A(A, F.ambient_dim)
    V = F
    for _ in range(F.dim + 1):
        nxt = intersect(F, preimage(A, sum_subspaces(V, pattern_image)))
        if nxt.dim == V.dim:
            return nxt
        V = nxt
    raise ToleranceFault(f"invariant subspace iteration did not settle in {F.dim + 1} steps")


def smallest_invariant(A, V: Subspace) -> Subspace:
    """``<A | V>``: the smallest ``A``-invariant subspace containing ``V``."""
    A = _check_A(A, V.ambient_dim)
    W = V
    for _ in range(V.ambient_dim):
        if W.dim == 0:
            return W
        nxt = sum_subspaces(W, column_span(A @ W.basis, W.tol))
        if nxt.dim == W.dim:
            return nxt
        W = nxt
    return W


def robust_supremal(system: MultiChannelSystem, patterns, F: Subspace) -> Subspace:
    """Largest subspace of ``F`` that is controlled invariant for every pattern at once."""
    patterns = list(patterns)
    if not patterns:
        raise ValueError("need at least one pattern")
    A = _check_A(system.A, F.ambient_dim)
    images = [InvariancePattern.of(system, p, F.tol).image for p in patterns]
    V = F
    for _ in range(F.dim + 1):
        nxt = F
        for im in images:
            nxt = intersect(nxt, preimage(A, sum_subspaces(V, im)))
        if nxt.dim == V.dim:
            return nxt
        V = nxt
    raise ToleranceFault(f"joint invariant subspace iteration did not settle in {F.dim + 1} steps")


def closed_loop_supremal(matrices, F: Subspace) -> Subspace:
    """Largest subspace of ``F`` invariant under every matrix in ``matrices``."""
    V = F
    for _ in range(F.dim + 1):
        nxt = V
        for M in matrices:
            nxt = intersect(nxt, preimage(M, V))
        if nxt.dim == V.dim:
            return nxt
        V = nxt
    raise ToleranceFault("closed-loop invariant subspace iteration did not settle")


def _residual(system, gains, patterns, V: Subspace) -> float:
    worst = 0.0
    for p in patterns:
        Kp = np.vstack([gains.get(j, np.zeros((system.channels[j - 1].width, system.n)))
                        for j in p.channels()]) if p.alive else np.zeros((0, system.n))
        Acl = system.A + input_matrix(system, p) @ Kp
        for v in V.basis.T:
            scale = max(1.0, float(np.linalg.norm(system.A @ v)))
            worst = max(worst, distance_to(Acl @ v, V) / scale)
    return worst


def _split_gain(system, channels, K):
    gains, row = {}, 0
    for j in channels:
        w = system.channels[j - 1].width
        gains[j] = K[row:row + w]
        row += w
    return gains


def synthesize_friend(system: MultiChannelSystem, pattern: ChannelPattern, V: Subspace,
                      tol: float = 1e-8) -> Friend:
    """Feedback ``K`` with ``(A + B_alive K) V`` inside ``V``.

    For every basis vector ``v_k`` the system ``[V | B] (w_k; -u_k) = A v_k``
    is solved in the least-norm sense and ``K v_k = u_k``; ``K`` vanishes on
    the orthogonal complement of ``V``.
    """
    ip = InvariancePattern.of(system, pattern, V.tol)
    if not is_controlled_invariant(system.A, ip.image, V):
        raise NotControlledInvariant(f"target is not controlled invariant under pattern {pattern.label}")
    B = ip.stacked_B
    n, k = system.n, V.dim
    if k == 0 or B.shape[1] == 0:
        K = np.zeros((B.shape[1], n))
    else:
        M = np.hstack([V.basis, B])
        sol = np.linalg.lstsq(M, system.A @ V.basis, rcond=None)[0]
        U = -sol[k:]
        K = U @ V.basis.T
    gains = _split_gain(system, pattern.channels(), K)
    res = _residual(system, gains, [pattern], V)
    if res > tol:
        raise NotControlledInvariant(f"friend residual {res:.3e} exceeds {tol:.1e}")
    return Friend(gains, V, res, (pattern,))


def synthesize_common_friend(system: MultiChannelSystem, patterns, V: Subspace,
                             tol: float = 1e-8) -> Friend:
    """One gain tuple ``(K_1, ..., K_N)`` serving every pattern simultaneously.

    Unknowns are ``M_i = K_i V``; for each pattern the quotient part of
    ``A V + sum_{alive} B_i M_i`` must vanish.  The least-norm solution of the
    stacked linear system is used and ``K_i = M_i V^T``.
    """
    patterns = list(patterns)
    n, k = system.n, V.dim
    chans = sorted(set().union(*(p.alive for p in patterns)))
    if k == 0:
        gains = {j: np.zeros((system.channels[j - 1].width, n)) for j in chans}
        return Friend(gains, V, 0.0, tuple(patterns))
    Qp = V.complement().basis
    m = Qp.shape[1]
    if m == 0:
        gains = {j: np.zeros((system.channels[j - 1].width, n)) for j in chans}
        return Friend(gains, V, 0.0, tuple(patterns))
    widths = [system.channels[j - 1].width for j in chans]
    cols = [0, *np.cumsum([w * k for w in widths]).tolist()]
    rows, rhs = [], []
    eye_k = np.eye(k)
    for p in patterns:
        blk = np.zeros((m * k, cols[-1]))
        for idx, j in enumerate(chans):
            if j in p.alive:
                blk[:, cols[idx]:cols[idx + 1]] = np.kron(eye_k, Qp.T @ system.channels[j - 1].B)
        rows.append(blk)
        rhs.append(-(Qp.T @ system.A @ V.basis).ravel(order="F"))
    sol = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)[0]
    gains = {}
    for idx, j in enumerate(chans):
        Mi = sol[cols[idx]:cols[idx + 1]].reshape((widths[idx], k), order="F")
        gains[j] = Mi @ V.basis.T
    res = _residual(system, gains, patterns, V)
    if res > tol:
        raise NotControlledInvariant(f"no common friend: residual {res:.3e} exceeds {tol:.1e}")
    return Friend(gains, V, res, tuple(patterns))


def lattice_summary(system: MultiChannelSystem, patterns, F: Subspace) -> dict:
    """Per-pattern supremal subspaces, their plain intersection and the joint fixed point.

    ``intersection_invariant`` reports whether the plain intersection is
    itself controlled invariant for every pattern; the joint fixed point is
    always contained in it.
    """
    patterns = list(patterns)
    sup = {}
    plain = F
    for p in patterns:
        im = InvariancePattern.of(system, p, F.tol).image
        sup[p.label] = supremal_invariant(system.A, im, F)
        plain = intersect(plain, sup[p.label])
    invariant = all(
        is_controlled_invariant(system.A, InvariancePattern.of(system, p, F.tol).image, plain)
        for p in patterns)
    joint = robust_supremal(system, patterns, F)
    return {"supremal": sup, "intersection": plain, "intersection_invariant": invariant,
            "robust": joint}


def reachable_subspace(system: MultiChannelSystem, pattern: ChannelPattern, friend: Friend,
                       channel: int) -> Subspace:
    """``<A + B_alive K | Im B_channel>`` for the closed loop of ``friend``."""
    Acl = friend.closed_loop(system, pattern)
    return smallest_invariant(Acl, column_span(system.channels[channel - 1].B, friend.target.tol))


__all__ = [
    "Friend", "InvariancePattern", "NotControlledInvariant", "ToleranceFault",
    "closed_loop_supremal", "is_controlled_invariant", "lattice_summary", "reachable_subspace",
    "robust_supremal", "smallest_invariant", "supremal_invariant", "synthesize_common_friend",
    "synthesize_friend",
]
