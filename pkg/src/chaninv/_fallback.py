"""Pure numpy / heapq versions of the covering kernels."""
import heapq

import numpy as np

_CHUNK = 1 << 16


def pair_excursions(N, X0, Psi, g_idx, c_idx, cutoff):
    """Worst quotient distance over patterns and samples for each (grid point, candidate) pair.

    ``N`` is ``(S, m, n)``, ``X0`` is ``(G, n)``, ``Psi`` is ``(P, C, S, m)``.
    Pairs whose excursion exceeds ``cutoff`` report ``inf``.
    """
    g_idx = np.asarray(g_idx, dtype=np.int64)
    c_idx = np.asarray(c_idx, dtype=np.int64)
    out = np.empty(g_idx.shape[0])
    for lo in range(0, g_idx.shape[0], _CHUNK):
        g = g_idx[lo:lo + _CHUNK]
        c = c_idx[lo:lo + _CHUNK]
        free = np.einsum("sma,qa->sqm", N, X0[g])          # (S, q, m)
        worst = np.zeros(g.shape[0])
        for p in range(Psi.shape[0]):
            d = free + Psi[p][c].transpose(1, 0, 2)
            worst = np.maximum(worst, np.einsum("sqm,sqm->sq", d, d).max(axis=0))
        ex = np.sqrt(worst)
        ex[ex > cutoff] = np.inf
        out[lo:lo + _CHUNK] = ex
    return out


def greedy_cover(indptr, indices, n_points):
    """Lazy greedy set cover over CSR candidate sets; ties go to the lowest index."""
    sets = [indices[indptr[c]:indptr[c + 1]] for c in range(len(indptr) - 1)]
    heap = [(-len(s), c) for c, s in enumerate(sets) if len(s)]
    heapq.heapify(heap)
    covered = np.zeros(n_points, dtype=bool)
    remaining = n_points
    chosen = []
    while remaining and heap:
        _, c = heapq.heappop(heap)
        gain = int(np.count_nonzero(~covered[sets[c]]))
        if gain == 0:
            continue
        if heap and (-gain, c) > heap[0]:
            heapq.heappush(heap, (-gain, c))
            continue
        chosen.append(c)
        fresh = sets[c][~covered[sets[c]]]
        covered[fresh] = True
        remaining -= fresh.size
    return np.asarray(chosen, dtype=np.int64), covered


def propagate_responses(Phi, GB, Qt, U, sps):
    """Quotient zero-state responses ``(C, pieces * sps + 1, m)`` for inputs ``U`` of shape ``(C, pieces, r)``."""
    C, pieces, _ = U.shape
    out = np.zeros((pieces * sps + 1, C, Qt.shape[0]))
    psi = np.zeros((Phi.shape[0], C))
    s = 1
    for k in range(pieces):
        f = GB @ U[:, k, :].T
        for _ in range(sps):
            psi = Phi @ psi + f
            out[s] = (Qt @ psi).T
            s += 1
    return np.ascontiguousarray(out.transpose(1, 0, 2))


def response_at(Phi, GB, Qt, U, sps, s_star):
    """Quotient zero-state response at sample ``s_star``, shape ``(C, m)``."""
    C = U.shape[0]
    psi = np.zeros((Phi.shape[0], C))
    s = 0
    for k in range(U.shape[1]):
        if s >= s_star:
            break
        f = GB @ U[:, k, :].T
        for _ in range(sps):
            if s >= s_star:
                break
            psi = Phi @ psi + f
            s += 1
    return (Qt @ psi).T


def candidate_excursions(Phi, GB, Qt, U, sps, N, X0, indptr, g_idx, cutoff):
    """Excursions of CSR-grouped (candidate, grid point) pairs for one pattern."""
    Psi = propagate_responses(Phi, GB, Qt, U, sps)[None]
    c_idx = np.repeat(np.arange(U.shape[0], dtype=np.int64), np.diff(indptr))
    return pair_excursions(N, X0, Psi, g_idx, c_idx, cutoff)


def track_signals(Phi, GB, Kbar, Lp, Qt, bound, seeds, pieces):
    """Friend-tracking inputs ``(C, pieces, r)`` for the patterns stacked in ``GB`` (P, n, r)."""
    P, m = GB.shape[0], Qt.shape[0]
    x = np.repeat(seeds.T[None], P, axis=0)  # (P, n, C), a fresh array
    out = np.zeros((seeds.shape[0], pieces, GB.shape[2]))
    for k in range(pieces):
        v = Kbar @ x[0]
        if m:
            res = np.concatenate([Qt @ (Phi @ x[p] + GB[p] @ v) for p in range(P)])
            v -= Lp @ res
        np.clip(v, -bound[:, None], bound[:, None], out=v)
        x = Phi @ x + GB @ v
        out[:, k, :] = v.T
    return out
