# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled covering kernels; see ``_fallback`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def pair_excursions(const double[:, :, ::1] N, const double[:, ::1] X0,
                    const double[:, :, :, ::1] Psi, const long[::1] g_idx,
                    const long[::1] c_idx, double cutoff):
    cdef Py_ssize_t S = N.shape[0], m = N.shape[1], n = N.shape[2]
    cdef Py_ssize_t P = Psi.shape[0]
    cdef Py_ssize_t npairs = g_idx.shape[0]
    cdef Py_ssize_t q, s, i, a, p
    cdef long g, c
    cdef double acc, comp, worst, cut2 = cutoff * cutoff
    cdef bint over
    out = np.empty(npairs, dtype=np.float64)
    cdef double[::1] res = out
    with nogil:
        for q in range(npairs):
            g = g_idx[q]
            c = c_idx[q]
            worst = 0.0
            over = False
            s = S - 1
            while s >= 0 and not over:
                for p in range(P):
                    acc = 0.0
                    for i in range(m):
                        comp = Psi[p, c, s, i]
                        for a in range(n):
                            comp = comp + N[s, i, a] * X0[g, a]
                        acc = acc + comp * comp
                    if acc > worst:
                        worst = acc
                    if worst > cut2:
                        over = True
                        break
                s -= 1
            res[q] = INFINITY if over else sqrt(worst)
    return out


def greedy_cover(const long[::1] indptr, const long[::1] indices, long n_points):
    """Lazy greedy set cover; ties go to the lowest candidate index."""
    cdef Py_ssize_t C = indptr.shape[0] - 1
    cdef Py_ssize_t hsize = 0, i, j, child, parent, best
    cdef long c, gain, top_gain, top_c
    cdef long remaining = n_points
    covered_arr = np.zeros(n_points, dtype=np.uint8)
    cdef unsigned char[::1] covered = covered_arr
    heap_gain_arr = np.empty(C, dtype=np.int64)
    heap_idx_arr = np.empty(C, dtype=np.int64)
    cdef long[::1] hg = heap_gain_arr
    cdef long[::1] hi = heap_idx_arr
    chosen = []
    # max-heap keyed on (gain desc, index asc)
    for c in range(C):
        gain = indptr[c + 1] - indptr[c]
        if gain <= 0:
            continue
        i = hsize
        hsize += 1
        while i > 0:
            parent = (i - 1) // 2
            if hg[parent] > gain or (hg[parent] == gain and hi[parent] < c):
                break
            hg[i] = hg[parent]
            hi[i] = hi[parent]
            i = parent
        hg[i] = gain
        hi[i] = c
    while remaining > 0 and hsize > 0:
        top_c = hi[0]
        gain = 0
        for j in range(indptr[top_c], indptr[top_c + 1]):
            if not covered[indices[j]]:
                gain += 1
        # pop
        hsize -= 1
        if hsize > 0:
            _sift_down(hg, hi, hsize, hg[hsize], hi[hsize])
        if gain == 0:
            continue
        if hsize > 0 and (hg[0] > gain or (hg[0] == gain and hi[0] < top_c)):
            _push(hg, hi, hsize, gain, top_c)
            hsize += 1
            continue
        chosen.append(top_c)
        for j in range(indptr[top_c], indptr[top_c + 1]):
            if not covered[indices[j]]:
                covered[indices[j]] = 1
                remaining -= 1
    return np.asarray(chosen, dtype=np.int64), covered_arr.astype(bool)


cdef inline void _push(long[::1] hg, long[::1] hi, Py_ssize_t hsize, long gain, long c):
    cdef Py_ssize_t i = hsize, parent
    while i > 0:
        parent = (i - 1) // 2
        if hg[parent] > gain or (hg[parent] == gain and hi[parent] < c):
            break
        hg[i] = hg[parent]
        hi[i] = hi[parent]
        i = parent
    hg[i] = gain
    hi[i] = c


cdef inline void _sift_down(long[::1] hg, long[::1] hi, Py_ssize_t hsize, long gain, long c):
    cdef Py_ssize_t i = 0, child
    while True:
        child = 2 * i + 1
        if child >= hsize:
            break
        if child + 1 < hsize and (hg[child + 1] > hg[child] or
                                  (hg[child + 1] == hg[child] and hi[child + 1] < hi[child])):
            child += 1
        if gain > hg[child] or (gain == hg[child] and c < hi[child]):
            break
        hg[i] = hg[child]
        hi[i] = hi[child]
        i = child
    hg[i] = gain
    hi[i] = c


def propagate_responses(const double[:, ::1] Phi, const double[:, ::1] GB,
                        const double[:, ::1] Qt, const double[:, :, ::1] U, long sps):
    """Quotient zero-state responses, shape ``(C, pieces * sps + 1, m)``."""
    cdef Py_ssize_t C = U.shape[0], pieces = U.shape[1], r = U.shape[2]
    cdef Py_ssize_t n = Phi.shape[0], m = Qt.shape[0]
    cdef Py_ssize_t S = pieces * sps + 1
    cdef Py_ssize_t c, k, j, a, b, s
    out_arr = np.zeros((C, S, m), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] psi = np.zeros(n)
    cdef double[::1] tmp = np.zeros(n)
    cdef double[::1] f = np.zeros(n)
    cdef double acc
    with nogil:
        for c in range(C):
            for a in range(n):
                psi[a] = 0.0
            s = 1
            for k in range(pieces):
                for a in range(n):
                    acc = 0.0
                    for b in range(r):
                        acc = acc + GB[a, b] * U[c, k, b]
                    f[a] = acc
                for j in range(sps):
                    for a in range(n):
                        acc = f[a]
                        for b in range(n):
                            acc = acc + Phi[a, b] * psi[b]
                        tmp[a] = acc
                    for a in range(n):
                        psi[a] = tmp[a]
                    for a in range(m):
                        acc = 0.0
                        for b in range(n):
                            acc = acc + Qt[a, b] * psi[b]
                        out[c, s, a] = acc
                    s += 1
    return out_arr


def response_at(const double[:, ::1] Phi, const double[:, ::1] GB,
                const double[:, ::1] Qt, const double[:, :, ::1] U, long sps, long s_star):
    """Quotient zero-state response at sample ``s_star`` only, shape ``(C, m)``.

    Candidates sit in the inner loop so every step streams over contiguous rows.
    """
    cdef Py_ssize_t C = U.shape[0], pieces = U.shape[1], r = U.shape[2]
    cdef Py_ssize_t n = Phi.shape[0], m = Qt.shape[0]
    cdef Py_ssize_t c, k, j, a, b, s, i
    cdef double w
    out_arr = np.zeros((C, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] psi = np.zeros((n, C))
    cdef double[:, ::1] nxt = np.zeros((n, C))
    cdef double[:, ::1] f = np.zeros((n, C))
    cdef double[:, ::1] uk = np.zeros((max(r, 1), C))
    with nogil:
        s = 0
        k = 0
        while s < s_star and k < pieces:
            for b in range(r):
                for c in range(C):
                    uk[b, c] = U[c, k, b]
            for a in range(n):
                for c in range(C):
                    f[a, c] = 0.0
                for b in range(r):
                    w = GB[a, b]
                    for c in range(C):
                        f[a, c] += w * uk[b, c]
            j = 0
            while j < sps and s < s_star:
                for a in range(n):
                    for c in range(C):
                        nxt[a, c] = f[a, c]
                    for b in range(n):
                        w = Phi[a, b]
                        for c in range(C):
                            nxt[a, c] += w * psi[b, c]
                psi, nxt = nxt, psi
                s += 1
                j += 1
            k += 1
        for i in range(m):
            for a in range(n):
                w = Qt[i, a]
                for c in range(C):
                    out[c, i] += w * psi[a, c]
    return out_arr


def candidate_excursions(const double[:, ::1] Phi, const double[:, ::1] GB,
                         const double[:, ::1] Qt, const double[:, :, ::1] U, long sps,
                         const double[:, :, ::1] N, const double[:, ::1] X0,
                         const long[::1] indptr, const long[::1] g_idx, double cutoff):
    """Fused propagation and pair check; pairs of candidate c are ``g_idx[indptr[c]:indptr[c+1]]``."""
    cdef Py_ssize_t C = U.shape[0], pieces = U.shape[1], r = U.shape[2]
    cdef Py_ssize_t n = Phi.shape[0], m = Qt.shape[0]
    cdef Py_ssize_t c, k, j, a, b, s, q, i, alive
    cdef long g
    cdef double acc, comp, cut2 = cutoff * cutoff
    out_arr = np.zeros(g_idx.shape[0], dtype=np.float64)
    cdef double[::1] worst = out_arr
    cdef double[::1] psi = np.zeros(n)
    cdef double[::1] tmp = np.zeros(n)
    cdef double[::1] f = np.zeros(n)
    cdef double[::1] qv = np.zeros(max(m, 1))
    with nogil:
        for c in range(C):
            if indptr[c + 1] == indptr[c]:
                continue
            for a in range(n):
                psi[a] = 0.0
            # sample 0: zero response
            for q in range(indptr[c], indptr[c + 1]):
                g = g_idx[q]
                acc = 0.0
                for i in range(m):
                    comp = 0.0
                    for a in range(n):
                        comp = comp + N[0, i, a] * X0[g, a]
                    acc = acc + comp * comp
                worst[q] = acc
            s = 1
            alive = 1
            for k in range(pieces):
                if not alive:
                    break
                for a in range(n):
                    acc = 0.0
                    for b in range(r):
                        acc = acc + GB[a, b] * U[c, k, b]
                    f[a] = acc
                for j in range(sps):
                    for a in range(n):
                        acc = f[a]
                        for b in range(n):
                            acc = acc + Phi[a, b] * psi[b]
                        tmp[a] = acc
                    for a in range(n):
                        psi[a] = tmp[a]
                    for i in range(m):
                        acc = 0.0
                        for a in range(n):
                            acc = acc + Qt[i, a] * psi[a]
                        qv[i] = acc
                    alive = 0
                    for q in range(indptr[c], indptr[c + 1]):
                        if worst[q] > cut2:
                            continue
                        g = g_idx[q]
                        acc = 0.0
                        for i in range(m):
                            comp = qv[i]
                            for a in range(n):
                                comp = comp + N[s, i, a] * X0[g, a]
                            acc = acc + comp * comp
                        if acc > worst[q]:
                            worst[q] = acc
                        if worst[q] <= cut2:
                            alive = 1
                    s += 1
                    if not alive:
                        break
        for q in range(g_idx.shape[0]):
            if worst[q] > cut2:
                worst[q] = INFINITY
            else:
                worst[q] = sqrt(worst[q])
    return out_arr


def track_signals(const double[:, ::1] Phi, const double[:, :, ::1] GB, const double[:, ::1] Kbar,
                  const double[:, ::1] Lp, const double[:, ::1] Qt, const double[::1] bound,
                  const double[:, ::1] seeds, long pieces):
    """Friend-tracking inputs ``(C, pieces, r)`` for ``P`` patterns at once.

    ``GB[p]`` is the per-piece input map of pattern ``p`` (dead columns zero).
    Each piece starts from the averaged friend input along the prediction of
    pattern 0, subtracts ``Lp`` times the stacked quotient residuals of all
    patterns, and is clipped to ``bound``.
    """
    cdef Py_ssize_t C = seeds.shape[0], n = Phi.shape[0], r = GB.shape[2], m = Qt.shape[0]
    cdef Py_ssize_t P = GB.shape[0]
    cdef Py_ssize_t c, k, a, b, i, p
    cdef double w, lim
    out_arr = np.zeros((C, pieces, r), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    x_arr = np.empty((P, n, C))
    x_arr[:] = np.asarray(seeds).T[None]  # a copy: the kernel writes into x
    cdef double[:, :, ::1] x = x_arr
    cdef double[:, ::1] nx = np.zeros((n, C))
    cdef double[:, ::1] v = np.zeros((max(r, 1), C))
    cdef double[:, ::1] res = np.zeros((max(m, 1), C))
    with nogil:
        for k in range(pieces):
            for b in range(r):
                for c in range(C):
                    v[b, c] = 0.0
                for a in range(n):
                    w = Kbar[b, a]
                    for c in range(C):
                        v[b, c] += w * x[0, a, c]
            if m > 0:
                for p in range(P):
                    _step(Phi, GB[p], x[p], v, nx, n, r, C)
                    for i in range(m):
                        for c in range(C):
                            res[i, c] = 0.0
                        for a in range(n):
                            w = Qt[i, a]
                            for c in range(C):
                                res[i, c] += w * nx[a, c]
                    # residuals of pattern p occupy columns p*m .. p*m+m-1 of Lp
                    for b in range(r):
                        for i in range(m):
                            w = Lp[b, p * m + i]
                            for c in range(C):
                                out[c, k, b] += w * res[i, c]
                for b in range(r):
                    for c in range(C):
                        v[b, c] -= out[c, k, b]
            for b in range(r):
                lim = bound[b]
                for c in range(C):
                    if v[b, c] > lim:
                        v[b, c] = lim
                    elif v[b, c] < -lim:
                        v[b, c] = -lim
                    out[c, k, b] = v[b, c]
            for p in range(P):
                _step(Phi, GB[p], x[p], v, nx, n, r, C)
                for a in range(n):
                    for c in range(C):
                        x[p, a, c] = nx[a, c]
    return out_arr


cdef inline void _step(const double[:, ::1] Phi, const double[:, ::1] GB, double[:, ::1] x,
                       double[:, ::1] v, double[:, ::1] nx, Py_ssize_t n, Py_ssize_t r,
                       Py_ssize_t C) noexcept nogil:
    """``nx = Phi x + GB v`` column-wise over candidates."""
    cdef Py_ssize_t a, b, c
    cdef double w
    for a in range(n):
        for c in range(C):
            nx[a, c] = 0.0
        for b in range(n):
            w = Phi[a, b]
            for c in range(C):
                nx[a, c] += w * x[b, c]
        for b in range(r):
            w = GB[a, b]
            for c in range(C):
                nx[a, c] += w * v[b, c]
