"""Compiled vs numpy kernels on the covering workload of the rate-1 fixture.

    python3 benchmarks/bench_kernels.py            # kernel timings at T=4
    python3 benchmarks/bench_kernels.py --T 5 --end-to-end

Inputs are the real ones: the grid, tracking signals and candidate pairs
the covering search builds for A=[[1,0],[1,1]], B=[0;1], V=span{e1}.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from chaninv import _fallback
from chaninv.entropy import (
    FBox,
    SpanningConfig,
    _free_maps,
    _pattern_maps,
    _quotient_basis,
    _tracking_sources,
    build_grid,
)
from chaninv.kernels import c64
from chaninv.model import (
    ChannelPattern,
    MultiChannelSystem,
    discretize_cached,
    input_matrix,
    pieces_for,
)
from chaninv.subspace import column_span

try:
    from chaninv import _kernels
except ImportError:
    _kernels = None


def workload(T: float, eps: float):
    system = MultiChannelSystem.from_matrices([[1, 0], [1, 1]], [[[0], [1]]])
    V = column_span(np.array([[1.0], [0.0]]))
    cfg = SpanningConfig(T=T, epsilon=eps, F_box=(FBox.from_vectors([[1, 0]]),),
                         patterns=(ChannelPattern.all_alive(1),))
    grid = build_grid(cfg, system, V)
    src = _tracking_sources(system, V, list(cfg.patterns), grid)[0][0]
    U = c64(src.signals(T, cfg.dt, 0, src.count))
    Phi, GB = _pattern_maps(system, cfg.patterns, T, pieces_for(T, cfg.dt), cfg)[0]
    Qt = c64(_quotient_basis(V).T)
    N = c64(_free_maps(system, V, T, cfg))
    # every candidate against its 8 nearest grid neighbours
    C, G = U.shape[0], grid.shape[0]
    lens = np.full(C, min(8, G), dtype=np.int64)
    g_idx = np.concatenate([np.clip(np.arange(c - 4, c + 4), 0, G - 1)[:min(8, G)] for c in range(C)])
    indptr = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    return dict(Phi=Phi, GB=GB, Qt=Qt, U=U, N=N, X0=c64(grid), g_idx=g_idx.astype(np.int64),
                indptr=indptr, sps=cfg.samples_per_piece, eps=eps,
                **_piece_maps(src, system, T, cfg.dt, Qt))


def timeit(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(w):
    S = w["N"].shape[0]
    return {
        "track_signals": lambda m: m.track_signals(w["Phi_p"], w["GB_p"], w["Kbar"], w["Lp"], w["Qt"],
                                                   w["bound"], w["X0"], w["U"].shape[1]),
        "response_at": lambda m: m.response_at(w["Phi"], w["GB"], w["Qt"], w["U"], w["sps"], S // 2),
        "candidate_excursions": lambda m: m.candidate_excursions(
            w["Phi"], w["GB"], w["Qt"], w["U"], w["sps"], w["N"], w["X0"], w["indptr"],
            w["g_idx"], w["eps"]),
    }


def _piece_maps(src, system, T, dt, Qt):
    """Per-piece maps the tracking kernel works with."""
    d = T / pieces_for(T, dt)
    B = input_matrix(system, src.pattern)
    K = src.friend.stacked_gain(system, src.pattern)
    Phi_p, GB_p = discretize_cached(system.A, B, d)
    _, Gcl = discretize_cached(system.A + B @ K, np.eye(system.n), d)
    return dict(Phi_p=c64(Phi_p), GB_p=c64(GB_p[None]), Kbar=c64(K @ Gcl / d),
                Lp=c64(np.linalg.pinv(Qt @ GB_p, rcond=1e-10)),
                bound=c64(np.full(B.shape[1], np.inf)))


def end_to_end(T, eps):
    code = ("import time,numpy as np;from chaninv.model import *;from chaninv.subspace import column_span;"
            "from chaninv.entropy import *;"
            "s=MultiChannelSystem.from_matrices([[1,0],[1,1]],[[[0],[1]]]);"
            "V=column_span(np.array([[1.],[0.]]));"
            f"c=SpanningConfig(T={T},epsilon={eps},F_box=(FBox.from_vectors([[1,0]]),),"
            "patterns=(ChannelPattern.all_alive(1),));"
            "t=time.perf_counter();r=min_spanning_cardinality(c,s,V);print(r,time.perf_counter()-t)")
    out = {}
    for name, env in (("cython", {}), ("python", {"CHANINV_PURE_PYTHON": "1"})):
        res = subprocess.run([sys.executable, "-c", code], env={**os.environ, **env},
                             capture_output=True, text=True, check=True)
        card, secs = res.stdout.split()
        out[name] = (int(card), float(secs))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--T", type=float, default=4.0)
    ap.add_argument("--eps", type=float, default=0.25)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args()
    if _kernels is None:
        sys.exit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    w = workload(args.T, args.eps)
    print(f"T={args.T:g} eps={args.eps:g}: grid {w['X0'].shape[0]}, candidates {w['U'].shape[0]}, "
          f"samples {w['N'].shape[0]}")
    print(f"{'kernel':<24}{'cython [s]':>12}{'numpy [s]':>12}{'speed-up':>10}")
    for name, fn in kernel_cases(w).items():
        a = fn(_kernels)
        b = fn(_fallback)
        assert np.allclose(a, b, rtol=1e-9, atol=1e-9, equal_nan=True), name
        tc, tp = timeit(lambda: fn(_kernels)), timeit(lambda: fn(_fallback))
        print(f"{name:<24}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}")
    if args.end_to_end:
        res = end_to_end(args.T, args.eps)
        for name, (card, secs) in res.items():
            print(f"end-to-end {name:<8} r_inv={card:<8} {secs:.2f} s")


if __name__ == "__main__":
    main()
