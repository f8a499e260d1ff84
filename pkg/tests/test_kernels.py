import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaninv import _fallback, kernels

_kernels = pytest.importorskip("chaninv._kernels")


def random_maps(rng, n=3, r=2, m=2):
    Phi = np.ascontiguousarray(np.eye(n) + 0.05 * rng.normal(size=(n, n)))
    GB = np.ascontiguousarray(0.05 * rng.normal(size=(n, r)))
    Qt = np.ascontiguousarray(np.linalg.qr(rng.normal(size=(n, n)))[0][:, :m].T)
    return Phi, GB, Qt


def both(name, *args):
    a = getattr(_kernels, name)(*args)
    b = getattr(_fallback, name)(*args)
    return a, b


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25)
def test_responses_agree(seed):
    rng = np.random.default_rng(seed)
    Phi, GB, Qt = random_maps(rng)
    U = np.ascontiguousarray(rng.normal(size=(int(rng.integers(1, 6)), 4, 2)))
    a, b = both("propagate_responses", Phi, GB, Qt, U, 3)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    s_star = int(rng.integers(0, 13))
    a, b = both("response_at", Phi, GB, Qt, U, 3, s_star)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25)
def test_excursions_agree(seed):
    rng = np.random.default_rng(seed)
    Phi, GB, Qt = random_maps(rng)
    C, G, S = 4, 6, 9
    U = np.ascontiguousarray(rng.normal(size=(C, 4, 2)))
    N = np.ascontiguousarray(rng.normal(size=(S, 2, 3)))
    X0 = np.ascontiguousarray(rng.normal(size=(G, 3)))
    lens = rng.integers(0, G + 1, size=C)
    indptr = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    g_idx = np.concatenate([rng.permutation(G)[:k] for k in lens]).astype(np.int64)
    cutoff = float(rng.uniform(0.5, 5.0))
    a, b = both("candidate_excursions", Phi, GB, Qt, U, 2, N, X0, indptr, g_idx, cutoff)
    assert np.array_equal(np.isinf(a), np.isinf(b))
    assert np.allclose(a[np.isfinite(a)], b[np.isfinite(b)], rtol=1e-10, atol=1e-12)

    Psi = np.ascontiguousarray(rng.normal(size=(2, C, S, 2)))
    c_idx = np.repeat(np.arange(C, dtype=np.int64), lens)
    a, b = both("pair_excursions", N, X0, Psi, g_idx, c_idx, cutoff)
    assert np.array_equal(np.isinf(a), np.isinf(b))
    assert np.allclose(a[np.isfinite(a)], b[np.isfinite(b)], rtol=1e-10, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
@settings(max_examples=25)
def test_tracking_agrees_and_leaves_seeds_alone(seed, P):
    rng = np.random.default_rng(seed)
    n, r, m = 3, 2, 2
    Phi, _, Qt = random_maps(rng, n, r, m)
    GB = np.ascontiguousarray(0.05 * rng.normal(size=(P, n, r)))
    Kbar = np.ascontiguousarray(rng.normal(size=(r, n)))
    Lp = np.ascontiguousarray(rng.normal(size=(r, P * m)))
    bound = np.ascontiguousarray(rng.uniform(0.5, 3.0, size=r))
    seeds = np.ascontiguousarray(rng.normal(size=(int(rng.integers(1, 5)), n)))
    before = seeds.copy()
    a, b = both("track_signals", Phi, GB, Kbar, Lp, Qt, bound, seeds, 6)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-12)
    assert np.all(np.abs(a) <= bound + 1e-15)
    assert np.array_equal(seeds, before)


def test_single_seed_is_not_mutated():
    # one seed used to be transposed into a view and overwritten
    seeds = np.array([[1.0, -2.0]])
    Phi = np.array([[2.0, 0.0], [1.0, 2.0]])
    for mod in (_kernels, _fallback):
        mod.track_signals(Phi, np.zeros((1, 2, 1)), np.zeros((1, 2)), np.zeros((1, 0)),
                          np.zeros((0, 2)), np.array([np.inf]), seeds, 5)
        assert np.array_equal(seeds, [[1.0, -2.0]])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40)
def test_greedy_cover_identical(seed):
    rng = np.random.default_rng(seed)
    G, C = int(rng.integers(1, 30)), int(rng.integers(1, 20))
    sets = [np.sort(rng.choice(G, size=int(rng.integers(0, G + 1)), replace=False)) for _ in range(C)]
    indptr = np.concatenate([[0], np.cumsum([len(s) for s in sets])]).astype(np.int64)
    indices = np.concatenate(sets).astype(np.int64) if sets else np.zeros(0, np.int64)
    (ca, cova), (cb, covb) = both("greedy_cover", indptr, indices, G)
    assert np.array_equal(ca, cb)
    assert np.array_equal(cova, covb)
    union = np.zeros(G, dtype=bool)
    for c in ca:
        union[sets[c]] = True
    assert np.array_equal(union, cova)


def test_backend_switch_and_end_to_end_agreement():
    code = ("import numpy as np;from chaninv import kernels;from chaninv.model import *;"
            "from chaninv.subspace import column_span;from chaninv.entropy import *;"
            "s=MultiChannelSystem.from_matrices([[1,0],[1,1]],[[[0],[1]]]);"
            "V=column_span(np.array([[1.],[0.]]));"
            "c=SpanningConfig(T=2.0,epsilon=0.25,F_box=(FBox.from_vectors([[1,0]]),),"
            "patterns=(ChannelPattern.all_alive(1),));"
            "print(kernels.BACKEND, min_spanning_cardinality(c,s,V))")
    out = {}
    for flag in ("0", "1"):
        env = {**os.environ, "CHANINV_PURE_PYTHON": flag}
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                             check=True)
        backend, card = res.stdout.split()
        out[backend] = int(card)
    assert out == {"cython": 60, "python": 60}
    assert kernels.BACKEND in ("cython", "python")
