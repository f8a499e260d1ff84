import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chaninv.geometric import (
    InvariancePattern,
    NotControlledInvariant,
    ToleranceFault,
    closed_loop_supremal,
    is_controlled_invariant,
    lattice_summary,
    reachable_subspace,
    robust_supremal,
    smallest_invariant,
    supremal_invariant,
    synthesize_common_friend,
    synthesize_friend,
)
from chaninv.model import ChannelPattern, MultiChannelSystem
from chaninv.subspace import (
    DimensionError,
    column_span,
    distance_to,
    from_spanning_vectors,
    full,
    gap_metric,
    zero,
)

from oracles import random_invariant_instance

A_FIX = np.array([[1.0, 0.0], [1.0, 1.0]])


def span(*vs):
    return from_spanning_vectors([np.asarray(v, float) for v in vs])


# --- is_controlled_invariant ---------------------------------------------------------

def test_invariance_examples():
    assert is_controlled_invariant(A_FIX, span((0, 1)), span((1, 0)))
    assert not is_controlled_invariant(A_FIX, span((1, 0)), span((1, 0)))
    rng = np.random.default_rng(0)
    assert is_controlled_invariant(rng.normal(size=(3, 3)), zero(3), zero(3))


def test_invariance_dimension_check():
    with pytest.raises(DimensionError):
        is_controlled_invariant(np.eye(3), zero(2), span((1, 0)))
    with pytest.raises(DimensionError):
        is_controlled_invariant(np.eye(2), zero(3), span((1, 0)))


# --- supremal_invariant ------------------------------------------------------------

def test_supremal_examples():
    assert supremal_invariant(A_FIX, span((1, 0)), span((1, 0))).dim == 0
    rng = np.random.default_rng(2)
    F = column_span(rng.normal(size=(3, 2)))
    assert supremal_invariant(rng.normal(size=(3, 3)), full(3), F).equals(F)
    got = supremal_invariant(np.diag([1.0, 2.0]), zero(2), span((1, 0)))
    assert gap_metric(got, span((1, 0))) <= 1e-9


def test_supremal_contains_known_invariant_subspace():
    # A = diag(1,2,3): inside F = span{e1, e2+e3} only span{e1} is invariant
    A = np.diag([1.0, 2.0, 3.0])
    F = span((1, 0, 0), (0, 1, 1))
    W = supremal_invariant(A, zero(3), F)
    assert W.equals(span((1, 0, 0)))


@given(st.integers(0, 2**32 - 1))
def test_supremal_is_invariant_and_inside_F(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    A = rng.normal(size=(n, n))
    img = column_span(rng.normal(size=(n, int(rng.integers(0, n)))))
    F = column_span(rng.normal(size=(n, int(rng.integers(1, n + 1)))))
    W = supremal_invariant(A, img, F)
    assert F.contains(W)
    assert is_controlled_invariant(A, img, W)


@given(st.integers(0, 2**32 - 1))
def test_supremal_recovers_planted_subspace(seed):
    rng = np.random.default_rng(seed)
    A, B, V, _ = random_invariant_instance(rng)
    extra = rng.normal(size=(A.shape[0], 1))
    F = column_span(np.hstack([V, extra]))
    W = supremal_invariant(A, column_span(B), F)
    assert W.contains(column_span(V))


def test_tolerance_fault_is_reported(monkeypatch):
    import chaninv.geometric as g
    # a preimage that keeps shrinking by one dimension never settles in dim F + 1 steps
    calls = {"k": 0}

    def shrinking(A, S):
        calls["k"] += 1
        return column_span(np.eye(4)[:, :max(0, 4 - calls["k"])]) if calls["k"] < 10 else S

    monkeypatch.setattr(g, "preimage", shrinking)
    monkeypatch.setattr(g, "intersect", lambda F, P: P)
    with pytest.raises(ToleranceFault):
        g.supremal_invariant(np.eye(4), zero(4), column_span(np.eye(4)[:, :2]))


# --- smallest_invariant --------------------------------------------------------------

def test_smallest_invariant_examples():
    N = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert smallest_invariant(N, span((0, 1))).dim == 2
    assert smallest_invariant(N, span((1, 0))).equals(span((1, 0)))
    assert smallest_invariant(N, zero(2)).dim == 0


@given(st.integers(0, 2**32 - 1))
def test_smallest_invariant_is_invariant_and_minimal(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    A = rng.normal(size=(n, n))
    V = column_span(rng.normal(size=(n, 1)))
    W = smallest_invariant(A, V)
    assert W.contains(V)
    assert is_controlled_invariant(A, zero(n), W)
    krylov = column_span(np.column_stack([np.linalg.matrix_power(A, k) @ V.basis[:, 0] for k in range(n)]))
    assert W.dim == krylov.dim


# --- friends -----------------------------------------------------------------------

def fixture():
    return MultiChannelSystem.from_matrices(A_FIX, [[[0.0], [1.0]], [[1.0], [0.0]]])


def test_friend_on_fixture():
    s = fixture()
    f = synthesize_friend(s, ChannelPattern.without(2, 2), span((1, 0)))
    assert f.residual <= 1e-8
    assert np.allclose(f.gains[1], [[-1.0, 0.0]])
    Acl = f.closed_loop(s, ChannelPattern.without(2, 2))
    assert distance_to(Acl @ np.array([1.0, 0.0]), span((1, 0))) <= 1e-12


def test_friend_zero_when_already_invariant():
    s = MultiChannelSystem.from_matrices(np.diag([1.0, 2.0]), [[[0.0], [1.0]]])
    f = synthesize_friend(s, ChannelPattern.all_alive(1), span((1, 0)))
    assert np.allclose(f.gains[1], 0.0) and f.residual == 0.0


def test_friend_refused_when_not_invariant():
    s = fixture()
    with pytest.raises(NotControlledInvariant):
        synthesize_friend(s, ChannelPattern.without(1, 2), span((1, 0)))


def test_friend_vanishes_on_complement():
    s = fixture()
    f = synthesize_friend(s, ChannelPattern.without(2, 2), span((1, 0)))
    assert np.allclose(f.full_gain(s) @ np.array([0.0, 1.0]), 0.0)


@given(st.integers(0, 2**32 - 1))
def test_random_planted_friends(seed):
    rng = np.random.default_rng(seed)
    A, B, V, _ = random_invariant_instance(rng)
    s = MultiChannelSystem.from_matrices(A, [B])
    Vs = column_span(V)
    f = synthesize_friend(s, ChannelPattern.all_alive(1), Vs)
    assert f.residual <= 1e-8
    Acl = A + B @ f.gains[1]
    assert Vs.contains(column_span(Acl @ Vs.basis)) or np.linalg.norm(Acl @ Vs.basis) < 1e-12


def test_common_friend_for_two_patterns():
    # both channels can correct the quotient direction independently
    s = MultiChannelSystem.from_matrices(A_FIX, [[[0.0], [1.0]], [[0.0], [2.0]]])
    pats = [ChannelPattern.without(1, 2), ChannelPattern.without(2, 2)]
    f = synthesize_common_friend(s, pats, span((1, 0)))
    assert f.residual <= 1e-8
    for p in pats:
        assert distance_to(f.closed_loop(s, p) @ np.array([1.0, 0.0]), span((1, 0))) <= 1e-9


def test_common_friend_refused():
    s = fixture()
    pats = [ChannelPattern.without(1, 2), ChannelPattern.without(2, 2)]
    with pytest.raises(NotControlledInvariant):
        synthesize_common_friend(s, pats, span((1, 0)))


# --- robust / lattice -------------------------------------------------------------------

def test_robust_supremal_examples():
    s = fixture()
    F = span((1, 0))
    p1, p2 = ChannelPattern.without(1, 2), ChannelPattern.without(2, 2)
    assert robust_supremal(s, [p1, p2], F).dim == 0
    assert robust_supremal(s, [p2], F).equals(F)
    assert robust_supremal(s, [p1, p2], zero(2)).dim == 0
    with pytest.raises(ValueError):
        robust_supremal(s, [], F)


@given(st.integers(0, 2**32 - 1))
def test_robust_inside_every_supremal(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    s = MultiChannelSystem.from_matrices(rng.normal(size=(n, n)),
                                         [rng.normal(size=(n, 1)) for _ in range(3)])
    F = column_span(rng.normal(size=(n, int(rng.integers(1, n + 1)))))
    pats = [ChannelPattern.without(j, 3) for j in range(4)]
    R = robust_supremal(s, pats, F)
    lat = lattice_summary(s, pats, F)
    assert lat["intersection"].contains(R)
    for p in pats:
        img = InvariancePattern.of(s, p).image
        assert is_controlled_invariant(s.A, img, R)
        assert lat["supremal"][p.label].contains(R)
    if lat["intersection_invariant"]:
        assert R.equals(lat["intersection"])


def test_lattice_flags_non_invariant_intersection():
    # sup for each pattern is a different plane; their intersection (a line) is invariant for neither
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    s = MultiChannelSystem.from_matrices(A, [[[0.0], [0.0], [1.0]], [[1.0], [0.0], [0.0]]])
    pats = [ChannelPattern.without(1, 2), ChannelPattern.without(2, 2)]
    lat = lattice_summary(s, pats, full(3))
    inter = lat["intersection"]
    ok = all(is_controlled_invariant(A, InvariancePattern.of(s, p).image, inter) for p in pats)
    assert lat["intersection_invariant"] == ok
    assert inter.contains(lat["robust"])


def test_closed_loop_supremal():
    A = np.diag([1.0, 2.0])
    assert closed_loop_supremal([A], span((1, 0))).equals(span((1, 0)))
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    assert closed_loop_supremal([A, R], full(2)).dim == 2
    assert closed_loop_supremal([R], span((1, 0))).dim == 0


def test_reachable_subspace_under_friend():
    s = fixture()
    p = ChannelPattern.without(2, 2)
    f = synthesize_friend(s, p, span((1, 0)))
    # closed loop [[1,0],[0,1]]: channel 1 only reaches its own image
    assert reachable_subspace(s, p, f, 1).equals(span((0, 1)))


def test_pattern_monotonicity_on_random_systems():
    rng = np.random.default_rng(11)
    for _ in range(30):
        n = int(rng.integers(2, 5))
        s = MultiChannelSystem.from_matrices(rng.normal(size=(n, n)),
                                             [rng.normal(size=(n, 1)) for _ in range(2)])
        F = column_span(rng.normal(size=(n, n - 1)))
        top = supremal_invariant(s.A, InvariancePattern.of(s, ChannelPattern.all_alive(2)).image, F)
        for j in (1, 2):
            sub = supremal_invariant(s.A, InvariancePattern.of(s, ChannelPattern.without(j, 2)).image, F)
            assert sub.dim <= top.dim and top.contains(sub)
