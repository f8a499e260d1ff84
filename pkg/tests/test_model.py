import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chaninv.model import (
    ChannelPattern,
    ControlSignal,
    MultiChannelSystem,
    ValidationError,
    discretize,
    input_matrix,
    load_system,
    pieces_for,
    simulate,
    single_failure_patterns,
    validate_system,
)

from oracles import ode_trajectory

FIXTURE = {"A": [[1, 0], [1, 1]], "channels": [{"B": [[0], [1]], "bound": None},
                                                {"B": [[1], [0]], "bound": None}]}


def random_system(rng, n=None, N=None):
    n = n or int(rng.integers(1, 4))
    N = N or int(rng.integers(1, 4))
    return MultiChannelSystem.from_matrices(rng.normal(size=(n, n)),
                                            [rng.normal(size=(n, int(rng.integers(1, 3)))) for _ in range(N)])


def random_control(rng, system, pieces, dt):
    return ControlSignal(dt, rng.normal(size=(pieces, sum(system.widths))))


# --- input_matrix / patterns ------------------------------------------------------

def test_input_matrix_examples(fixture_system):
    s = fixture_system
    assert np.array_equal(input_matrix(s, ChannelPattern.all_alive(2)), [[0, 1], [1, 0]])
    assert np.array_equal(input_matrix(s, ChannelPattern.without(1, 2)), [[1], [0]])
    one = MultiChannelSystem.from_matrices(np.eye(2), [[[1.0], [0.0]]])
    assert input_matrix(one, ChannelPattern.without(1, 1)).shape == (2, 0)


def test_unknown_channel_rejected(fixture_system):
    with pytest.raises(ValueError):
        ChannelPattern.without(3, 2)
    with pytest.raises(ValueError):
        input_matrix(fixture_system, ChannelPattern(frozenset({5}), "{5}"))


def test_pattern_labels_and_parsing():
    assert [p.label for p in single_failure_patterns(3)] == ["¬0", "¬1", "¬2", "¬3"]
    assert ChannelPattern.parse("¬2", 3).alive == {1, 3}
    assert ChannelPattern.parse("~0", 3).alive == {1, 2, 3}
    assert ChannelPattern.parse("not1", 2).alive == {2}
    assert ChannelPattern.parse("{1, 3}", 3).alive == {1, 3}
    assert ChannelPattern.parse("{}", 3).alive == frozenset()
    with pytest.raises(ValueError):
        ChannelPattern.parse("drop 2", 3)


# --- validate_system -----------------------------------------------------------------

def test_fixture_validates():
    s = validate_system(FIXTURE)
    assert s.N == 2 and s.n == 2 and all(math.isinf(c.bound) for c in s.channels)


def test_row_mismatch_reported():
    raw = {"A": [[1, 0], [1, 1]], "channels": [{"B": [[0], [1], [2]], "bound": 1}]}
    with pytest.raises(ValidationError, match="row mismatch"):
        validate_system(raw)


def test_negative_bound_reported():
    raw = {"A": [[1, 0], [1, 1]], "channels": [{"B": [[0], [1]], "bound": -1}]}
    with pytest.raises(ValidationError, match="negative bound"):
        validate_system(raw)


def test_all_violations_collected():
    raw = {"A": [[1, 0], [1, 1]], "channels": [{"B": [[0], [1], [2]], "bound": -1}]}
    with pytest.raises(ValidationError) as exc:
        validate_system(raw)
    assert len(exc.value.problems) == 2


@pytest.mark.parametrize("raw", [
    {"A": [[1, 0], [1]], "channels": [{"B": [[0], [1]]}]},
    {"A": [[1, 0], [1, 1]], "channels": []},
    {"A": [[1, 0], [1, 1]]},
    {"A": [[1, 0], [1, 1]], "channels": [{"B": [[0, 1], [1]]}]},
    [1, 2],
])
def test_malformed_descriptions(raw):
    with pytest.raises(ValidationError):
        validate_system(raw)


def test_load_system(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(FIXTURE))
    assert load_system(p).N == 2
    with pytest.raises(FileNotFoundError, match="file not found"):
        load_system(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValidationError, match="invalid JSON"):
        load_system(bad)


def test_to_dict_round_trip(fixture_system):
    again = validate_system(json.loads(json.dumps(fixture_system.to_dict())))
    assert np.array_equal(again.A, fixture_system.A)


# --- ControlSignal -----------------------------------------------------------------

def test_control_restriction_keeps_dt_and_horizon(fixture_system):
    u = ControlSignal(0.5, [[1.0, 2.0], [3.0, 4.0]])
    assert u.horizon == 1.0
    r = u.restrict(fixture_system, ChannelPattern.without(1, 2))
    assert np.array_equal(r, [[2.0], [4.0]])
    z = u.zero_dead(fixture_system, ChannelPattern.without(1, 2))
    assert z.dt == u.dt and z.pieces == u.pieces
    assert np.array_equal(z.values, [[0.0, 2.0], [0.0, 4.0]])


def test_control_bounds():
    s = MultiChannelSystem.from_matrices(np.eye(2), [[[1.0], [0.0]], [[0.0], [1.0]]], bounds=[1.0, None])
    assert ControlSignal(1.0, [[1.0, 50.0]]).within_bounds(s)
    assert not ControlSignal(1.0, [[1.5, 0.0]]).within_bounds(s)


def test_control_validation():
    with pytest.raises(ValueError):
        ControlSignal(0.0, [[1.0]])
    with pytest.raises(ValueError):
        ControlSignal(1.0, [1.0, 2.0])


def test_pieces_for():
    assert pieces_for(1.0, 0.01) == 100
    assert pieces_for(0.3, 0.1) == 3
    assert pieces_for(0.001, 0.01) == 1


# --- simulate ---------------------------------------------------------------------

def test_pure_integrator():
    s = MultiChannelSystem.from_matrices(np.zeros((2, 2)), [[[1.0], [0.0]]])
    traj = simulate(s, ChannelPattern.all_alive(1), [0.0, 0.0], ControlSignal(1.0, [[1.0]]))
    assert np.allclose(traj.states[-1], [1.0, 0.0], atol=1e-14)
    assert np.array_equal(traj.states[0], [0.0, 0.0])


def test_closed_form_exponential():
    s = MultiChannelSystem.from_matrices(np.diag([1.0, 0.0]), [[[1.0], [0.0]]])
    traj = simulate(s, ChannelPattern.all_alive(1), [1.0, 1.0], ControlSignal.zeros(s, 1.0, 0.1))
    assert abs(traj.states[-1][0] - math.e) <= 1e-9
    assert abs(traj.states[-1][1] - 1.0) <= 1e-9


def test_matches_ode_solver():
    rng = np.random.default_rng(4)
    for _ in range(5):
        s = random_system(rng, n=3, N=2)
        u = random_control(rng, s, 4, 0.25)
        x0 = rng.normal(size=3)
        traj = simulate(s, ChannelPattern.all_alive(2), x0, u)
        ref = ode_trajectory(s.A, np.hstack([c.B for c in s.channels]), x0, 0.25, u.values, traj.times)
        assert np.allclose(traj.states, ref, rtol=1e-8, atol=1e-9)


def test_discretization_matches_quadrature():
    rng = np.random.default_rng(5)
    A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 2))
    Phi, Gam = discretize(A, B, 0.3)
    from scipy.integrate import quad_vec
    from scipy.linalg import expm
    ref = quad_vec(lambda t: expm(A * t) @ B, 0.0, 0.3, epsabs=1e-14)[0]
    assert np.allclose(Phi, expm(0.3 * A), atol=1e-13)
    assert np.allclose(Gam, ref, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_cocycle(seed):
    rng = np.random.default_rng(seed)
    s = random_system(rng)
    p = ChannelPattern.all_alive(s.N)
    u = random_control(rng, s, 20, 0.1)
    x0 = rng.normal(size=s.n)
    whole = simulate(s, p, x0, u).states[-1]
    mid = simulate(s, p, x0, u, horizon=1.0).states[-1]
    rest = simulate(s, p, mid, u.shift(10)).states[-1]
    assert np.allclose(whole, rest, rtol=1e-9, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_linearity_in_initial_state(seed):
    from scipy.linalg import expm
    rng = np.random.default_rng(seed)
    s = random_system(rng)
    p = ChannelPattern.all_alive(s.N)
    u = random_control(rng, s, 8, 0.125)
    x0, d = rng.normal(size=s.n), rng.normal(size=s.n)
    a = simulate(s, p, x0 + d, u, samples_per_piece=2)
    b = simulate(s, p, x0, u, samples_per_piece=2)
    for t, xa, xb in zip(a.times, a.states, b.states):
        assert np.allclose(xa - xb, expm(s.A * t) @ d, rtol=1e-9, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_restriction_consistency(seed):
    rng = np.random.default_rng(seed)
    s = random_system(rng, N=3)
    u = random_control(rng, s, 5, 0.2)
    x0 = rng.normal(size=s.n)
    j = int(rng.integers(1, 4))
    dead = simulate(s, ChannelPattern.without(j, 3), x0, u).states
    zeroed = simulate(s, ChannelPattern.all_alive(3), x0, u.zero_dead(s, ChannelPattern.without(j, 3))).states
    assert np.allclose(dead, zeroed, rtol=1e-12, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_sampling_density_does_not_change_states(seed):
    rng = np.random.default_rng(seed)
    s = random_system(rng)
    p = ChannelPattern.all_alive(s.N)
    u = random_control(rng, s, 10, 0.1)
    x0 = rng.normal(size=s.n)
    coarse = simulate(s, p, x0, u, samples_per_piece=1).states
    fine = simulate(s, p, x0, u, samples_per_piece=2).states
    assert np.allclose(coarse, fine[::2], rtol=1e-9, atol=1e-9)


def test_batch_matches_single(fixture_system):
    rng = np.random.default_rng(6)
    p = ChannelPattern.all_alive(2)
    u = random_control(rng, fixture_system, 3, 0.2)
    X0 = rng.normal(size=(2, 4))
    batch = simulate(fixture_system, p, X0, u).states
    for k in range(4):
        assert np.allclose(batch[:, :, k], simulate(fixture_system, p, X0[:, k], u).states, atol=1e-14)


def test_all_channels_dead_is_autonomous():
    from scipy.linalg import expm
    s = MultiChannelSystem.from_matrices([[0.0, 1.0], [-1.0, 0.0]], [[[1.0], [1.0]]])
    u = ControlSignal(0.5, [[9.0], [9.0]])
    traj = simulate(s, ChannelPattern.without(1, 1), [1.0, 0.0], u)
    assert np.allclose(traj.states[-1], expm(s.A) @ [1.0, 0.0], atol=1e-12)


def test_simulate_errors(fixture_system):
    p = ChannelPattern.all_alive(2)
    u = ControlSignal(0.5, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        simulate(fixture_system, p, [1.0, 0.0, 0.0], u)
    with pytest.raises(ValueError, match="horizon"):
        simulate(fixture_system, p, [1.0, 0.0], u, horizon=2.0)
    with pytest.raises(ValueError):
        simulate(fixture_system, p, [1.0, 0.0], ControlSignal(0.5, np.zeros((2, 3))))
