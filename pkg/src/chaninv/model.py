"""Multi-channel linear systems, failure patterns, controls and simulation.

The plant is ``x' = A x + sum_j B_j u_j`` with channel inputs bounded in the
sup-norm.  A :class:`ChannelPattern` selects the channels that are still
alive; piecewise-constant :class:`ControlSignal` objects are propagated
exactly piece by piece with a block matrix exponential.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.linalg import expm


class ValidationError(ValueError):
    """System description is inconsistent; ``problems`` lists every violation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True, eq=False)
class Channel:
    B: np.ndarray
    bound: float = math.inf

    @property
    def width(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class MultiChannelSystem:
    A: np.ndarray
    channels: tuple[Channel, ...]

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        chans = []
        for ch in self.channels:
            B = np.array(ch.B, dtype=float)
            B.setflags(write=False)
            chans.append(Channel(B, float(ch.bound)))
        object.__setattr__(self, "channels", tuple(chans))
        problems = _check(A, [c.B for c in chans], [c.bound for c in chans])
        if problems:
            raise ValidationError(problems)

    @classmethod
    def from_matrices(cls, A, Bs, bounds=None) -> "MultiChannelSystem":
        bounds = [math.inf] * len(Bs) if bounds is None else bounds
        return cls(np.asarray(A, dtype=float),
                   tuple(Channel(np.asarray(B, dtype=float).reshape(len(A), -1),
                                 math.inf if b is None else b)
                         for B, b in zip(Bs, bounds)))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return len(self.channels)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(c.width for c in self.channels)

    def offsets(self) -> list[int]:
        return [0, *np.cumsum(self.widths).tolist()]

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "channels": [{"B": c.B.tolist(), "bound": None if math.isinf(c.bound) else c.bound}
                         for c in self.channels],
        }


def _check(A, Bs, bounds) -> list[str]:
    problems = []
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
        problems.append(f"A must be a nonempty square matrix, got shape {A.shape}")
        return problems
    n = A.shape[0]
    if not Bs:
        problems.append("system needs at least one channel (N = 0)")
    for j, (B, b) in enumerate(zip(Bs, bounds), start=1):
        if B.ndim != 2:
            problems.append(f"channel {j}: B must be a matrix")
            continue
        if B.shape[0] != n:
            problems.append(f"channel {j}: row mismatch, B has {B.shape[0]} rows but A is {n}x{n}")
        if B.shape[1] < 1:
            problems.append(f"channel {j}: B needs at least one column")
        if b is not None and not math.isnan(b) and b < 0:
            problems.append(f"channel {j}: negative bound {b}")
        if b is not None and math.isnan(b):
            problems.append(f"channel {j}: bound is NaN")
    if not np.all(np.isfinite(A)):
        problems.append("A has non-finite entries")
    return problems


def validate_system(raw: dict) -> MultiChannelSystem:
    """Build a system from a parsed JSON description, collecting every violation."""
    problems = []
    if not isinstance(raw, dict):
        raise ValidationError(["system description must be a JSON object"])
    if "A" not in raw:
        problems.append("missing field 'A'")
    chans = raw.get("channels")
    if not isinstance(chans, list):
        problems.append("missing or non-list field 'channels'")
        chans = []
    try:
        A = np.array(raw.get("A", []), dtype=float)
    except (ValueError, TypeError):
        problems.append("ragged or non-numeric matrix A")
        A = np.zeros((0, 0))
    Bs, bounds = [], []
    for j, ch in enumerate(chans, start=1):
        if not isinstance(ch, dict) or "B" not in ch:
            problems.append(f"channel {j}: missing field 'B'")
            continue
        try:
            B = np.array(ch["B"], dtype=float)
        except (ValueError, TypeError):
            problems.append(f"channel {j}: ragged or non-numeric matrix B")
            continue
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        b = ch.get("bound")
        if b is not None and not isinstance(b, (int, float)):
            problems.append(f"channel {j}: bound must be a number or null")
            continue
        Bs.append(B)
        bounds.append(math.inf if b is None else float(b))
    if not problems:
        problems = _check(A, Bs, bounds)
    if problems:
        raise ValidationError(problems)
    return MultiChannelSystem(A, tuple(Channel(B, b) for B, b in zip(Bs, bounds)))


def load_system(path) -> MultiChannelSystem:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    with path.open() as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError([f"{path}: invalid JSON ({exc})"]) from exc
    return validate_system(raw)


@dataclass(frozen=True)
class ChannelPattern:
    """Set of alive channels (1-based)."""

    alive: frozenset[int]
    label: str

    @classmethod
    def all_alive(cls, N: int) -> "ChannelPattern":
        return cls(frozenset(range(1, N + 1)), "¬0")

    @classmethod
    def without(cls, j: int, N: int) -> "ChannelPattern":
        if j == 0:
            return cls.all_alive(N)
        if not 1 <= j <= N:
            raise ValueError(f"unknown channel index {j} (N = {N})")
        return cls(frozenset(range(1, N + 1)) - {j}, f"¬{j}")

    @classmethod
    def subset(cls, alive, N: int) -> "ChannelPattern":
        alive = frozenset(int(i) for i in alive)
        bad = [i for i in alive if not 1 <= i <= N]
        if bad:
            raise ValueError(f"unknown channel index {bad[0]} (N = {N})")
        return cls(alive, "{" + ",".join(str(i) for i in sorted(alive)) + "}")

    @classmethod
    def parse(cls, text: str, N: int) -> "ChannelPattern":
        """Accepts ``¬j``, ``~j``, ``!j``, ``notj`` and explicit subsets ``{1,3}``."""
        s = text.strip()
        m = re.fullmatch(r"(?:¬|~|!|not)\s*(\d+)", s)
        if m:
            return cls.without(int(m.group(1)), N)
        m = re.fullmatch(r"\{([\d,\s]*)\}", s)
        if m:
            items = [t for t in m.group(1).replace(" ", "").split(",") if t]
            return cls.subset(items, N)
        raise ValueError(f"cannot parse channel pattern {text!r}")

    def channels(self) -> list[int]:
        return sorted(self.alive)


def single_failure_patterns(N: int) -> list[ChannelPattern]:
    """``¬0, ¬1, ..., ¬N``."""
    return [ChannelPattern.without(j, N) for j in range(N + 1)]


def input_matrix(system: MultiChannelSystem, pattern: ChannelPattern) -> np.ndarray:
    """Alive channels' B_j concatenated in index order (n x 0 when none alive)."""
    for j in pattern.alive:
        if not 1 <= j <= system.N:
            raise ValueError(f"unknown channel index {j} (N = {system.N})")
    blocks = [system.channels[j - 1].B for j in pattern.channels()]
    if not blocks:
        return np.zeros((system.n, 0))
    return np.hstack(blocks)


def alive_mask(system: MultiChannelSystem, pattern: ChannelPattern) -> np.ndarray:
    """Boolean mask over stacked input components of all channels."""
    mask = np.zeros(sum(system.widths), dtype=bool)
    off = system.offsets()
    for j in pattern.alive:
        mask[off[j - 1]:off[j]] = True
    return mask


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Piecewise-constant input: ``values[k]`` holds the stacked channel inputs on piece k."""

    dt: float
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("values must be (pieces x total input width)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, system: MultiChannelSystem, T: float, dt: float) -> "ControlSignal":
        pieces = pieces_for(T, dt)
        return cls(T / pieces, np.zeros((pieces, sum(system.widths))))

    @property
    def pieces(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> float:
        return self.dt * self.pieces

    def restrict(self, system: MultiChannelSystem, pattern: ChannelPattern) -> np.ndarray:
        """Inputs of the alive channels only, columns matching :func:`input_matrix`."""
        return self.values[:, alive_mask(system, pattern)]

    def zero_dead(self, system: MultiChannelSystem, pattern: ChannelPattern) -> "ControlSignal":
        v = self.values.copy()
        v[:, ~alive_mask(system, pattern)] = 0.0
        return ControlSignal(self.dt, v)

    def shift(self, pieces: int) -> "ControlSignal":
        """Signal seen from piece ``pieces`` onward."""
        return ControlSignal(self.dt, self.values[pieces:])

    def within_bounds(self, system: MultiChannelSystem) -> bool:
        off = system.offsets()
        for j, ch in enumerate(system.channels):
            if np.any(np.abs(self.values[:, off[j]:off[j + 1]]) > ch.bound * (1 + 1e-12)):
                return False
        return True


def pieces_for(T: float, dt: float) -> int:
    """Number of uniform pieces of width at most ``dt`` covering ``[0, T]``."""
    return max(1, int(math.ceil(T / dt - 1e-9)))


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (samples, n) or (samples, n, batch)


@lru_cache(maxsize=256)
def _discretize_cached(A_bytes, B_bytes, n, r, h):
    A = np.frombuffer(A_bytes).reshape(n, n)
    B = np.frombuffer(B_bytes).reshape(n, r)
    return discretize(A, B, h)


def discretize(A, B, h: float):
    """``(e^{Ah}, int_0^h e^{As} ds B)`` through one augmented exponential."""
    n = A.shape[0]
    r = B.shape[1]
    M = np.zeros((n + r, n + r))
    M[:n, :n] = A
    M[:n, n:] = B
    E = expm(M * h)
    return E[:n, :n], E[:n, n:]


def discretize_cached(A, B, h: float):
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    return _discretize_cached(A.tobytes(), B.tobytes(), A.shape[0], B.shape[1], float(h))


def simulate(system: MultiChannelSystem, pattern: ChannelPattern, x0, u: ControlSignal,
             samples_per_piece: int = 1, horizon: float | None = None) -> Trajectory:
    """Exact solution of the plant under ``pattern`` for a piecewise-constant ``u``.

    ``x0`` may be a single state ``(n,)`` or a batch ``(n, k)``; the returned
    states then have shape ``(samples, n)`` or ``(samples, n, k)``.  Samples
    are taken at every piece boundary and ``samples_per_piece - 1`` evenly
    spaced interior points.
    """
    x = np.asarray(x0, dtype=float)
    n = system.n
    if x.shape[0] != n:
        raise ValueError(f"x0 has dimension {x.shape[0]}, system has n = {n}")
    if samples_per_piece < 1:
        raise ValueError("samples_per_piece must be >= 1")
    pieces = u.pieces
    if horizon is not None:
        pieces = int(round(horizon / u.dt))
        if abs(pieces * u.dt - horizon) > 1e-9 * max(1.0, horizon) or pieces > u.pieces or pieces < 1:
            raise ValueError(f"horizon {horizon} does not match control of {u.pieces} pieces of width {u.dt}")
    if u.values.shape[1] != sum(system.widths):
        raise ValueError("control width does not match the system's channels")
    B = input_matrix(system, pattern)
    v = u.restrict(system, pattern)
    h = u.dt / samples_per_piece
    Phi, Gam = discretize_cached(system.A, B, h)
    out = np.empty((pieces * samples_per_piece + 1, *x.shape))
    out[0] = x
    k = 1
    for p in range(pieces):
        forced = Gam @ v[p]
        if x.ndim == 2:
            forced = forced[:, None]
        for _ in range(samples_per_piece):
            x = Phi @ x + forced
            out[k] = x
            k += 1
    times = np.arange(out.shape[0]) * h
    return Trajectory(times, out)
