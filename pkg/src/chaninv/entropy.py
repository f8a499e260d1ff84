"""Spanning sets of controls and controlled-invariance entropy estimates.

A set of open-loop controls is *spanning* for ``(T, eps, F, V)`` when every
initial state of ``F`` has one control in the set that keeps the trajectory
within ``eps`` of ``V`` on ``[0, T]`` for every configured failure pattern.
The entropy is the exponential growth rate in ``T`` of the smallest such set.

The covering search relies on linearity: the distance of ``x(t)`` to ``V``
is ``|| N_t x0 + psi_u(t) ||`` with ``N_t = Q^T e^{At}`` (``Q`` spanning the
orthogonal complement of ``V``) and ``psi_u`` the quotient part of the
zero-state response to ``u``.  Candidate (grid point, control) pairs are
pruned with a KD-tree at one sample time and then checked exactly at every
sample by the compiled kernel.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm
from scipy.spatial import cKDTree

from . import kernels
from .geometric import (
    Friend,
    NotControlledInvariant,
    closed_loop_supremal,
    synthesize_common_friend,
    synthesize_friend,
)
from .model import (
    ChannelPattern,
    ControlSignal,
    MultiChannelSystem,
    Trajectory,
    alive_mask,
    discretize_cached,
    input_matrix,
    pieces_for,
    simulate,
)
from .subspace import Subspace, distance_to

log = logging.getLogger(__name__)

INF = math.inf
_CHUNK_ELEMENTS = 1 << 23


@dataclass(frozen=True, eq=False)
class FBox:
    """Axis-aligned box in the coordinates of an orthonormal ``carrier`` (n x k)."""

    carrier: np.ndarray
    center: tuple[float, ...]
    half_widths: tuple[float, ...]

    def __post_init__(self):
        c = np.array(self.carrier, dtype=float)
        if c.ndim == 1:
            c = c.reshape(-1, 1)
        c.setflags(write=False)
        object.__setattr__(self, "carrier", c)
        k = c.shape[1]
        center = tuple(float(x) for x in self.center)
        hw = tuple(float(x) for x in self.half_widths)
        if len(center) != k or len(hw) != k:
            raise ValueError(f"box needs {k} center and half-width entries")
        if any(not (w >= 0) for w in hw):
            raise ValueError("half-widths must be nonnegative")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "half_widths", hw)

    @classmethod
    def from_vectors(cls, vectors, center=None, half_widths=None) -> "FBox":
        """Box on the span of ``vectors``, orthonormalized with orientation kept."""
        M = np.column_stack([np.asarray(v, dtype=float) for v in vectors])
        q, r = np.linalg.qr(M)
        signs = np.sign(np.diag(r))
        signs[signs == 0] = 1.0
        q = q * signs + 0.0  # normalise -0.0
        k = q.shape[1]
        center = (0.0,) * k if center is None else center
        half_widths = (1.0,) * k if half_widths is None else half_widths
        return cls(q, center, half_widths)

    @property
    def n(self) -> int:
        return self.carrier.shape[0]

    def axis_points(self, density: float | None, spacing: float | None = None,
                    min_points: int = 3) -> list[np.ndarray]:
        axes = []
        for c, w in zip(self.center, self.half_widths):
            if w == 0:
                axes.append(np.array([c]))
                continue
            if spacing is not None:
                count = int(math.ceil(2 * w / spacing)) + 1 if spacing > 0 else min_points
            else:
                count = int(math.ceil(2 * w * density)) + 1
            count = max(count, min_points if spacing is not None else 2)
            axes.append(np.linspace(c - w, c + w, count))
        return axes

    def grid(self, density: float | None = None, spacing: float | None = None) -> np.ndarray:
        """Ambient grid points, shape ``(G, n)``."""
        axes = self.axis_points(density, spacing)
        if not axes:
            return np.zeros((1, self.n))
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        return mesh @ self.carrier.T


@dataclass(frozen=True)
class ControlBudget:
    """Quantized open-loop search: ``levels`` values per component on ``pieces`` pieces."""

    pieces: int = 2
    levels: int = 3
    amplitude: float = 1.0
    max_signals: int = 4096


@dataclass(frozen=True, eq=False)
class SpanningConfig:
    T: float
    epsilon: float
    F_box: tuple[FBox, ...]
    patterns: tuple[ChannelPattern, ...]
    grid_density: float | None = None
    control_budget: ControlBudget = ControlBudget()
    dt: float = 0.01
    samples_per_piece: int = 2
    grid_oversample: float = 1.5
    max_grid_points: int = 2_000_000
    seed_stride: int = 1
    grid: np.ndarray | None = None

    def __post_init__(self):
        boxes = (self.F_box,) if isinstance(self.F_box, FBox) else tuple(self.F_box)
        object.__setattr__(self, "F_box", boxes)
        object.__setattr__(self, "patterns", tuple(self.patterns))
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not boxes and self.grid is None:
            raise ValueError("F_box must be nonempty")
        if not self.patterns:
            raise ValueError("patterns must be nonempty")
        if self.grid is not None:
            g = np.atleast_2d(np.asarray(self.grid, dtype=float))
            object.__setattr__(self, "grid", g)


@dataclass(frozen=True)
class EntropySample:
    T: float
    epsilon: float
    r_inv: float  # int-valued or inf


@dataclass(frozen=True)
class EntropyEstimate:
    samples: tuple[EntropySample, ...]
    h_hat: float
    fit_residual: float
    method: str
    epsilon_used: float | None = None
    epsilon_slopes: tuple[tuple[float, float], ...] = ()
    pattern_set: str = ""
    diagnostics: tuple[str, ...] = ()

    def rows(self):
        """CSV rows ``(T, epsilon, r_inv, log_r, pattern_set)``."""
        for s in self.samples:
            log_r = math.log(s.r_inv) if math.isfinite(s.r_inv) else INF
            yield (s.T, s.epsilon, s.r_inv, log_r, self.pattern_set)


def excursion(trajectory: Trajectory, V: Subspace) -> float:
    """Largest sampled distance of the trajectory from ``V``."""
    states = np.asarray(trajectory.states)
    if states.shape[0] == 0:
        raise ValueError("empty trajectory")
    if states.shape[1] != V.ambient_dim:
        raise ValueError(f"trajectory in R^{states.shape[1]}, subspace in R^{V.ambient_dim}")
    if states.ndim == 2:
        return max(distance_to(x, V) for x in states)
    resid = states - np.einsum("ij,sjb->sib", V.projector, states)
    return float(np.linalg.norm(resid, axis=1).max())


def _quotient_basis(V: Subspace) -> np.ndarray:
    return V.complement().basis


def _sample_count(T, config):
    pieces = pieces_for(T, config.dt)
    return pieces, pieces * config.samples_per_piece + 1


def _free_maps(system, V, T, config):
    """``N_s = Q^T e^{A t_s}`` at every sample time, shape ``(S, m, n)``."""
    pieces, S = _sample_count(T, config)
    h = T / pieces / config.samples_per_piece
    Q = _quotient_basis(V)
    Phi = expm(system.A * h)
    out = np.empty((S, Q.shape[1], system.n))
    E = np.eye(system.n)
    for s in range(S):
        out[s] = Q.T @ E
        E = Phi @ E
    return out


def predicted_radius(system, V, config, boxes=None) -> float:
    """Covering radius ``eps / max_t ||Q^T e^{At}|_F||``; inf when the error never leaves V."""
    boxes = config.F_box if boxes is None else boxes
    if not boxes:
        return INF
    N = _free_maps(system, V, config.T, replace(config, samples_per_piece=1))
    # per box: stacking carriers would inflate the norm when boxes share a direction
    growth = max(float(np.linalg.norm(Ns @ b.carrier, 2)) if Ns.size else 0.0
                 for Ns in N for b in boxes)
    if growth <= 1e-12:
        return INF
    return config.epsilon / growth


def _box_grids(config, system, V):
    """One grid per box, in box order."""
    if config.grid_density is not None:
        return [b.grid(density=config.grid_density) for b in config.F_box]
    if system is None or V is None:
        raise ValueError("automatic grid density needs the system and target")
    rho = predicted_radius(system, V, config)
    spacing = 0.0 if math.isinf(rho) else rho / config.grid_oversample
    return [b.grid(spacing=spacing) for b in config.F_box]


def build_grid(config: SpanningConfig, system=None, V=None) -> np.ndarray:
    """Grid of initial states ``(G, n)``; explicit grids pass through unchanged."""
    if config.grid is not None:
        g = config.grid
        if g.shape[0] == 0:
            raise ValueError("empty grid")
        return g
    grid = np.vstack(_box_grids(config, system, V))
    if grid.shape[0] == 0:
        raise ValueError("empty grid (degenerate F_box)")
    if grid.shape[0] > config.max_grid_points:
        raise ValueError(f"grid of {grid.shape[0]} points exceeds max_grid_points={config.max_grid_points}")
    return grid


# --- candidate controls -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class _Tracking:
    """Piecewise-constant signals following a friend's closed loop from each seed.

    On every piece the friend input is averaged along the closed loop of the
    first pattern, then corrected in the least-squares sense so that the
    predicted state of every pattern ends the piece on the target, and
    finally clipped to the channel bounds. With several patterns one signal
    carries the inputs of every channel any of them keeps alive.
    """

    system: MultiChannelSystem
    friend: Friend
    patterns: tuple  # of ChannelPattern
    V: Subspace
    seeds: np.ndarray  # (C, n)

    @property
    def count(self):
        return self.seeds.shape[0]

    @property
    def pattern(self):
        """The union of the alive channels, i.e. the channels the signals drive."""
        alive = frozenset().union(*(p.alive for p in self.patterns))
        return ChannelPattern(alive, "{" + ", ".join(map(str, sorted(alive))) + "}")

    def signals(self, T, dt, lo, hi):
        """Inputs of candidates ``lo:hi``, shape ``(C, pieces, r_total)``."""
        sysm = self.system
        pieces = pieces_for(T, dt)
        d = T / pieces
        union = self.pattern
        B = input_matrix(sysm, union)
        mask = alive_mask(sysm, union)
        out = np.zeros((hi - lo, pieces, mask.size))
        if B.shape[1] == 0:
            return out
        K = self.friend.stacked_gain(sysm, union)
        GBs = []
        for p in self.patterns:
            Phi, GB = discretize_cached(sysm.A, B * alive_mask(sysm, p)[mask][None, :], d)
            GBs.append(GB)
        _, Gcl = discretize_cached(self.friend.closed_loop(sysm, self.patterns[0]), np.eye(sysm.n), d)
        Kbar = K @ Gcl / d
        Qt = _quotient_basis(self.V).T
        L = np.vstack([Qt @ GB for GB in GBs])
        Lp = np.linalg.pinv(L, rcond=1e-10) if L.size else np.zeros((B.shape[1], 0))
        bound = np.concatenate([np.full(sysm.channels[j - 1].width, sysm.channels[j - 1].bound)
                                for j in union.channels()])
        U = kernels.track_signals(kernels.c64(Phi), kernels.c64(np.stack(GBs)), kernels.c64(Kbar),
                                  kernels.c64(Lp), kernels.c64(Qt), kernels.c64(bound),
                                  kernels.c64(self.seeds[lo:hi]), pieces)
        out[:, :, mask] = U
        return out


@dataclass(frozen=True, eq=False)
class _BruteForce:
    """Quantized open-loop signals on a coarse uniform partition of [0, T]."""

    system: MultiChannelSystem
    mask: np.ndarray
    budget: ControlBudget
    codes: np.ndarray  # (C, pieces_b * r_alive) level indices

    @classmethod
    def build(cls, system, patterns, budget):
        mask = np.zeros(sum(system.widths), dtype=bool)
        for p in patterns:
            mask |= alive_mask(system, p)
        dims = budget.pieces * int(mask.sum())
        it = itertools.product(range(budget.levels), repeat=dims)
        rows = list(itertools.islice(it, budget.max_signals))
        # no alive input leaves the single empty signal (the zero control)
        return cls(system, mask, budget, np.array(rows, dtype=np.int64).reshape(len(rows), dims))

    @property
    def count(self):
        return self.codes.shape[0]

    @property
    def truncated(self):
        return self.budget.levels ** self.codes.shape[1] > self.count

    def _levels(self):
        amps = np.concatenate([np.full(c.width, c.bound if math.isfinite(c.bound) else self.budget.amplitude)
                               for c in self.system.channels])[self.mask]
        if self.budget.levels == 1:
            return np.zeros((amps.size, 1))
        return amps[:, None] * np.linspace(-1.0, 1.0, self.budget.levels)[None, :]

    def signals(self, T, dt, lo, hi):
        pieces = pieces_for(T, dt)
        codes = self.codes[lo:hi]
        C = codes.shape[0]
        r_alive = int(self.mask.sum())
        out = np.zeros((C, pieces, self.mask.size))
        if r_alive == 0:
            return out
        levels = self._levels()
        coarse = codes.reshape(C, self.budget.pieces, r_alive)
        which = np.minimum((np.arange(pieces) * self.budget.pieces) // pieces, self.budget.pieces - 1)
        vals = levels[np.arange(r_alive)[None, None, :], coarse]  # (C, pieces_b, r_alive)
        out[:, :, self.mask] = vals[:, which, :]
        return out


def _pattern_maps(system, patterns, T, pieces, config):
    """Per-pattern ``(Phi_h, Gamma_h B)`` on the sampling step, dead channels zeroed."""
    h = T / pieces / config.samples_per_piece
    Ball = np.hstack([c.B for c in system.channels])
    maps = []
    for p in patterns:
        Phi, GB = discretize_cached(system.A, Ball * alive_mask(system, p)[None, :], h)
        maps.append((kernels.c64(Phi), kernels.c64(GB)))
    return maps


@dataclass
class SpanningSet:
    """Result of a covering run: chosen candidates for every requested epsilon."""

    T: float
    grid: np.ndarray
    sources: list
    chosen: dict  # epsilon -> array of global candidate ids, or None when infeasible
    cardinality: dict  # epsilon -> int or inf
    diagnostics: list = field(default_factory=list)

    def _locate(self, cid):
        for src in self.sources:
            if cid < src.count:
                return src, cid
            cid -= src.count
        raise IndexError("candidate id out of range")

    def control(self, cid: int, dt: float) -> ControlSignal:
        src, local = self._locate(int(cid))
        U = src.signals(self.T, dt, local, local + 1)[0]
        return ControlSignal(self.T / U.shape[0], U)

    def controls(self, epsilon: float, dt: float) -> list[ControlSignal]:
        ids = self.chosen.get(epsilon)
        if ids is None:
            return []
        return [self.control(c, dt) for c in ids]


def U_width(system):
    return max(1, sum(system.widths))


def _tracking_sources(system, V, patterns, seeds, friends=None):
    sources, notes = [], []
    if friends is None:
        friends = []
        for p in patterns:
            try:
                friends.append(synthesize_friend(system, p, V))
            except NotControlledInvariant:
                notes.append(f"no friend for pattern {p.label}; tracking candidates skipped")
        if len(patterns) > 1 and len(friends) == len(patterns):
            try:
                friends.append(synthesize_common_friend(system, patterns, V))
            except NotControlledInvariant:
                notes.append("no common friend across patterns")
    # per-pattern signals only drive their own channels; a common friend supersedes them
    if any(len(f.patterns) > 1 for f in friends):
        friends = [f for f in friends if len(f.patterns) > 1]
    for f in friends:
        sources.append(_Tracking(system, f, tuple(f.patterns), V, seeds))
    return sources, notes


def _exhaustive_cover(sets, n_points):
    useful = [c for c, s in enumerate(sets) if len(s)]
    for size in range(1, len(useful) + 1):
        for combo in itertools.combinations(useful, size):
            covered = np.zeros(n_points, dtype=bool)
            for c in combo:
                covered[sets[c]] = True
            if covered.all():
                return np.asarray(combo, dtype=np.int64)
    return None


def cover(config: SpanningConfig, system: MultiChannelSystem, V: Subspace, epsilons=None,
          friends=None, brute: bool = True) -> SpanningSet:
    """Greedy spanning sets for one horizon and one or more tolerances.

    All tolerances share the grid and candidate pool (built for the smallest
    one), so reported cardinalities are nonincreasing in epsilon.
    """
    epsilons = sorted(set([config.epsilon] if epsilons is None else epsilons))
    eps_min, eps_max = epsilons[0], epsilons[-1]
    cfg = replace(config, epsilon=eps_min)
    T = cfg.T
    n = system.n
    for b in cfg.F_box:
        if b.n != n:
            raise ValueError("F_box lives in the wrong ambient space")
    grid = build_grid(cfg, system, V)
    G = grid.shape[0]
    patterns = list(cfg.patterns)
    diagnostics = [f"grid points: {G}", f"kernel backend: {kernels.BACKEND}"]

    sources, notes = _tracking_sources(system, V, patterns, grid[::max(1, cfg.seed_stride)], friends)
    diagnostics += notes
    if brute:
        bf = _BruteForce.build(system, patterns, cfg.control_budget)
        if bf.truncated:
            diagnostics.append(f"brute-force pool truncated to {bf.count} signals")
        sources.append(bf)
    C_total = sum(s.count for s in sources)
    diagnostics.append(f"candidates: {C_total}")

    Q = _quotient_basis(V)
    Qt = kernels.c64(Q.T)
    m = Q.shape[1]
    N = kernels.c64(_free_maps(system, V, T, cfg))
    pieces = pieces_for(T, cfg.dt)
    maps = _pattern_maps(system, patterns, T, pieces, cfg)
    pairs_g, pairs_c, pairs_v = [], [], []
    if C_total and m == 0:
        pairs_g.append(np.arange(G))
        pairs_c.append(np.zeros(G, dtype=np.int64))
        pairs_v.append(np.zeros(G))
    elif C_total:
        W = np.hstack([b.carrier for b in cfg.F_box]) if cfg.F_box else grid.T
        s_star = int(np.argmax([np.linalg.norm(Ns @ W, 2) for Ns in N]))
        tree = cKDTree(grid @ N[s_star].T)
        grid_c = kernels.c64(grid)
        chunk = max(256, _CHUNK_ELEMENTS // max(1, pieces * U_width(system)))
        offset = 0
        for src in sources:
            for lo in range(0, src.count, chunk):
                hi = min(src.count, lo + chunk)
                U = kernels.c64(src.signals(T, cfg.dt, lo, hi))
                Phi0, GB0 = maps[0]
                at = kernels.response_at(Phi0, GB0, Qt, U, cfg.samples_per_piece, s_star)
                hits = tree.query_ball_point(-at, r=eps_max * (1 + 1e-12))
                lens = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
                total = int(lens.sum())
                if total == 0:
                    continue
                g_idx = np.fromiter(itertools.chain.from_iterable(hits), dtype=np.int64, count=total)
                indptr = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
                vals = np.zeros(total)
                for Phi, GB in maps:
                    vals = np.maximum(vals, kernels.candidate_excursions(
                        Phi, GB, Qt, U, cfg.samples_per_piece, N, grid_c, indptr, g_idx, eps_max))
                ok = vals <= eps_max
                c_loc = np.repeat(np.arange(hi - lo, dtype=np.int64), lens)
                pairs_g.append(g_idx[ok])
                pairs_c.append(c_loc[ok] + offset + lo)
                pairs_v.append(vals[ok])
            offset += src.count
    if pairs_g:
        pg = np.concatenate(pairs_g)
        pc = np.concatenate(pairs_c)
        pv = np.concatenate(pairs_v)
    else:
        pg = pc = np.zeros(0, dtype=np.int64)
        pv = np.zeros(0)
    order = np.argsort(pc, kind="stable")
    pg, pc, pv = pg[order], pc[order], pv[order]

    # with several boxes the per-box covers are also tried: their union always spans
    parts = [(0, G)]
    if cfg.grid is None and len(cfg.F_box) > 1:
        bounds = np.cumsum([0] + [g.shape[0] for g in _box_grids(cfg, system, V)])
        parts = list(zip(bounds[:-1], bounds[1:]))

    def solve(g_e, c_e, lo, hi):
        sel = (g_e >= lo) & (g_e < hi)
        g_s, c_s = g_e[sel] - lo, c_e[sel]
        indptr = np.zeros(C_total + 1, dtype=np.int64)
        np.add.at(indptr, c_s + 1, 1)
        indptr = np.cumsum(indptr)
        if hi - lo <= 12 and C_total <= 20:
            sets = [g_s[indptr[c]:indptr[c + 1]] for c in range(C_total)]
            return _exhaustive_cover(sets, hi - lo), 0
        ids, covered = kernels.greedy_cover(indptr, np.ascontiguousarray(g_s), hi - lo)
        missing = int((~covered).sum())
        return (None if missing else ids), missing

    chosen, card = {}, {}
    prev = None
    for eps in epsilons:
        keep = pv <= eps
        g_e, c_e = pg[keep], pc[keep]
        ids, missing = solve(g_e, c_e, 0, G)
        if ids is not None and len(parts) > 1:
            pieces_ids = [solve(g_e, c_e, lo, hi)[0] for lo, hi in parts]
            if all(p is not None for p in pieces_ids):
                joined = np.unique(np.concatenate(pieces_ids)).astype(np.int64)
                if len(joined) < len(ids):
                    diagnostics.append(f"eps={eps:g}: per-box covers beat the joint greedy cover")
                    ids = joined
        if ids is None:
            if missing:
                diagnostics.append(f"eps={eps:g}: {missing} of {G} grid points not coverable")
            chosen[eps], card[eps] = None, INF
        else:
            if prev is not None and len(prev) < len(ids):
                diagnostics.append(f"eps={eps:g}: kept smaller cover from a tighter tolerance")
                ids = prev
            chosen[eps], card[eps] = ids, len(ids)
            prev = ids
    return SpanningSet(T, grid, sources, chosen, card, diagnostics)


def min_spanning_cardinality(config: SpanningConfig, system: MultiChannelSystem, V: Subspace,
                             friends=None, brute: bool = True):
    """Size of the constructed spanning set, or ``inf`` when some grid point is uncoverable."""
    return cover(config, system, V, friends=friends, brute=brute).cardinality[config.epsilon]


def is_spanning_set(controls, config: SpanningConfig, system: MultiChannelSystem, V: Subspace) -> bool:
    """Direct check by simulation of every grid point under every control and pattern."""
    grid = build_grid(config, system, V)
    if grid.shape[0] == 0:
        raise ValueError("empty grid")
    remaining = np.ones(grid.shape[0], dtype=bool)
    for u in controls:
        if not remaining.any():
            break
        X0 = grid[remaining].T
        worst = np.zeros(X0.shape[1])
        for p in config.patterns:
            traj = simulate(system, p, X0, u, config.samples_per_piece, horizon=config.T)
            st = traj.states
            resid = st - np.einsum("ij,sjb->sib", V.projector, st)
            worst = np.maximum(worst, np.linalg.norm(resid, axis=1).max(axis=0))
        idx = np.flatnonzero(remaining)
        remaining[idx[worst <= config.epsilon]] = False
    return not remaining.any()


# --- rate estimates ----------------------------------------------------------

def _fit(Ts, rs):
    x = np.asarray(Ts, dtype=float)
    y = np.log(np.asarray(rs, dtype=float))
    slope, icept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + icept)) ** 2)))
    return float(slope), resid


def _pattern_set_label(patterns):
    return ",".join(p.label for p in patterns)


def h_inv_estimate(system: MultiChannelSystem, V: Subspace, template: SpanningConfig,
                   horizons, epsilons, friends=None, brute: bool = True,
                   method: str = "covering") -> EntropyEstimate:
    """Growth rate of ``log r_inv`` in ``T`` at the smallest tolerance with all covers finite."""
    horizons = sorted(horizons)
    epsilons = sorted(epsilons)
    if len(horizons) < 3:
        raise ValueError("need at least three horizons")
    samples, diagnostics = [], []
    table = {}
    for T in horizons:
        run = cover(replace(template, T=T, epsilon=epsilons[0]), system, V, epsilons,
                    friends=friends, brute=brute)
        for eps in epsilons:
            r = run.cardinality[eps]
            table[(T, eps)] = r
            samples.append(EntropySample(float(T), float(eps), float(r) if math.isinf(r) else int(r)))
        diagnostics += [f"T={T:g}: {d}" for d in run.diagnostics if not d.startswith("kernel")]
    slopes = []
    used = None
    h_hat, resid = INF, INF
    for eps in epsilons:
        rs = [table[(T, eps)] for T in horizons]
        if all(math.isfinite(r) for r in rs):
            slope, res = _fit(horizons, rs)
            slopes.append((float(eps), slope))
            if used is None:
                used, h_hat, resid = float(eps), slope, res
    if used is None:
        diagnostics.append("every tolerance has an infeasible horizon; entropy reported as infinite")
    elif h_hat < 0:
        diagnostics.append(f"negative fitted slope {h_hat:.3g} clamped to 0")
        h_hat = 0.0
    return EntropyEstimate(tuple(samples), float(h_hat), float(resid), method, used,
                           tuple(slopes), _pattern_set_label(template.patterns), tuple(diagnostics))


def spectral_entropy_estimate(system: MultiChannelSystem, patterns, V: Subspace,
                              F: Subspace | np.ndarray | None = None, t_max: float | None = None,
                              points: int = 9) -> float:
    """Sum of positive exponential rates of the singular values of ``Q^T e^{AT}`` restricted to F.

    Requires a friend for every pattern.  ``F`` defaults to ``V``.
    """
    for p in patterns:
        synthesize_friend(system, p, V)
    if F is None:
        W = V.basis
    elif isinstance(F, Subspace):
        W = F.basis
    else:
        W = np.asarray(F, dtype=float).reshape(system.n, -1)
    Q = _quotient_basis(V)
    if W.shape[1] == 0 or Q.shape[1] == 0:
        return 0.0
    if t_max is None:
        scale = max(1.0, float(np.max(np.abs(np.linalg.eigvals(system.A)))))
        t_max = 60.0 / scale
    Ts = np.linspace(t_max / 2, t_max, points)
    sv = []
    for T in Ts:
        E = expm(system.A * T)
        s = np.linalg.svd(Q.T @ E @ W, compute_uv=False)
        floor = 1e-12 * max(1.0, float(np.linalg.norm(E, 2)))
        sv.append(np.where(s > floor, s, 0.0))
    sv = np.array(sv)
    total = 0.0
    for i in range(sv.shape[1]):
        col = sv[:, i]
        if np.any(col <= 0.0):
            continue
        slope = np.polyfit(Ts, np.log(col), 1)[0]
        total += max(0.0, float(slope))
    return total


def friend_class(system: MultiChannelSystem, patterns, V: Subspace) -> list[Friend]:
    """Per-pattern friends; empty when any pattern admits none."""
    out = []
    for p in patterns:
        try:
            out.append(synthesize_friend(system, p, V))
        except NotControlledInvariant:
            return []
    return out


def feedback_class_entropy_estimate(system: MultiChannelSystem, V: Subspace,
                                    template: SpanningConfig, horizons, epsilons,
                                    friends) -> EntropyEstimate:
    """Entropy when the spanning controls are limited to friend-generated signals.

    The target becomes the largest subspace of ``V`` invariant under every
    closed loop of the class; the initial box must stay inside it.
    """
    label = _pattern_set_label(template.patterns)
    friends = list(friends)
    if not friends:
        return EntropyEstimate((), INF, INF, "feedback-class", None, (), label,
                               ("empty friend class: no pattern admits a friend",))
    loops = [f.closed_loop(system, p) for f in friends for p in f.patterns]
    VK = closed_loop_supremal(loops, V)
    for b in template.F_box:
        inside = VK.contains(Subspace(b.carrier, VK.tol)) and VK.contains(b.carrier @ np.asarray(b.center))
        if not inside:
            return EntropyEstimate((), INF, INF, "feedback-class", None, (), label,
                                   ("initial box leaves the closed-loop invariant subspace",))
    est = h_inv_estimate(system, VK, template, horizons, epsilons, friends=friends, brute=False,
                         method="feedback-class")
    return est
