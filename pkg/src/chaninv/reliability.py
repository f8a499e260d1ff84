"""Per-failure-pattern reliability assessment and report I/O.

Each scenario combines the geometric answer (is the target still controlled
invariant once a channel is lost?) with the entropy estimates (how fast the
number of distinguishable controls must grow to stay near the target).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .entropy import (
    ControlBudget,
    EntropyEstimate,
    EntropySample,
    FBox,
    SpanningConfig,
    cover,
    feedback_class_entropy_estimate,
    h_inv_estimate,
    is_spanning_set,
    spectral_entropy_estimate,
)
from .geometric import (
    InvariancePattern,
    NotControlledInvariant,
    is_controlled_invariant,
    lattice_summary,
    reachable_subspace,
    supremal_invariant,
    synthesize_friend,
)
from .model import ChannelPattern, MultiChannelSystem, single_failure_patterns
from .subspace import Subspace, gap_metric

ZERO_COST = "maintainable-zero-cost"
AT_RATE = "maintainable-at-rate"
NOT_MAINTAINABLE = "not-maintainable"
VERDICTS = (ZERO_COST, AT_RATE, NOT_MAINTAINABLE)

HOLDS, VIOLATED, INCOMPARABLE = "holds", "violated", "incomparable"


class DegenerateTarget(ValueError):
    pass


@dataclass(frozen=True)
class EntropySettings:
    """Knobs for the entropy part of an assessment."""

    horizons: tuple[float, ...] = (3.0, 4.0, 5.0, 6.0)
    epsilons: tuple[float, ...] = (0.5, 0.25)
    control_budget: ControlBudget = ControlBudget()
    dt: float = 0.01
    samples_per_piece: int = 2
    grid_density: float | None = None
    grid_oversample: float = 1.5
    max_grid_points: int = 2_000_000
    fit_tol: float = 0.05
    spectral: bool = True
    feedback_class: bool = True
    verify_cover: bool = True

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(sorted(float(t) for t in self.horizons)))
        object.__setattr__(self, "epsilons", tuple(sorted(float(e) for e in self.epsilons)))
        if isinstance(self.control_budget, dict):
            object.__setattr__(self, "control_budget", ControlBudget(**self.control_budget))
        if len(self.horizons) < 3:
            raise ValueError("need at least three horizons")
        if not self.epsilons or min(self.epsilons) <= 0:
            raise ValueError("epsilons must be positive and nonempty")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["horizons"] = list(self.horizons)
        d["epsilons"] = list(self.epsilons)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "EntropySettings":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown entropy settings: {', '.join(unknown)}")
        return cls(**raw)

    def template(self, boxes, pattern: ChannelPattern) -> SpanningConfig:
        return SpanningConfig(T=self.horizons[0], epsilon=self.epsilons[0], F_box=tuple(boxes),
                              patterns=(pattern,), grid_density=self.grid_density,
                              control_budget=self.control_budget, dt=self.dt,
                              samples_per_piece=self.samples_per_piece,
                              grid_oversample=self.grid_oversample,
                              max_grid_points=self.max_grid_points)


@dataclass(frozen=True, eq=False)
class FailureScenario:
    pattern: ChannelPattern
    target: Subspace
    F_box: tuple[FBox, ...]

    def __post_init__(self):
        boxes = (self.F_box,) if isinstance(self.F_box, FBox) else tuple(self.F_box)
        object.__setattr__(self, "F_box", boxes)
        check_box_inside(self.target, boxes)


def check_box_inside(V: Subspace, boxes) -> None:
    for i, b in enumerate(boxes):
        if b.n != V.ambient_dim:
            raise ValueError(f"F_box {i} lives in R^{b.n}, target in R^{V.ambient_dim}")
        centre = b.carrier @ np.asarray(b.center, dtype=float)
        if not (V.contains(Subspace(b.carrier, V.tol)) and V.contains(centre)):
            raise ValueError(f"F_box {i} not inside the target subspace")


@dataclass(frozen=True)
class ScenarioEntry:
    pattern: str
    alive: tuple[int, ...]
    invariant: bool
    supremal_dim: int
    supremal_basis: tuple[tuple[float, ...], ...]
    friend_residual: float | None
    friend_gains: tuple[tuple[int, tuple[tuple[float, ...], ...]], ...] | None
    reachable_dims: tuple[tuple[int, int], ...]
    spectral: float | None
    entropy: EntropyEstimate
    feedback: EntropyEstimate | None
    spanning_verified: bool | None
    verdict: str
    diagnostics: tuple[str, ...] = ()


@dataclass(frozen=True)
class OrderingRecord:
    pattern: str
    h_inv: float | None
    h_feedback: float | None
    status: str
    note: str = ""


@dataclass(frozen=True)
class ReliabilityReport:
    system: dict
    target: tuple[tuple[float, ...], ...]
    F_box: tuple[dict, ...]
    settings: dict
    entries: tuple[ScenarioEntry, ...]
    robust_supremal: tuple[tuple[float, ...], ...]
    intersection: tuple[tuple[float, ...], ...]
    intersection_invariant: bool
    gap_labels: tuple[str, ...]
    gap_matrix: tuple[tuple[float, ...], ...]
    ordering: tuple[OrderingRecord, ...] = ()
    meta: dict = field(default_factory=dict)

    def entry(self, label: str) -> ScenarioEntry:
        for e in self.entries:
            if e.pattern == label:
                return e
        raise KeyError(label)

    @property
    def all_maintainable(self) -> bool:
        return all(e.verdict != NOT_MAINTAINABLE for e in self.entries)


def _rows(M) -> tuple[tuple[float, ...], ...]:
    return tuple(tuple(float(x) for x in row) for row in np.asarray(M, dtype=float))


def _verdict(invariant: bool, h_hat: float, fit_tol: float) -> str:
    if invariant and h_hat <= fit_tol:
        return ZERO_COST
    if not invariant and math.isinf(h_hat):
        return NOT_MAINTAINABLE
    return AT_RATE


def _assess_one(system, V, boxes, pattern, settings) -> ScenarioEntry:
    notes = []
    image = InvariancePattern.of(system, pattern, V.tol).image
    invariant = is_controlled_invariant(system.A, image, V)
    sup = supremal_invariant(system.A, image, V)
    friend = None
    if invariant:
        try:
            friend = synthesize_friend(system, pattern, V)
        except NotControlledInvariant as exc:
            notes.append(f"friend synthesis failed: {exc}")
    reach = ()
    if friend is not None:
        reach = tuple((j, reachable_subspace(system, pattern, friend, j).dim)
                      for j in pattern.channels())
    carrier = np.hstack([b.carrier for b in boxes])
    spectral = None
    if settings.spectral and friend is not None:
        spectral = float(spectral_entropy_estimate(system, [pattern], V, carrier))

    template = settings.template(boxes, pattern)
    est = h_inv_estimate(system, V, template, settings.horizons, settings.epsilons)
    feedback = None
    if settings.feedback_class:
        fc = [friend] if friend is not None else []
        feedback = feedback_class_entropy_estimate(system, V, template, settings.horizons,
                                                   settings.epsilons, fc)
    verdict = _verdict(invariant, est.h_hat, settings.fit_tol)
    if invariant and math.isinf(est.h_hat):
        notes.append("target is invariant but no cover was found at the configured budget")

    verified = None
    if settings.verify_cover and verdict != NOT_MAINTAINABLE and est.epsilon_used is not None:
        cfg = replace(template, T=settings.horizons[0], epsilon=est.epsilon_used)
        run = cover(cfg, system, V)
        verified = bool(is_spanning_set(run.controls(est.epsilon_used, cfg.dt), cfg, system, V))

    gains = None
    if friend is not None:
        gains = tuple((j, _rows(K)) for j, K in sorted(friend.gains.items()))
    return ScenarioEntry(
        pattern=pattern.label, alive=tuple(pattern.channels()), invariant=bool(invariant),
        supremal_dim=sup.dim, supremal_basis=_rows(sup.basis),
        friend_residual=None if friend is None else float(friend.residual), friend_gains=gains,
        reachable_dims=reach, spectral=spectral, entropy=est, feedback=feedback,
        spanning_verified=verified, verdict=verdict, diagnostics=tuple(notes))


def assess(system: MultiChannelSystem, V: Subspace, F_box, patterns=None,
           settings: EntropySettings | None = None) -> ReliabilityReport:
    """Assess every pattern (default: all single failures plus the nominal one)."""
    if V.dim == 0:
        raise DegenerateTarget("degenerate target: V = {0}")
    boxes = (F_box,) if isinstance(F_box, FBox) else tuple(F_box)
    if not boxes:
        raise ValueError("F_box must be nonempty")
    check_box_inside(V, boxes)
    patterns = list(single_failure_patterns(system.N) if patterns is None else patterns)
    if not patterns:
        raise ValueError("patterns must be nonempty")
    settings = settings or EntropySettings()

    entries = tuple(_assess_one(system, V, boxes, p, settings) for p in patterns)
    lat = lattice_summary(system, patterns, V)
    labels = tuple(p.label for p in patterns)
    sups = [lat["supremal"][lab] for lab in labels]
    gaps = tuple(tuple(0.0 if i == j else gap_metric(a, b) for j, b in enumerate(sups))
                 for i, a in enumerate(sups))
    report = ReliabilityReport(
        system=system.to_dict(), target=_rows(V.basis),
        F_box=tuple({"carrier": [list(r) for r in _rows(b.carrier)], "center": list(b.center),
                     "half_widths": list(b.half_widths)} for b in boxes),
        settings=settings.to_dict(), entries=entries,
        robust_supremal=_rows(lat["robust"].basis), intersection=_rows(lat["intersection"].basis),
        intersection_invariant=bool(lat["intersection_invariant"]), gap_labels=labels,
        gap_matrix=gaps, meta={"version": __version__, "backend": kernels.BACKEND})
    return replace(report, ordering=compare_entropy_bounds(report))


def compare_entropy_bounds(report: ReliabilityReport, tol: float | None = None):
    """``h_inv <= h_K + tol`` per scenario; missing estimates are ``incomparable``."""
    if tol is None:
        tol = float(report.settings.get("fit_tol", 0.05))
    out = []
    for e in report.entries:
        h = e.entropy.h_hat if e.entropy is not None and e.entropy.samples else None
        hk = e.feedback.h_hat if e.feedback is not None and e.feedback.samples else None
        if h is None or hk is None:
            why = "feedback class empty or not computed" if hk is None else "no covering estimate"
            out.append(OrderingRecord(e.pattern, h, hk, INCOMPARABLE, why))
        elif h <= hk + tol:
            out.append(OrderingRecord(e.pattern, h, hk, HOLDS))
        else:
            out.append(OrderingRecord(e.pattern, h, hk, VIOLATED,
                                      f"h_inv exceeds feedback-class estimate by {h - hk:.3g}"))
    return tuple(out)


# --- serialization -------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    text = "%.17g" % x
    # keep a float marker so that -0.0 and integral values re-read as floats
    return text if any(c in text for c in ".en") else text + ".0"


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with sorted keys and every float written with 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {dumps(obj[k], indent, _level + 1)}"
                 for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if obj is None or isinstance(obj, (bool, str)):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _num(x):
    return None if x is None else float(x)


def _rinv(x):
    return int(x) if isinstance(x, int) else float(x)


def estimate_to_dict(e: EntropyEstimate | None):
    if e is None:
        return None
    return {"samples": [{"T": s.T, "epsilon": s.epsilon, "r_inv": s.r_inv} for s in e.samples],
            "h_hat": e.h_hat, "fit_residual": e.fit_residual, "method": e.method,
            "epsilon_used": e.epsilon_used,
            "epsilon_slopes": [[a, b] for a, b in e.epsilon_slopes],
            "pattern_set": e.pattern_set, "diagnostics": list(e.diagnostics)}


def estimate_from_dict(d) -> EntropyEstimate | None:
    if d is None:
        return None
    samples = tuple(EntropySample(float(s["T"]), float(s["epsilon"]), _rinv(s["r_inv"]))
                    for s in d["samples"])
    return EntropyEstimate(samples, float(d["h_hat"]), float(d["fit_residual"]), d["method"],
                           _num(d["epsilon_used"]),
                           tuple((float(a), float(b)) for a, b in d["epsilon_slopes"]),
                           d["pattern_set"], tuple(d["diagnostics"]))


def _entry_to_dict(e: ScenarioEntry) -> dict:
    return {
        "pattern": e.pattern, "alive": list(e.alive), "invariant": e.invariant,
        "supremal_dim": e.supremal_dim, "supremal_basis": [list(r) for r in e.supremal_basis],
        "friend_residual": e.friend_residual,
        "friend_gains": None if e.friend_gains is None else
        {str(j): [list(r) for r in K] for j, K in e.friend_gains},
        "reachable_dims": {str(j): d for j, d in e.reachable_dims},
        "spectral": e.spectral, "entropy": estimate_to_dict(e.entropy),
        "feedback": estimate_to_dict(e.feedback), "spanning_verified": e.spanning_verified,
        "verdict": e.verdict, "diagnostics": list(e.diagnostics),
    }


def _entry_from_dict(d) -> ScenarioEntry:
    gains = d["friend_gains"]
    return ScenarioEntry(
        pattern=d["pattern"], alive=tuple(d["alive"]), invariant=bool(d["invariant"]),
        supremal_dim=int(d["supremal_dim"]), supremal_basis=_rows_from(d["supremal_basis"]),
        friend_residual=_num(d["friend_residual"]),
        friend_gains=None if gains is None else
        tuple(sorted((int(j), _rows_from(K)) for j, K in gains.items())),
        reachable_dims=tuple(sorted((int(j), int(v)) for j, v in d["reachable_dims"].items())),
        spectral=_num(d["spectral"]), entropy=estimate_from_dict(d["entropy"]),
        feedback=estimate_from_dict(d["feedback"]), spanning_verified=d["spanning_verified"],
        verdict=d["verdict"], diagnostics=tuple(d["diagnostics"]))


def _rows_from(rows):
    return tuple(tuple(float(x) for x in r) for r in rows)


def report_to_dict(report: ReliabilityReport) -> dict:
    return {
        "system": report.system, "target": [list(r) for r in report.target],
        "F_box": list(report.F_box), "settings": report.settings,
        "entries": [_entry_to_dict(e) for e in report.entries],
        "robust_supremal": [list(r) for r in report.robust_supremal],
        "intersection": [list(r) for r in report.intersection],
        "intersection_invariant": report.intersection_invariant,
        "gap_labels": list(report.gap_labels), "gap_matrix": [list(r) for r in report.gap_matrix],
        "ordering": [asdict(o) for o in report.ordering], "meta": report.meta,
    }


def _system_from(d):
    return {"A": [[float(x) for x in r] for r in d["A"]],
            "channels": [{"B": [[float(x) for x in r] for r in c["B"]],
                          "bound": None if c["bound"] is None else float(c["bound"])}
                         for c in d["channels"]]}


def _box_from(d):
    return {"carrier": [[float(x) for x in r] for r in d["carrier"]],
            "center": [float(x) for x in d["center"]],
            "half_widths": [float(x) for x in d["half_widths"]]}


def _settings_from(d):
    d = dict(d)
    for k in ("dt", "fit_tol", "grid_oversample"):
        d[k] = float(d[k])
    d["horizons"] = [float(t) for t in d["horizons"]]
    d["epsilons"] = [float(e) for e in d["epsilons"]]
    if d.get("grid_density") is not None:
        d["grid_density"] = float(d["grid_density"])
    d["control_budget"] = {**d["control_budget"],
                           "amplitude": float(d["control_budget"]["amplitude"])}
    return d


def report_from_dict(d: dict) -> ReliabilityReport:
    return ReliabilityReport(
        system=_system_from(d["system"]), target=_rows_from(d["target"]),
        F_box=tuple(_box_from(b) for b in d["F_box"]), settings=_settings_from(d["settings"]),
        entries=tuple(_entry_from_dict(e) for e in d["entries"]),
        robust_supremal=_rows_from(d["robust_supremal"]), intersection=_rows_from(d["intersection"]),
        intersection_invariant=bool(d["intersection_invariant"]),
        gap_labels=tuple(d["gap_labels"]), gap_matrix=_rows_from(d["gap_matrix"]),
        ordering=tuple(OrderingRecord(o["pattern"], _num(o["h_inv"]), _num(o["h_feedback"]),
                                      o["status"], o["note"]) for o in d["ordering"]),
        meta=dict(d.get("meta", {})))


def csv_rows(report: ReliabilityReport):
    for e in report.entries:
        yield from e.entropy.rows()


def csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["T", "epsilon", "r_inv", "log_r", "pattern_set"])
    for T, eps, r, log_r, label in rows:
        w.writerow([_fmt_float(T), _fmt_float(eps),
                    str(r) if isinstance(r, int) else _fmt_float(r).strip('"'),
                    _fmt_float(log_r).strip('"'), label])
    return buf.getvalue()


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_report(report: ReliabilityReport, path, csv_path=None) -> None:
    """Write the JSON report and its CSV companion (default: same name, ``.csv``)."""
    path = Path(path)
    _write_text(path, dumps(report_to_dict(report)) + "\n")
    csv_path = path.with_suffix(".csv") if csv_path is None else Path(csv_path)
    _write_text(csv_path, csv_text(csv_rows(report)))


def read_report(path) -> ReliabilityReport:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"file not found: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise OSError(f"cannot read report {path}: {exc}") from exc
    return report_from_dict(raw)


__all__ = [
    "AT_RATE", "DegenerateTarget", "EntropySettings", "FailureScenario", "NOT_MAINTAINABLE",
    "OrderingRecord", "ReliabilityReport", "ScenarioEntry", "VERDICTS", "ZERO_COST", "assess",
    "check_box_inside", "compare_entropy_bounds", "csv_rows", "csv_text", "dumps",
    "estimate_from_dict", "estimate_to_dict", "read_report",
    "report_from_dict", "report_to_dict", "write_report",
]
