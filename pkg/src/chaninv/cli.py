"""Command-line front end: ``chaninv {analyze,entropy,simulate,gap}``.

Settings are resolved as flags > ``--config`` file > built-in defaults.
Exit status: 0 when every scenario is maintainable, 2 when ``analyze`` finds
a not-maintainable pattern, 1 on any error (message on stderr).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .entropy import (
    ControlBudget,
    FBox,
    feedback_class_entropy_estimate,
    friend_class,
    h_inv_estimate,
    spectral_entropy_estimate,
)
from .geometric import InvariancePattern, supremal_invariant
from .model import (
    ChannelPattern,
    ControlSignal,
    ValidationError,
    load_system,
    simulate,
    single_failure_patterns,
)
from .reliability import (
    EntropySettings,
    assess,
    csv_rows,
    csv_text,
    dumps,
    estimate_to_dict,
    report_to_dict,
    write_report,
)
from .subspace import DEFAULT_TOL, column_span, gap_metric

log = logging.getLogger("chaninv")

COMMANDS = ("analyze", "entropy", "simulate", "gap")


class CliError(Exception):
    pass


@dataclass
class CliConfig:
    command: str
    system: Path
    out: Path | None = None
    csv: Path | None = None
    target: Path | None = None
    patterns: list[str] | None = None
    tol: float = DEFAULT_TOL
    settings: EntropySettings = field(default_factory=EntropySettings)


def _read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from exc


def load_target(path, n: int, tol: float = DEFAULT_TOL):
    """Target file: ``{"basis": n x k rows}`` or ``{"vectors": [...]}`` plus optional ``F_box``.

    ``F_box`` is one box or a list of boxes, each ``{"center", "half_widths"}``
    in the coordinates of the orthonormalized target vectors (default: unit box).
    """
    raw = _read_json(path)
    if "vectors" in raw:
        vecs = [np.asarray(v, dtype=float) for v in raw["vectors"]]
    elif "basis" in raw:
        M = np.asarray(raw["basis"], dtype=float)
        if M.ndim != 2 or M.shape[0] != n:
            raise CliError(f"{path}: basis must have {n} rows")
        vecs = list(M.T)
    else:
        raise CliError(f"{path}: target needs 'basis' or 'vectors'")
    if any(v.shape != (n,) for v in vecs):
        raise CliError(f"{path}: target vectors must have length {n}")
    V = column_span(np.column_stack(vecs), tol) if vecs else column_span(np.zeros((n, 0)), tol)
    if V.dim == 0:
        return V, ()
    # box coordinates follow the given vectors when they are independent
    carrier = FBox.from_vectors(vecs).carrier if V.dim == len(vecs) else V.basis
    spec = raw.get("F_box", {})
    specs = spec if isinstance(spec, list) else [spec]
    boxes = []
    for b in specs:
        centre = b.get("center", [0.0] * V.dim)
        hw = b.get("half_widths", [1.0] * V.dim)
        boxes.append(FBox(carrier, centre, hw))
    return V, tuple(boxes)


def _patterns(labels, N):
    if not labels:
        return None
    out = []
    for item in labels:
        for tok in item.split(","):
            if tok.strip():
                out.append(ChannelPattern.parse(tok, N))
    return out


def _budget(text: str) -> ControlBudget:
    """``PIECESxLEVELS`` or ``PIECESxLEVELSxAMPLITUDE``."""
    parts = text.lower().replace("*", "x").split("x")
    try:
        if len(parts) == 2:
            return ControlBudget(pieces=int(parts[0]), levels=int(parts[1]))
        if len(parts) == 3:
            return ControlBudget(pieces=int(parts[0]), levels=int(parts[1]), amplitude=float(parts[2]))
    except ValueError:
        pass
    raise CliError(f"cannot parse budget {text!r}; expected PIECESxLEVELS")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chaninv", description="Reliability of multi-channel linear "
                                "systems under channel failures.")
    p.add_argument("--version", action="version", version=f"chaninv {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("system_pos", nargs="?", metavar="SYSTEM", help="system JSON file")
        sp.add_argument("--system", help="system JSON file")
        sp.add_argument("--target", help="target subspace JSON file")
        sp.add_argument("--patterns", action="append", help="pattern labels, e.g. '¬0,¬2' or '{1,3}'")
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--csv", help="CSV companion file")
        sp.add_argument("--tol", type=float, help="subspace rank/containment tolerance")
        sp.add_argument("--config", help="run config JSON")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name in ("analyze", "entropy"):
            sp.add_argument("--T", dest="T", type=float, action="append", help="horizon (repeatable)")
            sp.add_argument("--eps", type=float, action="append", help="tolerance (repeatable)")
            sp.add_argument("--grid", type=float, help="grid points per unit length (default: auto)")
            sp.add_argument("--budget", help="brute-force budget PIECESxLEVELS[xAMPLITUDE]")
        if name == "entropy":
            sp.add_argument("--method", choices=("covering", "spectral", "feedback-class"),
                            default="covering")
        if name == "simulate":
            sp.add_argument("--control", required=True, help="control JSON {dt, values}")
            sp.add_argument("--x0", required=True, help="initial state, comma separated")
            sp.add_argument("--samples", type=int, default=1, help="samples per piece")
    return p


def resolve(args) -> CliConfig:
    """Merge flags over the config file over defaults."""
    system = args.system or args.system_pos
    if not system:
        raise CliError("no system file given")
    file_cfg = _read_json(args.config) if args.config else {}
    settings_raw = {k: v for k, v in file_cfg.items()
                    if k in EntropySettings.__dataclass_fields__}
    if "budget" in file_cfg:
        settings_raw["control_budget"] = file_cfg["budget"]
    if isinstance(settings_raw.get("control_budget"), dict):
        settings_raw["control_budget"] = ControlBudget(**settings_raw["control_budget"])
    if getattr(args, "T", None):
        settings_raw["horizons"] = args.T
    if getattr(args, "eps", None):
        settings_raw["epsilons"] = args.eps
    if getattr(args, "grid", None) is not None:
        settings_raw["grid_density"] = args.grid
    if getattr(args, "budget", None):
        settings_raw["control_budget"] = _budget(args.budget)
    try:
        settings = EntropySettings(**settings_raw)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid entropy settings: {exc}") from exc
    tol = args.tol if args.tol is not None else float(file_cfg.get("tol", DEFAULT_TOL))
    patterns = args.patterns or file_cfg.get("patterns")
    if isinstance(patterns, str):
        patterns = [patterns]
    return CliConfig(args.command, Path(system), Path(args.out) if args.out else None,
                     Path(args.csv) if args.csv else None,
                     Path(args.target) if args.target else None, patterns, tol, settings)


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _need_target(cfg, system):
    if cfg.target is None:
        raise CliError(f"'{cfg.command}' needs --target")
    return load_target(cfg.target, system.n, cfg.tol)


def cmd_analyze(cfg: CliConfig, system) -> int:
    V, boxes = _need_target(cfg, system)
    report = assess(system, V, boxes, _patterns(cfg.patterns, system.N), cfg.settings)
    if cfg.out is not None:
        write_report(report, cfg.out, cfg.csv)
    else:
        _emit(dumps(report_to_dict(report)) + "\n", None)
        if cfg.csv is not None:
            _emit(csv_text(csv_rows(report)), cfg.csv)
    for e in report.entries:
        log.info("%s: %s (h=%s)", e.pattern, e.verdict, e.entropy.h_hat)
    return 0 if report.all_maintainable else 2


def cmd_entropy(cfg: CliConfig, system, method: str) -> int:
    V, boxes = _need_target(cfg, system)
    patterns = _patterns(cfg.patterns, system.N) or [ChannelPattern.all_alive(system.N)]
    template = cfg.settings.template(boxes, patterns[0])
    template = replace(template, patterns=tuple(patterns))
    if method == "spectral":
        carrier = np.hstack([b.carrier for b in boxes])
        h = spectral_entropy_estimate(system, patterns, V, carrier)
        _emit(dumps({"method": "spectral", "h_hat": h,
                     "pattern_set": ",".join(p.label for p in patterns)}) + "\n", cfg.out)
        return 0
    if method == "feedback-class":
        est = feedback_class_entropy_estimate(system, V, template, cfg.settings.horizons,
                                              cfg.settings.epsilons, friend_class(system, patterns, V))
    else:
        est = h_inv_estimate(system, V, template, cfg.settings.horizons, cfg.settings.epsilons)
    text = csv_text(est.rows())
    if cfg.out is not None:
        _emit(dumps(estimate_to_dict(est)) + "\n", cfg.out)
        if cfg.csv is not None:
            _emit(text, cfg.csv)
    else:
        _emit(text, cfg.csv)
    return 0


def _load_control(path, system) -> ControlSignal:
    raw = _read_json(path)
    try:
        return ControlSignal(float(raw["dt"]), np.asarray(raw["values"], dtype=float).reshape(
            -1, sum(system.widths)))
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{path}: control needs 'dt' and 'values' ({exc})") from exc


def cmd_simulate(cfg: CliConfig, system, args) -> int:
    u = _load_control(args.control, system)
    try:
        x0 = np.array([float(t) for t in args.x0.split(",")])
    except ValueError as exc:
        raise CliError(f"cannot parse --x0 {args.x0!r}") from exc
    pats = _patterns(cfg.patterns, system.N) or [ChannelPattern.all_alive(system.N)]
    if len(pats) != 1:
        raise CliError("simulate takes exactly one pattern")
    traj = simulate(system, pats[0], x0, u, args.samples)
    V = _need_target(cfg, system)[0] if cfg.target is not None else None
    head = ["t", *[f"x{i + 1}" for i in range(system.n)]] + (["distance"] if V is not None else [])
    lines = [",".join(head)]
    for t, x in zip(traj.times, traj.states):
        cells = ["%.17g" % t, *("%.17g" % v for v in x)]
        if V is not None:
            cells.append("%.17g" % float(np.linalg.norm(x - V.projector @ x)))
        lines.append(",".join(cells))
    _emit("\n".join(lines) + "\n", cfg.out or cfg.csv)
    return 0


def cmd_gap(cfg: CliConfig, system) -> int:
    V, _ = _need_target(cfg, system)
    patterns = _patterns(cfg.patterns, system.N) or single_failure_patterns(system.N)
    sups = [supremal_invariant(system.A, InvariancePattern.of(system, p, V.tol).image, V)
            for p in patterns]
    matrix = [[0.0 if i == j else gap_metric(a, b) for j, b in enumerate(sups)]
              for i, a in enumerate(sups)]
    payload = {"labels": [p.label for p in patterns], "matrix": matrix,
               "supremal_dims": [s.dim for s in sups]}
    _emit(dumps(payload) + "\n", cfg.out)
    return 0


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        system = load_system(cfg.system)
        if cfg.command == "analyze":
            return cmd_analyze(cfg, system)
        if cfg.command == "entropy":
            return cmd_entropy(cfg, system, args.method)
        if cfg.command == "simulate":
            return cmd_simulate(cfg, system, args)
        return cmd_gap(cfg, system)
    except FileNotFoundError as exc:
        msg = str(exc) if str(exc).startswith("file not found") else f"file not found: {exc.filename}"
        print(f"chaninv: error: {msg}", file=sys.stderr)
    except ValidationError as exc:
        print("chaninv: error: invalid system: " + "; ".join(exc.problems), file=sys.stderr)
    except (CliError, ValueError, OSError) as exc:
        print(f"chaninv: error: {exc}", file=sys.stderr)
    return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
