"""Command-line entry point: ``recip <subcommand> ...``.

Exit codes: 0 success, 1 negative verdict (``same-class`` not equal),
2 usage or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bridge import DEFAULT_DELTA, DEFAULT_GRID, gradient_check, hjb_residual, solve_bridge
from .characteristics import chi_arc_values, default_time_grid, log_chi_cycle_values, same_class
from .errors import NumericalError, RecipError
from .expansion import DEFAULT_HS, MAX_EXACT_CYCLE, fit_characteristic, mc_expansion_check, probe_arc, probe_cycle
from .graph import ClosedWalk, closed_walks, graph_to_dict, load_graph, spanning_tree, t_basis
from .intensity import intensity_to_dict, load_intensity
from .presets import PRESETS, get_preset
from .simulate import sample_bridges, sample_paths

EXIT_OK, EXIT_NEGATIVE, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- emission


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def to_json(obj, indent: int | None = 2, _level: int = 0) -> str:
    """JSON text with floats at 17 significant digits; non-finite floats become ``null``.

    ``indent=None`` gives a single line.
    """
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        parts = [f"{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return _wrap("{", "}", parts, indent, _level, inline=False)
    if isinstance(obj, (list, tuple, np.ndarray)):
        parts = [to_json(v, indent, _level + 1) for v in obj]
        flat = all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj)
        return _wrap("[", "]", parts, indent, _level, inline=flat)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _wrap(open_, close, parts, indent, level, inline) -> str:
    if not parts:
        return open_ + close
    if indent is None or inline:
        return open_ + ", ".join(parts) + close
    pad = " " * (indent * (level + 1))
    return open_ + "\n" + ",\n".join(pad + p for p in parts) + "\n" + " " * (indent * level) + close


def to_json_line(obj) -> str:
    return to_json(obj, indent=None)


def csv_text(header, rows) -> str:
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return fmt_float(v)
        return str(v)

    lines = [",".join(header)]
    lines += [",".join(cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def emit(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


# --------------------------------------------------------------------------- configuration


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    inputs: dict = field(default_factory=dict)
    knobs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    @classmethod
    def from_namespace(cls, ns: argparse.Namespace) -> "RunConfig":
        inputs, knobs, outputs = {}, {}, {}
        for key, value in vars(ns).items():
            if key in ("command", "handler"):
                continue
            if key in ("graph", "intensity", "j", "k"):
                inputs[key] = value
            elif key in ("out", "summary", "emit"):
                outputs[key] = value
            else:
                knobs[key] = value
        return cls(ns.command, inputs, knobs, outputs)

    def check_inputs(self) -> None:
        for name, path in self.inputs.items():
            if path is not None and not Path(path).is_file():
                raise UsageError(f"--{name}: file not found: {path}")


def _ranged(kind, lo=None, hi=None, lo_open=False, hi_open=False):
    def parse(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {kind.__name__}, got {text!r}") from None
        if lo is not None and (value < lo or (lo_open and value == lo)):
            raise argparse.ArgumentTypeError(f"{value} is below the allowed range")
        if hi is not None and (value > hi or (hi_open and value == hi)):
            raise argparse.ArgumentTypeError(f"{value} is above the allowed range")
        return value

    return parse


_unit_open = _ranged(float, 0.0, 1.0, True, True)
_positive_int = _ranged(int, 1)


def _threads(ns) -> int:
    if ns.threads is not None:
        return ns.threads
    env = os.environ.get("RECIP_THREADS")
    if env is None:
        return 1
    try:
        value = int(env)
    except ValueError:
        raise UsageError(f"RECIP_THREADS must be a positive integer, got {env!r}") from None
    if value < 1:
        raise UsageError(f"RECIP_THREADS must be a positive integer, got {env!r}")
    return value


def _load(ns, key: str = "intensity"):
    graph = load_graph(ns.graph)
    return graph, load_intensity(getattr(ns, key), graph)


def _vertex(graph, name: str, field_name: str) -> str:
    if name not in graph.index:
        raise UsageError(f"{field_name}: unknown vertex {name!r}")
    return name


def _walk_arg(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


# --------------------------------------------------------------------------- subcommands


def cmd_chi(ns) -> int:
    graph, k = _load(ns)
    times = default_time_grid(ns.points, ns.delta)
    m = re.fullmatch(r"all(?:<=|≤)?(\d+)", ns.cycles)
    if ns.cycles == "basis":
        cycles = list(t_basis(graph, spanning_tree(graph)).cycles)
    elif m:
        cycles = list(closed_walks(graph, int(m.group(1))))
    else:
        raise UsageError(f"--cycles: expected 'basis' or 'all<=L', got {ns.cycles!r}")
    arc_vals = chi_arc_values(k, times)
    cyc_vals = np.exp(log_chi_cycle_values(k, times, cycles)) if cycles else np.empty((len(times), 0))
    arc_ids = ["arc:" + "->".join(a) for a in graph.arcs]
    cyc_ids = ["cycle:" + str(c) for c in cycles]
    rows = []
    for n, t in enumerate(times):
        rows += [(t, oid, arc_vals[n, i]) for i, oid in enumerate(arc_ids)]
        rows += [(t, oid, cyc_vals[n, i]) for i, oid in enumerate(cyc_ids)]
    emit(csv_text(["t", "object", "chi"], rows), ns.out)
    return EXIT_OK


def cmd_same_class(ns) -> int:
    graph = load_graph(ns.graph)
    j = load_intensity(ns.j, graph)
    k = load_intensity(ns.k, graph)
    report = same_class(j, k, time_grid=default_time_grid(ns.points, ns.delta), tol_arc=ns.tol_arc, tol_cycle=ns.tol_cycle)
    emit(to_json(report.to_dict()) + "\n", ns.out)
    return EXIT_OK if report.equal else EXIT_NEGATIVE


def _solve(ns, graph, j, x, y):
    return solve_bridge(j, _vertex(graph, x, "--from"), _vertex(graph, y, "--to"), grid=ns.grid, delta=ns.delta)


def cmd_bridge(ns) -> int:
    graph, j = _load(ns)
    sol = _solve(ns, graph, j, ns.source, ns.target)
    tree = spanning_tree(graph)
    basis = t_basis(graph, tree)
    check_times = default_time_grid(ns.points, sol.delta)
    report = same_class(j, sol, tree=tree, basis=basis, time_grid=check_times)
    summary = {
        "from": sol.x,
        "to": sol.y,
        "delta": sol.delta,
        "grid": len(sol.times),
        "method": sol.method,
        "hjb_residual": hjb_residual(sol),
        "gradient_residual": gradient_check(sol, basis),
        "chi_arc_residual": report.arc_residual,
        "chi_cycle_residual": report.cycle_residual,
    }
    if ns.out is not None:
        rates = sol.rates(sol.times)
        rows = [
            (t, a[0], a[1], rates[n, i])
            for n, t in enumerate(sol.times)
            for i, a in enumerate(graph.arcs)
        ]
        emit(csv_text(["t", "src", "dst", "rate"], rows), ns.out)
    emit(to_json(summary) + "\n", ns.summary)
    return EXIT_OK


def cmd_simulate(ns) -> int:
    graph, k = _load(ns)
    x = _vertex(graph, ns.source, "--from")
    threads = _threads(ns)
    if ns.bridge_to is not None:
        sol = _solve(ns, graph, k, x, ns.bridge_to)
        batch = sample_bridges(sol, ns.paths, ns.seed, threads=threads)
    else:
        batch = sample_paths(k, x, ns.paths, ns.seed, t_start=ns.t_start, t_end=ns.t_end, threads=threads)
    lines = [to_json_line(p.to_dict()) for p in batch]
    emit("\n".join(lines) + "\n", ns.out)
    return EXIT_OK


def cmd_verify(ns) -> int:
    graph, j = _load(ns)
    hs = tuple(sorted(ns.h, reverse=True)) if ns.h else DEFAULT_HS
    if ns.t + hs[0] >= 1.0:
        raise UsageError(f"--t: t + max(h) must be below 1, got {ns.t + hs[0]}")
    out: dict = {"t": ns.t}
    if ns.arc is not None:
        verts = _walk_arg(ns.arc)
        if len(verts) != 2 or not graph.has_arc(*verts):
            raise UsageError(f"--arc: {ns.arc!r} is not an arc of the graph")
        target = tuple(verts)
        out["target"] = {"arc": list(verts)}
        exact = lambda: probe_arc(j, ns.t, *verts, hs=hs)
        reference = float(chi_arc_values(j, [ns.t])[0, graph.arc_index[target]])
        mc_h = 0.05 if ns.mc_h is None else ns.mc_h
    else:
        verts = _walk_arg(ns.cycle)
        try:
            target = ClosedWalk(tuple(verts))
            graph.check_walk(target)
        except RecipError as exc:
            raise UsageError(f"--cycle: {exc}") from None
        out["target"] = {"cycle": list(verts)}
        exact = (lambda: probe_cycle(j, ns.t, target, hs=hs)) if len(target) <= MAX_EXACT_CYCLE else None
        reference = float(np.exp(log_chi_cycle_values(j, [ns.t], [target])[0, 0]))
        mc_h = 0.3 if ns.mc_h is None else ns.mc_h
        if exact is None and ns.mc is None:
            raise UsageError(f"--cycle: walks longer than {MAX_EXACT_CYCLE} need --mc")
    out["reference_chi"] = reference
    if exact is not None:
        probe = exact()
        fitted = fit_characteristic(probe)
        err = abs(fitted - reference)
        out["hs"] = list(probe.hs)
        out["exact"] = list(probe.values)
        out["fitted_chi"] = fitted
        out["abs_error"] = err
        out["relative_error"] = err / abs(reference) if reference != 0 else None
    if ns.mc is not None:
        if ns.t + mc_h >= 1.0:
            raise UsageError(f"--mc-h: t + h must be below 1, got {ns.t + mc_h}")
        check = mc_expansion_check(j, ns.t, mc_h, target, ns.mc, ns.seed, threads=_threads(ns))
        out["mc"] = {"h": mc_h, "paths": ns.mc, **check.to_dict()}
    else:
        out["mc"] = None
    emit(to_json(out) + "\n", ns.out)
    return EXIT_OK


def _param(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def cmd_preset(ns) -> int:
    params = dict(ns.param or [])
    try:
        preset = get_preset(ns.name, **params)
    except TypeError as exc:
        raise UsageError(f"--param: {exc}") from None
    info = {
        "name": preset.name,
        "params": {k: v for k, v in preset.params.items()},
        "vertices": preset.graph.n_vertices,
        "arcs": preset.graph.n_arcs,
        "root": preset.root,
    }
    if ns.emit:
        paths = ns.emit.split(",")
        second = preset.extras.get("k")
        if len(paths) not in (2, 3):
            raise UsageError("--emit: expected GRAPH.json,INTENSITY.json[,K.json]")
        if len(paths) == 3 and second is None:
            raise UsageError(f"--emit: preset {preset.name} has no second intensity k")
        emit(to_json(graph_to_dict(preset.graph)) + "\n", paths[0])
        emit(to_json(intensity_to_dict(preset.intensity)) + "\n", paths[1])
        if len(paths) == 3:
            emit(to_json(intensity_to_dict(second)) + "\n", paths[2])
        info["emitted"] = paths
    emit(to_json(info) + "\n", ns.out)
    return EXIT_OK


def cmd_basis(ns) -> int:
    graph = load_graph(ns.graph)
    root = None if ns.root is None else _vertex(graph, ns.root, "--root")
    tree = spanning_tree(graph, root)
    basis = t_basis(graph, tree)
    doc = {
        "root": tree.root,
        "tree_edges": [list(e) for e in tree.edges()],
        "fundamental": [list(c.vertices) for c in basis.fundamental],
        "edge_walks": [list(c.vertices) for c in basis.edges],
    }
    emit(to_json(doc) + "\n", ns.out)
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def _common_knobs(p, points=True):
    p.add_argument("--delta", type=_ranged(float, 0.0, 0.5, True, True), default=DEFAULT_DELTA,
                   help="distance kept from t = 1 (default %(default)s)")
    if points:
        p.add_argument("--points", type=_ranged(int, 2), default=257, help="time grid points for checks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recip", description="Reciprocal classes of Markov walks on graphs.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("chi", help="characteristics on a time grid (CSV)")
    p.add_argument("--graph", required=True)
    p.add_argument("--intensity", required=True)
    p.add_argument("--cycles", default="basis", help="'basis' or 'all<=L'")
    _common_knobs(p)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_chi)

    p = sub.add_parser("same-class", help="decide reciprocal-class membership (JSON)")
    p.add_argument("--graph", required=True)
    p.add_argument("--j", required=True)
    p.add_argument("--k", required=True)
    p.add_argument("--tol-arc", type=_ranged(float, 0.0, lo_open=True))
    p.add_argument("--tol-cycle", type=_ranged(float, 0.0, lo_open=True))
    _common_knobs(p)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_same_class)

    p = sub.add_parser("bridge", help="solve a bridge intensity (CSV rows, JSON summary)")
    p.add_argument("--graph", required=True)
    p.add_argument("--intensity", required=True)
    p.add_argument("--from", dest="source", required=True)
    p.add_argument("--to", dest="target", required=True)
    p.add_argument("--grid", type=_ranged(int, 3), default=DEFAULT_GRID)
    _common_knobs(p)
    p.add_argument("--out", help="CSV of bridge rates (omit to skip)")
    p.add_argument("--summary", help="JSON summary path (default stdout)")
    p.set_defaults(handler=cmd_bridge)

    p = sub.add_parser("simulate", help="sample paths (newline-delimited JSON)")
    p.add_argument("--graph", required=True)
    p.add_argument("--intensity", required=True)
    p.add_argument("--from", dest="source", required=True)
    p.add_argument("--paths", type=_positive_int, required=True)
    p.add_argument("--seed", type=_ranged(int, 0), required=True)
    p.add_argument("--bridge-to")
    p.add_argument("--t-start", type=_ranged(float, 0.0, 1.0, hi_open=True), default=0.0)
    p.add_argument("--t-end", type=_ranged(float, 0.0, 1.0, lo_open=True), default=1.0)
    p.add_argument("--grid", type=_ranged(int, 3), default=DEFAULT_GRID)
    _common_knobs(p, points=False)
    p.add_argument("--threads", type=_positive_int)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("verify", help="short-time expansion check (JSON)")
    p.add_argument("--graph", required=True)
    p.add_argument("--intensity", required=True)
    p.add_argument("--t", type=_unit_open, required=True)
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--arc", help="a,b")
    target.add_argument("--cycle", help="a,b,c,a")
    p.add_argument("--h", type=_unit_open, nargs="+", help="h grid (default 1e-1 3e-2 1e-2 3e-3 1e-3)")
    p.add_argument("--mc", type=_ranged(int, 1000), help="Monte Carlo path count (>= 1000)")
    p.add_argument("--mc-h", type=_unit_open, help="window for the Monte Carlo check")
    p.add_argument("--seed", type=_ranged(int, 0), required=True)
    p.add_argument("--threads", type=_positive_int)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("preset", help="describe a preset and optionally write its files")
    p.add_argument("--name", required=True, choices=sorted(set(PRESETS) | {n.replace("_", "-") for n in PRESETS}))
    p.add_argument("--param", type=_param, action="append", help="key=value (value parsed as JSON when possible)")
    p.add_argument("--emit", help="GRAPH.json,INTENSITY.json[,K.json] (K only for presets with a second intensity)")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_preset)

    p = sub.add_parser("basis", help="spanning tree and T-basis of closed walks (JSON)")
    p.add_argument("--graph", required=True)
    p.add_argument("--root")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_basis)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        RunConfig.from_namespace(ns).check_inputs()
        return ns.handler(ns)
    except NumericalError as exc:
        print(f"recip: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, RecipError, ValueError, KeyError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"recip: error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
