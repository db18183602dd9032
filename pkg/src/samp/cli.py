"""Command-line front end: ``samp <command> --help`` lists each command's flags.

Exit codes: 0 success, 2 usage error, 3 input schema error, 4 infeasible
inputs or a failed verification.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .access import AccessParams, access_objective
from .assignment import (STEP_RULES, AssignmentConfig, UnreachableDemand, UserCostWeights, check_user_cost_bound,
                         transit_assignment, user_cost, user_cost_components)
from .io import (SchemaError, fmt, read_boardings, read_fleet, read_network, read_od, write_access_report,
                 write_boardings, write_fleet, write_flows, write_history, write_json, write_network, write_od,
                 write_solution, write_table)
from .network import FleetBoundsError, NetworkError, TransitNetwork, with_initial_fleet
from .solver import SolverConfig, solve

EXIT_OK, EXIT_USAGE, EXIT_SCHEMA, EXIT_INFEASIBLE = 0, 2, 3, 4

log = logging.getLogger("samp")


class Infeasible(RuntimeError):
    pass


# -- config plumbing ----------------------------------------------------------

def plain(obj):
    """JSON-safe copy of a (nested) dataclass; infinities become strings."""
    if dataclasses.is_dataclass(obj):
        return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def from_plain(cls, data: dict):
    """Inverse of :func:`plain` for a dataclass type; unknown keys are rejected."""
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = {}
    defaults = cls()
    for k, v in data.items():
        cur = getattr(defaults, k)
        if dataclasses.is_dataclass(cur):
            kw[k] = from_plain(type(cur), v)
        elif isinstance(cur, tuple):
            kw[k] = tuple(v)
        elif isinstance(cur, float) or (isinstance(v, str) and v in ("inf", "-inf")):
            kw[k] = float(v)
        else:
            kw[k] = v
    return cls(**kw)


def digest(path) -> dict:
    p = Path(path)
    files = sorted(q for q in p.iterdir() if q.is_file()) if p.is_dir() else [p]
    return {str(q): hashlib.sha256(q.read_bytes()).hexdigest() for q in files}


def manifest(args, config, inputs, timings, counts, extra: Optional[dict] = None) -> dict:
    out = {"tool": "samp", "version": __version__, "command": args.command, "argv": sys.argv[1:],
           "config": plain(config), "inputs": {}, "timings": timings, "counts": counts,
           "threads": getattr(args, "threads", 1), "full_precision": args.full_precision}
    for p in inputs:
        if p is not None:
            out["inputs"].update(digest(p))
    if extra:
        out.update(extra)
    return out


def _assignment_cfg(args, base: AssignmentConfig = AssignmentConfig()) -> AssignmentConfig:
    kw = {}
    if args.alpha is not None:
        kw["alpha"] = args.alpha
    if args.msa_tol is not None:
        kw["tolerance"] = args.msa_tol
    if args.msa_max_iter is not None:
        kw["max_iterations"] = args.msa_max_iter
    if getattr(args, "step_rule", None):
        kw["step_rule"] = args.step_rule
    return dataclasses.replace(base, **kw)


def _weights(args, base: UserCostWeights = UserCostWeights()) -> UserCostWeights:
    kw = {}
    if args.theta is not None:
        kw.update(theta1=args.theta[0], theta2=args.theta[1], theta3=args.theta[2])
    if getattr(args, "epsilon", None) is not None:
        kw["epsilon"] = args.epsilon
    return dataclasses.replace(base, **kw)


def _access(args, base: AccessParams = AccessParams()) -> AccessParams:
    kw = {}
    if args.beta is not None:
        kw["beta"] = args.beta
    if args.k is not None:
        kw["k_count"] = args.k
    return dataclasses.replace(base, **kw)


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _fleet(args, net: TransitNetwork, column: str = "fleet") -> tuple[int, ...]:
    if getattr(args, "fleet", None):
        try:
            return read_fleet(args.fleet, net.n_lines, column)
        except SchemaError:
            if column != "fleet":
                raise
            return read_fleet(args.fleet, net.n_lines, "y_final")
    return tuple(net.initial_fleet)


# -- commands -----------------------------------------------------------------

def cmd_assign(args) -> int:
    t0 = time.perf_counter()
    net = read_network(args.network)
    od = read_od(args.od)
    y = _fleet(args, net)
    cfg = _assignment_cfg(args)
    w = _weights(args)
    _check_od(args, od, net)
    try:
        res = transit_assignment(net, y, od, cfg)
    except UnreachableDemand as exc:
        raise Infeasible(str(exc)) from exc
    out = _out_dir(args.out)
    full = args.full_precision
    write_flows(out / "flows.csv", res.flows, full)
    comp = user_cost_components(net, res)
    summary = {"waiting_total": res.waiting_total, "user_cost": user_cost(net, res, w), "components": comp,
               "gap": res.gap, "iterations": res.iterations, "fleet": list(y)}
    if not full:
        summary = _rounded(summary)
    write_json(out / "summary.json", summary)
    write_json(out / "run_manifest.json", manifest(args, {"assignment": cfg, "weights": w}, [args.network, args.od,
                                                  args.fleet], {"total": time.perf_counter() - t0},
                                                  {"assignment_evals": 1, "msa_iterations": res.iterations}))
    print(f"user cost {fmt(summary['user_cost'], full)}  gap {fmt(res.gap, full)}  iterations {res.iterations}")
    return EXIT_OK


def _check_od(args, od, net) -> None:
    try:
        od.validate(net)
    except ValueError as exc:
        raise SchemaError(args.od, str(exc)) from exc


def _rounded(obj):
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_rounded(v) for v in obj]
    if isinstance(obj, float):
        return float(fmt(obj)) if math.isfinite(obj) else str(obj)
    return obj


def cmd_access(args) -> int:
    t0 = time.perf_counter()
    net = read_network(args.network)
    y = _fleet(args, net)
    params = _access(args)
    try:
        obj0, prof0 = access_objective(net, tuple(net.initial_fleet), params)
        obj, prof = access_objective(net, y, params)
    except (FleetBoundsError, ValueError) as exc:
        raise Infeasible(str(exc)) from exc
    out = _out_dir(args.out)
    full = args.full_precision
    write_access_report(out / "access_report.csv", net.communities.tolist(), prof0.metrics, prof.metrics, full)
    summary = {"objective_initial": obj0, "objective": obj, "included": list(prof.included),
               "unreached_facilities": list(prof.unreached)}
    write_json(out / "summary.json", summary if full else _rounded(summary))
    write_json(out / "run_manifest.json", manifest(args, {"access": params}, [args.network, args.fleet],
                                                  {"total": time.perf_counter() - t0}, {"objective_evals": 2}))
    print(f"objective {fmt(obj, full)} (initial {fmt(obj0, full)})")
    return EXIT_OK


def cmd_solve(args) -> int:
    net = read_network(args.network)
    od = read_od(args.od)
    if args.fleet:
        net = with_initial_fleet(net, _fleet(args, net))
    _check_od(args, od, net)
    base = SolverConfig()
    if args.config:
        base = from_plain(SolverConfig, json.loads(Path(args.config).read_text(encoding="utf-8")))
    final = args.final_search if args.final_search is not None else (args.iters is None or args.iters > 0)
    kw = {"access": _access(args, base.access), "weights": _weights(args, base.weights),
          "assignment": _assignment_cfg(args, base.assignment), "final_search": final}
    if args.iters is not None:
        kw["iterations"] = args.iters
    if args.seed is not None:
        kw["seed"] = args.seed
    cfg = dataclasses.replace(base, **kw)
    try:
        res = solve(net, od, cfg)
    except (UnreachableDemand, ValueError) as exc:
        raise Infeasible(str(exc)) from exc
    out = _out_dir(args.out)
    full = args.full_precision
    write_solution(out / "solution.csv", res.initial_y, res.y, full)
    write_history(out / "history.csv", res.history, full)
    _, p0 = access_objective(net, res.initial_y, cfg.access)
    _, p1 = access_objective(net, res.y, cfg.access)
    write_access_report(out / "access_report.csv", net.communities.tolist(), p0.metrics, p1.metrics, full)
    counts = dataclasses.asdict(res.counters)
    counts["local_search_rounds"] = res.local_search_rounds
    extra = {"result": plain({"objective_initial": res.initial_objective, "objective": res.objective,
                              "baseline_user_cost": res.baseline_user_cost, "final_user_cost": res.final_user_cost,
                              "y_initial": list(res.initial_y), "y_final": list(res.y)})}
    write_json(out / "run_manifest.json", manifest(args, cfg, [args.network, args.od, args.fleet, args.config],
                                                  res.timings, counts, extra))
    print(f"objective {fmt(res.initial_objective, full)} -> {fmt(res.objective, full)} "
          f"in {res.timings['total']:.1f} s ({res.counters.assignment_evals} assignments)")
    return EXIT_OK


def cmd_verify(args) -> int:
    """Independent re-check of a solution: fleet constraints, user-cost bound, local optimality."""
    net = read_network(args.network)
    od = read_od(args.od)
    cfg = SolverConfig()
    if args.manifest:
        cfg = from_plain(SolverConfig, json.loads(Path(args.manifest).read_text(encoding="utf-8"))["config"])
    params = _access(args, cfg.access)
    w = _weights(args, cfg.weights)
    acfg = _assignment_cfg(args, cfg.assignment)
    _check_od(args, od, net)
    y = read_fleet(args.solution, net.n_lines, args.column)
    y0 = tuple(net.initial_fleet)
    problems = fleet_problems(net, y0, y)
    checks = {"fleet_constraints": not problems}

    uc_cache: dict = {}

    def uc(v):
        if v not in uc_cache:
            try:
                uc_cache[v] = user_cost(net, transit_assignment(net, v, od, acfg), w)
            except UnreachableDemand:
                uc_cache[v] = math.inf
        return uc_cache[v]

    bounded = math.isfinite(w.epsilon)
    base = (w.baseline if w.baseline is not None else uc(y0)) if bounded else None

    def feasible(v):
        return not fleet_problems(net, y0, v) and (not bounded or check_user_cost_bound(uc(v), base, w.epsilon))

    if bounded and not problems:
        ok = check_user_cost_bound(uc(y), base, w.epsilon)
        checks["user_cost_bound"] = ok
        if not ok:
            problems.append(f"user cost {uc(y):.10g} exceeds (1 + {w.epsilon}) x baseline {base:.10g}")
    if not args.skip_local and not problems:
        cur = access_objective(net, y, params)[0]
        better = []
        for v in neighbors(net, y):
            if fleet_problems(net, y0, v):
                continue
            o = access_objective(net, v, params)[0]
            if o > cur and feasible(v):
                better.append((v, o))
        checks["local_optimality"] = not better
        for v, o in better[:5]:
            problems.append(f"feasible neighbor {list(v)} improves the objective to {o:.10g} (from {cur:.10g})")
    report = {"checks": checks, "problems": problems, "fleet": list(y), "assignments": len(uc_cache)}
    if args.out:
        write_json(args.out, report)
    for name, ok in checks.items():
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    for p in problems:
        print(f"  {p}", file=sys.stderr)
    return EXIT_OK if not problems else EXIT_INFEASIBLE


def fleet_problems(net: TransitNetwork, y0, y) -> list[str]:
    """Integrality, per-line bounds and per-vehicle-type totals, written out from scratch."""
    out = []
    if len(y) != len(net.lines):
        return [f"{len(y)} entries for {len(net.lines)} lines"]
    totals, caps = {}, {}
    for ln, v, v0 in zip(net.lines, y, y0):
        if int(v) != v:
            out.append(f"line {ln.id}: fleet {v} is not an integer")
        if not ln.fleet_min <= v <= ln.fleet_max:
            out.append(f"line {ln.id}: fleet {v} outside [{ln.fleet_min}, {ln.fleet_max}]")
        totals[ln.vehicle_type] = totals.get(ln.vehicle_type, 0) + v
        caps[ln.vehicle_type] = caps.get(ln.vehicle_type, 0) + v0
    for z in sorted(totals):
        if totals[z] > caps[z]:
            out.append(f"vehicle type {z!r}: {totals[z]} vehicles exceed the initial {caps[z]}")
    return out


def neighbors(net: TransitNetwork, y):
    """Every vector one ADD, DROP or same-type SWAP away from ``y`` (bounds checked later)."""
    n = len(y)
    seen = set()
    for l in range(n):
        for d in (1, -1):
            v = list(y)
            v[l] += d
            seen.add(tuple(v))
    for m in range(n):
        for l in range(n):
            if m != l and net.lines[m].vehicle_type == net.lines[l].vehicle_type:
                v = list(y)
                v[m] -= 1
                v[l] += 1
                seen.add(tuple(v))
    return sorted(seen)


def cmd_generate(args) -> int:
    from .pipeline.artificial import ArtificialNetConfig, generate_artificial

    t0 = time.perf_counter()
    data = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    cfg = from_plain(ArtificialNetConfig, data)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.no_fleet_search:
        cfg = dataclasses.replace(cfg, fleet_search=False)
    inst = generate_artificial(cfg)
    out = _out_dir(args.out)
    write_network(inst.network, out / "network")
    write_od(inst.od, out / "od.csv")
    write_fleet(inst.fleet, out / "fleet.csv")
    write_boardings(inst.boardings, out / "boardings.csv")
    write_json(out / "run_manifest.json", manifest(
        args, cfg, [args.config], {"total": time.perf_counter() - t0},
        {"fleet_search_moves": inst.fleet_search_moves, "ipf_iterations": inst.ipf.iterations},
        {"ipf_error": inst.ipf.error}))
    print(f"{inst.network.n_lines} lines, {len(inst.network.stops)} stops, fleet {sum(inst.fleet)}, "
          f"{inst.fleet_search_moves} fleet search moves")
    return EXIT_OK


def cmd_ingest(args) -> int:
    from .pipeline.gtfs import IngestConfig, ingest_gtfs_lite

    t0 = time.perf_counter()
    cfg = IngestConfig(clusters=args.clusters, horizon=args.horizon, walk_cutoff=args.walk_cutoff,
                       service_id=args.service_id, seed=args.seed or 0)
    res = ingest_gtfs_lite(args.gtfs, cfg)
    out = _out_dir(args.out)
    write_network(res.network, out / "network")
    full = args.full_precision
    write_table(out / "line_stats.csv", ["line_id", "route_id", "trips", "visits_per_stop", "active_minutes",
                                         "frequency", "circuit_time", "initial_fleet", "fleet_min"],
                ([l, s.route_id, s.trips, fmt(s.visits_per_stop, full), fmt(s.active_minutes, full),
                  fmt(s.frequency, full), fmt(s.circuit_time, full), s.initial_fleet, s.fleet_min]
                 for l, s in enumerate(res.stats)))
    write_table(out / "stop_map.csv", ["gtfs_stop_id", "node_id"], sorted(res.stop_map.items()))
    write_json(out / "run_manifest.json", manifest(args, cfg, [args.gtfs], {"total": time.perf_counter() - t0},
                                                  {"lines": len(res.stats)},
                                                  {"cluster_distance_miles": res.cluster_distance}))
    print(f"{len(res.stats)} lines, {len(res.network.stops)} stops")
    return EXIT_OK


def cmd_build_od(args) -> int:
    from .pipeline.ipf import IPFConfig, build_od_ipf

    net = read_network(args.network)
    boardings = read_boardings(args.boardings)
    kw = {k: v for k, v in (("max_iterations", args.max_iter), ("tolerance", args.tol), ("mean", args.mean),
                            ("std", args.std)) if v is not None}
    od, info = build_od_ipf(net, boardings, IPFConfig(**kw))
    write_od(od, args.out)
    print(f"IPF stopped after {info.iterations} iterations, marginal error {fmt(info.error)}; "
          f"total demand {fmt(od.total)}")
    return EXIT_OK


def cmd_gen_express(args) -> int:
    from .pipeline.express import ExpressParams, generate_express

    net = read_network(args.network)
    y = _fleet(args, net)
    params = ExpressParams(args.min_stops, args.keep_frac, args.skip_saving_sec, args.beta or 1.0)
    res = generate_express(net, y, params)
    out = _out_dir(args.out)
    write_network(res.network, out)
    print(f"{len(res.runs)} express lines added")
    return EXIT_OK


def cmd_export_geojson(args) -> int:
    from .pipeline.geojson import network_geojson

    net = read_network(args.network)
    y = _fleet(args, net)
    metrics = access_objective(net, y, _access(args))[1].metrics if len(net.communities) else None
    write_json(args.out, network_geojson(net, metrics, y))
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--full-precision", action="store_true", help="print floats with full precision")
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true")


def _assign_flags(p) -> None:
    p.add_argument("--alpha", type=float, help="conical congestion steepness (default 2)")
    p.add_argument("--msa-tol", type=float, help="equilibrium relative-gap tolerance")
    p.add_argument("--msa-max-iter", type=int, help="cap on equilibrium iterations")
    p.add_argument("--step-rule", choices=STEP_RULES)
    p.add_argument("--theta", type=float, nargs=3, metavar=("IN_VEHICLE", "WALK", "WAIT"))


def _access_flags(p) -> None:
    p.add_argument("--beta", type=float, help="gravity decay exponent")
    p.add_argument("--k", type=int, help="number of least-access communities in the objective")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="samp", description="Fleet reallocation for equitable transit access.")
    ap.add_argument("--version", action="version", version=f"samp {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assign", help="run the congested transit assignment")
    p.add_argument("--network", required=True)
    p.add_argument("--od", required=True)
    p.add_argument("--fleet")
    p.add_argument("--out", required=True)
    _assign_flags(p)
    _common(p)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("access", help="per-community access report")
    p.add_argument("--network", required=True)
    p.add_argument("--fleet")
    p.add_argument("--out", required=True)
    _access_flags(p)
    _common(p)
    p.set_defaults(func=cmd_access)

    p = sub.add_parser("solve", help="search for a better fleet allocation")
    p.add_argument("--network", required=True)
    p.add_argument("--od", required=True)
    p.add_argument("--fleet", help="start from this fleet instead of the stored initial one")
    p.add_argument("--config", help="JSON solver configuration")
    p.add_argument("--epsilon", type=float, help="allowed relative user-cost increase (inf disables)")
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int)
    fs = p.add_mutually_exclusive_group()
    fs.add_argument("--final-search", dest="final_search", action="store_true", default=None)
    fs.add_argument("--no-final-search", dest="final_search", action="store_false")
    p.add_argument("--out", required=True)
    _access_flags(p)
    _assign_flags(p)
    _common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="re-check a solution independently")
    p.add_argument("--network", required=True)
    p.add_argument("--od", required=True)
    p.add_argument("--solution", required=True, help="fleet CSV (solution.csv or fleet.csv)")
    p.add_argument("--column", default="y_final")
    p.add_argument("--manifest", help="run_manifest.json whose configuration to use")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--skip-local", action="store_true", help="skip the local-optimality sweep")
    p.add_argument("--out", help="write the verdict as JSON")
    _access_flags(p)
    _assign_flags(p)
    _common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("generate", help="procedural grid instance")
    p.add_argument("--config", help="JSON generator configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-fleet-search", action="store_true", help="keep the proportional fleet")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", help="network skeleton from GTFS stops/routes/trips/stop_times")
    p.add_argument("--gtfs", required=True)
    p.add_argument("--clusters", type=int)
    p.add_argument("--horizon", type=float, default=1440.0)
    p.add_argument("--walk-cutoff", type=float, default=0.75)
    p.add_argument("--service-id")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-od", help="OD matrix from stop boardings by iterative proportional fitting")
    p.add_argument("--network", required=True)
    p.add_argument("--boardings", required=True)
    p.add_argument("--mean", type=float, help="trip-length mean in minutes")
    p.add_argument("--std", type=float, help="trip-length standard deviation in minutes")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_build_od)

    p = sub.add_parser("gen-express", help="append express runs of long lines")
    p.add_argument("--network", required=True)
    p.add_argument("--fleet")
    p.add_argument("--min-stops", type=int, default=18)
    p.add_argument("--keep-frac", type=float, default=0.1)
    p.add_argument("--skip-saving-sec", type=float, default=40.0)
    p.add_argument("--beta", type=float)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_gen_express)

    p = sub.add_parser("export-geojson", help="map layers for external GIS tools")
    p.add_argument("--network", required=True)
    p.add_argument("--fleet")
    p.add_argument("--out", required=True)
    _access_flags(p)
    _common(p)
    p.set_defaults(func=cmd_export_geojson)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (Infeasible, FleetBoundsError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NetworkError, json.JSONDecodeError) as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
