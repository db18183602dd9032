"""CSV and JSON persistence for networks, demand, fleets and reports."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .assignment import ODMatrix
from .network import Arc, ArcKind, Line, NetworkError, Node, NodeKind, TransitNetwork

NODE_FIELDS = ["id", "kind", "x", "y", "line", "population", "quality"]
ARC_FIELDS = ["id", "tail", "head", "kind", "base_time", "line"]
LINE_FIELDS = ["id", "vehicle_type", "circuit_time", "seats", "active_fraction", "initial_fleet", "fleet_min",
               "fleet_max", "boarding_sequence"]


class SchemaError(ValueError):
    def __init__(self, path, message: str, row: Optional[int] = None):
        where = f"{path}" if row is None else f"{path}, row {row}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.row = row


def fmt(v, full: bool = False) -> str:
    """Six significant digits unless ``full``; integers and infinities stay readable."""
    if v is None:
        return ""
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return repr(v) if full else f"{v:.6g}"


def _exact(v) -> str:
    return fmt(v, full=True)


# -- reading helpers ----------------------------------------------------------

def _rows(path: Path, required: Sequence[str]) -> list[tuple[int, dict]]:
    if not path.is_file():
        raise SchemaError(path, "file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(path, "missing header row")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise SchemaError(path, f"missing columns {missing}")
        return [(i, r) for i, r in enumerate(reader, start=2)]


def _parse(path, row, value: str, conv, name: str, optional: bool = False):
    if value is None or value.strip() == "":
        if optional:
            return None
        raise SchemaError(path, f"column {name!r} is empty", row)
    try:
        return conv(value.strip())
    except (ValueError, KeyError) as exc:
        raise SchemaError(path, f"bad {name!r} value {value!r}", row) from exc


def _int(s: str) -> int:
    f = float(s)
    if not f.is_integer():
        raise ValueError(s)
    return int(f)


def _kind(enum):
    return lambda s: enum[s.upper()]


# -- network ------------------------------------------------------------------

def write_network(net: TransitNetwork, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "nodes.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NODE_FIELDS)
        for n in net.nodes:
            w.writerow([n.id, n.kind.name.lower(), _exact(n.x), _exact(n.y), "" if n.line is None else n.line,
                        "" if n.population is None else _exact(n.population),
                        "" if n.quality is None else _exact(n.quality)])
    with open(out / "arcs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ARC_FIELDS)
        for a in net.arcs:
            w.writerow([a.id, a.tail, a.head, a.kind.name.lower(), _exact(a.base_time),
                        "" if a.line is None else a.line])
    with open(out / "lines.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LINE_FIELDS + ["name"])
        for ln in net.lines:
            w.writerow([ln.id, ln.vehicle_type, _exact(ln.circuit_time), _exact(ln.seats), _exact(ln.active_fraction),
                        ln.initial_fleet, ln.fleet_min,
                        "inf" if math.isinf(ln.fleet_max) else int(ln.fleet_max),
                        ";".join(str(b) for b in ln.boarding_sequence), ln.name])
    manifest = {"horizon": net.horizon, "distance": net.distance, "metadata": net.metadata}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_network(in_dir) -> TransitNetwork:
    src = Path(in_dir)
    mpath = src / "manifest.json"
    if not mpath.is_file():
        raise SchemaError(mpath, "file not found")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        horizon = float(manifest["horizon"])
    except (ValueError, KeyError, TypeError) as exc:
        raise SchemaError(mpath, "needs a numeric 'horizon'") from exc
    distance = manifest.get("distance", "planar")

    p = src / "nodes.csv"
    nodes = []
    for row, r in _rows(p, NODE_FIELDS):
        nodes.append(Node(_parse(p, row, r["id"], _int, "id"), _parse(p, row, r["kind"], _kind(NodeKind), "kind"),
                          _parse(p, row, r["x"], float, "x"), _parse(p, row, r["y"], float, "y"),
                          _parse(p, row, r["line"], _int, "line", True),
                          _parse(p, row, r["population"], float, "population", True),
                          _parse(p, row, r["quality"], float, "quality", True)))
    p = src / "arcs.csv"
    arcs = []
    for row, r in _rows(p, ARC_FIELDS):
        arcs.append(Arc(_parse(p, row, r["id"], _int, "id"), _parse(p, row, r["tail"], _int, "tail"),
                        _parse(p, row, r["head"], _int, "head"), _parse(p, row, r["kind"], _kind(ArcKind), "kind"),
                        _parse(p, row, r["base_time"], float, "base_time"),
                        _parse(p, row, r["line"], _int, "line", True)))
    p = src / "lines.csv"
    lines = []
    for row, r in _rows(p, LINE_FIELDS):
        seq = r["boarding_sequence"] or ""
        fmax = _parse(p, row, r["fleet_max"], float, "fleet_max")
        lines.append(Line(_parse(p, row, r["id"], _int, "id"), r["vehicle_type"] or "",
                          _parse(p, row, r["circuit_time"], float, "circuit_time"),
                          _parse(p, row, r["seats"], float, "seats"),
                          _parse(p, row, r["active_fraction"], float, "active_fraction"),
                          _parse(p, row, r["initial_fleet"], _int, "initial_fleet"),
                          _parse(p, row, r["fleet_min"], _int, "fleet_min"),
                          fmax if math.isinf(fmax) else int(fmax),
                          tuple(_parse(p, row, s, _int, "boarding_sequence") for s in seq.split(";") if s.strip()),
                          r.get("name") or ""))
    try:
        return TransitNetwork(tuple(nodes), tuple(arcs), tuple(lines), horizon, distance,
                              manifest.get("metadata", {}))
    except NetworkError as exc:
        raise SchemaError(src, str(exc)) from exc


# -- demand, fleets, boardings ------------------------------------------------

def write_od(od: ODMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin", "destination", "demand"])
        for (s, t), d in sorted(od.entries.items()):
            if d > 0:
                w.writerow([s, t, _exact(d)])


def read_od(path) -> ODMatrix:
    p = Path(path)
    entries = {}
    for row, r in _rows(p, ["origin", "destination", "demand"]):
        key = (_parse(p, row, r["origin"], _int, "origin"), _parse(p, row, r["destination"], _int, "destination"))
        d = _parse(p, row, r["demand"], float, "demand")
        if d < 0:
            raise SchemaError(p, "negative demand", row)
        entries[key] = entries.get(key, 0.0) + d
    return ODMatrix(entries)


def write_fleet(y: Sequence[int], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["line_id", "fleet"])
        for l, v in enumerate(y):
            w.writerow([l, int(v)])


def read_fleet(path, n_lines: Optional[int] = None, column: str = "fleet") -> tuple[int, ...]:
    """Fleet vector from ``line_id,<column>`` rows; solution files work with column ``y_final``."""
    p = Path(path)
    got = {}
    for row, r in _rows(p, ["line_id", column]):
        got[_parse(p, row, r["line_id"], _int, "line_id")] = _parse(p, row, r[column], _int, column)
    n = len(got) if n_lines is None else n_lines
    if sorted(got) != list(range(n)):
        raise SchemaError(p, f"expected one row per line id 0..{n - 1}")
    return tuple(got[l] for l in range(n))


def read_boardings(path) -> dict[int, float]:
    p = Path(path)
    out = {}
    for row, r in _rows(p, ["stop_id", "boardings"]):
        b = _parse(p, row, r["boardings"], float, "boardings")
        if b < 0:
            raise SchemaError(p, "negative boardings", row)
        out[_parse(p, row, r["stop_id"], _int, "stop_id")] = b
    return out


def write_boardings(boardings: dict[int, float], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stop_id", "boardings"])
        for s in sorted(boardings):
            w.writerow([s, _exact(boardings[s])])


# -- reports ------------------------------------------------------------------

def _diff_rows(ids: Iterable[int], before: Sequence[float], after: Sequence[float], full: bool):
    for i, a, b in zip(ids, before, after):
        d = b - a
        rel = d / a if a != 0 else (0.0 if d == 0 else math.inf)
        yield [i, fmt(a, full), fmt(b, full), fmt(d, full), fmt(rel, full)]


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_access_report(path, community_ids, initial, current, full: bool = False) -> None:
    write_table(path, ["community_id", "metric_initial", "metric_current", "abs_diff", "rel_diff"],
                _diff_rows(community_ids, initial, current, full))


def write_solution(path, y_initial: Sequence[int], y_final: Sequence[int], full: bool = False) -> None:
    rows = []
    for l, (a, b) in enumerate(zip(y_initial, y_final)):
        rel = (b - a) / a if a else (0.0 if a == b else math.inf)
        rows.append([l, int(a), int(b), int(b - a), fmt(rel, full)])
    write_table(path, ["line_id", "y_initial", "y_final", "abs_diff", "rel_diff"], rows)


def write_history(path, history: Iterable[tuple[int, float, float]], full: bool = False) -> None:
    write_table(path, ["iteration", "incumbent_objective", "best_objective"],
                ([k, fmt(a, full), fmt(b, full)] for k, a, b in history))


def write_flows(path, flows, full: bool = False) -> None:
    write_table(path, ["arc_id", "flow"], ([a, fmt(float(v), full)] for a, v in enumerate(flows)))


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n",
                          encoding="utf-8")


def _json_default(o):
    if hasattr(o, "item"):
        return o.item()
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
