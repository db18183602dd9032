"""Network skeletons from a minimal GTFS feed.

Only ``stops.txt``, ``routes.txt``, ``trips.txt`` and ``stop_times.txt`` are
read. Each route becomes one line whose circuit is the longest trip in
direction 0 followed by the longest trip in direction 1 (when present). Raw
stops are merged by k-means; consecutive stops that fall in one cluster
hand their travel time to the neighbouring line arcs.

Visits per stop are counted per active period: ``f* = v / active minutes``,
where the active period runs from the first departure to the last arrival of
the route, and ``y* = ceil(circuit_time * f*)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..builder import NetworkBuilder
from ..io import SchemaError, _rows
from ..network import MILES_PER_DEG_LAT, WALK_SPEED_MI_PER_MIN, TransitNetwork, l1_miles
from .clustering import cluster_stops

MIN_HEADWAY = 30.0


@dataclass(frozen=True)
class IngestConfig:
    clusters: Optional[int] = None       # None keeps every raw stop
    horizon: float = 1440.0
    walk_cutoff: float = 0.75            # L1 miles
    seats: float = 39.0
    vehicle_type: str = "bus"
    service_id: Optional[str] = None     # keep only trips of this service day
    seed: int = 0


@dataclass
class LineStats:
    route_id: str
    visits_per_stop: float
    active_minutes: float
    frequency: float
    circuit_time: float
    initial_fleet: int
    fleet_min: int
    trips: int


@dataclass
class IngestResult:
    network: TransitNetwork
    stats: list[LineStats]
    cluster_distance: dict[str, float] = field(default_factory=dict)
    stop_map: dict[str, int] = field(default_factory=dict)   # raw stop id -> network node id


def parse_clock(s: str) -> float:
    """GTFS ``HH:MM:SS`` (hours may exceed 23) in minutes."""
    h, m, sec = s.strip().split(":")
    return int(h) * 60 + int(m) + int(sec) / 60.0


def collapse_sequence(labels: list[int], times: list[float]) -> tuple[list[int], list[float]]:
    """Merge runs of equal consecutive labels, sharing each run's inner time with its incident arcs.

    ``times[i]`` is the travel time from position i to i+1. A run's inner time
    goes half to the arc entering the run and half to the arc leaving it, or
    all to the single incident arc at either end of the sequence.
    """
    runs: list[tuple[int, int]] = []   # (label, start position)
    for i, lab in enumerate(labels):
        if not runs or runs[-1][0] != lab:
            runs.append((lab, i))
    if len(runs) < 2:
        return [r[0] for r in runs], []
    bounds = [s for _, s in runs] + [len(labels)]
    inner = [sum(times[bounds[r]:bounds[r + 1] - 1]) for r in range(len(runs))]
    out = []
    for r in range(len(runs) - 1):
        out.append(times[bounds[r + 1] - 1])
    for r, g in enumerate(inner):
        if g == 0:
            continue
        if r == 0:
            out[0] += g
        elif r == len(runs) - 1:
            out[-1] += g
        else:
            out[r - 1] += g / 2
            out[r] += g / 2
    return [r[0] for r in runs], out


def _project(lat: np.ndarray, lon: np.ndarray) -> tuple[np.ndarray, float]:
    lat0 = float(np.mean(lat))
    xy = np.column_stack([lon * MILES_PER_DEG_LAT * math.cos(math.radians(lat0)), lat * MILES_PER_DEG_LAT])
    return xy, lat0


def ingest_gtfs_lite(gtfs_dir, cfg: IngestConfig = IngestConfig()) -> IngestResult:
    src = Path(gtfs_dir)
    p = src / "stops.txt"
    raw_ids, lat, lon = [], [], []
    for row, r in _rows(p, ["stop_id", "stop_lat", "stop_lon"]):
        try:
            lat.append(float(r["stop_lat"]))
            lon.append(float(r["stop_lon"]))
        except ValueError as exc:
            raise SchemaError(p, "bad coordinates", row) from exc
        raw_ids.append(r["stop_id"])
    if not raw_ids:
        raise SchemaError(p, "no stops")
    index = {s: i for i, s in enumerate(raw_ids)}

    p = src / "routes.txt"
    routes = [r["route_id"] for _, r in _rows(p, ["route_id"])]
    names = {r["route_id"]: (r.get("route_short_name") or r.get("route_long_name") or r["route_id"])
             for _, r in _rows(p, ["route_id"])}

    p = src / "trips.txt"
    trips: dict[str, tuple[str, int]] = {}
    for row, r in _rows(p, ["route_id", "trip_id", "service_id"]):
        if r["route_id"] not in names:
            raise SchemaError(p, f"unknown route {r['route_id']!r}", row)
        if cfg.service_id is not None and r["service_id"] != cfg.service_id:
            continue
        d = r.get("direction_id") or "0"
        trips[r["trip_id"]] = (r["route_id"], 1 if d.strip() == "1" else 0)

    p = src / "stop_times.txt"
    calls: dict[str, list[tuple[int, float, float, int]]] = {}
    for row, r in _rows(p, ["trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence"]):
        if r["stop_id"] not in index:
            raise SchemaError(p, f"unknown stop {r['stop_id']!r}", row)
        if r["trip_id"] not in trips:
            continue
        try:
            arr = parse_clock(r["arrival_time"] or r["departure_time"])
            dep = parse_clock(r["departure_time"] or r["arrival_time"])
            seq = int(r["stop_sequence"])
        except ValueError as exc:
            raise SchemaError(p, "bad time or sequence", row) from exc
        calls.setdefault(r["trip_id"], []).append((seq, arr, dep, index[r["stop_id"]]))

    xy, lat0 = _project(np.array(lat), np.array(lon))
    k = len(raw_ids) if cfg.clusters is None else min(cfg.clusters, len(raw_ids))
    cl = cluster_stops(xy, k, seed=cfg.seed)
    used = sorted(set(cl.labels.tolist()))

    b = NetworkBuilder(cfg.horizon, distance="latlon")
    node_of = {}
    for c in used:
        cx, cy = cl.centroids[c]
        node_of[c] = b.add_stop(cx / (MILES_PER_DEG_LAT * math.cos(math.radians(lat0))), cy / MILES_PER_DEG_LAT)

    stats = []
    for route in routes:
        by_dir: dict[int, list[str]] = {}
        for t, (rt, d) in trips.items():
            if rt == route and t in calls:
                by_dir.setdefault(d, []).append(t)
        if not by_dir:
            continue
        stops_seq: list[int] = []
        seg: list[float] = []
        all_trips = [t for ts in by_dir.values() for t in ts]
        for d in sorted(by_dir):
            rep = max(sorted(by_dir[d]), key=lambda t: len(calls[t]))
            st = sorted(calls[rep])
            labels = [int(cl.labels[s]) for _, _, _, s in st]
            times = [max(st[i + 1][1] - st[i][2], 0.0) for i in range(len(st) - 1)]
            labs, ts = collapse_sequence(labels, times)
            if stops_seq and labs:
                if labs[0] == stops_seq[-1]:
                    labs = labs[1:]
                else:
                    # join the directions at the line's mean running speed
                    speed = _mean_speed(b, [node_of[c] for c in stops_seq], seg) or _mean_speed(
                        b, [node_of[c] for c in labs], ts)
                    gap = l1_miles(_xy(b, node_of[stops_seq[-1]]), _xy(b, node_of[labs[0]]), b.distance)
                    seg.append(gap / speed if speed else 0.0)
            stops_seq += labs
            seg += ts
        if len(stops_seq) < 2:
            continue
        circuit = float(sum(seg))
        if circuit <= 0:
            continue
        first = min(c[2] for t in all_trips for c in calls[t])
        last = max(c[1] for t in all_trips for c in calls[t])
        active = max(last - first, 1.0)
        n_unique = len(set(stops_seq))
        visits = sum(len(calls[t]) for t in all_trips) / n_unique
        freq = visits / active
        y0 = max(1, math.ceil(circuit * freq - 1e-9))
        ymin = min(math.ceil(circuit / MIN_HEADWAY - 1e-9), y0)
        frac = min(active / cfg.horizon, 1.0)
        b.add_line([node_of[c] for c in stops_seq], seg, vehicle_type=cfg.vehicle_type, seats=cfg.seats,
                   active_fraction=frac, initial_fleet=y0, fleet_min=ymin, fleet_max=math.inf,
                   circuit_time=circuit, name=str(names[route]))
        stats.append(LineStats(route, visits, active, freq, circuit, y0, ymin, len(all_trips)))

    add_pruned_walks(b, [node_of[c] for c in used], cfg.walk_cutoff)
    b.metadata.update({"source": "gtfs-lite", "visit_basis": "active_period", "clusters": k})
    raw_map = {s: node_of[int(cl.labels[i])] for s, i in index.items()}
    return IngestResult(b.build(), stats, cl.distance_stats(xy), raw_map)


def _xy(b: NetworkBuilder, i: int) -> tuple[float, float]:
    return b.nodes[i].x, b.nodes[i].y


def _mean_speed(b: NetworkBuilder, nodes: list[int], seg: list[float]) -> float:
    dist = sum(l1_miles(_xy(b, u), _xy(b, v), b.distance) for u, v in zip(nodes[:-1], nodes[1:]))
    t = sum(seg)
    return dist / t if t > 0 and dist > 0 else 0.0


def add_pruned_walks(b: NetworkBuilder, stops: list[int], cutoff: float) -> int:
    """Two-way walk arcs between stops within ``cutoff`` L1 miles.

    A pair is skipped when some third stop lies on a walk between them that
    is no longer than the direct one, with both legs inside the cutoff.
    """
    pts = [_xy(b, s) for s in stops]
    n = len(stops)
    d = np.array([[l1_miles(pts[i], pts[j], b.distance) for j in range(n)] for i in range(n)])
    near = d <= cutoff
    added = 0
    for i in range(n):
        for j in range(i + 1, n):
            if not near[i, j]:
                continue
            via = near[i] & near[j]
            via[i] = via[j] = False
            if np.any(d[i, via] + d[via, j] <= d[i, j] * (1 + 1e-9)):
                continue
            b.add_walk(stops[i], stops[j], d[i, j] / WALK_SPEED_MI_PER_MIN)
            added += 1
    return added
