"""Transit graph data model, fleet-derived line attributes and access distances.

The network is a layered directed graph. Physical stops are joined to one
boarding node per serving line by boarding and alighting arcs; consecutive
boarding nodes of a line are joined by line arcs; walking arcs join stops,
origins, destinations, communities and facilities. A fleet vector ``y`` holds
the integer number of vehicles per line, and everything frequency-dependent
(waits, capacities) is derived from it on demand.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

# d^-beta is singular at zero; generated networks can co-locate nodes.
MIN_ACCESS_TIME = 0.1

# 4 ft/sec expressed in miles per minute.
WALK_SPEED_MI_PER_MIN = 4.0 * 60.0 / 5280.0

MILES_PER_DEG_LAT = 69.0


class NetworkError(ValueError):
    """Raised when a network violates its structural invariants."""


class FleetBoundsError(ValueError):
    """Raised when a fleet vector violates per-line bounds or vehicle limits."""


class NodeKind(enum.IntEnum):
    STOP = 0
    BOARDING = 1
    ORIGIN = 2
    DESTINATION = 3
    COMMUNITY = 4
    FACILITY = 5


class ArcKind(enum.IntEnum):
    LINE = 0
    BOARD = 1
    ALIGHT = 2
    WALK = 3


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    x: float
    y: float
    line: Optional[int] = None
    population: Optional[float] = None
    quality: Optional[float] = None


@dataclass(frozen=True)
class Arc:
    id: int
    tail: int
    head: int
    kind: ArcKind
    base_time: float
    line: Optional[int] = None


@dataclass(frozen=True)
class Line:
    """A transit line served by a single vehicle type.

    ``boarding_sequence`` lists the boarding nodes in the order vehicles visit
    them over one circuit; each consecutive pair is a line arc. An out-and-back
    route therefore lists its interior nodes twice.
    """

    id: int
    vehicle_type: str
    circuit_time: float
    seats: float
    active_fraction: float
    initial_fleet: int
    fleet_min: int
    fleet_max: float
    boarding_sequence: tuple[int, ...]
    name: str = ""


@dataclass(frozen=True, eq=False)
class TransitNetwork:
    nodes: tuple[Node, ...]
    arcs: tuple[Arc, ...]
    lines: tuple[Line, ...]
    horizon: float
    distance: str = "planar"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        validate_network(self)

    # -- dense arrays used by the numerical kernels ---------------------------

    @cached_property
    def node_kind(self) -> np.ndarray:
        return np.array([n.kind for n in self.nodes], dtype=np.int64)

    @cached_property
    def arc_tail(self) -> np.ndarray:
        return np.array([a.tail for a in self.arcs], dtype=np.int64)

    @cached_property
    def arc_head(self) -> np.ndarray:
        return np.array([a.head for a in self.arcs], dtype=np.int64)

    @cached_property
    def arc_kind(self) -> np.ndarray:
        return np.array([a.kind for a in self.arcs], dtype=np.int64)

    @cached_property
    def arc_time(self) -> np.ndarray:
        return np.array([a.base_time for a in self.arcs], dtype=np.float64)

    @cached_property
    def arc_line(self) -> np.ndarray:
        return np.array([-1 if a.line is None else a.line for a in self.arcs], dtype=np.int64)

    @cached_property
    def circuit_times(self) -> np.ndarray:
        return np.array([ln.circuit_time for ln in self.lines], dtype=np.float64)

    @cached_property
    def fleet_min(self) -> np.ndarray:
        return np.array([ln.fleet_min for ln in self.lines], dtype=np.int64)

    @cached_property
    def fleet_max(self) -> np.ndarray:
        return np.array([ln.fleet_max for ln in self.lines], dtype=np.float64)

    @cached_property
    def initial_fleet(self) -> tuple[int, ...]:
        return tuple(int(ln.initial_fleet) for ln in self.lines)

    @cached_property
    def vehicle_types(self) -> tuple[str, ...]:
        return tuple(sorted({ln.vehicle_type for ln in self.lines}))

    @cached_property
    def line_vehicle_type(self) -> np.ndarray:
        index = {z: i for i, z in enumerate(self.vehicle_types)}
        return np.array([index[ln.vehicle_type] for ln in self.lines], dtype=np.int64)

    @cached_property
    def vehicle_limits(self) -> np.ndarray:
        """Initial fleet total per vehicle type (the no-new-vehicles cap)."""
        limits = np.zeros(len(self.vehicle_types), dtype=np.int64)
        np.add.at(limits, self.line_vehicle_type, np.asarray(self.initial_fleet, dtype=np.int64))
        return limits

    def ids_of(self, kind: NodeKind) -> np.ndarray:
        return np.flatnonzero(self.node_kind == kind)

    @cached_property
    def communities(self) -> np.ndarray:
        return self.ids_of(NodeKind.COMMUNITY)

    @cached_property
    def facilities(self) -> np.ndarray:
        return self.ids_of(NodeKind.FACILITY)

    @cached_property
    def stops(self) -> np.ndarray:
        return self.ids_of(NodeKind.STOP)

    @cached_property
    def populations(self) -> np.ndarray:
        return np.array([self.nodes[i].population for i in self.communities], dtype=np.float64)

    @cached_property
    def qualities(self) -> np.ndarray:
        return np.array([self.nodes[j].quality for j in self.facilities], dtype=np.float64)

    @cached_property
    def out_arcs(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in self.nodes]
        for a in self.arcs:
            out[a.tail].append(a.id)
        return tuple(tuple(o) for o in out)

    @cached_property
    def line_arcs(self) -> tuple[tuple[int, ...], ...]:
        per: list[list[int]] = [[] for _ in self.lines]
        for a in self.arcs:
            if a.kind == ArcKind.LINE:
                per[a.line].append(a.id)
        return tuple(tuple(p) for p in per)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_arcs(self) -> int:
        return len(self.arcs)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    def distance_l1(self, a: int, b: int) -> float:
        """Taxicab distance in miles between two nodes."""
        na, nb = self.nodes[a], self.nodes[b]
        return l1_miles((na.x, na.y), (nb.x, nb.y), self.distance)


def l1_miles(p: Sequence[float], q: Sequence[float], convention: str = "planar") -> float:
    dx, dy = abs(p[0] - q[0]), abs(p[1] - q[1])
    if convention == "planar":
        return dx + dy
    if convention == "latlon":
        # x = longitude, y = latitude; local equirectangular scaling
        lat = math.radians(0.5 * (p[1] + q[1]))
        return MILES_PER_DEG_LAT * (dy + dx * math.cos(lat))
    raise NetworkError(f"unknown distance convention {convention!r}")


def validate_network(net: TransitNetwork) -> None:
    nodes, arcs, lines = net.nodes, net.arcs, net.lines
    for idx, seq, name in ((range(len(nodes)), nodes, "node"), (range(len(arcs)), arcs, "arc"),
                           (range(len(lines)), lines, "line")):
        for i, item in zip(idx, seq):
            if item.id != i:
                raise NetworkError(f"{name} ids must be dense and zero-based: position {i} has id {item.id}")
    if net.horizon <= 0:
        raise NetworkError("horizon must be positive")
    n_lines = len(lines)
    for n in nodes:
        if n.kind == NodeKind.BOARDING:
            if n.line is None or not 0 <= n.line < n_lines:
                raise NetworkError(f"boarding node {n.id} must reference a valid line")
        elif n.line is not None:
            raise NetworkError(f"node {n.id} of kind {n.kind.name} must not reference a line")
        if n.kind == NodeKind.COMMUNITY and not (n.population is not None and n.population > 0):
            raise NetworkError(f"community {n.id} needs a positive population")
        if n.kind == NodeKind.FACILITY and not (n.quality is not None and n.quality > 0):
            raise NetworkError(f"facility {n.id} needs a positive quality")
    n_nodes = len(nodes)
    for a in arcs:
        if not (0 <= a.tail < n_nodes and 0 <= a.head < n_nodes):
            raise NetworkError(f"arc {a.id} references an unknown node")
        if not a.base_time >= 0:
            raise NetworkError(f"arc {a.id} has negative base time")
        tk, hk = nodes[a.tail].kind, nodes[a.head].kind
        if a.kind == ArcKind.WALK:
            if a.line is not None or NodeKind.BOARDING in (tk, hk):
                raise NetworkError(f"walk arc {a.id} must not touch boarding nodes or lines")
            continue
        if a.line is None or not 0 <= a.line < n_lines:
            raise NetworkError(f"arc {a.id} of kind {a.kind.name} must reference a valid line")
        if a.kind == ArcKind.LINE:
            ok = tk == hk == NodeKind.BOARDING and nodes[a.tail].line == nodes[a.head].line == a.line
        elif a.kind == ArcKind.BOARD:
            ok = tk == NodeKind.STOP and hk == NodeKind.BOARDING and nodes[a.head].line == a.line
        else:
            ok = tk == NodeKind.BOARDING and hk == NodeKind.STOP and nodes[a.tail].line == a.line
        if not ok:
            raise NetworkError(f"arc {a.id} of kind {a.kind.name} has inconsistent endpoints")

    line_pairs: list[set[tuple[int, int]]] = [set() for _ in lines]
    for a in arcs:
        if a.kind == ArcKind.LINE:
            line_pairs[a.line].add((a.tail, a.head))
    seen: dict[int, int] = {}
    for ln in lines:
        if not (ln.circuit_time > 0 and ln.seats > 0 and 0 <= ln.active_fraction <= 1):
            raise NetworkError(f"line {ln.id} has invalid circuit time, seats or active fraction")
        if not 0 <= ln.fleet_min <= ln.initial_fleet <= ln.fleet_max:
            raise NetworkError(f"line {ln.id} violates fleet_min <= initial_fleet <= fleet_max")
        for b in ln.boarding_sequence:
            if not 0 <= b < n_nodes or nodes[b].kind != NodeKind.BOARDING or nodes[b].line != ln.id:
                raise NetworkError(f"line {ln.id} sequence contains foreign node {b}")
            if seen.setdefault(b, ln.id) != ln.id:
                raise NetworkError(f"boarding node {b} appears in two lines")
        steps = set(zip(ln.boarding_sequence[:-1], ln.boarding_sequence[1:]))
        if steps != line_pairs[ln.id]:
            raise NetworkError(f"line {ln.id} boarding sequence disagrees with its line arcs")
    for n in nodes:
        if n.kind == NodeKind.BOARDING and n.id not in seen:
            raise NetworkError(f"boarding node {n.id} is in no line sequence")


# -- fleet vectors ------------------------------------------------------------

def as_fleet(y: Iterable[int]) -> tuple[int, ...]:
    return tuple(int(v) for v in y)


def fleet_violations(net: TransitNetwork, y: Sequence[int]) -> list[str]:
    """Describe every violated bound, vehicle-type limit or integrality condition."""
    problems = []
    if len(y) != net.n_lines:
        return [f"fleet has {len(y)} entries for {net.n_lines} lines"]
    for l, v in enumerate(y):
        if isinstance(v, float) and not float(v).is_integer():
            problems.append(f"line {l}: non-integer fleet {v}")
            continue
        v = int(v)
        ln = net.lines[l]
        if v < ln.fleet_min or v > ln.fleet_max:
            problems.append(f"line {l}: fleet {v} outside [{ln.fleet_min}, {ln.fleet_max}]")
    totals = np.zeros(len(net.vehicle_types), dtype=np.int64)
    np.add.at(totals, net.line_vehicle_type, np.asarray(y, dtype=np.float64).astype(np.int64))
    for z, (tot, cap) in enumerate(zip(totals, net.vehicle_limits)):
        if tot > cap:
            problems.append(f"vehicle type {net.vehicle_types[z]!r}: {tot} vehicles exceed {cap}")
    return problems


def is_design_feasible(net: TransitNetwork, y: Sequence[int]) -> bool:
    return not fleet_violations(net, y)


def check_fleet(net: TransitNetwork, y: Sequence[int]) -> None:
    problems = fleet_violations(net, y)
    if problems:
        raise FleetBoundsError("; ".join(problems))


def line_frequency(net: TransitNetwork, y: Sequence[int], l: int) -> float:
    """Expected arrivals per minute of line ``l``."""
    return y[l] / net.lines[l].circuit_time


def line_frequencies(net: TransitNetwork, y: Sequence[int]) -> np.ndarray:
    return np.asarray(y, dtype=np.float64) / net.circuit_times


def line_capacity(net: TransitNetwork, y: Sequence[int], l: int) -> float:
    """Passengers the line can carry over the horizon at fleet ``y``."""
    ln = net.lines[l]
    return ln.active_fraction * net.horizon * ln.seats * line_frequency(net, y, l)


def line_capacities(net: TransitNetwork, y: Sequence[int]) -> np.ndarray:
    frac = np.array([ln.active_fraction for ln in net.lines])
    seats = np.array([ln.seats for ln in net.lines])
    return frac * net.horizon * seats * line_frequencies(net, y)


# -- access distances ---------------------------------------------------------

def arc_access_costs(net: TransitNetwork, y: Sequence[int]) -> np.ndarray:
    """Per-arc traversal time with boarding arcs charged the expected wait 1/f."""
    cost = net.arc_time.copy()
    board = net.arc_kind == ArcKind.BOARD
    freq = line_frequencies(net, y)[net.arc_line[board]]
    with np.errstate(divide="ignore"):
        cost[board] += np.where(freq > 0, 1.0 / np.where(freq > 0, freq, 1.0), np.inf)
    return cost


def _csr_min(n: int, tail: np.ndarray, head: np.ndarray, w: np.ndarray) -> sp.csr_matrix:
    keep = np.isfinite(w)
    tail, head, w = tail[keep], head[keep], w[keep]
    order = np.lexsort((w, head, tail))
    tail, head, w = tail[order], head[order], w[order]
    first = np.ones(len(tail), dtype=bool)
    first[1:] = (tail[1:] != tail[:-1]) | (head[1:] != head[:-1])
    tail, head, w = tail[first], head[first], w[first]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, tail + 1, 1)
    # built directly so zero-weight arcs stay explicit edges
    return sp.csr_matrix((w, head, np.cumsum(indptr)), shape=(n, n))


def access_only_arcs(net: TransitNetwork) -> np.ndarray:
    """Mask of arcs touching a community or facility node (unused by day-to-day demand)."""
    kind = net.node_kind
    end = (kind == NodeKind.COMMUNITY) | (kind == NodeKind.FACILITY)
    return end[net.arc_tail] | end[net.arc_head]


def transit_times(net: TransitNetwork, costs: Optional[np.ndarray] = None) -> np.ndarray:
    """Arc costs for stop-to-stop travel: ``costs`` (base times by default) with access-only arcs removed."""
    c = (net.arc_time if costs is None else np.asarray(costs, dtype=np.float64)).copy()
    c[access_only_arcs(net)] = np.inf
    return c


def shortest_times(net: TransitNetwork, costs: np.ndarray, sources: Sequence[int],
                   reverse: bool = False) -> np.ndarray:
    """Dijkstra distances from ``sources`` to every node under per-arc ``costs``."""
    if reverse:
        g = _csr_min(net.n_nodes, net.arc_head, net.arc_tail, costs)
    else:
        g = _csr_min(net.n_nodes, net.arc_tail, net.arc_head, costs)
    return dijkstra(g, directed=True, indices=np.asarray(sources, dtype=np.int64))


def access_travel_times(net: TransitNetwork, y: Sequence[int], sources: Optional[Sequence[int]] = None,
                        targets: Optional[Sequence[int]] = None,
                        floor: float = MIN_ACCESS_TIME) -> np.ndarray:
    """Community-to-facility travel times ``d[i, j]`` in minutes under fleet ``y``.

    Boarding arcs cost the expected wait ``1/f_l`` and zero-fleet lines are
    unusable; line capacities are ignored. Paths may start at a community and
    end at a facility but never pass through either kind. Unreachable pairs
    are ``inf`` and finite times are clamped below at ``floor``.
    """
    check_fleet(net, y)
    sources = net.communities if sources is None else np.asarray(sources, dtype=np.int64)
    targets = net.facilities if targets is None else np.asarray(targets, dtype=np.int64)
    if len(sources) == 0:
        return np.zeros((0, len(targets)))
    cost = arc_access_costs(net, y)
    # communities and facilities are trip ends, never shortcuts between stops
    kind = net.node_kind
    cost[(kind[net.arc_head] == NodeKind.COMMUNITY) | (kind[net.arc_tail] == NodeKind.FACILITY)] = np.inf
    d = shortest_times(net, cost, sources)[:, targets]
    return np.maximum(d, floor)


def with_initial_fleet(net: TransitNetwork, y: Sequence[int], fleet_min: Optional[Sequence[int]] = None,
                       fleet_max: Optional[Sequence[float]] = None) -> TransitNetwork:
    """Copy of ``net`` whose lines start from fleet ``y`` (bounds optionally replaced)."""
    lines = []
    for l, ln in enumerate(net.lines):
        lines.append(dataclasses.replace(
            ln, initial_fleet=int(y[l]),
            fleet_min=ln.fleet_min if fleet_min is None else int(fleet_min[l]),
            fleet_max=ln.fleet_max if fleet_max is None else fleet_max[l]))
    return TransitNetwork(net.nodes, net.arcs, tuple(lines), net.horizon, net.distance, dict(net.metadata))
