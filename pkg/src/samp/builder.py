"""Incremental construction of :class:`TransitNetwork` objects."""

from __future__ import annotations

import math
from typing import Optional, Sequence

from .network import Arc, ArcKind, Line, Node, NodeKind, TransitNetwork


class NetworkBuilder:
    """Accumulates nodes, arcs and lines and freezes them into a network.

    Lines are added as a sequence of stop nodes; the builder creates one
    boarding node per (stop, line) together with its boarding and alighting
    arcs, and one line arc per consecutive pair in the sequence.
    """

    def __init__(self, horizon: float, distance: str = "planar"):
        self.horizon = horizon
        self.distance = distance
        self.nodes: list[Node] = []
        self.arcs: list[Arc] = []
        self.lines: list[Line] = []
        self.metadata: dict = {}

    @classmethod
    def from_network(cls, net: TransitNetwork) -> "NetworkBuilder":
        """Builder pre-loaded with ``net`` so new elements get ids after the existing ones."""
        b = cls(net.horizon, net.distance)
        b.nodes, b.arcs, b.lines = list(net.nodes), list(net.arcs), list(net.lines)
        b.metadata = dict(net.metadata)
        return b

    def add_node(self, kind: NodeKind, x: float, y: float, **attrs) -> int:
        nid = len(self.nodes)
        self.nodes.append(Node(nid, NodeKind(kind), float(x), float(y), **attrs))
        return nid

    def add_stop(self, x: float, y: float) -> int:
        return self.add_node(NodeKind.STOP, x, y)

    def add_community(self, x: float, y: float, population: float) -> int:
        return self.add_node(NodeKind.COMMUNITY, x, y, population=float(population))

    def add_facility(self, x: float, y: float, quality: float = 1.0) -> int:
        return self.add_node(NodeKind.FACILITY, x, y, quality=float(quality))

    def add_arc(self, tail: int, head: int, kind: ArcKind, time: float, line: Optional[int] = None) -> int:
        aid = len(self.arcs)
        self.arcs.append(Arc(aid, tail, head, ArcKind(kind), float(time), line))
        return aid

    def add_walk(self, u: int, v: int, time: float, both: bool = True) -> None:
        self.add_arc(u, v, ArcKind.WALK, time)
        if both:
            self.add_arc(v, u, ArcKind.WALK, time)

    def add_line(self, stops: Sequence[int], segment_times: Sequence[float], *, vehicle_type: str = "bus",
                 seats: float = 39, active_fraction: float = 1.0, initial_fleet: int = 1,
                 fleet_min: int = 0, fleet_max: float = math.inf, layover: float = 0.0,
                 circuit_time: Optional[float] = None, name: str = "") -> int:
        if len(segment_times) != len(stops) - 1:
            raise ValueError("need one segment time per consecutive stop pair")
        lid = len(self.lines)
        boarding: dict[int, int] = {}
        for s in stops:
            if s not in boarding:
                sn = self.nodes[s]
                b = self.add_node(NodeKind.BOARDING, sn.x, sn.y, line=lid)
                boarding[s] = b
                self.add_arc(s, b, ArcKind.BOARD, 0.0, lid)
                self.add_arc(b, s, ArcKind.ALIGHT, 0.0, lid)
        sequence = tuple(boarding[s] for s in stops)
        for u, v, t in zip(sequence[:-1], sequence[1:], segment_times):
            self.add_arc(u, v, ArcKind.LINE, t, lid)
        if circuit_time is None:
            circuit_time = float(sum(segment_times)) + layover
        self.lines.append(Line(lid, vehicle_type, float(circuit_time), float(seats), float(active_fraction),
                               int(initial_fleet), int(fleet_min), fleet_max, sequence, name))
        return lid

    def build(self) -> TransitNetwork:
        return TransitNetwork(tuple(self.nodes), tuple(self.arcs), tuple(self.lines), float(self.horizon),
                              self.distance, dict(self.metadata))
