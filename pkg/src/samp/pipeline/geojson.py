"""GeoJSON export of a network for external map tools."""

from __future__ import annotations

from typing import Optional, Sequence

from ..network import NodeKind, TransitNetwork
from ..pipeline.express import parent_stops


def _point(x: float, y: float, props: dict) -> dict:
    return {"type": "Feature", "geometry": {"type": "Point", "coordinates": [x, y]}, "properties": props}


def network_geojson(net: TransitNetwork, metrics: Optional[Sequence[float]] = None,
                    fleet: Optional[Sequence[int]] = None) -> dict:
    """FeatureCollection of stops, lines, communities and facilities.

    ``metrics`` (aligned with ``net.communities``) is attached to each
    community as ``access``; ``fleet`` replaces the stored initial fleet on
    the line features.
    """
    feats = []
    m = None if metrics is None else {int(c): float(v) for c, v in zip(net.communities, metrics)}
    for n in net.nodes:
        if n.kind == NodeKind.STOP:
            feats.append(_point(n.x, n.y, {"layer": "stop", "id": n.id}))
        elif n.kind == NodeKind.COMMUNITY:
            props = {"layer": "community", "id": n.id, "population": n.population}
            if m is not None:
                props["access"] = m[n.id]
            feats.append(_point(n.x, n.y, props))
        elif n.kind == NodeKind.FACILITY:
            feats.append(_point(n.x, n.y, {"layer": "facility", "id": n.id, "quality": n.quality}))
    for ln in net.lines:
        coords = [[net.nodes[s].x, net.nodes[s].y] for s in parent_stops(net, ln.id)]
        y = ln.initial_fleet if fleet is None else int(fleet[ln.id])
        feats.append({"type": "Feature", "geometry": {"type": "LineString", "coordinates": coords},
                      "properties": {"layer": "line", "id": ln.id, "name": ln.name, "fleet": y,
                                     "vehicle_type": ln.vehicle_type, "circuit_time": ln.circuit_time}})
    return {"type": "FeatureCollection", "features": feats,
            "properties": {"distance": net.distance, "horizon": net.horizon}}
