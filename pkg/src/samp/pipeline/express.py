"""Express-run candidates derived from long lines.

Every stop of a long line is scored with the gravity metric under the
initial fleet; the express run keeps the best and worst scoring stops in the
parent's visiting order and saves a fixed time per skipped visit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..access import stop_access_scores
from ..builder import NetworkBuilder
from ..network import Line, TransitNetwork

MIN_ARC_TIME = 0.1


@dataclass(frozen=True)
class ExpressParams:
    min_stops: int = 18
    keep_frac: float = 0.1
    skip_saving_sec: float = 40.0
    beta: float = 1.0

    def __post_init__(self):
        if not 0 < self.keep_frac <= 0.5:
            raise ValueError("keep_frac must lie in (0, 0.5]")
        if self.skip_saving_sec < 0:
            raise ValueError("skip_saving_sec must be non-negative")


@dataclass
class ExpressRun:
    parent: int
    line: int                       # id of the new line in the extended network
    kept_stops: tuple[int, ...]     # stop node ids, unique
    stops: tuple[int, ...]          # visiting order, stop node ids
    arc_times: tuple[float, ...]
    spanned_times: tuple[float, ...]
    skipped: tuple[int, ...]        # parent visits skipped by each express arc
    layover: float


@dataclass
class ExpressResult:
    network: TransitNetwork
    runs: list[ExpressRun]

    @property
    def lines(self) -> list[Line]:
        return [self.network.lines[r.line] for r in self.runs]


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def parent_stops(net: TransitNetwork, l: int) -> list[int]:
    """Stop node behind every boarding position of line ``l``."""
    boarding_stop = {}
    for a in net.arcs:
        if a.line == l and net.nodes[a.tail].line is None and net.nodes[a.head].line == l:
            boarding_stop[a.head] = a.tail
    return [boarding_stop[b] for b in net.lines[l].boarding_sequence]


def parent_arc_times(net: TransitNetwork, l: int) -> list[float]:
    seq = net.lines[l].boarding_sequence
    times = {}
    for a in net.arcs:
        if a.line == l and net.nodes[a.tail].line == l and net.nodes[a.head].line == l:
            times.setdefault((a.tail, a.head), a.base_time)
    return [times[(u, v)] for u, v in zip(seq[:-1], seq[1:])]


def select_stops(unique: Sequence[int], scores: np.ndarray, keep_frac: float) -> tuple[int, ...]:
    """Lowest and highest scoring stops; the two groups never overlap while ``keep_frac <= 0.5``."""
    n = len(unique)
    m = round_half_up(keep_frac * n)
    order = np.argsort(scores, kind="stable")
    return tuple(sorted(unique[i] for i in np.concatenate([order[:m], order[n - m:]])))


def express_sequence(stops: Sequence[int], times: Sequence[float], keep: set, saving: float):
    """Walk the parent circuit keeping only visits of ``keep``.

    Returns (stops, arc times, spanned times, skipped counts). A closed
    circuit stays closed: the run starts at the first kept visit and wraps
    around to it.
    """
    closed = len(stops) > 2 and stops[0] == stops[-1]
    if closed:
        m = len(stops) - 1
        pos = [i for i in range(m) if stops[i] in keep]
        pos = pos + [pos[0] + m]
        cyc_t = list(times) * 2
        at = lambda i: stops[i % m]
    else:
        pos = [i for i, s in enumerate(stops) if s in keep]
        cyc_t = list(times)
        at = lambda i: stops[i]
    # a kept stop seen twice in a row (turnaround) is passed through once
    ok = [pos[0]]
    for q in pos[1:]:
        if at(q) != at(ok[-1]):
            ok.append(q)
        elif closed and q == pos[-1] and len(ok) > 1:
            ok[-1] = q
    pos = ok
    out_s = [at(pos[0])]
    arc, span, skip = [], [], []
    for p, q in zip(pos[:-1], pos[1:]):
        t = float(sum(cyc_t[p:q]))
        k = q - p - 1
        arc.append(max(t - saving * k, min(MIN_ARC_TIME, t)))
        span.append(t)
        skip.append(k)
        out_s.append(at(q))
    return out_s, arc, span, skip


def generate_express(net: TransitNetwork, y: Optional[Sequence[int]] = None,
                     params: ExpressParams = ExpressParams()) -> ExpressResult:
    """Append one express run per line with at least ``params.min_stops`` unique stops.

    Stops are scored under ``y`` (default: the network's initial fleet). New
    lines start with zero vehicles and inherit the parent's vehicle type,
    seats, active fraction and upper fleet bound.
    """
    y = net.initial_fleet if y is None else tuple(int(v) for v in y)
    saving = params.skip_saving_sec / 60.0
    plans = []
    for ln in net.lines:
        stops = parent_stops(net, ln.id)
        unique = sorted(set(stops))
        if len(unique) < params.min_stops:
            continue
        scores = stop_access_scores(net, y, unique, params.beta)
        keep = select_stops(unique, scores, params.keep_frac)
        times = parent_arc_times(net, ln.id)
        seq, arc, span, skip = express_sequence(stops, times, set(keep), saving)
        layover = ln.circuit_time - float(sum(times))
        plans.append((ln, keep, seq, arc, span, skip, layover))

    b = NetworkBuilder.from_network(net)
    runs = []
    for ln, keep, seq, arc, span, skip, layover in plans:
        lid = b.add_line(seq, arc, vehicle_type=ln.vehicle_type, seats=ln.seats, active_fraction=ln.active_fraction,
                         initial_fleet=0, fleet_min=0, fleet_max=ln.fleet_max,
                         circuit_time=float(sum(arc)) + layover, name=f"{ln.name or ln.id} express")
        runs.append(ExpressRun(ln.id, lid, keep, tuple(seq), tuple(arc), tuple(span), tuple(skip), layover))
    if runs:
        b.metadata["express"] = {"min_stops": params.min_stops, "keep_frac": params.keep_frac,
                                 "skip_saving_sec": params.skip_saving_sec, "lines": len(runs)}
    return ExpressResult(b.build(), runs)
