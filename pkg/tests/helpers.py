"""Hand-sized networks and independent reference implementations used by the tests."""

from __future__ import annotations

import math
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
import pytest

from samp.access import AccessParams, stop_access_scores
from samp.assignment import ODMatrix
from samp.builder import NetworkBuilder
from samp.network import ArcKind, NodeKind, TransitNetwork
from samp.pipeline.artificial import ArtificialNetConfig
from samp.pipeline.express import ExpressParams, parent_arc_times, parent_stops

# a few seconds to generate, large enough that transit waits move the access metric
SMALL = dict(rows=4, cols=5, n_communities=10, n_facilities=4, total_fleet=60, fleet_max=12)


def small_config(seed: int = 0, **kw) -> ArtificialNetConfig:
    return ArtificialNetConfig(**{**SMALL, "seed": seed, **kw})


# -- toy networks -------------------------------------------------------------

def single_line(line_time=5.0, circuit=10.0, fleet=5, seats=1e6, demand=10.0):
    """Stop A to stop B on one line; f = fleet / circuit."""
    b = NetworkBuilder(60.0)
    a, c = b.add_stop(0, 0), b.add_stop(1, 0)
    b.add_line([a, c], [line_time], circuit_time=circuit, initial_fleet=fleet, fleet_max=fleet + 5, seats=seats)
    net = b.build()
    return net, ODMatrix({(a, c): demand})


def parallel_lines(times=(5.0, 5.0), circuits=(10.0, 10.0), fleets=(1, 1), demand=10.0, seats=1e6):
    b = NetworkBuilder(60.0)
    a, c = b.add_stop(0, 0), b.add_stop(1, 0)
    for t, tau, y in zip(times, circuits, fleets):
        b.add_line([a, c], [t], circuit_time=tau, initial_fleet=y, fleet_max=y + 5, seats=seats)
    return b.build(), ODMatrix({(a, c): demand})


def walk_then_ride():
    """Walk 10 min, wait 20 min (f = 0.05), ride 50 min: unit-weight user cost 80 for one trip."""
    b = NetworkBuilder(60.0)
    s0, s1, s2 = b.add_stop(0, 0), b.add_stop(0.5, 0), b.add_stop(3, 0)
    b.add_walk(s0, s1, 10.0, both=False)
    b.add_line([s1, s2], [50.0], circuit_time=100.0, initial_fleet=5, fleet_max=10, seats=1e6)
    return b.build(), ODMatrix({(s0, s2): 1.0})


def access_chain(walk_in=3.0, ride=5.0, walk_out=2.0, fleet=1, circuit=10.0):
    """Community -walk- stop -line- stop -walk- facility."""
    b = NetworkBuilder(60.0)
    c = b.add_community(0, 0, 1000)
    s1, s2 = b.add_stop(0.1, 0), b.add_stop(1, 0)
    f = b.add_facility(1.1, 0)
    b.add_walk(c, s1, walk_in)
    b.add_walk(s2, f, walk_out)
    b.add_line([s1, s2], [ride], circuit_time=circuit, initial_fleet=fleet, fleet_max=fleet + 3)
    return b.build()


def three_line_toy():
    """Three lines of different speeds between two neighbourhoods and two facilities."""
    b = NetworkBuilder(60.0)
    s = [b.add_stop(x, 0) for x in (0.0, 0.5, 1.0, 1.5)]
    c1, c2 = b.add_community(-0.1, 0, 1500), b.add_community(1.6, 0, 800)
    f1, f2 = b.add_facility(0.5, 0.1), b.add_facility(1.0, -0.1, 2.0)
    b.add_walk(c1, s[0], 2.0)
    b.add_walk(c2, s[3], 3.0)
    b.add_walk(f1, s[1], 1.0)
    b.add_walk(f2, s[2], 1.5)
    b.add_walk(s[1], s[2], 9.0)
    b.add_line([s[0], s[1], s[2], s[1], s[0]], [3.0, 3.0, 3.0, 3.0], layover=8.0, initial_fleet=2, fleet_min=1,
               fleet_max=4)
    b.add_line([s[3], s[2], s[3]], [2.5, 2.5], layover=6.0, initial_fleet=2, fleet_min=1, fleet_max=4)
    b.add_line([s[0], s[3], s[0]], [6.0, 6.0], layover=10.0, initial_fleet=2, fleet_min=0, fleet_max=4)
    net = b.build()
    od = ODMatrix({(s[0], s[2]): 30.0, (s[3], s[1]): 20.0, (s[1], s[3]): 10.0, (s[2], s[0]): 15.0})
    return net, od


def gravity_network(rng: np.random.Generator, n_comm: int, n_fac: int, p_missing: float = 0.1):
    """Communities joined to facilities by direct walk arcs of random length (some pairs unlinked)."""
    b = NetworkBuilder(60.0)
    comms = [b.add_community(*rng.uniform(0, 1, 2), float(rng.uniform(100, 5000))) for _ in range(n_comm)]
    facs = [b.add_facility(*rng.uniform(0, 1, 2), float(rng.uniform(0.5, 3))) for _ in range(n_fac)]
    d = np.full((n_comm, n_fac), np.inf)
    for i, c in enumerate(comms):
        for j, f in enumerate(facs):
            if rng.random() >= p_missing:
                d[i, j] = float(rng.uniform(0.5, 60))
                b.add_walk(c, f, d[i, j], both=False)
    return b.build(), d


# -- reference implementations ------------------------------------------------

def literal_gravity(d, pop, qual, beta):
    """Crowding and metric by explicit double loops over Python floats."""
    n, m = len(pop), len(qual)
    crowd = []
    for j in range(m):
        s = 0.0
        for k in range(n):
            if math.isfinite(d[k][j]):
                s += pop[k] * d[k][j] ** -beta
        crowd.append(s)
    metric = []
    for i in range(n):
        s = 0.0
        for j in range(m):
            if math.isfinite(d[i][j]) and crowd[j] > 0:
                s += qual[j] * d[i][j] ** -beta / crowd[j]
        metric.append(s)
    return crowd, metric


def bellman_ford_access(net: TransitNetwork, y, floor: float = 0.1) -> np.ndarray:
    """Community-to-facility times by plain relaxation sweeps."""
    kinds = [n.kind for n in net.nodes]
    out = np.full((len(net.communities), len(net.facilities)), np.inf)
    for ci, c in enumerate(net.communities):
        dist = [math.inf] * len(net.nodes)
        dist[c] = 0.0
        for _ in range(len(net.nodes)):
            changed = False
            for a in net.arcs:
                if kinds[a.head] == NodeKind.COMMUNITY or kinds[a.tail] == NodeKind.FACILITY:
                    continue
                w = a.base_time
                if a.kind == ArcKind.BOARD:
                    f = y[a.line] / net.lines[a.line].circuit_time
                    if f == 0:
                        continue
                    w += 1.0 / f
                if dist[a.tail] + w < dist[a.head]:
                    dist[a.head] = dist[a.tail] + w
                    changed = True
            if not changed:
                break
        for fj, f in enumerate(net.facilities):
            out[ci, fj] = max(dist[f], floor) if math.isfinite(dist[f]) else math.inf
    return out


def strategy_oracle(net: TransitNetwork, y, od: ODMatrix, cost=None):
    """Uncongested optimal-strategy flows by the textbook quadratic arc scan.

    Returns (flows, waiting). Arcs touching communities or facilities and
    boarding arcs of empty lines are ignored.
    """
    kinds = [n.kind for n in net.nodes]
    cost = [a.base_time for a in net.arcs] if cost is None else list(cost)
    freq = []
    for a in net.arcs:
        if kinds[a.tail] in (NodeKind.COMMUNITY, NodeKind.FACILITY) or kinds[a.head] in (NodeKind.COMMUNITY,
                                                                                       NodeKind.FACILITY):
            freq.append(0.0)
        elif a.kind == ArcKind.BOARD:
            freq.append(y[a.line] / net.lines[a.line].circuit_time)
        else:
            freq.append(math.inf)
    flows = [0.0] * len(net.arcs)
    waiting = 0.0
    dests = sorted({t for (_, t) in od.entries})
    for t in dests:
        u = [math.inf] * len(net.nodes)
        fsum = [0.0] * len(net.nodes)
        chosen: list[list[int]] = [[] for _ in net.nodes]
        u[t] = 0.0
        pending = {a.id for a in net.arcs if freq[a.id] > 0}
        sequence = []
        while pending:
            a = min(pending, key=lambda e: (u[net.arcs[e].head] + cost[e], e))
            pending.discard(a)
            i, j = net.arcs[a].tail, net.arcs[a].head
            cand = u[j] + cost[a]
            if not math.isfinite(cand) or not cand < u[i]:
                continue
            if freq[a] == math.inf:
                u[i], fsum[i], chosen[i] = cand, math.inf, [a]
            else:
                u[i] = 1.0 / freq[a] + cand if fsum[i] == 0 else (fsum[i] * u[i] + freq[a] * cand) / (
                    fsum[i] + freq[a])
                fsum[i] += freq[a]
                chosen[i].append(a)
            sequence.append(a)
        vol = [0.0] * len(net.nodes)
        for (s, tt), dem in od.entries.items():
            if tt == t:
                vol[s] += dem
        for a in reversed(sequence):
            i = net.arcs[a].tail
            if a not in chosen[i] or vol[i] == 0:
                continue
            v = vol[i] if fsum[i] == math.inf else vol[i] * freq[a] / fsum[i]
            flows[a] += v
            vol[net.arcs[a].head] += v
        for i in range(len(net.nodes)):
            if vol[i] > 0 and 0 < fsum[i] < math.inf:
                waiting += vol[i] / fsum[i]
    return np.array(flows), waiting


def node_balance(net: TransitNetwork, flows: np.ndarray, od: ODMatrix) -> np.ndarray:
    """Outflow minus inflow minus net demand at every node (zero when conserved)."""
    bal = np.zeros(net.n_nodes)
    np.add.at(bal, net.arc_tail, flows)
    np.add.at(bal, net.arc_head, -flows)
    for (s, t), d in od.entries.items():
        bal[s] -= d
        bal[t] += d
    return bal


def brute_force_box(net: TransitNetwork, feasible, objective):
    """All fleet vectors within the per-line bounds, with feasibility and objective of each."""
    ranges = [range(ln.fleet_min, int(ln.fleet_max) + 1) for ln in net.lines]
    table = {}
    for v in np.ndindex(*[len(r) for r in ranges]):
        y = tuple(r[i] for r, i in zip(ranges, v))
        ok = feasible(y)
        table[y] = (ok, objective(y) if ok else None)
    return table


def default_access() -> AccessParams:
    return AccessParams()


def _half_up(x):
    return int(Decimal(repr(x)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def check_express_run(net, ext, run, params=ExpressParams()):
    """Recompute one express run from the parent circuit; returns nothing, asserts everything."""
    stops = parent_stops(net, run.parent)
    times = parent_arc_times(net, run.parent)
    unique = sorted(set(stops))
    m = _half_up(params.keep_frac * len(unique))
    assert len(run.kept_stops) == 2 * m and set(run.stops) == set(run.kept_stops)
    # kept stops are the m lowest and the m highest scorers
    scores = dict(zip(unique, stop_access_scores(net, net.initial_fleet, unique, params.beta)))
    kept = sorted(run.kept_stops, key=lambda s: scores[s])
    rest = [scores[s] for s in unique if s not in run.kept_stops]
    if rest:
        assert scores[kept[m - 1]] <= min(rest) and scores[kept[m]] >= max(rest)
    # the run is a cyclic subsequence of the parent visits
    closed = stops[0] == stops[-1]
    cyc = stops[:-1] * 2 if closed else stops
    ctimes = times * 2 if closed else times
    i0 = i = cyc.index(run.stops[0])
    saving = params.skip_saving_sec / 60.0
    last = len(run.arc_times) - 1
    for n, (s, arc, span, k) in enumerate(zip(run.stops[1:], run.arc_times, run.spanned_times, run.skipped)):
        # a closed run ends one full cycle after its first visit
        j = i0 + len(stops) - 1 if closed and n == last else cyc.index(s, i + 1)
        assert k == j - i - 1
        assert span == pytest.approx(sum(ctimes[i:j]), rel=1e-12)
        assert arc == pytest.approx(max(span - saving * k, min(0.1, span)), rel=1e-12)
        assert arc > 0
        i = j
    line = ext.lines[run.line]
    assert line.initial_fleet == 0 and line.fleet_min == 0
    assert line.vehicle_type == net.lines[run.parent].vehicle_type
    assert line.circuit_time == pytest.approx(sum(run.arc_times) + net.lines[run.parent].circuit_time - sum(times))


# -- fleet-space oracles ------------------------------------------------------

def fleet_ok(net: TransitNetwork, y, totals) -> bool:
    """Integer, within per-line bounds, and no vehicle type above its total in ``totals``."""
    used: dict[str, int] = {}
    for ln, v in zip(net.lines, y):
        if v != int(v) or not ln.fleet_min <= v <= ln.fleet_max:
            return False
        used[ln.vehicle_type] = used.get(ln.vehicle_type, 0) + int(v)
    return all(used[z] <= totals[z] for z in used)


def type_totals(net: TransitNetwork) -> dict[str, int]:
    out: dict[str, int] = {}
    for ln in net.lines:
        out[ln.vehicle_type] = out.get(ln.vehicle_type, 0) + ln.initial_fleet
    return out


def neighbor_vectors(net: TransitNetwork, y):
    """Each single ADD and DROP, then each same-type SWAP, without bound checks."""
    y = list(y)
    out = []
    for l in range(len(y)):
        out.append(tuple(y[:l] + [y[l] + 1] + y[l + 1:]))
        out.append(tuple(y[:l] + [y[l] - 1] + y[l + 1:]))
    for a in range(len(y)):
        for b in range(len(y)):
            if a != b and net.lines[a].vehicle_type == net.lines[b].vehicle_type:
                v = list(y)
                v[a] -= 1
                v[b] += 1
                out.append(tuple(v))
    return out


def steepest_ascent(table, start, neighbors_of):
    """Climb ``table`` (vector -> (feasible, objective)) to the best feasible neighbor until none improves.

    Ties between equally good neighbors go to the lexicographically smallest vector.
    """
    y = start
    while True:
        better = [(table[v][1], v) for v in neighbors_of(y) if v in table and table[v][0]
                  and table[v][1] > table[y][1]]
        if not better:
            return y
        top = max(o for o, _ in better)
        y = min(v for o, v in better if o == top)
