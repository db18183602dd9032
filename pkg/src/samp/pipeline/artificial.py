"""Procedural grid-city test instances.

A rectangular street lattice carries one out-and-back bus line per road, with
stops at every intersection and up to two more on each block. Communities are
spread with a minimum spacing, facilities are dropped anywhere, stops double as
OD nodes, and the initial fleet is allocated by demand and then polished by a
user-cost local search.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse.csgraph import dijkstra

from ..assignment import (AssignmentConfig, ODMatrix, UnreachableDemand, UserCostWeights, _AssignmentProblem,
                          transit_assignment, user_cost)
from ..builder import NetworkBuilder
from ..network import (WALK_SPEED_MI_PER_MIN, ArcKind, NodeKind, TransitNetwork, _csr_min, l1_miles, transit_times,
                       with_initial_fleet)
from .ipf import IPFConfig, IPFResult, fit_and_round, seed_matrix

log = logging.getLogger(__name__)


class PlacementFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class ArtificialNetConfig:
    rows: int = 7
    cols: int = 11
    height: float = 0.9
    width: float = 1.5
    speed_range: tuple[float, float] = (0.3, 0.6)
    dwell_range: tuple[float, float] = (0.5, 0.75)
    layover_range: tuple[float, float] = (20.0, 30.0)
    extra_stops: tuple[int, ...] = (0, 1, 2)
    walk_cutoff: float = 0.12
    walk_max_degree: int = 5
    n_communities: int = 30
    community_spacing: float = 0.15
    population_range: tuple[int, int] = (1000, 3000)
    n_facilities: int = 12
    access_walk_cutoff: float = 0.25
    total_fleet: int = 200
    fleet_min: int = 1
    fleet_max: int = 20
    seats: float = 39.0
    horizon: float = 60.0
    od_mean: float = 2.75
    od_std: float = 1.25
    boarding_share: float = 0.30
    perturb_range: tuple[float, float] = (-2.0, 2.0)
    ipf_max_iterations: int = 50
    ipf_tolerance: float = 1e-3
    fleet_search: bool = True
    fleet_search_max_moves: Optional[int] = None   # None: run to a local optimum
    assignment: AssignmentConfig = field(default_factory=AssignmentConfig)
    weights: UserCostWeights = field(default_factory=lambda: UserCostWeights(epsilon=0.0))
    placement_retries: int = 100_000
    seed: int = 0

    def __post_init__(self):
        for lo, hi in (self.speed_range, self.dwell_range, self.layover_range, self.population_range,
                       self.perturb_range):
            if lo > hi:
                raise ValueError("ranges must be ordered (low, high)")
        if min(self.rows, self.cols, self.n_communities, self.n_facilities, self.total_fleet) <= 0:
            raise ValueError("counts must be positive")
        if self.fleet_min * (self.rows + self.cols) > self.total_fleet:
            raise ValueError("total fleet cannot cover the per-line minimum")


@dataclass
class ArtificialInstance:
    network: TransitNetwork
    od: ODMatrix
    fleet: tuple[int, ...]
    ipf: IPFResult
    boardings: dict[int, float]
    fleet_search_moves: int = 0


def generate_artificial(cfg: ArtificialNetConfig = ArtificialNetConfig()) -> ArtificialInstance:
    """Build network, OD matrix and initial fleet for one seed.

    Random draws happen in a fixed order (segment stop counts, line arc
    speeds and dwells, layovers, communities, populations, facilities, seed
    perturbation), so a seed fully determines the instance.
    """
    rng = np.random.default_rng(cfg.seed)
    b = NetworkBuilder(cfg.horizon)
    xs = np.linspace(0.0, cfg.width, cfg.cols)
    ys = np.linspace(0.0, cfg.height, cfg.rows)
    grid = [[b.add_stop(xs[c], ys[r]) for c in range(cfg.cols)] for r in range(cfg.rows)]

    def interior(p, q, k):
        return [b.add_stop(p[0] + (q[0] - p[0]) * i / (k + 1), p[1] + (q[1] - p[1]) * i / (k + 1))
                for i in range(1, k + 1)]

    choices = np.asarray(cfg.extra_stops)
    row_roads = []
    for r in range(cfg.rows):
        seq = [grid[r][0]]
        for c in range(cfg.cols - 1):
            k = int(rng.choice(choices))
            seq += interior((xs[c], ys[r]), (xs[c + 1], ys[r]), k) + [grid[r][c + 1]]
        row_roads.append(seq)
    col_roads = []
    for c in range(cfg.cols):
        seq = [grid[0][c]]
        for r in range(cfg.rows - 1):
            k = int(rng.choice(choices))
            seq += interior((xs[c], ys[r]), (xs[c], ys[r + 1]), k) + [grid[r + 1][c]]
        col_roads.append(seq)

    roads = [(f"E{r}", s) for r, s in enumerate(row_roads)] + [(f"N{c}", s) for c, s in enumerate(col_roads)]
    for name, seq in roads:
        circuit = seq + seq[-2::-1]
        times = []
        for u, v in zip(circuit[:-1], circuit[1:]):
            nu, nv = b.nodes[u], b.nodes[v]
            length = math.hypot(nu.x - nv.x, nu.y - nv.y)
            times.append(length / rng.uniform(*cfg.speed_range) + rng.uniform(*cfg.dwell_range))
        layover = rng.uniform(*cfg.layover_range)
        b.add_line(circuit, times, vehicle_type="bus", seats=cfg.seats, initial_fleet=cfg.fleet_min,
                   fleet_min=cfg.fleet_min, fleet_max=cfg.fleet_max, layover=layover, name=name)

    stops = [n.id for n in b.nodes if n.kind == NodeKind.STOP]
    _walk_stops(b, stops, cfg)

    communities = _place_communities(rng, cfg)
    pops = rng.integers(cfg.population_range[0], cfg.population_range[1] + 1, size=len(communities))
    comm_ids = [b.add_community(x, y, p) for (x, y), p in zip(communities, pops)]
    fac_xy = np.column_stack([rng.uniform(0, cfg.width, cfg.n_facilities), rng.uniform(0, cfg.height, cfg.n_facilities)])
    fac_ids = [b.add_facility(x, y, 1.0) for x, y in fac_xy]
    for nid in comm_ids + fac_ids:
        connect_to_stops(b, nid, stops, cfg.access_walk_cutoff)

    b.metadata.update({"generator": "artificial", "seed": cfg.seed})
    net = b.build()

    boardings = nearest_community_boardings(net, cfg.boarding_share)
    stop_arr = np.array(sorted(boardings), dtype=np.int64)
    targets = np.array([boardings[s] for s in stop_arr])
    seed = seed_matrix(net, stop_arr, IPFConfig(mean=cfg.od_mean, std=cfg.od_std))
    if seed.sum() > 0:
        seed *= targets.sum() / seed.sum()
    seed = np.maximum(seed + rng.uniform(*cfg.perturb_range, size=seed.shape), 0.0)
    np.fill_diagonal(seed, 0.0)
    ipf_cfg = IPFConfig(cfg.ipf_max_iterations, cfg.ipf_tolerance, cfg.od_mean, cfg.od_std)
    od, ipf_res = fit_and_round(stop_arr, seed, targets, ipf_cfg)

    y = proportional_fleet(net, od, cfg.total_fleet, cfg.fleet_min, cfg.fleet_max)
    net = with_initial_fleet(net, y)
    moves = 0
    if cfg.fleet_search:
        y, moves = user_cost_local_search(net, od, y, cfg.assignment, cfg.weights, cfg.fleet_search_max_moves)
        net = with_initial_fleet(net, y)
    return ArtificialInstance(net, od, tuple(y), ipf_res, boardings, moves)


def _walk_stops(b: NetworkBuilder, stops: list[int], cfg: ArtificialNetConfig) -> None:
    xy = np.array([(b.nodes[s].x, b.nodes[s].y) for s in stops])
    d = np.abs(xy[:, None, 0] - xy[None, :, 0]) + np.abs(xy[:, None, 1] - xy[None, :, 1])
    ii, jj = np.nonzero(np.triu(d <= cfg.walk_cutoff + 1e-12, k=1))
    pairs = sorted(zip(d[ii, jj], ii, jj))
    degree = np.zeros(len(stops), dtype=np.int64)
    for dist, i, j in pairs:
        if degree[i] < cfg.walk_max_degree and degree[j] < cfg.walk_max_degree:
            degree[i] += 1
            degree[j] += 1
            b.add_walk(stops[i], stops[j], dist / WALK_SPEED_MI_PER_MIN)


def connect_to_stops(b: NetworkBuilder, nid: int, stops: list[int], cutoff: float) -> None:
    """Walk arcs both ways to every stop within ``cutoff``, or to the nearest stop if none qualify."""
    n = b.nodes[nid]
    dist = [l1_miles((n.x, n.y), (b.nodes[s].x, b.nodes[s].y), b.distance) for s in stops]
    near = [s for s, dd in zip(stops, dist) if dd <= cutoff]
    if not near:
        near = [stops[int(np.argmin(dist))]]
    for s in near:
        dd = dist[stops.index(s)]
        b.add_walk(nid, s, dd / WALK_SPEED_MI_PER_MIN)


def _place_communities(rng: np.random.Generator, cfg: ArtificialNetConfig) -> list[tuple[float, float]]:
    pts: list[tuple[float, float]] = []
    tries = 0
    while len(pts) < cfg.n_communities:
        tries += 1
        if tries > cfg.placement_retries:
            raise PlacementFailure(f"placed {len(pts)} of {cfg.n_communities} communities "
                                   f"after {cfg.placement_retries} draws")
        p = (rng.uniform(0, cfg.width), rng.uniform(0, cfg.height))
        if all(math.hypot(p[0] - q[0], p[1] - q[1]) >= cfg.community_spacing for q in pts):
            pts.append(p)
    return pts


def nearest_community_boardings(net: TransitNetwork, share: float) -> dict[int, float]:
    """Split ``share`` of each community's population evenly over the stops nearest to it."""
    stops = net.stops
    comms = net.communities
    sxy = np.array([(net.nodes[s].x, net.nodes[s].y) for s in stops])
    cxy = np.array([(net.nodes[c].x, net.nodes[c].y) for c in comms])
    d = np.hypot(sxy[:, None, 0] - cxy[None, :, 0], sxy[:, None, 1] - cxy[None, :, 1])
    nearest = np.argmin(d, axis=1)
    counts = np.bincount(nearest, minlength=len(comms))
    out = {}
    for s, c in zip(stops, nearest):
        out[int(s)] = share * net.populations[c] / counts[c]
    return out


def line_demand(net: TransitNetwork, od: ODMatrix) -> np.ndarray:
    """Total OD demand whose shortest in-vehicle-plus-walk path rides each line."""
    g = _csr_min(net.n_nodes, net.arc_tail, net.arc_head, transit_times(net))
    origins = sorted({s for (s, _), d in od.entries.items() if d > 0})
    if not origins:
        return np.zeros(net.n_lines)
    _, pred = dijkstra(g, directed=True, indices=origins, return_predecessors=True)
    line_of = {}
    for a in net.arcs:
        if a.kind == ArcKind.LINE:
            line_of[(a.tail, a.head)] = a.line
    row = {s: i for i, s in enumerate(origins)}
    demand = np.zeros(net.n_lines)
    for (s, t), dem in od.entries.items():
        if dem <= 0:
            continue
        p = pred[row[s]]
        used = set()
        v = t
        while v != s and v >= 0:
            u = p[v]
            if u < 0:
                break
            l = line_of.get((int(u), int(v)))
            if l is not None:
                used.add(l)
            v = u
        for l in used:
            demand[l] += dem
    return demand


def proportional_fleet(net: TransitNetwork, od: ODMatrix, total: int, lo: int, hi: int) -> list[int]:
    """Largest-remainder allocation of ``total`` vehicles by line demand, within [lo, hi]."""
    demand = line_demand(net, od)
    n = net.n_lines
    if total < lo * n or total > hi * n:
        raise ValueError("fleet total incompatible with per-line bounds")
    weights = demand if demand.sum() > 0 else np.ones(n)
    share = total * weights / weights.sum()
    y = np.clip(np.floor(share).astype(np.int64), lo, hi)
    while y.sum() != total:
        gap = share - y
        if y.sum() < total:
            gap[y >= hi] = -np.inf
            y[int(np.argmax(gap))] += 1
        else:
            gap[y <= lo] = np.inf
            y[int(np.argmin(gap))] -= 1
    return [int(v) for v in y]


def user_cost_local_search(net: TransitNetwork, od: ODMatrix, y: list[int], acfg: AssignmentConfig,
                           weights: UserCostWeights, max_moves: Optional[int] = None) -> tuple[list[int], int]:
    """Move single vehicles between compatible lines while user cost drops.

    Moves are scanned cyclically in a fixed order and the first improving one
    is taken; the search ends after a full cycle without improvement, so the
    result is locally optimal for every reassignment move (unless
    ``max_moves`` cuts it short).
    """
    prob = _AssignmentProblem(net, od)
    cache: dict[tuple[int, ...], float] = {}

    def cost(v):
        key = tuple(v)
        if key not in cache:
            try:
                cache[key] = user_cost(net, transit_assignment(net, v, od, acfg, _problem=prob), weights)
            except UnreachableDemand:
                cache[key] = math.inf
        return cache[key]

    ztype = net.line_vehicle_type
    pairs = [(m, l) for m in range(net.n_lines) for l in range(net.n_lines) if m != l and ztype[m] == ztype[l]]
    y = list(y)
    current = cost(y)
    moves = 0
    since = 0
    pos = 0
    while since < len(pairs) and (max_moves is None or moves < max_moves):
        m, l = pairs[pos]
        pos = (pos + 1) % len(pairs)
        since += 1
        if y[m] - 1 < net.lines[m].fleet_min or y[l] + 1 > net.lines[l].fleet_max:
            continue
        cand = list(y)
        cand[m] -= 1
        cand[l] += 1
        c = cost(cand)
        if c < current:
            y, current = cand, c
            moves += 1
            since = 0
            log.info("fleet search move %d (%d -> %d): user cost %.6g", moves, m, l, current)
    return y, moves
