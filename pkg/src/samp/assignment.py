"""Congested frequency-based transit assignment and the user-cost constraint.

Users follow optimal strategies: at each node they hold a set of attractive
outgoing arcs and take whichever line arrives first, so the wait at a node is
the inverse of the combined frequency of its attractive boarding arcs. Line arc
costs are inflated by a conical function of volume over line capacity, and the
congested equilibrium is approached by averaging successive all-or-nothing loads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

from .network import (ArcKind, NodeKind, TransitNetwork, access_only_arcs, check_fleet, line_capacities,
                      line_frequencies)

# relative slack on the user-cost bound, absorbing assignment round-off
FEASIBILITY_SLACK = 1e-6


class UnreachableDemand(RuntimeError):
    def __init__(self, origin: int, destination: int):
        super().__init__(f"demand from node {origin} to node {destination} has no usable path")
        self.origin = origin
        self.destination = destination


@dataclass
class ODMatrix:
    """Sparse day-to-day demand in trips over the horizon."""

    entries: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        for (s, t), d in self.entries.items():
            if not d >= 0:
                raise ValueError(f"negative demand {d} for pair ({s}, {t})")

    @classmethod
    def from_dense(cls, nodes: Sequence[int], matrix: np.ndarray) -> "ODMatrix":
        m = np.asarray(matrix)
        rows, cols = np.nonzero(m)
        return cls({(int(nodes[r]), int(nodes[c])): float(m[r, c]) for r, c in zip(rows, cols)})

    @property
    def total(self) -> float:
        return float(sum(self.entries.values()))

    def row_sums(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for (s, _), d in self.entries.items():
            out[s] = out.get(s, 0.0) + d
        return out

    def validate(self, net: TransitNetwork) -> None:
        allowed_o = {NodeKind.ORIGIN, NodeKind.STOP}
        allowed_d = {NodeKind.DESTINATION, NodeKind.STOP}
        for s, t in self.entries:
            if not (0 <= s < net.n_nodes and net.nodes[s].kind in allowed_o):
                raise ValueError(f"OD origin {s} is not an origin or stop node")
            if not (0 <= t < net.n_nodes and net.nodes[t].kind in allowed_d):
                raise ValueError(f"OD destination {t} is not a destination or stop node")

    def grouped(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Positive entries grouped by destination as CSR-style arrays."""
        items = sorted(((t, s, d) for (s, t), d in self.entries.items() if d > 0 and s != t))
        dests = np.array(sorted({t for t, _, _ in items}), dtype=np.int64)
        ptr = np.zeros(len(dests) + 1, dtype=np.int64)
        pos = {t: i for i, t in enumerate(dests)}
        for t, _, _ in items:
            ptr[pos[t] + 1] += 1
        origins = np.array([s for _, s, _ in items], dtype=np.int64)
        demand = np.array([d for _, _, d in items], dtype=np.float64)
        return dests, np.cumsum(ptr), origins, demand


@dataclass(frozen=True)
class AssignmentConfig:
    """Equilibrium settings.

    ``step_rule`` picks the averaging weights: ``"msa"`` uses 1/k, while
    ``"self-regulating"`` grows the step denominator quickly when the gap
    rises and slowly when it falls. ``"line-search"`` takes the step that
    minimizes the convex equilibrium objective along the direction to the
    auxiliary load (found by bisection on its derivative), which needs the
    fewest loads of the three.
    """

    alpha: float = 2.0
    tolerance: float = 1e-4
    max_iterations: int = 100
    congestion: bool = True
    step_rule: str = "line-search"
    sra_rise: float = 1.5
    sra_fall: float = 0.3

    def __post_init__(self):
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")
        if self.max_iterations < 1 or not self.tolerance > 0:
            raise ValueError("need max_iterations >= 1 and tolerance > 0")


STEP_RULES = ("msa", "self-regulating", "line-search")


@dataclass
class AssignmentResult:
    flows: np.ndarray
    waiting_total: float
    iterations: int
    gap: float
    gap_history: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class UserCostWeights:
    theta1: float = 1.0
    theta2: float = 1.0
    theta3: float = 1.0
    epsilon: float = 0.01
    baseline: Optional[float] = None

    def __post_init__(self):
        if min(self.theta1, self.theta2, self.theta3) < 0:
            raise ValueError("user cost weights must be nonnegative")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be nonnegative (use math.inf to disable the bound)")


def conical_congestion_factor(volume, capacity, alpha: float = 2.0):
    """Conical volume-delay multiplier; 1 at zero flow, 2 at capacity.

    Works elementwise on arrays. Zero capacity with zero volume yields 1.
    """
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    volume = np.asarray(volume, dtype=np.float64)
    capacity = np.asarray(capacity, dtype=np.float64)
    if np.any((capacity <= 0) & (volume > 0)):
        raise ValueError("positive volume on zero capacity")
    beta = (2 * alpha - 1) / (2 * alpha - 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(capacity > 0, volume / np.where(capacity > 0, capacity, 1.0), 0.0)
    s = 1.0 - r
    q = np.sqrt(alpha**2 * s**2 + beta**2)
    # two rearrangements of 2 + q - alpha*s - beta, each exact at one anchor;
    # q(1) = alpha + beta - 1 follows from the choice of beta
    near_zero = 1.0 + alpha * r - alpha**2 * r * (2.0 - r) / (q + alpha + beta - 1.0)
    near_cap = 2.0 - alpha * s + alpha**2 * s**2 / (q + beta)
    g = np.where(r <= 0.5, near_zero, near_cap)
    return g if g.ndim else float(g)


# -- optimal strategies kernel ------------------------------------------------

@numba.njit(cache=True)
def _heap_push(keys, vals, size, key, val):
    i = size
    keys[i] = key
    vals[i] = val
    while i > 0:
        p = (i - 1) >> 1
        if keys[p] < keys[i] or (keys[p] == keys[i] and vals[p] <= vals[i]):
            break
        keys[p], keys[i] = keys[i], keys[p]
        vals[p], vals[i] = vals[i], vals[p]
        i = p
    return size + 1


@numba.njit(cache=True)
def _heap_pop(keys, vals, size):
    key, val = keys[0], vals[0]
    size -= 1
    keys[0] = keys[size]
    vals[0] = vals[size]
    i = 0
    while True:
        l = 2 * i + 1
        if l >= size:
            break
        c = l
        r = l + 1
        if r < size and (keys[r] < keys[l] or (keys[r] == keys[l] and vals[r] < vals[l])):
            c = r
        if keys[i] < keys[c] or (keys[i] == keys[c] and vals[i] <= vals[c]):
            break
        keys[c], keys[i] = keys[i], keys[c]
        vals[c], vals[i] = vals[i], vals[c]
        i = c
    return key, val, size


@numba.njit(cache=True)
def _strategy_flows(n_nodes, tail, head, cost, freq, in_ptr, in_arcs, dests, od_ptr, od_orig, od_dem,
                    flows):
    """Load every destination's optimal strategy; returns (waiting, strategy cost, bad index).

    ``freq`` is 0 for disabled arcs, inf for deterministic arcs and the line
    frequency for boarding arcs. ``bad`` is the OD entry index of the first
    unreachable positive demand, or -1.
    """
    n_arcs = tail.shape[0]
    cap = 2 * n_arcs + n_nodes + 2
    keys = np.empty(cap)
    vals = np.empty(cap, dtype=np.int64)
    u = np.empty(n_nodes)
    fcomb = np.empty(n_nodes)
    gen = np.empty(n_nodes, dtype=np.int64)
    done = np.empty(n_nodes, dtype=np.bool_)
    det_best = np.empty(n_nodes)
    vol = np.empty(n_nodes)
    order = np.empty(n_arcs, dtype=np.int64)
    order_gen = np.empty(n_arcs, dtype=np.int64)
    stack = np.empty(n_nodes, dtype=np.int64)
    waiting = 0.0
    spc = 0.0
    for di in range(dests.shape[0]):
        t = dests[di]
        u[:] = np.inf
        det_best[:] = np.inf
        fcomb[:] = 0.0
        gen[:] = 0
        done[:] = False
        u[t] = 0.0
        size = _heap_push(keys, vals, 0, 0.0, n_arcs + t)
        n_order = 0
        while size > 0:
            key, p, size = _heap_pop(keys, vals, size)
            if p >= n_arcs:
                j = p - n_arcs
                if done[j] or key > u[j]:
                    continue
                # settle j, and cascade through tails fixed by a deterministic arc
                stack[0] = j
                top = 1
                done[j] = True
                while top > 0:
                    top -= 1
                    j = stack[top]
                    for k in range(in_ptr[j], in_ptr[j + 1]):
                        a = in_arcs[k]
                        fa = freq[a]
                        i = tail[a]
                        if fa == 0.0 or done[i]:
                            continue
                        cand = u[j] + cost[a]
                        # labels only decrease, and a queued deterministic arc caps them further
                        if not (cand < u[i] and cand < det_best[i]):
                            continue
                        if fa == np.inf:
                            det_best[i] = cand
                            if cand <= key:
                                # nothing left in the heap can undercut it: the arc is taken now
                                if cand < u[i]:
                                    u[i] = cand
                                    fcomb[i] = np.inf
                                    gen[i] += 1
                                    order[n_order] = a
                                    order_gen[n_order] = gen[i]
                                    n_order += 1
                                    done[i] = True
                                    stack[top] = i
                                    top += 1
                                continue
                        size = _heap_push(keys, vals, size, cand, a)
                continue
            a = p
            i = tail[a]
            if done[i] or not key < u[i]:
                continue
            fa = freq[a]
            if fa == np.inf:
                u[i] = key
                fcomb[i] = np.inf
                gen[i] += 1
                order[n_order] = a
                order_gen[n_order] = gen[i]
                n_order += 1
                size = _heap_push(keys, vals, size, key, n_arcs + i)
                continue
            elif fcomb[i] == 0.0:
                u[i] = 1.0 / fa + key
                fcomb[i] = fa
            else:
                u[i] = (fcomb[i] * u[i] + fa * key) / (fcomb[i] + fa)
                fcomb[i] += fa
            order[n_order] = a
            order_gen[n_order] = gen[i]
            n_order += 1
            size = _heap_push(keys, vals, size, u[i], n_arcs + i)

        vol[:] = 0.0
        for k in range(od_ptr[di], od_ptr[di + 1]):
            o = od_orig[k]
            if u[o] == np.inf:
                return waiting, spc, k
            vol[o] += od_dem[k]
            spc += od_dem[k] * u[o]
        for idx in range(n_order - 1, -1, -1):
            a = order[idx]
            i = tail[a]
            if order_gen[idx] != gen[i] or vol[i] == 0.0:
                continue
            if fcomb[i] == np.inf:
                v = vol[i]
            else:
                v = vol[i] * freq[a] / fcomb[i]
            flows[a] += v
            vol[head[a]] += v
        for i in range(n_nodes):
            if vol[i] > 0.0 and fcomb[i] > 0.0 and fcomb[i] != np.inf:
                waiting += vol[i] / fcomb[i]
    return waiting, spc, -1


class _AssignmentProblem:
    """Static arrays shared by every assignment on one network and OD matrix."""

    def __init__(self, net: TransitNetwork, od: ODMatrix):
        self.net = net
        n = net.n_nodes
        order = np.argsort(net.arc_head, kind="stable")
        self.in_arcs = order.astype(np.int64)
        counts = np.bincount(net.arc_head, minlength=n)
        self.in_ptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        self.enabled = ~access_only_arcs(net)
        self.board = net.arc_kind == ArcKind.BOARD
        self.line_mask = net.arc_kind == ArcKind.LINE
        self.walk_mask = net.arc_kind == ArcKind.WALK
        self.dests, self.od_ptr, self.od_orig, self.od_dem = od.grouped()

    def frequencies(self, y) -> np.ndarray:
        net = self.net
        freq = np.full(net.n_arcs, np.inf)
        freq[self.board] = line_frequencies(net, y)[net.arc_line[self.board]]
        freq[~self.enabled] = 0.0
        return freq

    def load(self, cost: np.ndarray, freq: np.ndarray) -> tuple[np.ndarray, float, float]:
        flows = np.zeros(self.net.n_arcs)
        waiting, spc, bad = _strategy_flows(self.net.n_nodes, self.net.arc_tail, self.net.arc_head, cost, freq,
                                            self.in_ptr, self.in_arcs, self.dests, self.od_ptr, self.od_orig,
                                            self.od_dem, flows)
        if bad >= 0:
            t = int(self.dests[np.searchsorted(self.od_ptr, bad, side="right") - 1])
            raise UnreachableDemand(int(self.od_orig[bad]), t)
        return flows, waiting, spc


def congested_costs(net: TransitNetwork, y, flows: np.ndarray, cfg: AssignmentConfig) -> np.ndarray:
    cost = net.arc_time.copy()
    if not cfg.congestion:
        return cost
    line = net.arc_kind == ArcKind.LINE
    cap = line_capacities(net, y)[net.arc_line[line]]
    vol = flows[line]
    # zero-capacity lines carry no flow; guard against residual round-off
    vol = np.where(cap > 0, vol, 0.0)
    cost[line] *= conical_congestion_factor(vol, cap, cfg.alpha)
    return cost


def transit_assignment(net: TransitNetwork, y, od: ODMatrix, cfg: AssignmentConfig = AssignmentConfig(),
                       _problem: Optional[_AssignmentProblem] = None) -> AssignmentResult:
    """User-optimal strategy flows under fleet ``y``.

    Raises :class:`UnreachableDemand` when a positive-demand pair has no path.
    Non-convergence is not an error; inspect ``gap`` and ``iterations``.
    """
    check_fleet(net, y)
    prob = _problem if _problem is not None else _AssignmentProblem(net, od)
    freq = prob.frequencies(y)
    if len(prob.dests) == 0:
        return AssignmentResult(np.zeros(net.n_arcs), 0.0, 0, 0.0, [0.0])
    flows, waiting, _ = prob.load(net.arc_time, freq)
    if not cfg.congestion:
        return AssignmentResult(flows, waiting, 1, 0.0, [0.0])
    history: list[float] = []
    k = 1
    denom = 1.0
    line = prob.line_mask
    cap = line_capacities(net, y)[net.arc_line[line]]
    while True:
        cost = congested_costs(net, y, flows, cfg)
        aux, aux_wait, spc = prob.load(cost, freq)
        total = float(cost @ flows) + waiting
        gap = (total - spc) / total if total > 0 else 0.0
        if cfg.step_rule == "msa":
            denom = k + 1.0
        elif cfg.step_rule == "self-regulating":
            denom += cfg.sra_rise if history and gap >= history[-1] else cfg.sra_fall
        history.append(gap)
        if gap < cfg.tolerance or k >= cfg.max_iterations:
            return AssignmentResult(flows, waiting, k, gap, history)
        k += 1
        if cfg.step_rule == "line-search":
            step = _exact_step(net.arc_time, line, cap, flows, aux - flows, aux_wait - waiting, cfg.alpha)
        else:
            step = 1.0 / denom
        flows = flows + step * (aux - flows)
        waiting = waiting + step * (aux_wait - waiting)


def _exact_step(base, line, cap, flows, d, d_wait, alpha, rounds: int = 40) -> float:
    """Minimizer over [0, 1] of the equilibrium objective along ``flows + s * d``.

    The objective is the integral of congested line costs plus fixed costs
    of the other arcs plus waiting; its derivative in s is increasing, so
    bisection on the sign of the derivative finds the step.
    """
    c_line = base[line]
    v, dl = flows[line], d[line]
    live = cap > 0
    fixed = float(base[~line] @ d[~line]) + d_wait

    def slope(s):
        g = conical_congestion_factor(np.where(live, v + s * dl, 0.0), cap, alpha)
        return float((c_line * g) @ dl) + fixed

    if slope(1.0) <= 0:
        return 1.0
    if slope(0.0) >= 0:
        # not a descent direction (round-off near equilibrium): take a tiny step
        return 1.0 / (1 << rounds)
    lo, hi = 0.0, 1.0
    for _ in range(rounds):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def relative_gap(net: TransitNetwork, y, od: ODMatrix, result: AssignmentResult,
                 cfg: AssignmentConfig = AssignmentConfig()) -> float:
    """Recompute the equilibrium gap of returned flows against a fresh best response."""
    prob = _AssignmentProblem(net, od)
    cost = congested_costs(net, y, result.flows, cfg)
    _, _, spc = prob.load(cost, prob.frequencies(y))
    total = float(cost @ result.flows) + result.waiting_total
    return (total - spc) / total if total > 0 else 0.0


def user_cost_components(net: TransitNetwork, result: AssignmentResult) -> dict[str, float]:
    in_vehicle = float(net.arc_time[net.arc_kind == ArcKind.LINE] @ result.flows[net.arc_kind == ArcKind.LINE])
    walking = float(net.arc_time[net.arc_kind == ArcKind.WALK] @ result.flows[net.arc_kind == ArcKind.WALK])
    return {"in_vehicle": in_vehicle, "walking": walking, "waiting": float(result.waiting_total)}


def user_cost(net: TransitNetwork, result: AssignmentResult, w: UserCostWeights = UserCostWeights()) -> float:
    """Weighted in-vehicle, walking and waiting person-minutes (base arc times)."""
    c = user_cost_components(net, result)
    return w.theta1 * c["in_vehicle"] + w.theta2 * c["walking"] + w.theta3 * c["waiting"]


def check_user_cost_bound(current: float, baseline: float, epsilon: float,
                          slack: float = FEASIBILITY_SLACK) -> bool:
    if math.isinf(epsilon):
        return True
    if not baseline > 0:
        raise ValueError("baseline user cost must be positive")
    return current <= (1.0 + epsilon) * baseline * (1.0 + slack)


@dataclass(frozen=True)
class OperatorCostHook:
    """Optional operator budget; disabled by default.

    When enabled the cost is ``cost_per_vehicle`` times the total fleet, which
    must not exceed ``budget``.
    """

    enabled: bool = False
    cost_per_vehicle: float = 1.0
    budget: float = math.inf

    def cost(self, net: TransitNetwork, y, result: Optional[AssignmentResult] = None) -> Optional[float]:
        if not self.enabled:
            return None
        return self.cost_per_vehicle * float(sum(y))

    def feasible(self, net: TransitNetwork, y, result: Optional[AssignmentResult] = None) -> bool:
        c = self.cost(net, y, result)
        return c is None or c <= self.budget


def operator_cost_hook(net: TransitNetwork, y, result: Optional[AssignmentResult],
                       hook: OperatorCostHook = OperatorCostHook()):
    """Operator cost of ``y`` or the string ``"disabled"``."""
    c = hook.cost(net, y, result)
    return "disabled" if c is None else c
