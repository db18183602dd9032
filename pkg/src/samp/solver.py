"""Hybrid tabu search / simulated annealing over fleet vectors.

Each iteration gathers ADD and DROP candidates in two passes. The first pass
is cheap and uses only the access objective. The second runs the transit
assignment on candidates in descending objective order until ``n_max``
feasible ones are found. SWAP candidates pair finalized DROPs with finalized
ADDs. The best neighbor is taken when it improves, otherwise it is accepted
with the annealing probability. Rejected or runner-up neighbors feed a
bounded pool that the search backtracks to when it stalls.

Random draws come from one generator in a fixed order per iteration: ADD
shuffle, DROP shuffle (again on every retry), the annealing draw, then pool
eviction and pool selection.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .access import AccessEvaluator, AccessParams
from .assignment import (AssignmentConfig, ODMatrix, OperatorCostHook, UnreachableDemand, UserCostWeights,
                         _AssignmentProblem, check_user_cost_bound, transit_assignment, user_cost)
from .network import TransitNetwork, fleet_violations

log = logging.getLogger(__name__)

ADD, DROP, SWAP = "add", "drop", "swap"


@dataclass(frozen=True)
class Move:
    kind: str
    lines: tuple[int, ...]   # (l,) for add/drop, (m, l) for a swap moving one vehicle from m to l

    @staticmethod
    def add(l: int) -> "Move":
        return Move(ADD, (l,))

    @staticmethod
    def drop(l: int) -> "Move":
        return Move(DROP, (l,))

    @staticmethod
    def swap(m: int, l: int) -> "Move":
        if m == l:
            raise ValueError("swap needs two different lines")
        return Move(SWAP, (m, l))

    def parts(self) -> tuple[tuple[int, int], ...]:
        """Signed elementary moves (+1 or -1, line)."""
        if self.kind == ADD:
            return ((1, self.lines[0]),)
        if self.kind == DROP:
            return ((-1, self.lines[0]),)
        return ((-1, self.lines[0]), (1, self.lines[1]))

    def apply(self, y: Sequence[int]) -> tuple[int, ...]:
        out = list(y)
        for s, l in self.parts():
            out[l] += s
        return tuple(out)


class TabuList:
    """Forbidden signed elementary moves, each with the iteration it stops applying."""

    def __init__(self):
        self.rules: dict[tuple[int, int], int] = {}

    def __len__(self):
        return len(self.rules)

    def forbid(self, sign: int, line: int, k: int, tenure: float) -> None:
        self.rules[(sign, line)] = k + math.ceil(tenure)

    def forbid_reversal(self, move: Move, k: int, tenure: float) -> None:
        for s, l in move.parts():
            self.forbid(-s, l, k, tenure)

    def is_tabu(self, sign: int, line: int, k: int) -> bool:
        return self.rules.get((sign, line), -1) > k

    def expire(self, k: int) -> None:
        """Drop rules no longer active at iteration ``k``."""
        self.rules = {r: e for r, e in self.rules.items() if e > k}

    def drop_shortest(self) -> Optional[tuple[int, int]]:
        if not self.rules:
            return None
        rule = min(self.rules, key=lambda r: (self.rules[r], r))
        del self.rules[rule]
        return rule


class AttractivePool:
    def __init__(self, cap: int):
        self.cap = cap
        self.solutions: list[tuple[int, ...]] = []

    def __len__(self):
        return len(self.solutions)

    def push(self, y: tuple[int, ...], rng: np.random.Generator) -> None:
        if len(self.solutions) >= self.cap:
            self.solutions.pop(int(rng.integers(len(self.solutions))))
        self.solutions.append(tuple(y))

    def pop_random(self, rng: np.random.Generator) -> tuple[int, ...]:
        return self.solutions.pop(int(rng.integers(len(self.solutions))))


@dataclass(frozen=True)
class SolverConfig:
    iterations: int = 500
    t0: float = 6.0
    tenure_growth: float = 1.15
    T0: float = 1e16
    cooling: float = 0.999
    q_in_max: int = 20
    q_out_max: int = 10
    n_tilde_max: int = 50
    n_max: int = 2
    ltm_cap: int = 40
    access: AccessParams = field(default_factory=AccessParams)
    weights: UserCostWeights = field(default_factory=UserCostWeights)
    assignment: AssignmentConfig = field(default_factory=AssignmentConfig)
    operator: OperatorCostHook = field(default_factory=OperatorCostHook)
    final_search: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if not 0 < self.cooling < 1:
            raise ValueError("cooling must lie in (0, 1)")
        for name in ("t0", "tenure_growth", "T0", "q_in_max", "q_out_max", "n_tilde_max", "n_max", "ltm_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Candidate:
    move: Move
    y: tuple[int, ...]
    objective: float


@dataclass
class Counters:
    objective_evals: int = 0
    assignment_evals: int = 0
    feasibility_checks: int = 0
    failed_searches: int = 0
    forced_backtracks: int = 0


@dataclass
class SolverState:
    y: tuple[int, ...]
    objective: float
    best_y: tuple[int, ...]
    best_objective: float
    stm: TabuList
    ltm: AttractivePool
    temperature: float
    tenure: float
    q_in: int = 0
    q_out: int = 0
    k: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    history: list[tuple[int, float, float]] = field(default_factory=list)
    trace: list[tuple[int, ...]] = field(default_factory=list)


class Feasibility:
    """User-cost and operator checks with a cache keyed by fleet vector."""

    def __init__(self, net: TransitNetwork, od: ODMatrix, cfg: SolverConfig, counters: Counters):
        self.net, self.od, self.cfg, self.counters = net, od, cfg, counters
        self.cache: dict[tuple[int, ...], bool] = {}
        self.user_costs: dict[tuple[int, ...], float] = {}
        self.bound_active = math.isfinite(cfg.weights.epsilon)
        self._problem = _AssignmentProblem(net, od) if self.bound_active else None
        self.baseline = cfg.weights.baseline
        if self.bound_active and self.baseline is None:
            self.baseline = self.user_cost(tuple(net.initial_fleet))

    def user_cost(self, y: tuple[int, ...]) -> float:
        if y not in self.user_costs:
            self.counters.assignment_evals += 1
            try:
                res = transit_assignment(self.net, y, self.od, self.cfg.assignment, _problem=self._problem)
                self.user_costs[y] = user_cost(self.net, res, self.cfg.weights)
            except UnreachableDemand:
                self.user_costs[y] = math.inf
        return self.user_costs[y]

    def __call__(self, y: Sequence[int]) -> bool:
        y = tuple(int(v) for v in y)
        self.counters.feasibility_checks += 1
        hit = self.cache.get(y)
        if hit is None:
            hit = not fleet_violations(self.net, y) and self.cfg.operator.feasible(self.net, y)
            if hit and self.bound_active:
                hit = check_user_cost_bound(self.user_cost(y), self.baseline, self.cfg.weights.epsilon)
            self.cache[y] = hit
        return hit


class Objective:
    def __init__(self, net: TransitNetwork, params: AccessParams, counters: Counters):
        self.eval = AccessEvaluator(net, params)
        self.counters = counters

    def __call__(self, y: Sequence[int]) -> float:
        before = self.eval.evaluations
        v = self.eval(y)
        self.counters.objective_evals += self.eval.evaluations - before
        return v


# -- neighborhood search ------------------------------------------------------

def _fits(net: TransitNetwork, y: Sequence[int], sign: int, l: int) -> bool:
    """Whether y + sign*e_l respects the line bounds and its vehicle-type limit."""
    v = y[l] + sign
    ln = net.lines[l]
    if v < ln.fleet_min or v > ln.fleet_max:
        return False
    if sign > 0:
        z = net.line_vehicle_type
        limit = net.vehicle_limits[z[l]]
        return sum(y[m] for m in range(net.n_lines) if z[m] == z[l]) + 1 <= limit
    return True


def first_pass_add_drop(state: SolverState, net: TransitNetwork, objective, n_tilde_max: float,
                        ) -> tuple[list[Candidate], list[Candidate], bool]:
    """Tentative ADD and DROP lists, each annotated with its objective.

    Lines are visited in a fresh random order per list. Returns the two lists
    and whether ``n_tilde_max`` stopped either scan early.
    """
    truncated = False
    lists = []
    for sign, kind in ((1, Move.add), (-1, Move.drop)):
        order = state.rng.permutation(net.n_lines)
        kept: list[Candidate] = []
        for pos, l in enumerate(order):
            if len(kept) >= n_tilde_max:
                truncated = truncated or pos < len(order)
                break
            l = int(l)
            if not _fits(net, state.y, sign, l):
                continue
            move = kind(l)
            y2 = move.apply(state.y)
            obj = objective(y2)
            if not state.stm.is_tabu(sign, l, state.k) or obj > state.best_objective:
                kept.append(Candidate(move, y2, obj))
        lists.append(kept)
    return lists[0], lists[1], truncated


def _by_objective(cands: Sequence[Candidate]) -> list[Candidate]:
    return sorted(cands, key=lambda c: -c.objective)


def second_pass_filter(cands: Sequence[Candidate], feasible, n_max: int) -> tuple[list[Candidate], int]:
    """Feasible candidates in descending objective order, stopping at ``n_max``.

    Returns the kept list and the number of feasibility checks made.
    """
    kept: list[Candidate] = []
    checks = 0
    for c in _by_objective(cands):
        if len(kept) >= n_max:
            break
        checks += 1
        if feasible(c.y):
            kept.append(c)
    return kept, checks


def swap_search(state: SolverState, net: TransitNetwork, adds: Sequence[Candidate], drops: Sequence[Candidate],
                objective, feasible, n_max: int) -> list[Candidate]:
    """Feasible swaps built from finalized DROP and ADD lines, best pair sum first."""
    z = net.line_vehicle_type
    pairs = []
    for d in drops:
        for a in adds:
            m, l = d.move.lines[0], a.move.lines[0]
            if m != l and z[m] == z[l]:
                pairs.append((d.objective + a.objective, m, l))
    pairs.sort(key=lambda p: -p[0])
    kept: list[Candidate] = []
    for _, m, l in pairs:
        if len(kept) >= n_max:
            break
        move = Move.swap(m, l)
        y2 = move.apply(state.y)
        if _fits(net, state.y, -1, m) and not fleet_violations(net, y2) and feasible(y2):
            kept.append(Candidate(move, y2, objective(y2)))
    return _by_objective(kept)


def neighborhood_search(state: SolverState, net: TransitNetwork, cfg: SolverConfig, objective, feasible,
                        counters: Counters) -> list[Candidate]:
    """Both passes plus swaps, with the failed-search recovery.

    Returns finalized neighbors sorted best first (possibly empty when every
    retry failed; the caller then forces a backtrack).
    """
    bound = cfg.n_tilde_max
    retries = len(state.stm) + 1
    while True:
        add_t, drop_t, truncated = first_pass_add_drop(state, net, objective, bound)
        adds, _ = second_pass_filter(add_t, feasible, cfg.n_max)
        drops, _ = second_pass_filter(drop_t, feasible, cfg.n_max)
        if adds or drops:
            swaps = swap_search(state, net, adds, drops, objective, feasible, cfg.n_max)
            return _by_objective(adds + drops + swaps)
        counters.failed_searches += 1
        if truncated and math.isfinite(bound):
            bound = math.inf
            continue
        if retries <= 0:
            return []
        retries -= 1
        state.q_out += 1
        if state.stm.drop_shortest() is None:
            return []


# -- iteration ----------------------------------------------------------------

def _backtrack(state: SolverState, cfg: SolverConfig, objective) -> None:
    state.q_in = 0
    state.q_out += 1
    if len(state.ltm):
        state.y = state.ltm.pop_random(state.rng)
        state.objective = objective(state.y)
        state.tenure *= cfg.tenure_growth


def step(state: SolverState, net: TransitNetwork, cfg: SolverConfig, objective, feasible,
         counters: Counters) -> SolverState:
    neighbors = neighborhood_search(state, net, cfg, objective, feasible, counters)
    if not neighbors:
        counters.forced_backtracks += 1
        _backtrack(state, cfg, objective)
    else:
        first = neighbors[0]
        second = neighbors[1] if len(neighbors) > 1 else None
        if first.objective > state.objective:
            state.q_out = 0
            state.tenure = cfg.t0
            state.y, state.objective = first.y, first.objective
            state.stm.forbid_reversal(first.move, state.k, state.tenure)
            if first.objective > state.best_objective:
                state.best_y, state.best_objective = first.y, first.objective
        else:
            state.q_out += 1
            state.q_in += 1
            r = state.rng.random()
            if r < math.exp(-(state.objective - first.objective) / state.temperature):
                state.tenure *= cfg.tenure_growth
                state.y, state.objective = first.y, first.objective
                state.stm.forbid_reversal(first.move, state.k, state.tenure)
                state.q_in = 0
                if second is not None:
                    state.ltm.push(second.y, state.rng)
            else:
                state.ltm.push(first.y, state.rng)
    if state.q_in >= cfg.q_in_max:
        _backtrack(state, cfg, objective)
    if state.q_out >= cfg.q_out_max:
        state.tenure = cfg.t0
    state.k += 1
    state.stm.expire(state.k)
    state.temperature *= cfg.cooling
    state.history.append((state.k, state.objective, state.best_objective))
    state.trace.append(state.y)
    return state


# -- final local search -------------------------------------------------------

def all_moves(net: TransitNetwork, y: Sequence[int]) -> list[Move]:
    """Every design-feasible ADD, DROP and SWAP from ``y``."""
    z = net.line_vehicle_type
    out = [Move.add(l) for l in range(net.n_lines) if _fits(net, y, 1, l)]
    out += [Move.drop(l) for l in range(net.n_lines) if _fits(net, y, -1, l)]
    for m in range(net.n_lines):
        if not _fits(net, y, -1, m):
            continue
        for l in range(net.n_lines):
            if l != m and z[l] == z[m] and y[l] + 1 <= net.lines[l].fleet_max:
                out.append(Move.swap(m, l))
    return out


def best_improving_neighbor(net: TransitNetwork, y: tuple[int, ...], current: float, objective,
                            feasible) -> Optional[tuple[tuple[int, ...], float]]:
    """Feasible neighbor with the largest objective above ``current``; ties go to the smallest vector.

    Neighbors are screened by objective first, so feasibility is only
    checked for ones that would improve.
    """
    cands = {}
    for mv in all_moves(net, y):
        y2 = mv.apply(y)
        if not fleet_violations(net, y2):
            cands[y2] = objective(y2)
    for y2 in sorted(cands, key=lambda v: (-cands[v], v)):
        if not cands[y2] > current:
            return None
        if feasible(y2):
            return y2, cands[y2]
    return None


def exhaustive_local_search(net: TransitNetwork, y: Sequence[int], objective, feasible,
                            max_rounds: Optional[int] = None) -> tuple[tuple[int, ...], float, int]:
    """Steepest ascent from ``y`` over all moves, ignoring tabu rules."""
    y = tuple(int(v) for v in y)
    cur = objective(y)
    rounds = 0
    while max_rounds is None or rounds < max_rounds:
        nb = best_improving_neighbor(net, y, cur, objective, feasible)
        if nb is None:
            break
        y, cur = nb
        rounds += 1
    return y, cur, rounds


# -- driver -------------------------------------------------------------------

@dataclass
class SolveResult:
    y: tuple[int, ...]
    objective: float
    initial_y: tuple[int, ...]
    initial_objective: float
    history: list[tuple[int, float, float]]
    trace: list[tuple[int, ...]]
    counters: Counters
    baseline_user_cost: Optional[float]
    final_user_cost: Optional[float]
    local_search_rounds: int
    timings: dict[str, float]


def init_state(net: TransitNetwork, cfg: SolverConfig, objective) -> SolverState:
    y0 = tuple(net.initial_fleet)
    obj = objective(y0)
    return SolverState(y0, obj, y0, obj, TabuList(), AttractivePool(cfg.ltm_cap), cfg.T0, cfg.t0,
                       rng=np.random.default_rng(cfg.seed))


def solve(net: TransitNetwork, od: ODMatrix, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    """Run the search from the network's initial fleet and polish the best vector found."""
    violations = fleet_violations(net, net.initial_fleet)
    if violations:
        raise ValueError("initial fleet violates its own bounds: " + "; ".join(violations))
    t_start = time.perf_counter()
    counters = Counters()
    objective = Objective(net, cfg.access, counters)
    feasible = Feasibility(net, od, cfg, counters)
    state = init_state(net, cfg, objective)
    t_search = time.perf_counter()
    for _ in range(cfg.iterations):
        step(state, net, cfg, objective, feasible, counters)
        log.debug("iteration %d: incumbent %.6g best %.6g", state.k, state.objective, state.best_objective)
    t_local = time.perf_counter()
    y, obj, rounds = state.best_y, state.best_objective, 0
    if cfg.final_search:
        y, obj, rounds = exhaustive_local_search(net, y, objective, feasible)
    t_end = time.perf_counter()
    final_uc = feasible.user_cost(y) if feasible.bound_active else None
    return SolveResult(y, obj, tuple(net.initial_fleet), objective(net.initial_fleet),
                       state.history, state.trace, counters, feasible.baseline, final_uc, rounds,
                       {"setup": t_search - t_start, "search": t_local - t_search, "local_search": t_end - t_local,
                        "total": t_end - t_start})
