import math

import numpy as np
import pytest

from samp.assignment import (AssignmentConfig, AssignmentResult, ODMatrix, OperatorCostHook, UnreachableDemand,
                             UserCostWeights, check_user_cost_bound, conical_congestion_factor, operator_cost_hook,
                             relative_gap, transit_assignment, user_cost, user_cost_components)
from samp.builder import NetworkBuilder
from samp.network import ArcKind
from samp.pipeline.artificial import generate_artificial

from helpers import node_balance, parallel_lines, single_line, small_config, strategy_oracle, three_line_toy, \
    walk_then_ride

FREE = AssignmentConfig(congestion=False)


def test_single_line_closed_form():
    net, od = single_line(line_time=5, circuit=10, fleet=5, demand=10)
    res = transit_assignment(net, (5,), od, FREE)
    used = {(ArcKind.BOARD, 0), (ArcKind.LINE, None), (ArcKind.ALIGHT, 1)}
    for a in net.arcs:
        end = None if a.kind == ArcKind.LINE else (a.tail if a.kind == ArcKind.BOARD else a.head)
        assert res.flows[a.id] == pytest.approx(10.0 if (a.kind, end) in used else 0.0)
    assert res.waiting_total == pytest.approx(20.0)


def test_zero_demand():
    net, _ = single_line()
    res = transit_assignment(net, (5,), ODMatrix({}), AssignmentConfig())
    assert not res.flows.any() and res.waiting_total == 0


def test_common_lines_split():
    net, od = parallel_lines(fleets=(1, 1), circuits=(10, 10), demand=10)
    res = transit_assignment(net, (1, 1), od, FREE)
    line_flows = [res.flows[a.id] for a in net.arcs if a.kind == ArcKind.LINE]
    assert line_flows == pytest.approx([5, 5], rel=1e-12)
    assert res.waiting_total == pytest.approx(50.0, rel=1e-12)


def test_three_common_lines_split_by_frequency():
    net, od = parallel_lines(times=(5, 5, 5), circuits=(10, 20, 40), fleets=(1, 1, 1), demand=7)
    res = transit_assignment(net, (1, 1, 1), od, FREE)
    f = np.array([0.1, 0.05, 0.025])
    line_flows = np.array([res.flows[a.id] for a in net.arcs if a.kind == ArcKind.LINE])
    np.testing.assert_allclose(line_flows, 7 * f / f.sum(), rtol=1e-10)
    assert res.waiting_total == pytest.approx(7 / f.sum(), rel=1e-12)


def test_slow_line_dropped_from_strategy():
    # line 2 takes 30 min: wait 10 + 5 beats riding it, so nobody boards it
    net, od = parallel_lines(times=(5, 30), circuits=(10, 10), fleets=(1, 1), demand=4)
    res = transit_assignment(net, (1, 1), od, FREE)
    line_flows = [res.flows[a.id] for a in net.arcs if a.kind == ArcKind.LINE]
    assert line_flows == pytest.approx([4, 0])


def test_matches_textbook_oracle_on_toy():
    net, od = three_line_toy()
    for y in [(2, 2, 2), (1, 1, 4), (4, 1, 0)]:
        res = transit_assignment(net, y, od, FREE)
        flows, wait = strategy_oracle(net, y, od)
        np.testing.assert_allclose(res.flows, flows, rtol=1e-10, atol=1e-10)
        assert res.waiting_total == pytest.approx(wait, rel=1e-10)


def test_matches_textbook_oracle_on_generated_network():
    inst = generate_artificial(small_config(seed=2, fleet_search=False))
    net, od, y = inst.network, inst.od, inst.fleet
    res = transit_assignment(net, y, od, FREE)
    flows, wait = strategy_oracle(net, y, od)
    np.testing.assert_allclose(res.flows, flows, rtol=1e-9, atol=1e-8)
    assert res.waiting_total == pytest.approx(wait, rel=1e-9)


def test_flow_conservation_congested():
    inst = generate_artificial(small_config(seed=4, fleet_search=False))
    res = transit_assignment(inst.network, inst.fleet, inst.od)
    bal = node_balance(inst.network, res.flows, inst.od)
    assert np.max(np.abs(bal)) <= 1e-6 * inst.od.total
    assert (res.flows >= 0).all()


def test_reported_gap_matches_recomputation():
    inst = generate_artificial(small_config(seed=1, fleet_search=False))
    cfg = AssignmentConfig()
    res = transit_assignment(inst.network, inst.fleet, inst.od, cfg)
    assert res.gap < cfg.tolerance
    assert relative_gap(inst.network, inst.fleet, inst.od, res, cfg) == pytest.approx(res.gap, rel=1e-9, abs=1e-12)


def test_msa_rule_running_minimum_nonincreasing():
    inst = generate_artificial(small_config(seed=1, fleet_search=False))
    res = transit_assignment(inst.network, inst.fleet, inst.od, AssignmentConfig(step_rule="msa", max_iterations=30))
    running = np.minimum.accumulate(res.gap_history)
    assert (np.diff(running) <= 0).all()
    assert res.iterations <= 30


def test_unreachable_demand_raises():
    b = NetworkBuilder(60.0)
    s1, s2, s3 = b.add_stop(0, 0), b.add_stop(1, 0), b.add_stop(2, 0)
    b.add_line([s1, s2], [2.0], initial_fleet=1)
    with pytest.raises(UnreachableDemand):
        transit_assignment(b.build(), (1,), ODMatrix({(s1, s3): 1.0}))


def test_empty_line_carries_nothing():
    net, od = parallel_lines(fleets=(0, 1))
    res = transit_assignment(net, (0, 1), od, FREE)
    line_flows = [res.flows[a.id] for a in net.arcs if a.kind == ArcKind.LINE]
    assert line_flows == pytest.approx([0, 10])


# -- conical function ---------------------------------------------------------

@pytest.mark.parametrize("alpha", [1.5, 2.0, 4.0])
def test_conical_anchors(alpha):
    assert conical_congestion_factor(0.0, 1.0, alpha) == 1.0
    assert conical_congestion_factor(1.0, 1.0, alpha) == 2.0


def test_conical_midpoint_against_scalar_formula():
    a, b, r = 2.0, 1.5, 0.5
    ref = 2 + math.sqrt(a * a * (1 - r) ** 2 + b * b) - a * (1 - r) - b
    assert conical_congestion_factor(0.5, 1.0, 2.0) == pytest.approx(ref, rel=1e-15)
    assert ref == pytest.approx(1.3028, abs=1e-4)


def test_conical_rejects_bad_inputs():
    with pytest.raises(ValueError):
        conical_congestion_factor(1.0, 0.0)
    with pytest.raises(ValueError):
        conical_congestion_factor(1.0, 1.0, alpha=1.0)
    assert conical_congestion_factor(0.0, 0.0) == 1.0


# -- user cost ----------------------------------------------------------------

def _result(line, walk, wait):
    # fake result on the walk-then-ride toy with unit flows
    net, _ = walk_then_ride()
    flows = np.zeros(net.n_arcs)
    for a in net.arcs:
        if a.kind == ArcKind.LINE:
            flows[a.id] = line / a.base_time
        elif a.kind == ArcKind.WALK:
            flows[a.id] = walk / a.base_time
    return net, AssignmentResult(flows, wait, 1, 0.0)


@pytest.mark.parametrize("theta,expected", [((1, 1, 1), 80), ((0, 0, 1), 20), ((2, 1, 1), 130)])
def test_user_cost_weights(theta, expected):
    net, res = _result(50, 10, 20)
    w = UserCostWeights(*theta)
    assert user_cost(net, res, w) == pytest.approx(expected)


def test_user_cost_on_toy_assignment():
    net, od = walk_then_ride()
    res = transit_assignment(net, net.initial_fleet, od, FREE)
    assert user_cost_components(net, res) == pytest.approx({"in_vehicle": 50, "walking": 10, "waiting": 20})


def test_user_cost_superposition():
    net, r1 = _result(50, 10, 20)
    _, r2 = _result(30, 5, 7)
    both = AssignmentResult(r1.flows + 2 * r2.flows, r1.waiting_total + 2 * r2.waiting_total, 1, 0.0)
    w = UserCostWeights(1.3, 0.7, 2.1)
    assert user_cost(net, both, w) == pytest.approx(user_cost(net, r1, w) + 2 * user_cost(net, r2, w))


def test_bound_check():
    assert check_user_cost_bound(100, 100, 0.01)
    assert not check_user_cost_bound(101.5, 100, 0.01)
    assert check_user_cost_bound(1e12, 100, math.inf)
    assert check_user_cost_bound(100 * (1 + 5e-7), 100, 0.0)
    assert not check_user_cost_bound(100 * (1 + 2e-6), 100, 0.0)


def test_operator_hook():
    net, _ = three_line_toy()
    y = net.initial_fleet
    assert operator_cost_hook(net, y, None) == "disabled"
    assert OperatorCostHook().feasible(net, (4, 4, 4))
    hook = OperatorCostHook(enabled=True, cost_per_vehicle=1.0, budget=6)
    assert hook.cost(net, y) == 6 and hook.feasible(net, y)
    assert not OperatorCostHook(enabled=True, cost_per_vehicle=1.0, budget=5).feasible(net, y)


# -- step rules ---------------------------------------------------------------

def test_step_rules_reach_the_same_equilibrium():
    inst = generate_artificial(small_config(seed=3, fleet_search=False))
    costs = {}
    for rule in ("msa", "self-regulating", "line-search"):
        res = transit_assignment(inst.network, inst.fleet, inst.od, AssignmentConfig(step_rule=rule))
        assert res.gap < 1e-4
        costs[rule] = user_cost(inst.network, res)
    ref = costs["line-search"]
    assert all(abs(c - ref) <= 1e-3 * ref for c in costs.values())


def test_exact_step_minimizes_along_direction():
    from samp.assignment import _AssignmentProblem, _exact_step, congested_costs
    net, od = three_line_toy()
    y = (2, 2, 2)
    cfg = AssignmentConfig(alpha=4.0)
    # tight seats so congestion matters
    import dataclasses
    from samp.network import TransitNetwork
    net = TransitNetwork(net.nodes, net.arcs, tuple(dataclasses.replace(ln, seats=0.05) for ln in net.lines),
                         net.horizon)
    prob = _AssignmentProblem(net, od)
    freq = prob.frequencies(y)
    flows, wait, _ = prob.load(net.arc_time, freq)
    aux, aux_wait, _ = prob.load(congested_costs(net, y, flows, cfg), freq)
    line = prob.line_mask
    cap = np.array([ln.active_fraction * net.horizon * ln.seats * y[ln.id] / ln.circuit_time
                    for ln in net.lines])[net.arc_line[line]]

    def objective(s):
        # integral of congested line costs by Simpson's rule, plus the linear parts
        v = flows + s * (aux - flows)
        xs = np.linspace(0, 1, 401)
        g = np.array([conical_congestion_factor(v[line] * x, cap, cfg.alpha) for x in xs])
        w = np.ones(401)
        w[1:-1:2], w[2:-1:2] = 4, 2
        integral = (w @ g) / (3 * 400) * v[line]
        return float(net.arc_time[line] @ integral + net.arc_time[~line] @ v[~line] + wait + s * (aux_wait - wait))

    step = _exact_step(net.arc_time, line, cap, flows, aux - flows, aux_wait - wait, cfg.alpha)
    grid = np.linspace(0, 1, 201)
    best = grid[int(np.argmin([objective(s) for s in grid]))]
    assert 0 < step < 1 and abs(step - best) <= 0.01
