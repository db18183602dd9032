import dataclasses

import numpy as np
import pytest

from samp.access import (AccessEvaluator, AccessParams, FacilityUnreached, access_objective, crowding_values,
                         facility_crowding, gravity_values, k_smallest, profile_from_times, stop_access_scores)
from samp.builder import NetworkBuilder
from samp.network import TransitNetwork

from helpers import gravity_network, literal_gravity, three_line_toy


def test_crowding_examples():
    assert crowding_values(np.array([[10.0]]), np.array([1000.0]), 1.0)[0] == pytest.approx(100.0)
    d = np.array([[10.0], [20.0]])
    assert crowding_values(d, np.array([1000.0, 2000.0]), 1.0)[0] == pytest.approx(200.0)
    assert crowding_values(np.array([[np.inf]]), np.array([5.0]), 1.0)[0] == 0.0


def test_unreached_facility_warns_and_drops_out():
    rng = np.random.default_rng(0)
    net, _ = gravity_network(rng, 3, 2, p_missing=0.0)
    d = np.array([[5.0, np.inf], [7.0, np.inf], [9.0, np.inf]])
    with pytest.warns(FacilityUnreached):
        crowd = facility_crowding(net, d, AccessParams())
    a = gravity_values(d, net.qualities, crowd, 1.0)
    assert np.all(np.isfinite(a))


def test_symmetric_layout_gives_equal_metrics():
    b = NetworkBuilder(60.0)
    c1, c2 = b.add_community(0, 0, 100), b.add_community(2, 0, 100)
    f1, f2 = b.add_facility(0, 1), b.add_facility(2, 1)
    for c in (c1, c2):
        for f in (f1, f2):
            b.add_walk(c, f, 5.0, both=False)
    prof = access_objective(b.build(), (), AccessParams(k_count=2))[1]
    assert prof.metrics[0] == prof.metrics[1]


def test_random_instance_matches_double_loop():
    rng = np.random.default_rng(11)
    net, d = gravity_network(rng, 5, 4)
    for beta in (0.5, 1.0, 2.0):
        prof = profile_from_times(net, np.maximum(d, 0.1), AccessParams(beta=beta, k_count=3))
        crowd, metric = literal_gravity(np.maximum(d, 0.1).tolist(), net.populations.tolist(),
                                        net.qualities.tolist(), beta)
        np.testing.assert_allclose(prof.crowding, crowd, rtol=1e-12)
        np.testing.assert_allclose(prof.metrics, metric, rtol=1e-12)


def test_k_smallest_examples():
    a = np.array([3.0, 1.0, 2.0, 5.0])
    assert a[k_smallest(a, 2)].sum() == 3.0
    assert k_smallest(np.array([1.0, 0.5, 1.0, 0.5]), 3).tolist() == [1, 3, 0]
    with pytest.raises(ValueError):
        k_smallest(a, 5)


def test_objective_special_cases():
    net, _ = three_line_toy()
    y = net.initial_fleet
    one, prof = access_objective(net, y, AccessParams(k_count=1))
    assert one == prof.metrics.min()
    every, prof = access_objective(net, y, AccessParams(k_count=2))
    assert every == pytest.approx(prof.metrics.sum(), rel=1e-15)


def test_scale_covariance():
    rng = np.random.default_rng(3)
    net, d = gravity_network(rng, 6, 3, p_missing=0.0)
    base = profile_from_times(net, d, AccessParams(k_count=6))
    order = np.argsort(base.metrics)
    scaled = TransitNetwork(tuple(dataclasses.replace(n, quality=n.quality * 3) if n.quality else
                                  dataclasses.replace(n, population=n.population * 7) if n.population else n
                                  for n in net.nodes), net.arcs, net.lines, net.horizon)
    prof = profile_from_times(scaled, d, AccessParams(k_count=6))
    np.testing.assert_allclose(prof.metrics, base.metrics * 3 / 7, rtol=1e-12)
    assert np.argsort(prof.metrics).tolist() == order.tolist()


def test_single_facility_population_weighted_total():
    rng = np.random.default_rng(8)
    net, d = gravity_network(rng, 7, 1, p_missing=0.0)
    prof = profile_from_times(net, d, AccessParams(k_count=1))
    assert float(net.populations @ prof.metrics) == pytest.approx(net.qualities[0], rel=1e-12)


def test_evaluator_caches_and_is_deterministic():
    net, _ = three_line_toy()
    ev = AccessEvaluator(net, AccessParams(k_count=1))
    v1 = ev((2, 2, 2))
    v2 = ev((2, 2, 2))
    assert v1 == v2 and ev.evaluations == 1
    assert access_objective(net, (2, 2, 2), AccessParams(k_count=1))[0] == v1


def test_stop_scores_shape_and_positivity():
    net, _ = three_line_toy()
    scores = stop_access_scores(net, net.initial_fleet, net.stops[:2], 1.0)
    assert scores.shape == (2,) and (scores > 0).all()


def test_params_validation():
    with pytest.raises(ValueError):
        AccessParams(beta=0)
    with pytest.raises(ValueError):
        AccessParams(k_count=0)
