"""Competition-weighted gravity accessibility and the K-minimum objective.

For community i and facility j with travel time d_ij,

    F_j = sum_k P_k d_kj^-beta          (crowding of facility j)
    A_i = sum_j S_j d_ij^-beta / F_j    (access of community i)

and the objective is the sum of the K smallest A_i. Infinite times contribute
nothing, and a facility nobody reaches drops out of every A_i.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .network import TransitNetwork, access_travel_times


class FacilityUnreached(UserWarning):
    """Some facility is reachable from no community; its terms are dropped."""


@dataclass(frozen=True)
class AccessParams:
    beta: float = 1.0
    k_count: int = 6

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.k_count < 1:
            raise ValueError("k_count must be at least 1")


@dataclass
class AccessProfile:
    metrics: np.ndarray            # A_i, aligned with net.communities
    crowding: np.ndarray           # F_j, aligned with net.facilities
    objective: float
    included: tuple[int, ...]      # community node ids counted in the objective
    unreached: tuple[int, ...] = ()  # facility node ids with F_j = 0


def decay(d: np.ndarray, beta: float) -> np.ndarray:
    """``d**-beta`` with infinite distances mapped to 0."""
    d = np.asarray(d, dtype=np.float64)
    fin = np.isfinite(d)
    out = np.zeros_like(d)
    out[fin] = d[fin] ** -beta
    return out


def crowding_values(d: np.ndarray, populations: np.ndarray, beta: float) -> np.ndarray:
    return np.asarray(populations, dtype=np.float64) @ decay(d, beta)


def gravity_values(d: np.ndarray, qualities: np.ndarray, crowd: np.ndarray, beta: float) -> np.ndarray:
    w = np.divide(np.asarray(qualities, dtype=np.float64), crowd, out=np.zeros(len(crowd)), where=crowd > 0)
    return decay(d, beta) @ w


def facility_crowding(net: TransitNetwork, d: np.ndarray, params: AccessParams) -> np.ndarray:
    """F_j for every facility of ``net`` given the community-by-facility matrix ``d``."""
    crowd = crowding_values(d, net.populations, params.beta)
    if np.any(crowd == 0):
        ids = [int(j) for j in net.facilities[crowd == 0]]
        warnings.warn(f"facilities {ids} are unreachable from every community", FacilityUnreached, stacklevel=2)
    return crowd


def gravity_metric(net: TransitNetwork, d: np.ndarray, crowd: np.ndarray, params: AccessParams) -> np.ndarray:
    return gravity_values(d, net.qualities, crowd, params.beta)


def k_smallest(values: np.ndarray, k: int) -> np.ndarray:
    """Positions of the ``k`` smallest values; ties go to the lower position."""
    if k > len(values):
        raise ValueError(f"k_count {k} exceeds the {len(values)} communities")
    return np.argsort(values, kind="stable")[:k]


def profile_from_times(net: TransitNetwork, d: np.ndarray, params: AccessParams) -> AccessProfile:
    crowd = crowding_values(d, net.populations, params.beta)
    metrics = gravity_values(d, net.qualities, crowd, params.beta)
    pick = k_smallest(metrics, params.k_count)
    return AccessProfile(metrics, crowd, float(np.sum(metrics[pick])), tuple(int(c) for c in net.communities[pick]),
                         tuple(int(j) for j in net.facilities[crowd == 0]))


def access_objective(net: TransitNetwork, y: Sequence[int], params: AccessParams) -> tuple[float, AccessProfile]:
    """Sum of the ``k_count`` currently smallest community metrics under fleet ``y``."""
    prof = profile_from_times(net, access_travel_times(net, y), params)
    return prof.objective, prof


@dataclass
class AccessEvaluator:
    """Memoized objective; the objective is a pure function of the fleet."""

    net: TransitNetwork
    params: AccessParams
    cache: dict = field(default_factory=dict)
    evaluations: int = 0

    def __call__(self, y: Sequence[int]) -> float:
        key = tuple(int(v) for v in y)
        hit = self.cache.get(key)
        if hit is None:
            self.evaluations += 1
            hit = access_objective(self.net, key, self.params)[0]
            self.cache[key] = hit
        return hit

    def profile(self, y: Sequence[int]) -> AccessProfile:
        return access_objective(self.net, tuple(y), self.params)[1]


def stop_access_scores(net: TransitNetwork, y: Sequence[int], stops: Sequence[int], beta: float) -> np.ndarray:
    """Gravity metric of ``stops`` with every stop of the network standing in as a unit-population community."""
    every = net.stops
    d = access_travel_times(net, y, sources=every)
    crowd = crowding_values(d, np.ones(len(every)), beta)
    pos = np.searchsorted(every, np.asarray(stops, dtype=np.int64))
    return gravity_values(d[pos], net.qualities, crowd, beta)
