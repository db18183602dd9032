"""OD matrix estimation by iterative proportional fitting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from ..assignment import ODMatrix
from ..network import TransitNetwork, arc_access_costs, shortest_times, transit_times


@dataclass(frozen=True)
class IPFConfig:
    max_iterations: int = 50
    tolerance: float = 1e-3
    mean: float = 43.8
    std: float = 20.0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass
class IPFResult:
    matrix: np.ndarray
    error: float
    iterations: int
    converged: bool
    zero_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    rounding_drift: float = 0.0


def gamma_pdf(t, mean: float, std: float) -> np.ndarray:
    """Trip-length density parameterized by mean and standard deviation."""
    shape = (mean / std) ** 2
    scale = std**2 / mean
    return stats.gamma.pdf(t, a=shape, scale=scale)


def marginal_error(m: np.ndarray, rows: np.ndarray, cols: np.ndarray, support=None) -> float:
    """Largest relative mismatch between matrix marginals and positive targets.

    With ``support`` (a pair of boolean masks), rows and columns outside it
    are ignored; those are the ones with no seed mass to scale.
    """
    err = 0.0
    masks = support if support is not None else (np.ones(len(rows), bool), np.ones(len(cols), bool))
    for got, want, mask in ((m.sum(axis=1), rows, masks[0]), (m.sum(axis=0), cols, masks[1])):
        pos = (want > 0) & mask
        if pos.any():
            err = max(err, float(np.max(np.abs(got[pos] - want[pos]) / want[pos])))
    return err


def ipf(seed: np.ndarray, rows: Sequence[float], cols: Sequence[float], max_iterations: int = 50,
        tolerance: float = 1e-3) -> IPFResult:
    """Alternately rescale rows and columns of ``seed`` toward the target marginals.

    Zero seed cells stay zero and rows or columns with zero target (or zero
    seed mass) are left at zero. Each iteration is one row pass followed by
    one column pass.
    """
    m = np.array(seed, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    if m.shape != (len(rows), len(cols)):
        raise ValueError("seed shape does not match marginals")
    if (m < 0).any() or (rows < 0).any() or (cols < 0).any():
        raise ValueError("seed and marginals must be nonnegative")
    support = (m.sum(axis=1) > 0, m.sum(axis=0) > 0)
    err = marginal_error(m, rows, cols, support)
    it = 0
    while err >= tolerance and it < max_iterations:
        it += 1
        r = m.sum(axis=1)
        m *= np.divide(rows, r, out=np.zeros_like(r), where=r > 0)[:, None]
        c = m.sum(axis=0)
        m *= np.divide(cols, c, out=np.zeros_like(c), where=c > 0)[None, :]
        err = marginal_error(m, rows, cols, support)
    return IPFResult(m, err, it, err < tolerance, zero_rows=np.flatnonzero(~support[0] & (rows > 0)))


def build_od_ipf(net: TransitNetwork, boardings: dict[int, float], cfg: IPFConfig = IPFConfig(),
                 y: Optional[Sequence[int]] = None) -> tuple[ODMatrix, IPFResult]:
    """Stop-level OD matrix from boardings, with alightings equal to boardings.

    The seed is the gamma trip-length density evaluated at pairwise shortest
    times (boarding waits included when a fleet ``y`` is given, otherwise
    in-vehicle and walking time only). Entries are rounded to the nearest
    integer at the end.
    """
    stops = np.array(sorted(boardings), dtype=np.int64)
    targets = np.array([boardings[s] for s in stops], dtype=np.float64)
    seed = seed_matrix(net, stops, cfg, y)
    return fit_and_round(stops, seed, targets, cfg)


def fit_and_round(stops: np.ndarray, seed: np.ndarray, targets: np.ndarray,
                  cfg: IPFConfig) -> tuple[ODMatrix, IPFResult]:
    res = ipf(seed, targets, targets, cfg.max_iterations, cfg.tolerance)
    rounded = np.rint(res.matrix)
    res.rounding_drift = float(np.max(np.abs(rounded - res.matrix))) if rounded.size else 0.0
    return ODMatrix.from_dense(stops, rounded), res


def seed_matrix(net: TransitNetwork, stops: np.ndarray, cfg: IPFConfig, y: Optional[Sequence[int]] = None) -> np.ndarray:
    costs = transit_times(net, arc_access_costs(net, y) if y is not None else None)
    times = shortest_times(net, costs, stops)[:, stops]
    seed = np.where(np.isfinite(times), gamma_pdf(np.where(np.isfinite(times), times, 0.0), cfg.mean, cfg.std), 0.0)
    np.fill_diagonal(seed, 0.0)
    return seed
