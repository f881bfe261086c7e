"""C-logit route choice with toll-aware generalized costs.

Costs are in minutes. Tolls enter the generalized cost through the value of
time: a $1.50 toll at VOT = $15/h weighs the same as six minutes of driving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChoiceParams:
    theta0: float = 1.0  # 1/min
    beta0: float = 0.15  # min
    gamma0: float = 1.0
    vot: float = 15.0  # $/h
    refresh_min: float = 5.0

    def validate(self) -> None:
        if self.theta0 <= 0 or self.gamma0 <= 0:
            raise ValueError("theta0 and gamma0 must be positive")
        if self.beta0 < 0:
            raise ValueError("beta0 must be non-negative")
        if self.vot <= 0:
            raise ValueError("VOT must be positive")


@dataclass(frozen=True)
class PathCost:
    travel_time_min: float
    distance_toll: float
    time_toll: float
    delay_toll: float
    cordon_fee: float
    generalized_min: float

    @property
    def total_toll(self) -> float:
        return self.distance_toll + self.time_toll + self.delay_toll + self.cordon_fee


def generalized_cost(path, link_times_s, link_lengths_km, cordon_mask, free_flow_s, rates, vot: float) -> PathCost:
    """Generalized cost of one path.

    ``path`` holds link indices; ``link_times_s`` are the interval's average
    link travel times. ``rates`` is a :class:`nfdtoll.tolling.Rates`-like
    object with ``alpha``, ``beta1``, ``beta2`` and ``cordon_fee`` (already
    zero when tolling is inactive).
    """
    from .tolling import toll_components

    path = list(path)
    tt = float(sum(link_times_s[a] for a in path)) / 60.0
    dist, time_, delay, fee = toll_components(path, link_times_s, link_lengths_km, cordon_mask, free_flow_s, rates)
    toll = dist + time_ + delay + fee
    return PathCost(tt, dist, time_, delay, fee, tt + toll * 60.0 / vot)


def overlap_lengths(paths, link_lengths_km) -> np.ndarray:
    """Matrix of shared physical length between every pair of paths."""
    n = len(paths)
    sets = [set(p) for p in paths]
    out = np.empty((n, n))
    for r in range(n):
        for s in range(r, n):
            out[r, s] = out[s, r] = sum(link_lengths_km[a] for a in sets[r] & sets[s])
    return out


def commonality_factors(paths, link_lengths_km, beta0: float, gamma0: float) -> np.ndarray:
    """Commonality factor of each path in one OD's choice set.

    The sum runs over every path including the path itself, so a path with no
    overlap gets ``beta0 * ln(1) = 0`` rather than ``ln(0)``.
    """
    lrs = overlap_lengths(paths, link_lengths_km)
    lr = np.diag(lrs)
    if np.any(lr <= 0):
        raise ValueError("path lengths must be positive")
    ratio = lrs / np.sqrt(np.outer(lr, lr))
    return beta0 * np.log(np.sum(ratio**gamma0, axis=1))


def commonality_factor(r: int, paths, link_lengths_km, beta0: float, gamma0: float) -> float:
    return float(commonality_factors(paths, link_lengths_km, beta0, gamma0)[r])


def choice_probabilities(costs_min, cf_min, theta0: float) -> np.ndarray:
    """C-logit choice probabilities from generalized costs and commonality factors."""
    u = -theta0 * (np.asarray(costs_min, dtype=float) + np.asarray(cf_min, dtype=float))
    if u.size == 0:
        raise ValueError("empty path set")
    e = np.exp(u - u.max())
    return e / e.sum()


def grouped_probabilities(costs_min: np.ndarray, cf_min: np.ndarray, offsets: np.ndarray, theta0: float) -> np.ndarray:
    """Choice probabilities for many OD choice sets laid out back to back."""
    u = -theta0 * (costs_min + cf_min)
    out = np.empty_like(u)
    for j in range(len(offsets) - 1):
        lo, hi = offsets[j], offsets[j + 1]
        seg = u[lo:hi]
        e = np.exp(seg - seg.max())
        out[lo:hi] = e / e.sum()
    return out


def sample_paths(probabilities, uniforms) -> np.ndarray:
    """Inverse-CDF path draws, one per uniform in [0, 1)."""
    cum = np.cumsum(probabilities)
    idx = np.searchsorted(cum, np.asarray(uniforms), side="right")
    return np.minimum(idx, len(cum) - 1)


def assign_flows(demand: int, probabilities, rng: np.random.Generator) -> np.ndarray:
    """Realized path flows for ``demand`` departing vehicles; sums to ``demand`` exactly."""
    p = np.asarray(probabilities, dtype=float)
    if demand <= 0:
        return np.zeros(len(p), dtype=int)
    picks = sample_paths(p, rng.random(int(demand)))
    return np.bincount(picks, minlength=len(p))
