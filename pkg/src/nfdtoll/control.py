"""Iterative (day-to-day) PI controllers for toll rates.

Scalar law, for iteration ``i >= 2``::

    rate(i) = rate(i-1) + P_p * (K_max(i) - K_max(i-1)) + P_i * (K_max(i) - K_cr)
    rate(1) = P_i * (K_max(1) - K_cr)

The joint distance-time controller applies the same law to the vector
``u = (alpha, beta1)`` with the gain matrix ``diag(mu) @ [[P_p, P_i], [P_p, P_i]]``
so every unsaturated iterate keeps ``alpha / beta1 == mu_alpha / mu_beta1``.
A rate computed from iterations ``i`` and ``i-1`` is applied in the plant run
of iteration ``i+1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ControlConfig:
    p_p: float = 0.1  # $/km per vpkmpl
    p_i: float = 0.05
    alpha_max: float = 5.0  # $/km
    beta_max: float = 200.0  # $/h
    delay_max: float = 10000.0  # $/h of delay
    fee_max: float = 20.0  # $
    n_max: int = 30
    eps_frac: float = 0.05
    omega1: float = 1.0
    omega2: float = 0.5
    td_interval_min: float = 20.0
    fee_gain_scale: float = 1.0
    delay_gain_scale: float = 1.0
    divergence_window: int = 5

    def validate(self) -> None:
        if self.p_p <= 0 or self.p_i <= 0:
            raise ValueError("PI gains must be positive")
        if min(self.alpha_max, self.beta_max, self.delay_max, self.fee_max) <= 0:
            raise ValueError("rate bounds must be positive")
        if self.n_max < 2:
            raise ValueError("n_max must be >= 2")
        if not 0 <= self.omega2 <= 1:
            raise ValueError("omega2 must lie in [0, 1]")
        if self.omega1 <= 0:
            raise ValueError("omega1 must be positive")


@dataclass(frozen=True)
class PiGains:
    p_p: float
    p_i: float
    upper: float = math.inf
    n_max: int = 30

    def __post_init__(self):
        if self.p_p <= 0 or self.p_i <= 0:
            raise ValueError("PI gains must be positive")
        if self.upper <= 0:
            raise ValueError("rate bound must be positive")
        if self.n_max < 2:
            raise ValueError("n_max must be >= 2")


def clamp(rate: float, upper: float) -> tuple[float, bool]:
    """Clamp to ``[0, upper]``; the flag reports upper-bound saturation."""
    if rate >= upper:
        return upper, True
    return max(rate, 0.0), False


def pi_init(k_max1: float, k_cr: float, p_i: float, upper: float = math.inf) -> tuple[float, bool]:
    return clamp(p_i * (k_max1 - k_cr), upper)


def pi_update(rate_prev: float, k_max: float, k_max_prev: float, k_cr: float, p_p: float, p_i: float, upper: float = math.inf) -> tuple[float, bool]:
    return clamp(rate_prev + p_p * (k_max - k_max_prev) + p_i * (k_max - k_cr), upper)


@dataclass(frozen=True)
class ScalePair:
    """Gain scales converting the $/km controller into other rate units.

    ``mu_beta1 = vbar / omega1`` for the in-cordon time rate. The delay rate
    uses ``mu_beta2 = dbar``, the reference run's cordon km per hour of
    cordon delay, so ``beta2 * delay`` per km matches ``alpha`` per km.
    """

    mu_alpha: float
    mu_beta1: float
    omega1: float = 1.0
    vbar: float = math.nan
    mu_beta2: float = math.nan

    @classmethod
    def from_speed(cls, omega1: float, vbar: float, dbar: float = math.nan) -> ScalePair:
        if omega1 <= 0 or vbar <= 0:
            raise ValueError("omega1 and reference speed must be positive")
        return cls(1.0, vbar / omega1, omega1, vbar, dbar)


def cordon_mean_speed(link_speed_kmh: np.ndarray, cordon_mask: np.ndarray, intervals) -> float:
    """Average over ``intervals`` of the unweighted mean cordon-link speed."""
    per_interval = link_speed_kmh[np.asarray(list(intervals), dtype=int)][:, cordon_mask].mean(axis=1)
    return float(per_interval.mean())


def cordon_delay_speed(output, cordon_mask, free_flow_s, lengths_km, intervals) -> float:
    """Cordon km driven per hour of cordon delay over ``intervals``."""
    idx = np.asarray(list(intervals), dtype=int)
    exits = output.link_exits[idx][:, cordon_mask]
    delay_h = (exits * np.maximum(output.link_time_s[idx][:, cordon_mask] - free_flow_s[cordon_mask], 0.0)).sum() / 3600.0
    km = (exits * lengths_km[cordon_mask]).sum()
    if delay_h <= 0:
        return math.inf
    return float(km / delay_h)


def resolve_scale_pair(omega1: float, reference, cordon_mask, intervals, free_flow_s=None, lengths_km=None) -> ScalePair:
    """Scale parameters from a converged cordon-toll run's cordon speeds."""
    if reference is None:
        raise ValueError("a reference cordon-toll run is required")
    idx = list(intervals)
    if not idx:
        raise ValueError("tolling period covers no measurement interval")
    dbar = math.nan
    if free_flow_s is not None and lengths_km is not None:
        dbar = cordon_delay_speed(reference, cordon_mask, np.asarray(free_flow_s), np.asarray(lengths_km), idx)
    return ScalePair.from_speed(omega1, cordon_mean_speed(reference.link_speed, cordon_mask, idx), dbar)


def jdtt_init(e_i1: float, scale: ScalePair, p_i: float) -> tuple[float, float]:
    return scale.mu_alpha * p_i * e_i1, scale.mu_beta1 * p_i * e_i1


def jdtt_update(u_prev, e_p: float, e_i: float, scale: ScalePair, p_p: float, p_i: float) -> tuple[float, float]:
    step = p_p * e_p + p_i * e_i
    return u_prev[0] + scale.mu_alpha * step, u_prev[1] + scale.mu_beta1 * step


@dataclass
class PiController:
    """PI controller over one or more coupled rates.

    ``mu`` scales the nominal gains per rate (a single ``(1.0,)`` for scalar
    control). When a rate reaches its upper bound it is frozen there for the
    remaining iterations and the other rates keep adapting.
    """

    k_cr: float
    p_p: float
    p_i: float
    mu: tuple[float, ...] = (1.0,)
    upper: tuple[float, ...] = (math.inf,)
    freeze_on_saturation: bool = True
    rates: list[tuple[float, ...]] = field(default_factory=list)
    k_max: list[float] = field(default_factory=list)
    e_p: list[float] = field(default_factory=list)
    e_i: list[float] = field(default_factory=list)
    frozen: list[bool] = field(default_factory=list)

    def __post_init__(self):
        self.mu = tuple(float(m) for m in self.mu)
        if len(self.upper) == 1 and len(self.mu) > 1:
            self.upper = self.upper * len(self.mu)
        self.frozen = [False] * len(self.mu)

    @property
    def iteration(self) -> int:
        return len(self.k_max)

    @property
    def rate(self) -> tuple[float, ...]:
        return self.rates[-1]

    def _apply(self, raw) -> tuple[float, ...]:
        out = []
        for j, (r, ub) in enumerate(zip(raw, self.upper)):
            if self.frozen[j]:
                out.append(ub)
                continue
            v, sat = clamp(r, ub)
            if sat and self.freeze_on_saturation:
                self.frozen[j] = True
            out.append(v)
        return tuple(out)

    def start(self, k_max1: float) -> tuple[float, ...]:
        if self.k_max:
            raise RuntimeError("controller already started")
        e_i = k_max1 - self.k_cr
        self.k_max.append(k_max1)
        self.e_p.append(0.0)
        self.e_i.append(e_i)
        self.rates.append(self._apply([m * self.p_i * e_i for m in self.mu]))
        return self.rate

    def update(self, k_max: float) -> tuple[float, ...]:
        if not self.k_max:
            raise RuntimeError("call start() first")
        e_p = k_max - self.k_max[-1]
        e_i = k_max - self.k_cr
        step = self.p_p * e_p + self.p_i * e_i
        self.k_max.append(k_max)
        self.e_p.append(e_p)
        self.e_i.append(e_i)
        self.rates.append(self._apply([u + m * step for u, m in zip(self.rate, self.mu)]))
        return self.rate

    @property
    def saturated(self) -> bool:
        return any(self.frozen)


def tolling_intervals(period: tuple[float, float], interval_min: float | None) -> list[tuple[float, float]]:
    """Split a tolling period into consecutive intervals; the last may be shorter."""
    start, end = period
    if interval_min is None or interval_min >= end - start:
        return [(start, end)]
    out = []
    lo = start
    while lo < end - 1e-9:
        out.append((lo, min(lo + interval_min, end)))
        lo += interval_min
    return out


def controller_bank(period, interval_min, make) -> list[tuple[tuple[float, float], PiController]]:
    """One independent controller per tolling interval; ``make()`` builds each."""
    return [(bounds, make()) for bounds in tolling_intervals(period, interval_min)]
