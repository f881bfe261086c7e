"""Toll schedules and path/trip toll computation.

Supported pricing models and the rates each one uses:

    none      -
    cordon    flat fee per trip, charged at the first cordon entry
    distance  alpha ($/km inside the cordon)
    time      beta1 ($/h spent inside the cordon)
    delay     beta2 ($/h of delay inside the cordon)
    jdtt      alpha + beta1
    jddt      alpha + beta2

All distance/time/delay components are link-additive, so a path charge is the
sum of its cordon links' charges.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

MODELS = ("none", "cordon", "distance", "time", "delay", "jdtt", "jddt")

_ACTIVE = {
    "none": (),
    "cordon": ("cordon_fee",),
    "distance": ("alpha",),
    "time": ("beta1",),
    "delay": ("beta2",),
    "jdtt": ("alpha", "beta1"),
    "jddt": ("alpha", "beta2"),
}


class Rates(NamedTuple):
    alpha: float = 0.0  # $/km
    beta1: float = 0.0  # $/h
    beta2: float = 0.0  # $/h
    cordon_fee: float = 0.0  # $

    def any(self) -> bool:
        return bool(self.alpha or self.beta1 or self.beta2 or self.cordon_fee)


NO_TOLL = Rates()


def _vec(x) -> tuple[float, ...]:
    if isinstance(x, (list, tuple, np.ndarray)):
        return tuple(float(v) for v in x)
    return (float(x),)


@dataclass(frozen=True)
class TollSchedule:
    """Toll rates over a tolling period ``[period_start, period_end)`` (clock minutes).

    Each rate is a tuple with one entry per tolling interval. A static schedule
    has a single interval spanning the period; a time-dependent one splits the
    period into ``interval_min`` pieces (the last may be shorter).
    """

    model: str = "none"
    alpha: tuple[float, ...] = (0.0,)
    beta1: tuple[float, ...] = (0.0,)
    beta2: tuple[float, ...] = (0.0,)
    cordon_fee: tuple[float, ...] = (0.0,)
    period_start: float = 0.0
    period_end: float = 24 * 60.0
    interval_min: float | None = None

    def __post_init__(self):
        for name in ("alpha", "beta1", "beta2", "cordon_fee"):
            object.__setattr__(self, name, _vec(getattr(self, name)))

    @classmethod
    def static(cls, model: str, period=(0.0, 24 * 60.0), **rates) -> TollSchedule:
        return cls(model=model, period_start=period[0], period_end=period[1], **rates)

    @property
    def n_intervals(self) -> int:
        if self.interval_min is None:
            return 1
        return max(1, math.ceil((self.period_end - self.period_start) / self.interval_min - 1e-9))

    def interval_bounds(self) -> list[tuple[float, float]]:
        if self.interval_min is None:
            return [(self.period_start, self.period_end)]
        out = []
        for m in range(self.n_intervals):
            lo = self.period_start + m * self.interval_min
            out.append((lo, min(lo + self.interval_min, self.period_end)))
        return out

    def interval_of(self, clock_min: float) -> int | None:
        """Tolling interval containing ``clock_min``, or None outside the period."""
        if not (self.period_start <= clock_min < self.period_end):
            return None
        if self.interval_min is None:
            return 0
        return min(int((clock_min - self.period_start) // self.interval_min), self.n_intervals - 1)

    def rates_at(self, clock_min: float) -> Rates:
        m = self.interval_of(clock_min)
        if m is None or self.model == "none":
            return NO_TOLL
        active = _ACTIVE[self.model]
        vals = {}
        for name in ("alpha", "beta1", "beta2", "cordon_fee"):
            vec = getattr(self, name)
            vals[name] = vec[min(m, len(vec) - 1)] if name in active else 0.0
        return Rates(**vals)

    def breakpoints(self) -> list[float]:
        """Clock minutes at which the applicable rates may change."""
        pts = [lo for lo, _ in self.interval_bounds()]
        return sorted(set(pts + [self.period_end]))

    def validate(self, alpha_max: float = math.inf, beta_max: float = math.inf, fee_max: float = math.inf) -> None:
        if self.model not in MODELS:
            raise ValueError(f"unknown toll model {self.model!r}")
        if not self.period_start < self.period_end:
            raise ValueError("tolling period must be non-empty")
        for name, bound in (("alpha", alpha_max), ("beta1", beta_max), ("beta2", beta_max), ("cordon_fee", fee_max)):
            vec = getattr(self, name)
            if len(vec) not in (1, self.n_intervals):
                raise ValueError(f"{name} needs 1 or {self.n_intervals} entries")
            for v in vec:
                if not 0.0 <= v <= bound:
                    raise ValueError(f"{name} rate {v} outside [0, {bound}]")

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "alpha": list(self.alpha),
            "beta1": list(self.beta1),
            "beta2": list(self.beta2),
            "cordon_fee": list(self.cordon_fee),
            "period_start": self.period_start,
            "period_end": self.period_end,
            "interval_min": self.interval_min,
        }

    @classmethod
    def from_dict(cls, d: dict) -> TollSchedule:
        d = dict(d)
        for key in ("period_start", "period_end"):
            if isinstance(d.get(key), str):
                hh, mm = d[key].split(":")
                d[key] = 60.0 * int(hh) + float(mm)
        return cls(**d)


class RateLookup:
    """Fast clock-to-rates lookup for the simulator's inner loop."""

    def __init__(self, schedule: TollSchedule | None):
        self.schedule = schedule
        if schedule is None or schedule.model == "none":
            self._points = []
            self._rates = [NO_TOLL]
            return
        pts = schedule.breakpoints()
        self._points = pts
        self._rates = [NO_TOLL] + [schedule.rates_at(p) for p in pts[:-1]] + [NO_TOLL]

    def __call__(self, clock_min: float) -> Rates:
        return self._rates[bisect.bisect_right(self._points, clock_min)]

    @property
    def active(self) -> bool:
        return bool(self._points)

    def table(self, clock_min) -> np.ndarray:
        """Vectorized lookup: array of shape ``clock_min.shape + (4,)`` in :class:`Rates` order."""
        seg = np.searchsorted(np.asarray(self._points, dtype=float), clock_min, side="right")
        return np.asarray(self._rates, dtype=float)[seg]


# -- path components ---------------------------------------------------------


def path_cordon_distance(path, link_lengths_km, cordon_mask) -> float:
    """Distance (km) a path covers on cordon links."""
    return float(sum(link_lengths_km[a] for a in path if cordon_mask[a]))


def path_cordon_time(path, link_times_s, cordon_mask) -> float:
    """Time (h) a path spends on cordon links at the given link travel times."""
    return float(sum(link_times_s[a] for a in path if cordon_mask[a])) / 3600.0


def path_cordon_delay(path, link_times_s, free_flow_s, cordon_mask) -> float:
    """Delay (h) over free-flow on a path's cordon links."""
    return float(sum(max(link_times_s[a] - free_flow_s[a], 0.0) for a in path if cordon_mask[a])) / 3600.0


def toll_components(path, link_times_s, link_lengths_km, cordon_mask, free_flow_s, rates: Rates):
    """Distance, time, delay and cordon-fee charges ($) for one path."""
    path = list(path)
    dist = rates.alpha * path_cordon_distance(path, link_lengths_km, cordon_mask) if rates.alpha else 0.0
    time_ = rates.beta1 * path_cordon_time(path, link_times_s, cordon_mask) if rates.beta1 else 0.0
    delay = rates.beta2 * path_cordon_delay(path, link_times_s, free_flow_s, cordon_mask) if rates.beta2 else 0.0
    fee = rates.cordon_fee if rates.cordon_fee and any(cordon_mask[a] for a in path) else 0.0
    return dist, time_, delay, fee


def link_charge(rates: Rates, length_km: float, travel_s: float, free_flow_s: float) -> float:
    """Distance/time/delay charge ($) for one completed cordon-link traversal."""
    charge = 0.0
    if rates.alpha:
        charge += rates.alpha * length_km
    if rates.beta1:
        charge += rates.beta1 * travel_s / 3600.0
    if rates.beta2:
        charge += rates.beta2 * max(travel_s - free_flow_s, 0.0) / 3600.0
    return charge


@dataclass(frozen=True)
class Traversal:
    link: int  # link index
    enter_s: float
    exit_s: float


def trip_toll_settlement(traversals, schedule: TollSchedule, link_lengths_km, free_flow_s, cordon_mask, start_clock_min: float = 0.0) -> float:
    """Dollars owed for a trip given its link traversals (simulation seconds).

    Distance/time/delay components are charged per cordon link at the rates in
    force when the traversal completes. The cordon fee is charged once, at the
    first cordon entry that falls inside the tolling period.
    """
    lookup = RateLookup(schedule)
    total = 0.0
    fee_paid = False
    prev_inside = False
    for tr in traversals:
        inside = bool(cordon_mask[tr.link])
        if inside and not prev_inside and not fee_paid:
            fee = lookup(start_clock_min + tr.enter_s / 60.0).cordon_fee
            if fee:
                total += fee
                fee_paid = True
        prev_inside = inside
        if inside and tr.exit_s is not None:
            rates = lookup(start_clock_min + tr.exit_s / 60.0)
            total += link_charge(rates, link_lengths_km[tr.link], tr.exit_s - tr.enter_s, free_flow_s[tr.link])
    return total
