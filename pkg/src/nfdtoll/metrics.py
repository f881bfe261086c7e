"""Network fundamental diagram analytics.

Network density and flow are lane-km weighted averages of link values,
``K = sum(k_i l_i n_i) / sum(l_i n_i)``, and the spatial spread of density is
the weighted standard deviation of link densities around ``K``. The deviation
from spread subtracts a fitted lower envelope ``gamma(K) = a K^3 + b K^2 + c K``
from the observed spread.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .scenario import Scenario


class NoPricingNeeded(Exception):
    """The no-toll NFD never exceeds the critical density."""


def _weights(lane_km, mask=None) -> np.ndarray:
    w = np.asarray(lane_km, dtype=float)
    if mask is not None:
        w = w[np.asarray(mask, dtype=bool)]
    if w.size == 0 or w.sum() <= 0:
        raise ValueError("empty subnetwork")
    return w


def _select(values, mask):
    v = np.asarray(values, dtype=float)
    if mask is None:
        return v
    return v[..., np.asarray(mask, dtype=bool)]


def network_density(link_density, lane_km, mask=None):
    """Lane-km weighted mean density; accepts one interval or an (intervals, links) array."""
    w = _weights(lane_km, mask)
    return _select(link_density, mask) @ w / w.sum()


def network_flow(link_flow, lane_km, mask=None):
    w = _weights(lane_km, mask)
    return _select(link_flow, mask) @ w / w.sum()


def spread_of_density(link_density, lane_km, mask=None):
    w = _weights(lane_km, mask)
    k = _select(link_density, mask)
    K = k @ w / w.sum()
    dev = k - np.expand_dims(K, -1)
    return np.sqrt((dev**2) @ w / w.sum())


@dataclass(frozen=True)
class NfdSeries:
    """Per-interval NFD points of one subnetwork."""

    clock_min: np.ndarray  # interval start, clock minutes
    K: np.ndarray
    Q: np.ndarray
    gamma: np.ndarray
    speed: np.ndarray  # unweighted mean link speed, km/h
    interval_min: float = 5.0

    def __len__(self) -> int:
        return len(self.K)

    def window(self, start: float, end: float) -> np.ndarray:
        """Indices of intervals starting inside ``[start, end)``."""
        return np.flatnonzero((self.clock_min >= start - 1e-9) & (self.clock_min < end - 1e-9))


def nfd_series(output, scenario: Scenario, subnet: str = "cordon") -> NfdSeries:
    net = scenario.network
    lane_km = np.array([link.lane_km for link in net.links])
    cmask = scenario.cordon.mask(net)
    mask = {"cordon": cmask, "periphery": ~cmask, "network": np.ones_like(cmask)}[subnet]
    n = output.n_intervals
    return NfdSeries(
        clock_min=output.start_clock_min + output.interval_min * np.arange(n),
        K=network_density(output.link_density, lane_km, mask),
        Q=network_flow(output.link_flow, lane_km, mask),
        gamma=spread_of_density(output.link_density, lane_km, mask),
        speed=output.link_speed[:, mask].mean(axis=1),
        interval_min=output.interval_min,
    )


def average_series(series: list[NfdSeries]) -> NfdSeries:
    """Interval-wise mean of several runs of the same scenario."""
    first = series[0]
    return NfdSeries(
        clock_min=first.clock_min,
        K=np.mean([s.K for s in series], axis=0),
        Q=np.mean([s.Q for s in series], axis=0),
        gamma=np.mean([s.gamma for s in series], axis=0),
        speed=np.mean([s.speed for s in series], axis=0),
        interval_min=first.interval_min,
    )


# -- lower envelope ---------------------------------------------------------


@dataclass(frozen=True)
class EnvelopeModel:
    a: float
    b: float
    c: float

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        return ((self.a * k + self.b) * k + self.c) * k


# Reference envelope coefficients, densities in veh/km/lane.
REFERENCE_ENVELOPE = EnvelopeModel(-0.0003154, 0.01499, 1.127)


def envelope_minima(K, gamma, bin_width: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """The (K, gamma) point with the smallest gamma in each non-empty density bin."""
    K = np.asarray(K, dtype=float).ravel()
    gamma = np.asarray(gamma, dtype=float).ravel()
    bins = np.floor(K / bin_width).astype(int)
    ks, gs = [], []
    for b in np.unique(bins):
        sel = np.flatnonzero(bins == b)
        i = sel[np.argmin(gamma[sel])]
        ks.append(K[i])
        gs.append(gamma[i])
    return np.array(ks), np.array(gs)


def fit_lower_envelope(K, gamma, bin_width: float = 1.0, min_points: int = 50) -> EnvelopeModel:
    """Least-squares zero-intercept cubic through the per-bin spread minima."""
    K = np.asarray(K, dtype=float).ravel()
    if K.size < min_points:
        raise ValueError(f"need at least {min_points} points, got {K.size}")
    kx, gy = envelope_minima(K, gamma, bin_width)
    if len(kx) < 4:
        raise ValueError("fewer than 4 non-empty density bins; cubic is underdetermined")
    A = np.column_stack([kx**3, kx**2, kx])
    (a, b, c), *_ = np.linalg.lstsq(A, gy, rcond=None)
    return EnvelopeModel(float(a), float(b), float(c))


def fit_envelope_from_series(series: list[NfdSeries], **kw) -> EnvelopeModel:
    return fit_lower_envelope(np.concatenate([s.K for s in series]), np.concatenate([s.gamma for s in series]), **kw)


def deviation_from_spread(gamma, K, envelope: EnvelopeModel):
    return np.asarray(gamma, dtype=float) - envelope(K)


# -- critical state ---------------------------------------------------------


@dataclass(frozen=True)
class CriticalState:
    k_cr: float
    period: tuple[float, float]  # clock minutes, [start, end)
    k_max: float

    @property
    def duration_min(self) -> float:
        return self.period[1] - self.period[0]


def critical_density(K, Q, bin_width: float = 2.0) -> float:
    """Midpoint of the density bin with the highest mean flow."""
    K = np.asarray(K, dtype=float)
    Q = np.asarray(Q, dtype=float)
    bins = np.floor(K / bin_width).astype(int)
    best, best_q = None, -np.inf
    for b in np.unique(bins):
        q = Q[bins == b].mean()
        if q > best_q:
            best, best_q = b, q
    return (best + 0.5) * bin_width


def tolling_period(series: NfdSeries, k_cr: float) -> tuple[float, float]:
    over = np.flatnonzero(series.K > k_cr)
    if over.size == 0:
        raise NoPricingNeeded(f"density never exceeds K_cr = {k_cr:g}")
    return float(series.clock_min[over[0]]), float(series.clock_min[over[-1]] + series.interval_min)


def k_max_in(series: NfdSeries, period: tuple[float, float]) -> float:
    idx = series.window(*period)
    return float(series.K[idx].max()) if idx.size else 0.0


def identify_critical_state(series: NfdSeries, bin_width: float = 2.0, k_cr: float | None = None) -> CriticalState:
    """Critical density, tolling period and K_max from a no-toll NFD series."""
    if len(series) == 0:
        raise ValueError("empty series")
    if k_cr is None:
        kc = critical_density(series.K, series.Q, bin_width)
        if series.K.max() < kc + bin_width / 2:
            # Peak flow sits in the densest bin observed: no congested branch.
            raise NoPricingNeeded(f"no interval beyond the peak-flow density bin (K_cr = {kc:g})")
    else:
        kc = float(k_cr)
    period = tolling_period(series, kc)
    return CriticalState(float(kc), period, k_max_in(series, period))


# -- hysteresis and summaries -------------------------------------------------


def hysteresis_loop_area(K, Q) -> float:
    """Absolute shoelace area of the closed, time-ordered (K, Q) polygon."""
    x = np.asarray(K, dtype=float)
    y = np.asarray(Q, dtype=float)
    if x.size < 3:
        return 0.0
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def max_deviation(series: NfdSeries, envelope: EnvelopeModel, period: tuple[float, float]) -> float:
    idx = series.window(*period)
    return float(deviation_from_spread(series.gamma[idx], series.K[idx], envelope).max())


def _block(n, hours, km):
    return {
        "vehicles": int(n),
        "travel_time_h": float(hours),
        "distance_km": float(km),
        "avg_distance_km": float(km / n) if n else 0.0,
        "avg_travel_time_min": float(60.0 * hours / n) if n else 0.0,
        "avg_speed_kmh": float(km / hours) if hours > 0 else 0.0,
    }


def performance_summary(output, scenario: Scenario) -> dict:
    """Network-wide and cordon totals and averages over completed trips."""
    t = output.trips
    inside = t["cordon_km"] > 0
    cmask = scenario.cordon.mask(scenario.network)
    return {
        "network": _block(len(t["travel_s"]), t["travel_s"].sum() / 3600.0, t["distance_km"].sum()),
        "cordon": _block(int(inside.sum()), t["cordon_s"][inside].sum() / 3600.0, t["cordon_km"][inside].sum()),
        "cordon_entries": output.cordon_entries.tolist(),
        "cordon_avg_queue": output.link_queue[:, cmask].mean(axis=1).tolist(),
        "tolls_paid": float(t["toll"].sum()),
    }


# -- CSV emitters -------------------------------------------------------------

NFD_COLUMNS = ("interval", "clock", "subnet", "K", "Q", "gamma", "sigma", "speed")


def nfd_rows(series: NfdSeries, subnet: str, envelope: EnvelopeModel | None = None):
    sigma = deviation_from_spread(series.gamma, series.K, envelope) if envelope is not None else [math.nan] * len(series)
    for h in range(len(series)):
        yield (h, float(series.clock_min[h]), subnet, float(series.K[h]), float(series.Q[h]), float(series.gamma[h]), float(sigma[h]), float(series.speed[h]))


def nfd_csv(by_subnet: dict[str, NfdSeries], envelope: EnvelopeModel | None = None) -> str:
    """Plot-ready NFD table; ``sigma`` is NaN without an envelope."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(NFD_COLUMNS)
    for subnet, series in by_subnet.items():
        for row in nfd_rows(series, subnet, envelope):
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()
