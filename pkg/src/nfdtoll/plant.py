"""Vehicle-based mesoscopic simulator (spatial-queue links, queue-server nodes).

Each link is a free-flow pipe followed by an exit queue:

* a vehicle entering link ``a`` at step ``s`` reaches the exit queue at
  ``s + ceil(t_ff / dt)``;
* the exit queue is served FIFO at the link capacity through a fractional
  allowance that accrues ``capacity * lanes * dt / 3600`` per step and is
  capped at ``max(1, that rate)``;
* a vehicle moves on only if the downstream link holds fewer than its storage
  ``ceil(jam_density * length * lanes)`` vehicles, so queues spill back;
* incoming links competing at a node are served one vehicle per pass in
  round-robin order by link id, the starting link rotating after each step.

Departures are released at uniform random instants within their 5-minute
interval and choose a path pre-trip from C-logit probabilities refreshed every
interval from the previous interval's link travel times. All random numbers
are drawn up front from the seed, so a run is a pure function of
(scenario, tolls, seed).
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .routing import commonality_factors, grouped_probabilities
from .scenario import Scenario
from .tolling import NO_TOLL, RateLookup, TollSchedule, link_charge


@dataclass
class SimOutput:
    interval_min: float
    start_clock_min: float
    link_ids: np.ndarray
    link_density: np.ndarray  # (intervals, links) veh/km/lane
    link_flow: np.ndarray  # veh/h/lane
    link_time_s: np.ndarray
    link_speed: np.ndarray  # km/h
    link_queue: np.ndarray  # vehicles waiting at the exit at interval end
    link_exits: np.ndarray
    cordon_entries: np.ndarray
    trips: dict[str, np.ndarray]
    conservation: np.ndarray  # (intervals, 3): departed, in network, completed
    seed: int = 0

    @property
    def n_intervals(self) -> int:
        return self.link_density.shape[0]

    def interval_start(self, h: int) -> float:
        """Clock minute at which 0-based interval ``h`` begins."""
        return self.start_clock_min + h * self.interval_min

    @property
    def departed(self) -> int:
        return int(self.conservation[-1, 0])

    @property
    def in_network(self) -> int:
        return int(self.conservation[-1, 1])

    @property
    def completed(self) -> int:
        return int(self.conservation[-1, 2])

    def conserved(self) -> bool:
        c = self.conservation
        return bool(np.all(c[:, 0] == c[:, 1] + c[:, 2]))

    def _arrays(self) -> list[tuple[str, np.ndarray]]:
        keys = ("link_density", "link_flow", "link_time_s", "link_speed", "link_queue", "link_exits", "cordon_entries", "conservation")
        out = [(k, getattr(self, k)) for k in keys]
        return out + [(f"trip_{k}", self.trips[k]) for k in sorted(self.trips)]

    def to_bytes(self) -> bytes:
        """Deterministic serialization: ``.npy`` blocks in a fixed order."""
        buf = io.BytesIO()
        for name, arr in self._arrays():
            buf.write(name.encode() + b"\n")
            np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


TRIP_FIELDS = ("od", "path", "depart_s", "arrive_s", "travel_s", "distance_km", "cordon_km", "cordon_s", "cordon_delay_s", "toll")


class Plant:
    """Mutable simulation state for one run; see :func:`run_horizon`."""

    def __init__(self, scenario: Scenario, schedule: TollSchedule | None = None, seed: int = 0, paths=None):
        self.scenario = scenario
        net = scenario.network
        self.dt = scenario.sim.dt_s
        self.steps_per_interval = int(round(scenario.sim.measure_min * 60.0 / self.dt))
        self.n_intervals = scenario.sim.n_intervals
        self.start_clock = scenario.demand.start_clock_min
        self.seed = seed
        self.schedule = schedule
        self.rates = RateLookup(schedule)

        L = len(net.links)
        self.n_links = L
        self.link_ids = np.array([link.id for link in net.links])
        self.length = [link.length_km for link in net.links]
        self.lanes = [link.lanes for link in net.links]
        self.lane_km = [link.lane_km for link in net.links]
        self.ff_s = [link.free_flow_time_s for link in net.links]
        self.ff_steps = [max(1, math.ceil(link.free_flow_time_s / self.dt - 1e-9)) for link in net.links]
        self.storage = [link.storage for link in net.links]
        self.rate = [link.capacity_vphpl * link.lanes * self.dt / 3600.0 for link in net.links]
        self.allow_cap = [max(1.0, r) for r in self.rate]
        idx = net.link_index
        self.target = [link.target for link in net.links]
        self.in_links = {n: [idx[a] for a in ins] for n, ins in net.in_links.items()}
        self.cordon = [link.id in scenario.cordon.cordon_links for link in net.links]
        self.cordon_mask = np.array(self.cordon)

        self.queue: list[deque] = [deque() for _ in range(L)]
        self.allowance = [cap for cap in self.allow_cap]
        self.allow_step = [0] * L
        self.waiting: set[int] = set()
        self.heap: list[tuple[int, int]] = []
        self.rr = {n: 0 for n in net.nodes}
        self.origin_queue: dict[int, deque] = {}

        # per-interval accumulators
        self.occ_area = [0.0] * L
        self.occ_last = [0] * L
        self.exits = [0] * L
        self.exit_time_sum = [0.0] * L
        self.entries = 0

        # paths
        self.paths = paths if paths is not None else scenario.paths
        self.path_links: list[tuple[int, ...]] = [tuple(idx[a] for a in p) for p in self.paths.flat]

        # vehicles
        self.v_path: list[int] = []
        self.v_pos: list[int] = []
        self.v_ready: list[int] = []
        self.v_enter: list[int] = []
        self.v_depart: list[int] = []
        self.v_od: list[int] = []
        self.v_dist: list[float] = []
        self.v_cdist: list[float] = []
        self.v_ctime: list[float] = []
        self.v_cdelay: list[float] = []
        self.v_toll: list[float] = []
        self.v_fee_paid: list[bool] = []
        self.trips: list[tuple] = []

        self.departed = 0
        self.completed = 0

    # -- vehicles ----------------------------------------------------------

    def new_vehicle(self, path: int, depart_step: int, od: int = -1) -> int:
        v = len(self.v_path)
        self.v_path.append(path)
        self.v_pos.append(0)
        self.v_ready.append(0)
        self.v_enter.append(depart_step)
        self.v_depart.append(depart_step)
        self.v_od.append(od)
        self.v_dist.append(0.0)
        self.v_cdist.append(0.0)
        self.v_ctime.append(0.0)
        self.v_cdelay.append(0.0)
        self.v_toll.append(0.0)
        self.v_fee_paid.append(False)
        return v

    def add_path(self, link_ids) -> int:
        idx = self.scenario.network.link_index
        self.path_links.append(tuple(idx[a] for a in link_ids))
        return len(self.path_links) - 1

    def depart(self, v: int, s: int) -> None:
        """Put vehicle ``v`` in the origin queue of its first link."""
        first = self.path_links[self.v_path[v]][0]
        self.origin_queue.setdefault(first, deque()).append(v)
        self.departed += 1

    def _enter(self, v: int, a: int, s: int, from_cordon: bool) -> None:
        q = self.queue[a]
        n = len(q)
        self.occ_area[a] += n * (s - self.occ_last[a])
        self.occ_last[a] = s
        q.append(v)
        self.v_enter[v] = s
        ready = s + self.ff_steps[a]
        self.v_ready[v] = ready
        if n == 0:
            heapq.heappush(self.heap, (ready, a))
        if self.cordon[a] and not from_cordon:
            self.entries += 1
            if not self.v_fee_paid[v]:
                fee = self.rates(self.start_clock + s * self.dt / 60.0).cordon_fee
                if fee:
                    self.v_toll[v] += fee
                    self.v_fee_paid[v] = True

    def place(self, v: int, pos: int, s: int) -> None:
        """Put ``v`` directly on the ``pos``-th link of its path at step ``s`` (for tests)."""
        self.v_pos[v] = pos
        self.departed += 1
        path = self.path_links[self.v_path[v]]
        prev_c = pos > 0 and self.cordon[path[pos - 1]]
        self._enter(v, path[pos], s, prev_c)

    # -- dynamics ----------------------------------------------------------

    def _release_ready(self, s: int) -> None:
        heap = self.heap
        while heap and heap[0][0] <= s:
            _, a = heapq.heappop(heap)
            q = self.queue[a]
            if q and self.v_ready[q[0]] <= s:
                self.waiting.add(a)

    def transfer(self, s: int) -> int:
        """Serve exit queues at every node with a ready vehicle; returns moves."""
        self._release_ready(s)
        if not self.waiting:
            return 0
        queue = self.queue
        v_ready = self.v_ready
        v_path = self.v_path
        v_pos = self.v_pos
        path_links = self.path_links
        storage = self.storage
        allowance = self.allowance
        allow_step = self.allow_step
        rate = self.rate
        allow_cap = self.allow_cap
        waiting = self.waiting
        moves = 0
        for node in sorted({self.target[a] for a in waiting}):
            ins = self.in_links[node]
            n = len(ins)
            start = self.rr[node]
            first = -1
            moved = True
            while moved:
                moved = False
                for k in range(n):
                    j = (start + k) % n
                    a = ins[j]
                    if a not in waiting:
                        continue
                    q = queue[a]
                    al = allowance[a]
                    if allow_step[a] != s:
                        al = min(al + rate[a] * (s - allow_step[a]), allow_cap[a])
                        allowance[a] = al
                        allow_step[a] = s
                    if al < 1.0:
                        continue
                    v = q[0]
                    path = path_links[v_path[v]]
                    pos = v_pos[v] + 1
                    nxt = path[pos] if pos < len(path) else -1
                    if nxt >= 0 and len(queue[nxt]) >= storage[nxt]:
                        continue
                    self._exit(v, a, s)
                    allowance[a] = al - 1.0
                    if nxt >= 0:
                        v_pos[v] = pos
                        self._enter(v, nxt, s, self.cordon[a])
                    else:
                        self._complete(v, s)
                    if q:
                        if v_ready[q[0]] > s:
                            waiting.discard(a)
                            heapq.heappush(self.heap, (v_ready[q[0]], a))
                    else:
                        waiting.discard(a)
                    if first < 0:
                        first = j
                    moved = True
                    moves += 1
            if first >= 0:
                self.rr[node] = (first + 1) % n
        return moves

    def _exit(self, v: int, a: int, s: int) -> None:
        q = self.queue[a]
        self.occ_area[a] += len(q) * (s - self.occ_last[a])
        self.occ_last[a] = s
        q.popleft()
        travel = (s - self.v_enter[v]) * self.dt
        self.exits[a] += 1
        self.exit_time_sum[a] += travel
        self.v_dist[v] += self.length[a]
        if self.cordon[a]:
            self.v_cdist[v] += self.length[a]
            self.v_ctime[v] += travel
            self.v_cdelay[v] += max(travel - self.ff_s[a], 0.0)
            rates = self.rates(self.start_clock + s * self.dt / 60.0)
            if rates is not NO_TOLL:
                self.v_toll[v] += link_charge(rates, self.length[a], travel, self.ff_s[a])

    def _complete(self, v: int, s: int) -> None:
        self.completed += 1
        dep = self.v_depart[v] * self.dt
        arr = s * self.dt
        self.trips.append(
            (self.v_od[v], self.v_path[v], dep, arr, arr - dep, self.v_dist[v], self.v_cdist[v], self.v_ctime[v], self.v_cdelay[v], self.v_toll[v])
        )

    def inject(self, s: int) -> None:
        """Move departed vehicles from origin queues onto their first link while storage allows."""
        if not self.origin_queue:
            return
        done = []
        for a in sorted(self.origin_queue):
            oq = self.origin_queue[a]
            room = self.storage[a] - len(self.queue[a])
            while oq and room > 0:
                self._enter(oq.popleft(), a, s, False)
                room -= 1
            if not oq:
                done.append(a)
        for a in done:
            del self.origin_queue[a]

    def in_network_count(self) -> int:
        return sum(len(q) for q in self.queue) + sum(len(q) for q in self.origin_queue.values())

    def measure_interval(self, s_end: int) -> dict[str, np.ndarray]:
        """Close the measurement interval ending at step ``s_end`` and reset accumulators."""
        L = self.n_links
        span = self.steps_per_interval
        hours = span * self.dt / 3600.0
        dens = np.empty(L)
        flow = np.empty(L)
        ttime = np.empty(L)
        queue_len = np.empty(L)
        exits = np.array(self.exits)
        for a in range(L):
            q = self.queue[a]
            area = self.occ_area[a] + len(q) * (s_end - self.occ_last[a])
            dens[a] = area / span / self.lane_km[a]
            flow[a] = self.exits[a] / (self.lanes[a] * hours)
            if self.exits[a]:
                ttime[a] = self.exit_time_sum[a] / self.exits[a]
            elif q:
                # Nobody got out: report the head vehicle's time so far, so a
                # jammed link does not look free-flowing to route choice.
                ttime[a] = max(self.ff_s[a], (s_end - self.v_enter[q[0]]) * self.dt)
            else:
                ttime[a] = self.ff_s[a]
            waiting = 0
            for v in q:
                if self.v_ready[v] > s_end:
                    break
                waiting += 1
            queue_len[a] = waiting
        self.occ_area = [0.0] * L
        self.occ_last = [s_end] * L
        self.exits = [0] * L
        self.exit_time_sum = [0.0] * L
        entries, self.entries = self.entries, 0
        return {
            "density": dens,
            "flow": flow,
            "time": ttime,
            "speed": np.array(self.length) * 3600.0 / ttime,
            "queue": queue_len,
            "exits": exits,
            "entries": entries,
        }


def node_transfer_step(plant: Plant, s: int) -> int:
    """Advance node service by one step; returns the number of vehicles moved."""
    return plant.transfer(s)


def measure_interval(plant: Plant, s_end: int) -> dict[str, np.ndarray]:
    return plant.measure_interval(s_end)


@dataclass
class RouteChooser:
    """Interval-by-interval C-logit probabilities for every path of a scenario."""

    scenario: Scenario
    schedule: TollSchedule | None
    inc: np.ndarray = field(init=False)

    def __post_init__(self):
        s = self.scenario
        net = s.network
        ps = s.paths
        self.offsets = ps.offsets
        self.inc = ps.incidence(net)
        mask = s.cordon.mask(net)
        lengths = np.array([link.length_km for link in net.links])
        self.ff = np.array([link.free_flow_time_s for link in net.links])
        idx = net.link_index
        cf = np.zeros(len(ps.flat))
        for j, group in enumerate(ps.paths):
            lo = self.offsets[j]
            cf[lo : lo + len(group)] = commonality_factors([[idx[a] for a in p] for p in group], lengths, s.choice.beta0, s.choice.gamma0)
        self.cf = cf
        self.lookup = RateLookup(self.schedule)
        # Padded per-path link sequences for time-projected tolls.
        flat = [[idx[a] for a in p] for p in ps.flat]
        width = max(len(p) for p in flat)
        self.seq = np.full((len(flat), width), -1, dtype=int)
        for r, p in enumerate(flat):
            self.seq[r, : len(p)] = p
        valid = self.seq >= 0
        safe = np.maximum(self.seq, 0)
        self.seq_cordon = valid & mask[safe]
        self.seq_len = np.where(valid, lengths[safe], 0.0)
        self.seq_ff = np.where(valid, self.ff[safe], 0.0)
        prev = np.zeros_like(self.seq_cordon)
        prev[:, 1:] = self.seq_cordon[:, :-1]
        self.seq_entry = self.seq_cordon & ~prev

    def costs(self, link_times_s: np.ndarray, clock_min: float) -> np.ndarray:
        """Generalized path costs (min) for departures at ``clock_min``.

        Each cordon link is priced at the rates in force when the vehicle is
        expected to leave it, projecting ``link_times_s`` forward from the
        departure; the flat fee uses the expected first cordon entry that falls
        inside the tolling period. This mirrors how tolls are settled in the plant.
        """
        cost = self.inc @ link_times_s / 60.0
        if not self.lookup.active:
            return cost
        seq = self.seq
        valid = seq >= 0
        t = np.where(valid, link_times_s[np.maximum(seq, 0)], 0.0)
        exit_clock = clock_min + np.cumsum(t, axis=1) / 60.0
        enter_clock = exit_clock - t / 60.0
        r_exit = self.lookup.table(exit_clock)
        inside = self.seq_cordon
        toll = (
            r_exit[..., 0] * self.seq_len
            + r_exit[..., 1] * t / 3600.0
            + r_exit[..., 2] * np.maximum(t - self.seq_ff, 0.0) / 3600.0
        )
        toll = (toll * inside).sum(axis=1)
        fee = self.lookup.table(enter_clock)[..., 3] * self.seq_entry
        has_fee = fee > 0
        first = np.argmax(has_fee, axis=1)
        toll += np.where(has_fee.any(axis=1), fee[np.arange(len(fee)), first], 0.0)
        return cost + toll * 60.0 / self.scenario.choice.vot

    def probabilities(self, link_times_s: np.ndarray, clock_min: float) -> np.ndarray:
        return grouped_probabilities(self.costs(link_times_s, clock_min), self.cf, self.offsets, self.scenario.choice.theta0)


def draw_departures(scenario: Scenario, seed: int):
    """Departure steps, OD indices and route-choice uniforms for every vehicle.

    Vehicle counts per OD and interval come from cumulative rounding of the
    (scaled) demand table, so totals do not depend on the seed.
    """
    rng = np.random.default_rng(seed)
    dem = scenario.demand.matrix()
    cum = np.round(np.cumsum(dem, axis=0) + 1e-9)
    counts = np.diff(np.vstack([np.zeros((1, dem.shape[1])), cum]), axis=0).astype(int)
    dt = scenario.sim.dt_s
    span = scenario.demand.interval_min * 60.0
    steps, ods, us = [], [], []
    for h in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            n = int(counts[h, j])
            if n <= 0:
                continue
            t = h * span + rng.random(n) * span
            steps.append(np.floor(t / dt).astype(np.int64))
            ods.append(np.full(n, j))
            us.append(rng.random(n))
    if not steps:
        return np.zeros(0, np.int64), np.zeros(0, int), np.zeros(0)
    steps = np.concatenate(steps)
    ods = np.concatenate(ods)
    us = np.concatenate(us)
    order = np.lexsort((ods, steps))
    return steps[order], ods[order], us[order]


def run_horizon(scenario: Scenario, schedule: TollSchedule | None = None, seed: int = 0, audit: bool = False) -> SimOutput:
    """Simulate the full horizon under ``schedule`` (None for no pricing).

    With ``audit`` the vehicle balance is recounted after every step and an
    ``AssertionError`` raised on any mismatch (slow; meant for tests).
    """
    if schedule is not None:
        schedule.validate()
    plant = Plant(scenario, schedule, seed)
    chooser = RouteChooser(scenario, schedule)
    dep_steps, dep_od, dep_u = draw_departures(scenario, seed)
    offsets = chooser.offsets
    n_int = plant.n_intervals
    span = plant.steps_per_interval
    total_steps = n_int * span
    L = plant.n_links

    out = {k: np.zeros((n_int, L)) for k in ("density", "flow", "time", "speed", "queue", "exits")}
    entries = np.zeros(n_int, dtype=np.int64)
    conservation = np.zeros((n_int, 3), dtype=np.int64)

    ff = np.array(plant.ff_s)
    probs = chooser.probabilities(ff, plant.start_clock)
    cum = [np.cumsum(probs[offsets[j] : offsets[j + 1]]) for j in range(len(offsets) - 1)]

    n_dep = len(dep_steps)
    d = 0
    s = 0
    h = 0
    while h < n_int:
        s_end = (h + 1) * span
        while s < s_end:
            while d < n_dep and dep_steps[d] == s:
                j = int(dep_od[d])
                c = cum[j]
                k = int(np.searchsorted(c, dep_u[d], side="right"))
                k = min(k, len(c) - 1)
                v = plant.new_vehicle(int(offsets[j]) + k, s, j)
                plant.depart(v, s)
                d += 1
            plant.transfer(s)
            plant.inject(s)
            if audit:
                assert plant.departed == plant.in_network_count() + plant.completed, f"vehicle balance broken at step {s}"
                assert all(len(q) <= cap for q, cap in zip(plant.queue, plant.storage)), f"storage exceeded at step {s}"
            # Skip steps in which nothing can happen.
            nxt = s + 1
            if not plant.waiting and not plant.origin_queue:
                cand = s_end
                if d < n_dep:
                    cand = min(cand, int(dep_steps[d]))
                if plant.heap:
                    cand = min(cand, plant.heap[0][0])
                nxt = max(nxt, cand)
            s = min(nxt, s_end)
        m = plant.measure_interval(s_end)
        for k in out:
            out[k][h] = m[k]
        entries[h] = m["entries"]
        in_net = plant.in_network_count()
        conservation[h] = (plant.departed, in_net, plant.completed)
        h += 1
        if h < n_int:
            probs = chooser.probabilities(m["time"], plant.start_clock + h * scenario.sim.measure_min)
            cum = [np.cumsum(probs[offsets[j] : offsets[j + 1]]) for j in range(len(offsets) - 1)]

    trips = {}
    arr = np.array(plant.trips, dtype=float).reshape(-1, len(TRIP_FIELDS))
    for i, name in enumerate(TRIP_FIELDS):
        col = arr[:, i]
        trips[name] = col.astype(np.int64) if name in ("od", "path") else col
    return SimOutput(
        interval_min=scenario.sim.measure_min,
        start_clock_min=plant.start_clock,
        link_ids=plant.link_ids,
        link_density=out["density"],
        link_flow=out["flow"],
        link_time_s=out["time"],
        link_speed=out["speed"],
        link_queue=out["queue"],
        link_exits=out["exits"].astype(np.int64),
        cordon_entries=entries,
        trips=trips,
        conservation=conservation,
        seed=seed,
    )


LINK_COLUMNS = ("interval", "clock", "link", "density", "flow", "time_s", "speed", "queue", "exits")


def link_states_csv(output: SimOutput) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LINK_COLUMNS)
    for h in range(output.n_intervals):
        clock = output.interval_start(h)
        for j, link in enumerate(output.link_ids):
            w.writerow([
                h, repr(float(clock)), int(link),
                repr(float(output.link_density[h, j])), repr(float(output.link_flow[h, j])),
                repr(float(output.link_time_s[h, j])), repr(float(output.link_speed[h, j])),
                int(output.link_queue[h, j]), int(output.link_exits[h, j]),
            ])
    return buf.getvalue()


def trips_csv(output: SimOutput) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIP_FIELDS)
    cols = [output.trips[k] for k in TRIP_FIELDS]
    for row in zip(*cols):
        w.writerow([int(x) if k in ("od", "path") else repr(float(x)) for k, x in zip(TRIP_FIELDS, row)])
    return buf.getvalue()


def summary_json(output: SimOutput) -> str:
    return json.dumps(
        {
            "seed": output.seed,
            "intervals": output.n_intervals,
            "departed": output.departed,
            "in_network": output.in_network,
            "completed": output.completed,
            "conserved": output.conserved(),
            "digest": output.digest(),
        },
        sort_keys=True,
    )
