"""Networks, cordon partitions, demand tables, path sets and scenario I/O.

A scenario is a plain JSON document::

    {
      "schema": "nfdtoll.scenario/1",
      "name": "...",
      "network": {"nodes": [...], "links": [...], "centroids": [...]},
      "cordon": {"links": [...]},
      "demand": {"interval_min": 5, "start_clock": "07:00", "multiplier": 1.0,
                 "od_pairs": [[o, d], ...], "volumes": [[...], ...]},
      "paths": {"k": 8},
      "simulation": {...}, "choice": {...}, "control": {...},
      "tolls": {...}            # optional
    }

Everything loaded is frozen; the same scenario object can be shared by any
number of simulation runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from functools import cached_property, lru_cache
from pathlib import Path

import networkx as nx
import numpy as np

from .control import ControlConfig
from .routing import ChoiceParams
from .tolling import TollSchedule

SCHEMA = "nfdtoll.scenario/1"


class ScenarioError(ValueError):
    """Invalid scenario document; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Link:
    id: int
    source: int
    target: int
    length_km: float
    lanes: int
    free_speed_kmh: float
    capacity_vphpl: float
    jam_density_vpkmpl: float

    @property
    def free_flow_time_s(self) -> float:
        return 3600.0 * self.length_km / self.free_speed_kmh

    @property
    def lane_km(self) -> float:
        return self.length_km * self.lanes

    @property
    def storage(self) -> int:
        """Maximum number of vehicles the link holds (jam density, rounded up)."""
        return max(1, math.ceil(self.jam_density_vpkmpl * self.lane_km - 1e-9))

    def validate(self, where: str) -> None:
        if self.length_km <= 0:
            raise ScenarioError(f"{where}.length_km", f"link {self.id} length must be > 0, got {self.length_km}")
        if self.lanes < 1:
            raise ScenarioError(f"{where}.lanes", f"link {self.id} needs at least one lane")
        if self.free_speed_kmh <= 0:
            raise ScenarioError(f"{where}.free_speed_kmh", f"link {self.id} free-flow speed must be > 0")
        if self.capacity_vphpl <= 0:
            raise ScenarioError(f"{where}.capacity_vphpl", f"link {self.id} capacity must be > 0")
        if self.jam_density_vpkmpl <= self.capacity_vphpl / self.free_speed_kmh:
            raise ScenarioError(
                f"{where}.jam_density_vpkmpl",
                f"link {self.id} jam density must exceed capacity/free-flow speed "
                f"({self.capacity_vphpl / self.free_speed_kmh:g})",
            )


@dataclass(frozen=True)
class Network:
    nodes: tuple[int, ...]
    links: tuple[Link, ...]
    centroids: tuple[int, ...]
    coords: tuple[tuple[float, float], ...] = ()

    @cached_property
    def link_index(self) -> dict[int, int]:
        return {link.id: i for i, link in enumerate(self.links)}

    def link(self, link_id: int) -> Link:
        return self.links[self.link_index[link_id]]

    @cached_property
    def out_links(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {n: [] for n in self.nodes}
        for link in self.links:
            out[link.source].append(link.id)
        return {n: tuple(sorted(v)) for n, v in out.items()}

    @cached_property
    def in_links(self) -> dict[int, tuple[int, ...]]:
        inc: dict[int, list[int]] = {n: [] for n in self.nodes}
        for link in self.links:
            inc[link.target].append(link.id)
        return {n: tuple(sorted(v)) for n, v in inc.items()}

    def digraph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from((link.source, link.target) for link in self.links)
        return g

    def validate(self) -> None:
        known = set(self.nodes)
        if len(known) != len(self.nodes):
            raise ScenarioError("network.nodes", "duplicate node id")
        seen: set[int] = set()
        for i, link in enumerate(self.links):
            where = f"network.links[{i}]"
            if link.id in seen:
                raise ScenarioError(f"{where}.id", f"duplicate link id {link.id}")
            seen.add(link.id)
            for end in ("source", "target"):
                if getattr(link, end) not in known:
                    raise ScenarioError(f"{where}.{end}", f"link {link.id} references unknown node {getattr(link, end)}")
            if link.source == link.target:
                raise ScenarioError(where, f"link {link.id} is a self-loop")
            link.validate(where)
        for i, c in enumerate(self.centroids):
            if c not in known:
                raise ScenarioError(f"network.centroids[{i}]", f"unknown node {c}")
        g = self.digraph()
        if len(self.nodes) > 1 and not nx.is_weakly_connected(g):
            raise ScenarioError("network", "graph is not weakly connected")


@dataclass(frozen=True)
class CordonPartition:
    """Priced links (inside the cordon) and the periphery, which is everything else."""

    cordon_links: frozenset[int]
    periphery_links: frozenset[int]

    @classmethod
    def from_cordon(cls, network: Network, cordon_links) -> CordonPartition:
        inside = frozenset(int(x) for x in cordon_links)
        return cls(inside, frozenset(link.id for link in network.links) - inside)

    def mask(self, network: Network) -> np.ndarray:
        return np.array([link.id in self.cordon_links for link in network.links])

    def validate(self, network: Network) -> None:
        ids = {link.id for link in network.links}
        if not self.cordon_links:
            raise ScenarioError("cordon.links", "cordon must contain at least one link")
        for x in sorted(self.cordon_links):
            if x not in ids:
                raise ScenarioError("cordon.links", f"unknown link {x}")
        if self.cordon_links & self.periphery_links or (self.cordon_links | self.periphery_links) != ids:
            raise ScenarioError("cordon", "cordon and periphery must partition the link set")


@dataclass(frozen=True)
class DemandTable:
    """Per-interval OD volumes (vehicles per interval)."""

    od_pairs: tuple[tuple[int, int], ...]
    volumes: tuple[tuple[float, ...], ...]  # [interval][od]
    interval_min: float = 5.0
    start_clock_min: float = 420.0
    multiplier: float = 1.0

    @property
    def n_intervals(self) -> int:
        return len(self.volumes)

    def matrix(self) -> np.ndarray:
        """Scaled volumes as an (intervals, od) array."""
        return np.asarray(self.volumes, dtype=float).reshape(self.n_intervals, len(self.od_pairs)) * self.multiplier

    def scaled(self, multiplier: float) -> DemandTable:
        return replace(self, multiplier=float(multiplier))

    def validate(self, network: Network) -> None:
        if self.n_intervals < 1:
            raise ScenarioError("demand.volumes", "need at least one interval")
        if self.interval_min <= 0:
            raise ScenarioError("demand.interval_min", "must be > 0")
        if self.multiplier < 0:
            raise ScenarioError("demand.multiplier", "must be >= 0")
        cset = set(network.centroids)
        for i, (o, d) in enumerate(self.od_pairs):
            if o not in cset or d not in cset:
                raise ScenarioError(f"demand.od_pairs[{i}]", f"OD ({o}, {d}) must join two centroids")
            if o == d:
                raise ScenarioError(f"demand.od_pairs[{i}]", "origin equals destination")
        for h, row in enumerate(self.volumes):
            if len(row) != len(self.od_pairs):
                raise ScenarioError(f"demand.volumes[{h}]", "row length differs from number of OD pairs")
            for j, q in enumerate(row):
                if not q >= 0:
                    raise ScenarioError(f"demand.volumes[{h}][{j}]", f"negative or NaN volume {q}")


@dataclass(frozen=True)
class SimParams:
    dt_s: float = 1.0
    horizon_min: float = 160.0
    measure_min: float = 5.0

    def validate(self) -> None:
        if self.dt_s <= 0:
            raise ScenarioError("simulation.dt_s", "must be > 0")
        if self.measure_min <= 0 or self.horizon_min < self.measure_min:
            raise ScenarioError("simulation.horizon_min", "horizon must cover at least one measurement interval")
        steps = self.measure_min * 60.0 / self.dt_s
        if abs(steps - round(steps)) > 1e-9:
            raise ScenarioError("simulation.dt_s", "measurement interval must be a whole number of steps")

    @property
    def n_intervals(self) -> int:
        return int(round(self.horizon_min / self.measure_min))


@dataclass(frozen=True)
class PathSet:
    """Fixed route choice sets: ``paths[j]`` lists link-id sequences for ``od_pairs[j]``."""

    od_pairs: tuple[tuple[int, int], ...]
    paths: tuple[tuple[tuple[int, ...], ...], ...]

    def __len__(self) -> int:
        return sum(len(p) for p in self.paths)

    @cached_property
    def flat(self) -> tuple[tuple[int, ...], ...]:
        return tuple(p for group in self.paths for p in group)

    @cached_property
    def offsets(self) -> np.ndarray:
        """Start index of each OD's paths in :attr:`flat`, plus a final end marker."""
        return np.concatenate([[0], np.cumsum([len(p) for p in self.paths])]).astype(int)

    def incidence(self, network: Network) -> np.ndarray:
        """Dense path-by-link indicator matrix (delta_{a,r})."""
        m = np.zeros((len(self.flat), len(network.links)))
        idx = network.link_index
        for r, path in enumerate(self.flat):
            for a in path:
                m[r, idx[a]] = 1.0
        return m


@dataclass(frozen=True)
class Scenario:
    name: str
    network: Network
    cordon: CordonPartition
    demand: DemandTable
    sim: SimParams = field(default_factory=SimParams)
    choice: ChoiceParams = field(default_factory=ChoiceParams)
    control: ControlConfig = field(default_factory=ControlConfig)
    k_paths: int = 8
    k_bypass: int = 2
    tolls: TollSchedule | None = None

    @cached_property
    def paths(self) -> PathSet:
        avoid = self.cordon.cordon_links if self.k_bypass else frozenset()
        return build_path_set(self.network, self.demand.od_pairs, self.k_paths, avoid, self.k_bypass)

    def with_demand_multiplier(self, multiplier: float) -> Scenario:
        return replace(self, demand=self.demand.scaled(multiplier))

    def validate(self) -> None:
        self.network.validate()
        self.cordon.validate(self.network)
        self.demand.validate(self.network)
        self.sim.validate()
        if self.k_paths < 1:
            raise ScenarioError("paths.k", "must be >= 1")
        if self.k_bypass < 0:
            raise ScenarioError("paths.bypass", "must be >= 0")
        if self.demand.interval_min != self.sim.measure_min:
            raise ScenarioError("demand.interval_min", "demand and measurement intervals must match")
        if self.tolls is not None:
            try:
                self.tolls.validate()
            except ValueError as exc:
                raise ScenarioError("tolls", str(exc)) from None


# -- path sets --------------------------------------------------------------


def _expanded_graph(network: Network, avoid: frozenset = frozenset()) -> nx.DiGraph:
    # One midpoint node per link so parallel links stay distinct paths.
    g = nx.DiGraph()
    for link in network.links:
        if link.id in avoid:
            continue
        mid = ("L", link.id)
        g.add_edge(("N", link.source), mid, weight=link.free_flow_time_s)
        g.add_edge(mid, ("N", link.target), weight=0.0)
    return g


def path_free_flow_time(network: Network, path) -> float:
    return sum(network.link(a).free_flow_time_s for a in path)


@lru_cache(maxsize=8192)
def _k_shortest(network: Network, o: int, d: int, k: int, avoid: frozenset = frozenset()) -> tuple[tuple[int, ...], ...]:
    g = _expanded_graph(network, avoid)
    src, dst = ("N", o), ("N", d)
    if src not in g or dst not in g or not nx.has_path(g, src, dst):
        if avoid:
            return ()
        raise ScenarioError("demand.od_pairs", f"destination {d} unreachable from origin {o}")
    found: list[tuple[float, tuple[int, ...]]] = []
    kth = math.inf
    for nodes in nx.shortest_simple_paths(g, src, dst, weight="weight"):
        links = tuple(n[1] for n in nodes if n[0] == "L")
        cost = path_free_flow_time(network, links)
        if cost > kth + 1e-9:
            break
        found.append((cost, links))
        if len(found) == k:
            kth = cost
    # Equal-time paths are ordered by their link-id sequence.
    found.sort(key=lambda item: (round(item[0], 9), item[1]))
    return tuple(p for _, p in found[:k])


def build_path_set(network: Network, od_pairs, k_paths: int = 8, avoid=frozenset(), k_bypass: int = 0) -> PathSet:
    """Up to ``k_paths`` loopless shortest paths (free-flow time) per OD pair.

    With ``k_bypass > 0`` the set also gets up to that many shortest paths
    that use none of the ``avoid`` links (when such paths exist), so a priced
    zone can always be routed around.
    """
    if k_paths < 1:
        raise ValueError("k_paths must be >= 1")
    od_pairs = tuple((int(o), int(d)) for o, d in od_pairs)
    avoid = frozenset(avoid)
    groups = []
    for o, d in od_pairs:
        paths = list(_k_shortest(network, o, d, k_paths))
        if k_bypass and avoid:
            paths += [p for p in _k_shortest(network, o, d, k_bypass, avoid) if p not in paths]
        groups.append(tuple(paths))
    return PathSet(od_pairs, tuple(groups))


# -- grid generator ---------------------------------------------------------


@dataclass(frozen=True)
class LinkClass:
    free_speed_kmh: float = 40.0
    lanes: int = 1
    capacity_vphpl: float = 900.0
    jam_density_vpkmpl: float = 150.0


@dataclass(frozen=True)
class DemandProfile:
    """Single-peak profile for grid OD demand.

    Through pairs (opposite grid sides) get ``peak_vph * weight`` at the peak
    and CBD-bound pairs (boundary centroid to a node inside the cordon) get
    ``cbd_vph * weight``; both fall linearly to ``base_frac`` of the peak at
    the ends of the ``duration_min`` window.
    """

    duration_min: float = 120.0
    peak_vph: float = 320.0
    cbd_vph: float = 50.0
    base_frac: float = 0.2
    peak_at: float = 0.5
    start_clock: str = "07:00"
    od_span: int = 1
    weight_spread: float = 0.4

    def shape(self, n_intervals: int) -> np.ndarray:
        t = (np.arange(n_intervals) + 0.5) / n_intervals
        rise = np.clip(t / self.peak_at, 0, 1)
        fall = np.clip((1 - t) / (1 - self.peak_at), 0, 1)
        return self.base_frac + (1 - self.base_frac) * np.minimum(rise, fall)


STREET = LinkClass()
RING = LinkClass(free_speed_kmh=60.0, lanes=2, capacity_vphpl=900.0, jam_density_vpkmpl=150.0)
CORE = LinkClass(free_speed_kmh=40.0, lanes=1, capacity_vphpl=750.0, jam_density_vpkmpl=150.0)

# Gains tuned on the desk grid: smaller than the generic defaults because the
# grid's cordon density reacts strongly to price (about 8 vpkmpl per $/km).
DESK_CONTROL = ControlConfig(p_p=0.03, p_i=0.04, delay_gain_scale=20.0)


def generate_grid(
    rows: int,
    cols: int,
    cordon: tuple[int, int, int, int],
    profile: DemandProfile | None = None,
    seed: int = 0,
    *,
    spacing_km: float = 0.5,
    length_jitter: float = 0.05,
    street: LinkClass = STREET,
    ring: LinkClass = RING,
    core: LinkClass = CORE,
    control: ControlConfig = DESK_CONTROL,
    clearance_min: float = 40.0,
    name: str | None = None,
) -> Scenario:
    """Bidirectional grid with a rectangular priced zone.

    ``cordon`` is ``(r0, c0, r1, c1)``, inclusive node rows/columns; links with
    both ends in that rectangle are priced. The ring of links one node outside
    the rectangle uses the ``ring`` link class, standing in for an urban ring
    road. Centroids sit on the outer grid boundary facing the cordon, and OD
    pairs join opposite sides so every pair can cross the cordon.
    """
    profile = profile or DemandProfile()
    if rows < 2 or cols < 2:
        raise ScenarioError("grid", "rows and cols must be >= 2")
    r0, c0, r1, c1 = cordon
    if not (1 <= r0 < r1 <= rows - 2 and 1 <= c0 < c1 <= cols - 2):
        raise ScenarioError(
            "grid.cordon", f"cordon {cordon} must lie strictly inside the {rows}x{cols} grid (no periphery otherwise)"
        )
    rng = np.random.default_rng(seed)

    def node(r: int, c: int) -> int:
        return r * cols + c

    def on_ring(r: int, c: int) -> bool:
        inside_box = r0 - 1 <= r <= r1 + 1 and c0 - 1 <= c <= c1 + 1
        return inside_box and (r in (r0 - 1, r1 + 1) or c in (c0 - 1, c1 + 1))

    def in_cordon(r: int, c: int) -> bool:
        return r0 <= r <= r1 and c0 <= c <= c1

    links: list[Link] = []
    priced: list[int] = []
    for r in range(rows):
        for c in range(cols):
            for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < rows and 0 <= cc < cols):
                    continue
                if in_cordon(r, c) and in_cordon(rr, cc):
                    cls = core
                elif on_ring(r, c) and on_ring(rr, cc):
                    cls = ring
                else:
                    cls = street
                length = spacing_km * (1.0 + length_jitter * rng.uniform(-1.0, 1.0))
                link = Link(
                    id=len(links),
                    source=node(r, c),
                    target=node(rr, cc),
                    length_km=round(length, 6),
                    lanes=cls.lanes,
                    free_speed_kmh=cls.free_speed_kmh,
                    capacity_vphpl=cls.capacity_vphpl,
                    jam_density_vpkmpl=cls.jam_density_vpkmpl,
                )
                links.append(link)
                if in_cordon(r, c) and in_cordon(rr, cc):
                    priced.append(link.id)

    west = [node(r, 0) for r in range(r0, r1 + 1)]
    east = [node(r, cols - 1) for r in range(r0, r1 + 1)]
    north = [node(0, c) for c in range(c0, c1 + 1)]
    south = [node(rows - 1, c) for c in range(c0, c1 + 1)]
    od_pairs: list[tuple[int, int]] = []
    for a_side, b_side in ((west, east), (north, south)):
        for i, a in enumerate(a_side):
            for j, b in enumerate(b_side):
                if abs(i - j) <= profile.od_span:
                    od_pairs.append((a, b))
                    od_pairs.append((b, a))
    if profile.cbd_vph > 0:
        inner = [node(r, c) for r in range(r0 + 1, r1) for c in range(c0 + 1, c1)]
        cbd = inner or [node(r, c) for r in range(r0, r1 + 1) for c in range(c0, c1 + 1)]
        origins = sorted({o for o, _ in od_pairs})
        od_pairs += [(o, c) for o in origins for c in cbd]
    n_through = 2 * sum(1 for i in range(len(west)) for j in range(len(east)) if abs(i - j) <= profile.od_span)
    n_through += 2 * sum(1 for i in range(len(north)) for j in range(len(south)) if abs(i - j) <= profile.od_span)
    centroids = sorted({x for od in od_pairs for x in od})

    n_int = int(round(profile.duration_min / 5.0))
    weights = 1.0 + profile.weight_spread * rng.uniform(-1.0, 1.0, size=len(od_pairs))
    shape = profile.shape(n_int)
    peak = np.where(np.arange(len(od_pairs)) < n_through, profile.peak_vph, profile.cbd_vph)
    vol = np.round(np.outer(shape, weights * peak) * 5.0 / 60.0, 6)

    nodes = tuple(range(rows * cols))
    net = Network(
        nodes=nodes,
        links=tuple(links),
        centroids=tuple(centroids),
        coords=tuple((c * spacing_km, -r * spacing_km) for r in range(rows) for c in range(cols)),
    )
    scen = Scenario(
        name=name or f"grid{rows}x{cols}-s{seed}",
        network=net,
        cordon=CordonPartition.from_cordon(net, priced),
        demand=DemandTable(
            od_pairs=tuple(od_pairs),
            volumes=tuple(tuple(float(x) for x in row) for row in vol),
            interval_min=5.0,
            start_clock_min=parse_clock(profile.start_clock),
        ),
        sim=SimParams(horizon_min=profile.duration_min + clearance_min),
        control=control,
    )
    scen.validate()
    return scen


def desk_scenario(seed: int = 1, **kw) -> Scenario:
    """The standard desk study: 8x8 grid, 4x4 cordon, peaked two-hour demand."""
    return generate_grid(8, 8, (2, 2, 5, 5), kw.pop("profile", None), seed, name=kw.pop("name", "desk"), **kw)


# -- JSON -------------------------------------------------------------------


def parse_clock(text: str) -> float:
    hh, mm = text.split(":")
    return 60.0 * int(hh) + float(mm)


def format_clock(minutes: float) -> str:
    m = int(round(minutes))
    return f"{m // 60:02d}:{m % 60:02d}"


def scenario_to_dict(s: Scenario) -> dict:
    doc = {
        "schema": SCHEMA,
        "name": s.name,
        "network": {
            "nodes": [
                {"id": n, **({"x": s.network.coords[i][0], "y": s.network.coords[i][1]} if s.network.coords else {})}
                for i, n in enumerate(s.network.nodes)
            ],
            "links": [asdict(link) for link in s.network.links],
            "centroids": list(s.network.centroids),
        },
        "cordon": {"links": sorted(s.cordon.cordon_links)},
        "demand": {
            "interval_min": s.demand.interval_min,
            "start_clock": format_clock(s.demand.start_clock_min),
            "multiplier": s.demand.multiplier,
            "od_pairs": [list(od) for od in s.demand.od_pairs],
            "volumes": [list(row) for row in s.demand.volumes],
        },
        "paths": {"k": s.k_paths, "bypass": s.k_bypass},
        "simulation": asdict(s.sim),
        "choice": asdict(s.choice),
        "control": asdict(s.control),
    }
    if s.tolls is not None:
        doc["tolls"] = s.tolls.to_dict()
    return doc


def dumps(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=1, sort_keys=True) + "\n"


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(dumps(s))


def _build(cls, data: dict | None, where: str):
    data = data or {}
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ScenarioError(f"{where}.{sorted(unknown)[0]}", "unknown field")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ScenarioError(where, str(exc)) from None


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("$", "scenario document must be a JSON object")
    schema = doc.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ScenarioError("schema", f"unsupported schema {schema!r}")
    try:
        net_doc = doc["network"]
        node_docs = net_doc["nodes"]
        link_docs = net_doc["links"]
    except (KeyError, TypeError) as exc:
        raise ScenarioError("network", f"missing {exc}") from None
    nodes, coords = [], []
    for i, nd in enumerate(node_docs):
        if isinstance(nd, dict):
            if "id" not in nd:
                raise ScenarioError(f"network.nodes[{i}].id", "missing")
            nodes.append(int(nd["id"]))
            if "x" in nd and "y" in nd:
                coords.append((float(nd["x"]), float(nd["y"])))
        else:
            nodes.append(int(nd))
    links = []
    for i, ld in enumerate(link_docs):
        ld = dict(ld)
        for key in ("id", "source", "target", "lanes"):
            if key in ld:
                ld[key] = int(ld[key])
        links.append(_build(Link, ld, f"network.links[{i}]"))
    network = Network(
        nodes=tuple(nodes),
        links=tuple(links),
        centroids=tuple(int(c) for c in net_doc.get("centroids", [])),
        coords=tuple(coords) if len(coords) == len(nodes) else (),
    )
    dem = doc.get("demand")
    if dem is None:
        raise ScenarioError("demand", "missing")
    demand = DemandTable(
        od_pairs=tuple((int(o), int(d)) for o, d in dem.get("od_pairs", [])),
        volumes=tuple(tuple(float(q) for q in row) for row in dem.get("volumes", [])),
        interval_min=float(dem.get("interval_min", 5.0)),
        start_clock_min=parse_clock(dem.get("start_clock", "07:00")),
        multiplier=float(dem.get("multiplier", 1.0)),
    )
    if "centroids" not in net_doc:
        network = replace(network, centroids=tuple(sorted({x for od in demand.od_pairs for x in od})))
    cordon_doc = doc.get("cordon") or {}
    network.validate()
    cordon = CordonPartition.from_cordon(network, cordon_doc.get("links", []))
    tolls = TollSchedule.from_dict(doc["tolls"]) if doc.get("tolls") else None
    scen = Scenario(
        name=str(doc.get("name", "scenario")),
        network=network,
        cordon=cordon,
        demand=demand,
        sim=_build(SimParams, doc.get("simulation"), "simulation"),
        choice=_build(ChoiceParams, doc.get("choice"), "choice"),
        control=_build(ControlConfig, doc.get("control"), "control"),
        k_paths=int((doc.get("paths") or {}).get("k", 8)),
        k_bypass=int((doc.get("paths") or {}).get("bypass", 2)),
        tolls=tolls,
    )
    scen.validate()
    for attr in ("choice", "control"):
        try:
            getattr(scen, attr).validate()
        except ValueError as exc:
            raise ScenarioError(attr, str(exc)) from None
    return scen


def loads(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("$", f"JSON parse error: {exc}") from None
    return scenario_from_dict(doc)


def load_scenario(path) -> Scenario:
    return loads(Path(path).read_text())
