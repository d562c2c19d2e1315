"""Road map, pedestrian / rescue-vehicle movement, and range-based contacts.

Movement is piecewise linear along map edges. A tick of length ``dt`` is
simulated in continuous time: time left over after arriving at a
destination carries into the pause, and time left after a pause carries into
the next leg, so trajectories barely depend on ``dt``.
"""
from __future__ import annotations

import heapq
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .config import PERSON, VEHICLE, ScenarioConfig

MOVING, PAUSED = "moving", "paused"
_TIE_EPS = 1e-9


class MapError(ValueError):
    pass


@dataclass
class MapGraph:
    positions: dict[int, tuple[float, float]]
    adj: dict[int, dict[int, float]]
    region: frozenset = frozenset()
    gateway_vertex: int | None = None
    poi: frozenset = frozenset()
    _dist_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_edges(cls, vertices: dict[int, tuple[float, float]], edges, **kw) -> "MapGraph":
        adj: dict[int, dict[int, float]] = {v: {} for v in vertices}
        for a, b, length in edges:
            if a not in adj or b not in adj:
                raise MapError(f"edge ({a}, {b}) references an unknown vertex")
            if a == b:
                raise MapError(f"self-loop at vertex {a}")
            adj[a][b] = float(length)
            adj[b][a] = float(length)
        return cls(dict(vertices), adj, **kw)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return sorted((a, b, w) for a, nbrs in self.adj.items() for b, w in nbrs.items() if a < b)

    def __len__(self):
        return len(self.positions)

    def validate(self) -> list[str]:
        errors = []
        for a, b, w in self.edges:
            if not w > 0:
                errors.append(f"edge ({a}, {b}) has non-positive length {w}")
            (xa, ya), (xb, yb) = self.positions[a], self.positions[b]
            if w < math.hypot(xb - xa, yb - ya) * (1 - 1e-9):
                errors.append(f"edge ({a}, {b}) shorter than its endpoints' distance")
        if self.positions and len(self.component(next(iter(self.positions)))) != len(self.positions):
            errors.append("map is not connected")
        return errors

    def component(self, start: int) -> set[int]:
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v in self.adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    def distances_to(self, target: int) -> dict[int, float]:
        """Dijkstra from ``target`` (the graph is undirected); cached."""
        if target in self._dist_cache:
            return self._dist_cache[target]
        dist = {target: 0.0}
        heap = [(0.0, target)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for v, w in self.adj[u].items():
                nd = d + w
                if nd < dist.get(v, math.inf):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        self._dist_cache[target] = dist
        return dist

    def nearest_vertex(self, x: float, y: float) -> int:
        return min(self.positions, key=lambda v: (math.hypot(self.positions[v][0] - x,
                                                             self.positions[v][1] - y), v))

    def save(self, path: str | Path) -> None:
        edges = self.edges
        lines = [f"vertices {len(self.positions)} edges {len(edges)}"]
        lines += [f"{v} {x!r} {y!r}" for v, (x, y) in sorted(self.positions.items())]
        lines += [f"{a} {b} {w!r}" for a, b, w in edges]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "MapGraph":
        lines = [ln.split("#")[0].strip() for ln in Path(path).read_text().splitlines()]
        lines = [ln for ln in lines if ln]
        if not lines:
            raise MapError(f"{path}: empty map file")
        counts = [int(t) for t in re.findall(r"\d+", lines[0])]
        if len(counts) != 2:
            raise MapError(f"{path}: header must read 'vertices n edges m'")
        n, m = counts
        if len(lines) != 1 + n + m:
            raise MapError(f"{path}: expected {n} vertex and {m} edge lines")
        verts = {}
        for ln in lines[1:1 + n]:
            v, x, y = ln.split()
            verts[int(v)] = (float(x), float(y))
        edges = []
        for ln in lines[1 + n:]:
            a, b, w = ln.split()
            edges.append((int(a), int(b), float(w)))
        return cls.from_edges(verts, edges)


def generate_grid_map(width: float, height: float, spacing: float, origin=(0.0, 0.0),
                      gateway: tuple[float, float] | None = None) -> MapGraph:
    """Rectangular 4-neighbour road lattice, optionally with a corridor to a gateway.

    The corridor is a chain of vertices at most ``spacing`` apart running
    straight from the lattice vertex nearest the gateway to the gateway itself.
    """
    if width <= 0 or height <= 0 or spacing <= 0:
        raise MapError("width, height and spacing must be positive")
    nx, ny = width / spacing, height / spacing
    if abs(nx - round(nx)) > 1e-9 or abs(ny - round(ny)) > 1e-9:
        raise MapError("spacing must divide both dimensions")
    nx, ny = int(round(nx)) + 1, int(round(ny)) + 1
    ox, oy = origin
    verts = {}
    edges = []
    for j in range(ny):
        for i in range(nx):
            v = j * nx + i
            verts[v] = (ox + i * spacing, oy + j * spacing)
            if i > 0:
                edges.append((v - 1, v, spacing))
            if j > 0:
                edges.append((v - nx, v, spacing))
    region = frozenset(verts)
    gw = None
    if gateway is not None:
        g = MapGraph.from_edges(verts, edges)
        start = g.nearest_vertex(*gateway)
        sx, sy = verts[start]
        dist = math.hypot(gateway[0] - sx, gateway[1] - sy)
        prev = start
        steps = int(math.ceil(dist / spacing - 1e-9))
        nxt = len(verts)
        for k in range(1, steps + 1):
            f = k / steps
            v = nxt
            nxt += 1
            verts[v] = (sx + f * (gateway[0] - sx), sy + f * (gateway[1] - sy))
            px, py = verts[prev]
            edges.append((prev, v, math.hypot(verts[v][0] - px, verts[v][1] - py)))
            prev = v
        gw = prev
    return MapGraph.from_edges(verts, edges, region=region, gateway_vertex=gw)


def scenario_map(cfg: ScenarioConfig) -> MapGraph:
    x0, y0, x1, y1 = cfg.disaster_region
    if cfg.map_source == "grid":
        g = generate_grid_map(x1 - x0, y1 - y0, cfg.map_spacing, (x0, y0), cfg.gateway_position)
        g.poi = choose_poi(cfg, g)
        return g
    g = MapGraph.load(cfg.map_source)
    region = frozenset(v for v, (x, y) in g.positions.items() if x0 <= x <= x1 and y0 <= y <= y1)
    if not region:
        raise MapError("no map vertex lies inside the disaster region")
    g.region = region
    g.gateway_vertex = g.nearest_vertex(*cfg.gateway_position)
    errors = g.validate()
    if errors:
        raise MapError("; ".join(errors))
    g.poi = choose_poi(cfg, g)
    return g


def shortest_path(g: MapGraph, src: int, dst: int) -> list[int]:
    """Minimum-length path; ties go to the lexicographically smallest vertex sequence."""
    if src not in g.positions or dst not in g.positions:
        raise MapError(f"unknown vertex {src if src not in g.positions else dst}")
    dist = g.distances_to(dst)
    if src not in dist:
        raise MapError(f"no path from {src} to {dst}")
    path = [src]
    u = src
    while u != dst:
        du = dist[u]
        tol = _TIE_EPS * max(1.0, du)
        u = min(v for v, w in g.adj[u].items() if v in dist and abs(w + dist[v] - du) <= tol)
        path.append(u)
    return path


def path_length(g: MapGraph, path: list[int]) -> float:
    return sum(g.adj[a][b] for a, b in zip(path, path[1:]))


# -- movement ----------------------------------------------------------------

@dataclass
class MobilityState:
    node_id: int
    role: str
    position: tuple[float, float]
    vertex: int                      # last vertex reached
    path: list[int] = field(default_factory=list)
    seg: int = 0                     # index into path of the current edge's start
    offset: float = 0.0              # meters travelled along the current edge
    phase: str = PAUSED
    phase_timer: float = 0.0
    speed: float = 0.0
    legs: int = 0
    disaster_trips: int = 0
    gateway_trips: int = 0


def _start_leg(state: MobilityState, g: MapGraph, dest: int, speed: float) -> None:
    state.path = shortest_path(g, state.vertex, dest)
    state.seg = 0
    state.offset = 0.0
    state.speed = speed
    state.phase = MOVING
    state.legs += 1


def _advance(state: MobilityState, g: MapGraph, budget: float) -> float:
    """Move along the current path for up to ``budget`` seconds; return unused time."""
    path = state.path
    while state.seg < len(path) - 1:
        a, b = path[state.seg], path[state.seg + 1]
        length = g.adj[a][b]
        left = (length - state.offset) / state.speed
        if left > budget:
            state.offset += budget * state.speed
            (xa, ya), (xb, yb) = g.positions[a], g.positions[b]
            f = state.offset / length
            state.position = (xa + f * (xb - xa), ya + f * (yb - ya))
            return 0.0
        budget -= left
        state.seg += 1
        state.offset = 0.0
        state.vertex = b
        state.position = g.positions[b]
    return budget


def _run(state, g, dt, on_arrival, on_pause_end) -> MobilityState:
    """Consume ``dt`` seconds; ``dt == 0`` only resolves pending decisions."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    budget = dt
    stalled = 0
    while True:
        if state.phase == MOVING:
            if budget <= 0 and len(state.path) > 1:
                break
            before = budget
            budget = _advance(state, g, budget)
            if state.seg >= len(state.path) - 1:
                on_arrival(state)
            stalled = stalled + 1 if budget == before else 0
        else:
            if state.phase_timer > 0:
                if budget <= 0:
                    break
                used = min(budget, state.phase_timer)
                state.phase_timer -= used
                budget -= used
                if state.phase_timer > 0:
                    break
                stalled = 0
            state.phase_timer = 0.0
            on_pause_end(state)
            stalled += 1
        if stalled > 16:
            break  # zero pause and zero-length legs: nothing advances this tick
    return state


def pedestrian_tick(state: MobilityState, g: MapGraph, cfg: ScenarioConfig, rng, dt: float) -> MobilityState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _pedestrian(state, g, cfg, rng, dt)


def _pedestrian(state, g, cfg, rng, dt):
    region = _region_list(g)

    def arrive(s):
        s.phase = PAUSED
        s.phase_timer = cfg.pedestrian_pause

    def next_leg(s):
        dest = region[int(rng.integers(len(region)))]
        _start_leg(s, g, dest, float(rng.uniform(*cfg.pedestrian_speed)))

    return _run(state, g, dt, arrive, next_leg)


def vehicle_tick(state: MobilityState, g: MapGraph, cfg: ScenarioConfig, rng, dt: float) -> MobilityState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _vehicle(state, g, cfg, rng, dt)


def _vehicle(state, g, cfg, rng, dt):
    region = _region_list(g)

    def arrive(s):
        s.phase = PAUSED
        if s.path and s.path[-1] == g.gateway_vertex:
            s.phase_timer = cfg.gateway_dwell
        else:
            s.phase_timer = float(rng.uniform(*cfg.vehicle_wait))

    def next_leg(s):
        if rng.random() < cfg.pr_disaster:
            dest = region[int(rng.integers(len(region)))]
            s.disaster_trips += 1
        else:
            dest = g.gateway_vertex
            s.gateway_trips += 1
        _start_leg(s, g, dest, float(rng.uniform(*cfg.vehicle_speed)))

    return _run(state, g, dt, arrive, next_leg)


def _region_list(g: MapGraph) -> list[int]:
    return sorted(g.poi) if g.poi else _sorted_region(g)


def _sorted_region(g: MapGraph) -> list[int]:
    key = ("region_list",)
    if key not in g._dist_cache:
        g._dist_cache[key] = sorted(g.region)
    return g._dist_cache[key]


def choose_poi(cfg: ScenarioConfig, g: MapGraph) -> frozenset:
    """Destination vertices: ``poi_count`` region vertices, or all of them if 0."""
    region = sorted(g.region)
    if cfg.poi_count <= 0 or cfg.poi_count >= len(region):
        return frozenset()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.rng_seed, spawn_key=(3,)))
    return frozenset(int(v) for v in rng.choice(region, size=cfg.poi_count, replace=False))


# -- contacts ----------------------------------------------------------------

def detect_contacts(positions: np.ndarray, ranges: np.ndarray) -> set[tuple[int, int]]:
    """Pairs (i < j) with distance <= min(range_i, range_j)."""
    pos = np.asarray(positions, dtype=np.float64)
    i, j = kernels.contact_pairs(np.ascontiguousarray(pos[:, 0]), np.ascontiguousarray(pos[:, 1]),
                                 np.ascontiguousarray(ranges, dtype=np.float64))
    return set(zip(i.tolist(), j.tolist()))


def brute_force_contacts(positions, ranges) -> set[tuple[int, int]]:
    pos = np.asarray(positions, dtype=np.float64)
    out = set()
    for a in range(len(pos)):
        for b in range(a + 1, len(pos)):
            if math.dist(pos[a], pos[b]) <= min(ranges[a], ranges[b]):
                out.add((a, b))
    return out


class ContactTracker:
    """Turns per-tick contact sets into start/end transitions."""

    def __init__(self):
        self.active: set[tuple[int, int]] = set()

    def update(self, pairs: set[tuple[int, int]]):
        started = sorted(pairs - self.active)
        ended = sorted(self.active - pairs)
        self.active = set(pairs)
        return started, ended


@dataclass
class Trajectories:
    """Per-tick node positions and contact sets for one scenario."""
    positions: np.ndarray            # (ticks, nodes, 2)
    contacts: list[list[tuple[int, int]]]
    vehicle_in_region: np.ndarray    # (ticks,) bool
    dt: float

    @property
    def disaster_time_fraction(self) -> float:
        return float(self.vehicle_in_region.mean()) if len(self.vehicle_in_region) else 0.0


def initial_states(cfg: ScenarioConfig, g: MapGraph, rngs) -> list[MobilityState]:
    region = _region_list(g)
    states = []
    for pid in range(cfg.n_people):
        v = region[int(rngs[pid].integers(len(region)))]
        states.append(MobilityState(pid, PERSON, g.positions[v], v))
    gv = g.gateway_vertex
    states.append(MobilityState(cfg.n_people, VEHICLE, g.positions[gv], gv))
    return states


def node_rngs(cfg: ScenarioConfig) -> list[np.random.Generator]:
    return [np.random.default_rng(np.random.SeedSequence(cfg.rng_seed, spawn_key=(1, k)))
            for k in range(cfg.n_people + 1)]


def in_region(cfg: ScenarioConfig, x: float, y: float) -> bool:
    x0, y0, x1, y1 = cfg.disaster_region
    return x0 <= x <= x1 and y0 <= y <= y1


def simulate_mobility(cfg: ScenarioConfig, g: MapGraph | None = None, people: bool = True) -> Trajectories:
    """Run every node's movement for the whole scenario and record contacts.

    With ``people=False`` only the vehicle moves (used to tune Pr_disaster).
    """
    g = g or scenario_map(cfg)
    n_ticks = int(math.floor(cfg.duration_T / cfg.dt + 1e-9))
    rngs = node_rngs(cfg)
    states = initial_states(cfg, g, rngs)
    specs = cfg.node_specs()
    ranges = np.array([s.radio_range for s in specs], dtype=np.float64)
    n_nodes = len(specs)
    gateway_xy = g.positions[g.gateway_vertex]
    pos = np.empty((n_ticks, n_nodes, 2))
    in_reg = np.zeros(n_ticks, dtype=bool)
    contacts = []
    movers = states if people else states[-1:]
    if not people:
        for s in states[:-1]:
            pos[:, s.node_id] = s.position
    for t in range(n_ticks):
        step = cfg.dt if t > 0 else 0.0
        for s in movers:
            if s.role == VEHICLE:
                _vehicle(s, g, cfg, rngs[s.node_id], step)
            else:
                _pedestrian(s, g, cfg, rngs[s.node_id], step)
        for s in movers:
            pos[t, s.node_id] = s.position
        pos[t, n_nodes - 1] = gateway_xy
        vx, vy = states[-1].position
        in_reg[t] = in_region(cfg, vx, vy)
        if people:
            i, j = kernels.contact_pairs(pos[t, :, 0].copy(), pos[t, :, 1].copy(), ranges)
            contacts.append(list(zip(i.tolist(), j.tolist())))
    return Trajectories(pos, contacts, in_reg, cfg.dt)


def measure_disaster_fraction(cfg: ScenarioConfig, g: MapGraph | None = None) -> float:
    return simulate_mobility(cfg, g, people=False).disaster_time_fraction


def tune_pr_disaster(cfg: ScenarioConfig, target: tuple[float, float] = (0.30, 0.40),
                     seeds=(1, 2, 3), iters: int = 12) -> tuple[float, float]:
    """Bisect Pr_disaster so the mean vehicle disaster-time fraction hits ``target``.

    Returns (pr_disaster, measured mean fraction).
    """
    goal = sum(target) / 2
    maps = {s: scenario_map(cfg.replace(rng_seed=s)) for s in seeds}

    def frac(p):
        return float(np.mean([measure_disaster_fraction(cfg.replace(pr_disaster=p, rng_seed=s), maps[s])
                              for s in seeds]))

    lo, hi = 0.0, 1.0
    best = (cfg.pr_disaster, frac(cfg.pr_disaster))
    for _ in range(iters):
        if target[0] <= best[1] <= target[1]:
            break
        mid = (lo + hi) / 2
        f = frac(mid)
        best = (mid, f)
        if f < goal:
            lo = mid
        else:
            hi = mid
    return best
