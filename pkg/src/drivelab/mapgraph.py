"""Vectorized map representation and its adjacency graph.

Polylines are resampled into short directed vectors (3 m nominal interval);
vectors are linked to their nearest left, right, and next neighbors, with
edge weights equal to the Euclidean distance between start points. Travel
distances between vectors come from Dijkstra over that graph, treating
edges as bidirectional so distances are defined between any connected pair.

Maps are plain JSON documents (polylines with reachability declarations,
polygons with a type tag) and round-trip exactly through save/load.
"""

from __future__ import annotations

import enum
import heapq
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import point_to_polyline_distance

DEFAULT_INTERVAL = 3.0
POLYGON_VECTOR_COUNT = 20


class TrafficLight(enum.Enum):
    NONE = "none"
    RED = "red"
    GREEN = "green"


class PolygonKind(enum.Enum):
    """Polygon types, declared in priority order for neighborhood selection."""

    STOP_LINE = "stop_line"
    CROSSWALK = "crosswalk"
    INTERSECTION = "intersection"
    WALKWAY = "walkway"
    CAR_PARK = "car_park"


POLYGON_PRIORITY = {kind: i for i, kind in enumerate(PolygonKind)}


@dataclass(frozen=True)
class MapVector:
    """One short directed map segment plus its graph neighbor links."""

    start: tuple
    end: tuple
    polyline_id: str
    sequence_order: int
    left_neighbor: int | None = None
    right_neighbor: int | None = None
    next_vector: int | None = None
    lane_width: float | None = None
    traffic_light: TrafficLight = TrafficLight.NONE
    dist_to_goal: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "start", (float(self.start[0]), float(self.start[1])))
        object.__setattr__(self, "end", (float(self.end[0]), float(self.end[1])))

    @property
    def length(self) -> float:
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))


def _as_point_tuple(points) -> tuple:
    return tuple((float(p[0]), float(p[1])) for p in np.asarray(points, dtype=np.float64))


@dataclass(frozen=True)
class PolylineSpec:
    """Input description of one lane-like polyline.

    Reachable left/right polylines and driving successors are declared
    explicitly in the map document; the graph builder trusts them.
    """

    polyline_id: str
    points: tuple
    lane_width: float | None = None
    traffic_light: TrafficLight = TrafficLight.NONE
    left_id: str | None = None
    right_id: str | None = None
    successor_ids: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "points", _as_point_tuple(self.points))
        object.__setattr__(self, "successor_ids", tuple(self.successor_ids))

    def points_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)


@dataclass(frozen=True)
class PolygonSpec:
    """Input description of one polygon element (crosswalk, stop line, ...)."""

    polygon_id: str
    points: tuple
    kind: PolygonKind = PolygonKind.CROSSWALK

    def __post_init__(self):
        object.__setattr__(self, "points", _as_point_tuple(self.points))

    def points_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)


@dataclass(frozen=True)
class MapData:
    """Serializable map document: the inputs build_graph consumes."""

    polylines: tuple
    polygons: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "polylines", tuple(self.polylines))
        object.__setattr__(self, "polygons", tuple(self.polygons))


def vectorize_polyline(
    points,
    interval: float,
    polyline_id: str = "",
    lane_width: float | None = None,
    traffic_light: TrafficLight = TrafficLight.NONE,
) -> list[MapVector]:
    """Resample a polyline by arc length into vectors of the given interval.

    The final vector carries the remainder and may be shorter; the vector
    count is ceil(arclength / interval).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("polyline needs at least 2 points")
    if interval <= 0.0:
        raise ValueError("interval must be positive")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = float(seg.sum())
    if total <= 0.0:
        raise ValueError("degenerate polyline with zero length")
    cum = np.concatenate(([0.0], np.cumsum(seg)))

    n_full = int(np.floor(total / interval + 1e-9))
    remainder = total - n_full * interval
    count = n_full + (1 if remainder > 1e-9 else 0)
    s = np.minimum(np.arange(count + 1, dtype=np.float64) * interval, total)
    s[-1] = total
    xs = np.interp(s, cum, pts[:, 0])
    ys = np.interp(s, cum, pts[:, 1])
    return [
        MapVector(
            start=(xs[i], ys[i]),
            end=(xs[i + 1], ys[i + 1]),
            polyline_id=polyline_id,
            sequence_order=i,
            lane_width=lane_width,
            traffic_light=traffic_light,
        )
        for i in range(count)
    ]


def vectorize_polygon(points, polygon_id: str, n_vectors: int = POLYGON_VECTOR_COUNT) -> list[MapVector]:
    """Approximate a closed polygon boundary with a fixed number of vectors."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] < 3:
        raise ValueError("polygon needs at least 3 points")
    if np.linalg.norm(pts[0] - pts[-1]) > 1e-12:
        pts = np.vstack([pts, pts[0]])
    perimeter = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
    if perimeter <= 0.0:
        raise ValueError("degenerate polygon with zero perimeter")
    return vectorize_polyline(pts, perimeter / n_vectors, polyline_id=polygon_id)[:n_vectors]


@dataclass(frozen=True)
class SelectedPolyline:
    polyline_id: str
    vectors: tuple  # MapVector copies with dist_to_goal filled


@dataclass(frozen=True)
class SelectedPolygon:
    polygon_id: str
    kind: PolygonKind
    vectors: tuple


@dataclass(frozen=True)
class Neighborhood:
    polylines: tuple
    polygons: tuple


@dataclass(frozen=True)
class NeighborhoodLimits:
    max_polylines: int = 30
    max_polygons: int = 20
    radius: float = 35.0


class VectorMapGraph:
    """Immutable vector map graph; all queries are read-only and reentrant."""

    def __init__(self, vectors, adjacency, polyline_vectors, polygon_vectors, polygon_kinds, data=None):
        self.vectors: tuple = tuple(vectors)
        # adjacency[i] -> tuple of (j, weight); validated to reference real vectors
        self.adjacency: tuple = tuple(tuple(edges) for edges in adjacency)
        for edges in self.adjacency:
            for j, _ in edges:
                if not 0 <= j < len(self.vectors):
                    raise ValueError(f"adjacency references unknown vector {j}")
        self.polyline_vectors: dict = dict(polyline_vectors)
        self.polygon_vectors: dict = dict(polygon_vectors)
        self.polygon_kinds: dict = dict(polygon_kinds)
        self.data: MapData | None = data
        self._starts = np.array([v.start for v in self.vectors], dtype=np.float64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.vectors)

    def start_points(self) -> np.ndarray:
        return self._starts.copy()

    def polyline_start_points(self, polyline_id: str) -> np.ndarray:
        ids = self.polyline_vectors[polyline_id]
        return self._starts[list(ids)]

    def nearest_vector(self, point) -> int:
        if len(self.vectors) == 0:
            raise ValueError("empty graph")
        d = np.linalg.norm(self._starts - np.asarray(point, dtype=np.float64), axis=1)
        return int(np.argmin(d))

    def _check_id(self, vid: int):
        if not 0 <= vid < len(self.vectors):
            raise KeyError(f"unknown vector id {vid}")

    def distances_from(self, source: int) -> np.ndarray:
        """Dijkstra shortest path sums from one vector to all others."""
        self._check_id(source)
        dist = np.full(len(self.vectors), np.inf)
        dist[source] = 0.0
        heap = [(0.0, source)]
        done = np.zeros(len(self.vectors), dtype=bool)
        while heap:
            d, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            for v, w in self.adjacency[u]:
                nd = d + w
                if nd < dist[v]:
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        return dist

    def travel_distance(self, from_id: int, to_id: int) -> float:
        """Shortest travel distance in meters; inf when unreachable."""
        self._check_id(from_id)
        self._check_id(to_id)
        if from_id == to_id:
            return 0.0
        return float(self.distances_from(from_id)[to_id])

    def query_neighborhood(
        self,
        origin,
        goal_vector: int | None = None,
        limits: NeighborhoodLimits = NeighborhoodLimits(),
    ) -> Neighborhood:
        """Topologically nearest polylines and highest-priority polygons.

        Polylines qualify when at least one member vector starts within the
        radius; they are ranked by the minimum travel distance from their
        member vectors to the vector nearest the origin (ties by id).
        Polygons qualify when their boundary is within the radius and are
        ranked by type priority. Every returned vector carries its travel
        distance to `goal_vector` when one is given.
        """
        origin = np.asarray(origin, dtype=np.float64)
        if len(self.vectors) == 0:
            return Neighborhood(polylines=(), polygons=())
        in_radius = np.linalg.norm(self._starts - origin, axis=1) <= limits.radius

        origin_vid = self.nearest_vector(origin)
        d_origin = self.distances_from(origin_vid)
        d_goal = self.distances_from(goal_vector) if goal_vector is not None else None

        ranked = []
        for pid, vids in self.polyline_vectors.items():
            if not any(in_radius[v] for v in vids):
                continue
            topo = float(np.min(d_origin[list(vids)]))
            ranked.append((topo, pid, vids))
        ranked.sort(key=lambda item: (item[0], item[1]))

        polylines = []
        for topo, pid, vids in ranked[: limits.max_polylines]:
            vecs = tuple(
                replace(self.vectors[v], dist_to_goal=float(d_goal[v]) if d_goal is not None else None)
                for v in vids
                if in_radius[v]
            )
            polylines.append(SelectedPolyline(polyline_id=pid, vectors=vecs))

        candidates = []
        for gid, vids in self.polygon_vectors.items():
            boundary = np.array([self.vectors[v].start for v in vids] + [self.vectors[vids[-1]].end])
            dist = float(point_to_polyline_distance(origin, boundary)[0])
            kept = tuple(v for v in vids if in_radius[v])
            if dist <= limits.radius and kept:
                candidates.append((POLYGON_PRIORITY[self.polygon_kinds[gid]], gid, kept))
        candidates.sort(key=lambda item: (item[0], item[1]))
        polygons = tuple(
            SelectedPolygon(
                polygon_id=gid,
                kind=self.polygon_kinds[gid],
                vectors=tuple(self.vectors[v] for v in vids),
            )
            for _, gid, vids in candidates[: limits.max_polygons]
        )
        return Neighborhood(polylines=tuple(polylines), polygons=polygons)


def build_graph(polylines, polygons=(), interval: float = DEFAULT_INTERVAL) -> VectorMapGraph:
    """Vectorize polylines/polygons and assemble the adjacency graph.

    Next edges connect consecutive vectors of a polyline and the last vector
    to the first vector of each declared successor polyline. Left/right edges
    connect each vector to the nearest vector (by start point) of its
    declared reachable left/right polyline. Polygons contribute no edges.
    """
    polylines = tuple(polylines)
    polygons = tuple(polygons)
    by_id = {p.polyline_id: p for p in polylines}
    if len(by_id) != len(polylines):
        raise ValueError("duplicate polyline ids")

    vectors: list[MapVector] = []
    polyline_vectors: dict[str, tuple] = {}
    for spec in polylines:
        vecs = vectorize_polyline(
            spec.points_array(),
            interval,
            polyline_id=spec.polyline_id,
            lane_width=spec.lane_width,
            traffic_light=spec.traffic_light,
        )
        ids = tuple(range(len(vectors), len(vectors) + len(vecs)))
        polyline_vectors[spec.polyline_id] = ids
        vectors.extend(vecs)

    polygon_vectors: dict[str, tuple] = {}
    polygon_kinds: dict[str, PolygonKind] = {}
    for spec in polygons:
        vecs = vectorize_polygon(spec.points_array(), spec.polygon_id)
        ids = tuple(range(len(vectors), len(vectors) + len(vecs)))
        polygon_vectors[spec.polygon_id] = ids
        polygon_kinds[spec.polygon_id] = spec.kind
        vectors.extend(vecs)

    starts = np.array([v.start for v in vectors], dtype=np.float64).reshape(-1, 2)

    def weight(i: int, j: int) -> float:
        return float(np.linalg.norm(starts[i] - starts[j]))

    edges: set[tuple[int, int]] = set()
    links: dict[int, dict[str, int]] = {i: {} for i in range(len(vectors))}

    def add_edge(i: int, j: int):
        edges.add((min(i, j), max(i, j)))

    for spec in polylines:
        ids = polyline_vectors[spec.polyline_id]
        for a, b in zip(ids, ids[1:]):
            links[a]["next"] = b
            add_edge(a, b)
        for succ in spec.successor_ids:
            if succ not in polyline_vectors:
                raise KeyError(f"unknown successor polyline {succ!r}")
            succ_first = polyline_vectors[succ][0]
            if succ_first != ids[-1]:
                links[ids[-1]].setdefault("next", succ_first)
                add_edge(ids[-1], succ_first)
        for side, other_id in (("left", spec.left_id), ("right", spec.right_id)):
            if other_id is None:
                continue
            if other_id not in polyline_vectors:
                raise KeyError(f"unknown {side} polyline {other_id!r}")
            other_ids = list(polyline_vectors[other_id])
            other_starts = starts[other_ids]
            for vid in ids:
                nearest = other_ids[int(np.argmin(np.linalg.norm(other_starts - starts[vid], axis=1)))]
                links[vid][side] = nearest
                add_edge(vid, nearest)

    vectors = [
        replace(
            v,
            next_vector=links[i].get("next"),
            left_neighbor=links[i].get("left"),
            right_neighbor=links[i].get("right"),
        )
        for i, v in enumerate(vectors)
    ]

    adjacency: list[list[tuple[int, float]]] = [[] for _ in vectors]
    for i, j in sorted(edges):
        w = weight(i, j)
        adjacency[i].append((j, w))
        adjacency[j].append((i, w))

    return VectorMapGraph(
        vectors=vectors,
        adjacency=adjacency,
        polyline_vectors=polyline_vectors,
        polygon_vectors=polygon_vectors,
        polygon_kinds=polygon_kinds,
        data=MapData(polylines=polylines, polygons=polygons),
    )


# ---------------------------------------------------------------------------
# Synthetic map generators (no real dataset parsers ship with this package).


def ring_map(radius: float, interval: float = DEFAULT_INTERVAL, lane_width: float | None = 3.5) -> MapData:
    """Closed circular lane centered at the origin, its own successor."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    dense = max(int(np.ceil(2 * np.pi * radius / min(interval / 8.0, 0.25))), 64)
    ang = np.linspace(0.0, 2 * np.pi, dense + 1)
    pts = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    spec = PolylineSpec(
        polyline_id="ring",
        points=pts,
        lane_width=lane_width,
        successor_ids=("ring",),
    )
    return MapData(polylines=(spec,))


def corridor_map(
    length: float,
    n_lanes: int = 2,
    lane_spacing: float = 3.5,
    with_crosswalk: bool = True,
) -> MapData:
    """Parallel straight lanes along +x with mutual left/right reachability."""
    lanes = []
    for i in range(n_lanes):
        y = i * lane_spacing
        lanes.append(
            PolylineSpec(
                polyline_id=f"lane{i}",
                points=[(0.0, y), (length, y)],
                lane_width=lane_spacing,
                left_id=f"lane{i + 1}" if i + 1 < n_lanes else None,
                right_id=f"lane{i - 1}" if i > 0 else None,
            )
        )
    polygons = ()
    if with_crosswalk:
        x0 = length / 2.0
        lo, hi = -lane_spacing, (n_lanes - 0.5) * lane_spacing
        polygons = (
            PolygonSpec(
                polygon_id="crosswalk0",
                points=[(x0 - 2.0, lo), (x0 + 2.0, lo), (x0 + 2.0, hi), (x0 - 2.0, hi)],
                kind=PolygonKind.CROSSWALK,
            ),
        )
    return MapData(polylines=tuple(lanes), polygons=polygons)


def intersection_map(arm_length: float = 40.0, half_width: float = 6.0) -> MapData:
    """Four-way intersection: approach/exit lanes joined by connector arcs."""
    arms = {
        "e": np.array([1.0, 0.0]),
        "n": np.array([0.0, 1.0]),
        "w": np.array([-1.0, 0.0]),
        "s": np.array([0.0, -1.0]),
    }
    order = ["e", "n", "w", "s"]
    polylines = []
    for name, u in arms.items():
        outer = u * (half_width + arm_length)
        inner = u * half_width
        polylines.append(
            PolylineSpec(
                polyline_id=f"in_{name}",
                points=[tuple(outer), tuple(inner)],
                successor_ids=(f"conn_{name}_straight", f"conn_{name}_left"),
            )
        )
        polylines.append(PolylineSpec(polyline_id=f"out_{name}", points=[tuple(inner), tuple(outer)]))
    for i, name in enumerate(order):
        u = arms[name]
        straight_exit = order[(i + 2) % 4]
        left_exit = order[(i + 1) % 4]
        polylines.append(
            PolylineSpec(
                polyline_id=f"conn_{name}_straight",
                points=[tuple(u * half_width), tuple(-u * half_width)],
                successor_ids=(f"out_{straight_exit}",),
            )
        )
        # quarter arc from the approach point to the left exit point
        v = arms[left_exit]
        start, end = u * half_width, v * half_width
        center = start + end  # corner of the square, arc center
        a0 = np.arctan2(start[1] - center[1], start[0] - center[0])
        a1 = np.arctan2(end[1] - center[1], end[0] - center[0])
        da = (a1 - a0 + np.pi) % (2 * np.pi) - np.pi
        ts = np.linspace(0.0, 1.0, 12)
        arc = np.stack(
            [
                center[0] + half_width * np.cos(a0 + ts * da),
                center[1] + half_width * np.sin(a0 + ts * da),
            ],
            axis=1,
        )
        polylines.append(
            PolylineSpec(
                polyline_id=f"conn_{name}_left",
                points=arc,
                successor_ids=(f"out_{left_exit}",),
            )
        )
    w = half_width
    polygons = [
        PolygonSpec("box", [(-w, -w), (w, -w), (w, w), (-w, w)], PolygonKind.INTERSECTION)
    ]
    for name, u in arms.items():
        n = np.array([-u[1], u[0]])
        a = u * (w + 0.5) - n * w
        b = u * (w + 2.5) - n * w
        c = u * (w + 2.5) + n * w
        d = u * (w + 0.5) + n * w
        polygons.append(
            PolygonSpec(f"crosswalk_{name}", [tuple(a), tuple(b), tuple(c), tuple(d)], PolygonKind.CROSSWALK)
        )
    return MapData(polylines=tuple(polylines), polygons=tuple(polygons))


# ---------------------------------------------------------------------------
# JSON round trip.


def map_to_json(data: MapData) -> dict:
    return {
        "polylines": [
            {
                "id": p.polyline_id,
                "points": [list(pt) for pt in p.points],
                "lane_width": p.lane_width,
                "traffic_light": p.traffic_light.value,
                "left": p.left_id,
                "right": p.right_id,
                "successors": list(p.successor_ids),
            }
            for p in data.polylines
        ],
        "polygons": [
            {"id": g.polygon_id, "points": [list(pt) for pt in g.points], "kind": g.kind.value}
            for g in data.polygons
        ],
    }


def map_from_json(doc: dict) -> MapData:
    polylines = tuple(
        PolylineSpec(
            polyline_id=p["id"],
            points=p["points"],
            lane_width=p.get("lane_width"),
            traffic_light=TrafficLight(p.get("traffic_light", "none")),
            left_id=p.get("left"),
            right_id=p.get("right"),
            successor_ids=tuple(p.get("successors", ())),
        )
        for p in doc.get("polylines", ())
    )
    polygons = tuple(
        PolygonSpec(polygon_id=g["id"], points=g["points"], kind=PolygonKind(g["kind"]))
        for g in doc.get("polygons", ())
    )
    return MapData(polylines=polylines, polygons=polygons)


def save_map(path, data: MapData):
    with open(path, "w") as fh:
        json.dump(map_to_json(data), fh, indent=1)


def load_map(path) -> MapData:
    with open(path) as fh:
        return map_from_json(json.load(fh))
