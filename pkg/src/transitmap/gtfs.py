"""GTFS static feed ingestion.

Loads the four mandatory tables (stops, routes, trips, stop_times) plus
optional shapes, validates referential integrity, and turns trip patterns
into a raw network of per-line station-to-station edges with projected
geometry.  Rows with unparseable mandatory fields are rejected and
reported through FeedModel.diagnostics; broken references raise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DanglingReference,
    MalformedRow,
    MissingFile,
    ProjectionFailure,
    ShapeMismatch,
)
from .geometry import Polyline

EARTH_RADIUS_M = 6_371_000.0

#: route_type values kept by default: tram, subway, rail
DEFAULT_ROUTE_TYPES = (0, 1, 2)

# fallback line colors, assigned to routes without route_color by sorted id
_PALETTE = (
    "#d6201f", "#0d7bc4", "#36a22f", "#f28c00", "#8d55a2",
    "#00a6a6", "#e6419b", "#7c5b3a", "#535353", "#a0b423",
    "#1b3e8f", "#c0392b", "#148f77", "#b7950b", "#6c3483",
)


# ── feed model ──────────────────────────────────────────────────────

@dataclass(frozen=True)
class Stop:
    id: str
    name: str
    lat: float
    lon: float


@dataclass(frozen=True)
class Route:
    id: str
    label: str
    route_type: int
    color: str  # "#rrggbb"


@dataclass(frozen=True)
class Trip:
    id: str
    route_id: str
    shape_id: str | None


@dataclass
class FeedModel:
    stops: dict[str, Stop]
    routes: dict[str, Route]
    trips: dict[str, Trip]
    stop_times: dict[str, list[str]]     # trip id -> stop ids in sequence order
    shapes: dict[str, list[tuple[float, float]]]  # shape id -> (lat, lon) in sequence order
    diagnostics: list[str] = field(default_factory=list)


# ── raw network ─────────────────────────────────────────────────────

@dataclass(frozen=True)
class Station:
    id: str
    name: str
    xy: tuple[float, float]  # projected meters


@dataclass(frozen=True)
class TransitLine:
    id: str
    label: str
    color: str


@dataclass(frozen=True)
class RawEdge:
    """One station-to-station segment of one line's travel path."""
    station_a: str
    station_b: str
    line: str
    path: Polyline


@dataclass
class RawNetwork:
    stations: dict[str, Station]
    lines: dict[str, TransitLine]
    edges: list[RawEdge]


# ── CSV helpers ─────────────────────────────────────────────────────

def _read_table(path: Path, required_cols: tuple[str, ...]) -> list[dict[str, str]]:
    try:
        with open(path, encoding="utf-8-sig", newline="") as fh:
            reader = csv.DictReader(fh, restkey="__extra__")
            header = reader.fieldnames
            if header is None:
                raise MalformedRow(f"{path.name}: empty file")
            missing = [c for c in required_cols if c not in header]
            if missing:
                raise MalformedRow(f"{path.name}: missing columns {missing}")
            rows = []
            for i, row in enumerate(reader, start=2):
                if "__extra__" in row:
                    raise MalformedRow(f"{path.name}:{i}: more fields than header columns")
                rows.append(row)
            return rows
    except UnicodeDecodeError as exc:
        raise MalformedRow(f"{path.name}: not valid UTF-8 ({exc})") from exc


def _parse_float(value: str | None) -> float | None:
    if value is None or value.strip() == "":
        return None
    try:
        v = float(value)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def _parse_int(value: str | None) -> int | None:
    if value is None or value.strip() == "":
        return None
    try:
        return int(value)
    except ValueError:
        return None


def _normalize_color(value: str | None) -> str | None:
    if value is None:
        return None
    v = value.strip().lstrip("#")
    if len(v) == 6 and all(c in "0123456789abcdefABCDEF" for c in v):
        return "#" + v.lower()
    return None


# ── loading ─────────────────────────────────────────────────────────

def load_feed(feed_dir: str | Path) -> FeedModel:
    """Parse a GTFS directory into a FeedModel.

    Raises MissingFile for absent mandatory tables, MalformedRow for
    structural CSV damage, DanglingReference for broken ids.  Value-level
    problems reject the row and land in diagnostics.
    """
    feed_dir = Path(feed_dir)
    for name in ("stops.txt", "routes.txt", "trips.txt", "stop_times.txt"):
        if not (feed_dir / name).is_file():
            raise MissingFile(f"mandatory feed file missing: {name}")

    diags: list[str] = []

    stops: dict[str, Stop] = {}
    for i, row in enumerate(_read_table(feed_dir / "stops.txt",
                                        ("stop_id", "stop_lat", "stop_lon")), start=2):
        sid = (row.get("stop_id") or "").strip()
        lat = _parse_float(row.get("stop_lat"))
        lon = _parse_float(row.get("stop_lon"))
        if not sid or lat is None or lon is None or not (-90 <= lat <= 90) or not (-180 <= lon <= 180):
            diags.append(f"stops.txt:{i}: rejected (bad id or coordinates)")
            continue
        stops[sid] = Stop(sid, (row.get("stop_name") or sid).strip(), lat, lon)

    routes: dict[str, Route] = {}
    raw_routes = _read_table(feed_dir / "routes.txt", ("route_id", "route_type"))
    for i, row in enumerate(raw_routes, start=2):
        rid = (row.get("route_id") or "").strip()
        rtype = _parse_int(row.get("route_type"))
        if not rid or rtype is None:
            diags.append(f"routes.txt:{i}: rejected (bad id or route_type)")
            continue
        label = (row.get("route_short_name") or "").strip() \
            or (row.get("route_long_name") or "").strip() or rid
        routes[rid] = Route(rid, label, rtype, _normalize_color(row.get("route_color")) or "")
    # assign palette colors deterministically to colorless routes
    for idx, rid in enumerate(sorted(routes)):
        if not routes[rid].color:
            r = routes[rid]
            routes[rid] = Route(r.id, r.label, r.route_type, _PALETTE[idx % len(_PALETTE)])

    shapes: dict[str, list[tuple[float, float]]] = {}
    if (feed_dir / "shapes.txt").is_file():
        shape_rows: dict[str, list[tuple[int, float, float]]] = {}
        for i, row in enumerate(_read_table(feed_dir / "shapes.txt",
                                            ("shape_id", "shape_pt_lat", "shape_pt_lon",
                                             "shape_pt_sequence")), start=2):
            sid = (row.get("shape_id") or "").strip()
            lat = _parse_float(row.get("shape_pt_lat"))
            lon = _parse_float(row.get("shape_pt_lon"))
            seq = _parse_int(row.get("shape_pt_sequence"))
            if not sid or lat is None or lon is None or seq is None:
                diags.append(f"shapes.txt:{i}: rejected (bad field)")
                continue
            shape_rows.setdefault(sid, []).append((seq, lat, lon))
        for sid, pts in shape_rows.items():
            pts.sort(key=lambda p: p[0])
            shapes[sid] = [(lat, lon) for _, lat, lon in pts]

    trips: dict[str, Trip] = {}
    for i, row in enumerate(_read_table(feed_dir / "trips.txt",
                                        ("trip_id", "route_id")), start=2):
        tid = (row.get("trip_id") or "").strip()
        rid = (row.get("route_id") or "").strip()
        if not tid or not rid:
            diags.append(f"trips.txt:{i}: rejected (bad id)")
            continue
        if rid not in routes:
            raise DanglingReference(f"trips.txt:{i}: unknown route_id {rid!r}")
        shape_id = (row.get("shape_id") or "").strip() or None
        if shape_id is not None and shapes and shape_id not in shapes:
            raise DanglingReference(f"trips.txt:{i}: unknown shape_id {shape_id!r}")
        if shape_id is not None and not shapes:
            shape_id = None  # no shapes.txt at all: ignore the reference
        trips[tid] = Trip(tid, rid, shape_id)

    seq_rows: dict[str, list[tuple[int, str]]] = {}
    for i, row in enumerate(_read_table(feed_dir / "stop_times.txt",
                                        ("trip_id", "stop_id", "stop_sequence")), start=2):
        tid = (row.get("trip_id") or "").strip()
        sid = (row.get("stop_id") or "").strip()
        seq = _parse_int(row.get("stop_sequence"))
        if not tid or not sid or seq is None:
            diags.append(f"stop_times.txt:{i}: rejected (bad field)")
            continue
        if tid not in trips:
            raise DanglingReference(f"stop_times.txt:{i}: unknown trip_id {tid!r}")
        if sid not in stops:
            raise DanglingReference(f"stop_times.txt:{i}: unknown stop_id {sid!r}")
        seq_rows.setdefault(tid, []).append((seq, sid))

    stop_times: dict[str, list[str]] = {}
    for tid, entries in seq_rows.items():
        entries.sort(key=lambda e: e[0])
        stop_times[tid] = [sid for _, sid in entries]

    return FeedModel(stops, routes, trips, stop_times, shapes, diags)


# ── projection ──────────────────────────────────────────────────────

def project_lonlat(lat: float, lon: float, lat0: float, lon0: float) -> tuple[float, float]:
    """Spherical transverse Mercator centered on (lat0, lon0), meters."""
    lam = math.radians(lon - lon0)
    phi = math.radians(lat)
    b = math.cos(phi) * math.sin(lam)
    if abs(b) >= 1.0 - 1e-9:
        raise ProjectionFailure(f"coordinate ({lat}, {lon}) too far from center meridian {lon0}")
    x = EARTH_RADIUS_M / 2.0 * math.log((1.0 + b) / (1.0 - b))
    y = EARTH_RADIUS_M * (math.atan2(math.tan(phi), math.cos(lam)) - math.radians(lat0))
    return x, y


# ── raw network construction ────────────────────────────────────────

def _snap_stops_to_shape(shape: Polyline, stop_pts: list[np.ndarray], snap_tol: float,
                         context: str) -> list[float]:
    """Arc-length parameters of each stop on the shape, forced monotone:
    each stop is matched on the remainder of the shape past its
    predecessor.  Distances beyond snap_tol raise ShapeMismatch."""
    params: list[float] = []
    prev = 0.0
    for i, q in enumerate(stop_pts):
        if prev >= 1.0 - 1e-12:
            t, d = 1.0, float(np.linalg.norm(shape.end - q))
        else:
            rest = shape.sub(prev, 1.0)
            t_loc, d = rest.nearest_point_param(q)
            t = prev + t_loc * (1.0 - prev)
        if d > snap_tol:
            raise ShapeMismatch(f"{context}: stop #{i} is {d:.1f} m from its shape "
                                f"(tolerance {snap_tol:.1f} m)")
        params.append(t)
        prev = t
    return params


def build_raw_network(
    feed: FeedModel,
    snap_tol: float = 100.0,
    route_types: tuple[int, ...] = DEFAULT_ROUTE_TYPES,
) -> RawNetwork:
    """Project stops and expand trip patterns into per-line edges.

    One edge per consecutive stop pair per distinct (route, stop sequence)
    pattern; duplicate trips of a pattern, exact geometric duplicates, and
    reversed-direction duplicates collapse to a single edge.
    """
    kept_routes = {rid for rid, r in feed.routes.items() if r.route_type in route_types}

    # patterns: (route, stop tuple, shape) -> observed once
    patterns: dict[tuple[str, tuple[str, ...], str | None], None] = {}
    for tid in sorted(feed.trips):
        trip = feed.trips[tid]
        if trip.route_id not in kept_routes:
            continue
        seq = feed.stop_times.get(tid, [])
        if len(seq) < 2:
            continue
        patterns.setdefault((trip.route_id, tuple(seq), trip.shape_id))

    used_stops = sorted({sid for _, seq, _ in patterns for sid in seq})
    if not used_stops:
        return RawNetwork({}, {}, [])

    lat0 = sum(feed.stops[s].lat for s in used_stops) / len(used_stops)
    lon0 = sum(feed.stops[s].lon for s in used_stops) / len(used_stops)
    stations = {
        sid: Station(sid, feed.stops[sid].name,
                     project_lonlat(feed.stops[sid].lat, feed.stops[sid].lon, lat0, lon0))
        for sid in used_stops
    }

    shape_cache: dict[str, Polyline] = {}

    def projected_shape(shape_id: str) -> Polyline:
        if shape_id not in shape_cache:
            pts = [project_lonlat(lat, lon, lat0, lon0) for lat, lon in feed.shapes[shape_id]]
            shape_cache[shape_id] = Polyline(pts)
        return shape_cache[shape_id]

    edges: list[RawEdge] = []
    seen: set[tuple[str, str, str, tuple]] = set()

    for route_id, seq, shape_id in sorted(patterns, key=lambda p: (p[0], p[1], p[2] or "")):
        stop_pts = [np.asarray(stations[s].xy) for s in seq]
        if shape_id is not None:
            shape = projected_shape(shape_id)
            params = _snap_stops_to_shape(shape, stop_pts, snap_tol,
                                          context=f"route {route_id} shape {shape_id}")
        else:
            params = None
        for i in range(len(seq) - 1):
            sa, sb = seq[i], seq[i + 1]
            if sa == sb:
                continue
            if params is not None and params[i + 1] > params[i] + 1e-9:
                path = shape.sub(params[i], params[i + 1])
            else:
                path = Polyline([stations[sa].xy, stations[sb].xy])
            # canonical key: orient from the smaller station id
            if sa <= sb:
                key_path = path
                key = (sa, sb, route_id, tuple(np.round(key_path.pts, 2).ravel()))
            else:
                key_path = path.reversed()
                key = (sb, sa, route_id, tuple(np.round(key_path.pts, 2).ravel()))
            if key in seen:
                continue
            seen.add(key)
            edges.append(RawEdge(sa, sb, route_id, path))

    used_lines = sorted({e.line for e in edges})
    lines = {rid: TransitLine(rid, feed.routes[rid].label, feed.routes[rid].color)
             for rid in used_lines}
    return RawNetwork(stations, lines, edges)
