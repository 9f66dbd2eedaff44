"""Feed ingestion: parsing, diagnostics, referential errors, projection,
pattern expansion, and shape snapping."""

from __future__ import annotations

import math

import numpy as np
import pytest

from transitmap.errors import (
    DanglingReference,
    MalformedRow,
    MissingFile,
    ProjectionFailure,
    ShapeMismatch,
)
from transitmap.geometry import Polyline
from transitmap.gtfs import (
    _snap_stops_to_shape,
    build_raw_network,
    load_feed,
    project_lonlat,
)
from synth import basic_feed_tables, write_gtfs


# ── loading ─────────────────────────────────────────────────────────

def _minimal_tables():
    return dict(
        stops=[
            {"stop_id": "s1", "stop_name": "One", "stop_lat": 47.0, "stop_lon": 9.0},
            {"stop_id": "s2", "stop_name": "Two", "stop_lat": 47.01, "stop_lon": 9.0},
        ],
        routes=[{"route_id": "r", "route_short_name": "R", "route_type": 0}],
        trips=[{"trip_id": "t", "route_id": "r"}],
        stop_times=[
            {"trip_id": "t", "stop_id": "s1", "stop_sequence": 1},
            {"trip_id": "t", "stop_id": "s2", "stop_sequence": 2},
        ],
    )


def test_minimal_feed_one_straight_edge(tmp_path):
    feed = load_feed(write_gtfs(tmp_path / "feed", **_minimal_tables()))
    net = build_raw_network(feed)
    assert len(net.stations) == 2
    assert len(net.edges) == 1
    e = net.edges[0]
    assert (e.station_a, e.station_b, e.line) == ("s1", "s2", "r")
    assert len(e.path.pts) == 2  # straight: no shape present
    assert np.allclose(e.path.start, net.stations["s1"].xy)
    assert np.allclose(e.path.end, net.stations["s2"].xy)


def test_missing_mandatory_file(tmp_path):
    t = _minimal_tables()
    del t["stop_times"]
    with pytest.raises(MissingFile):
        load_feed(write_gtfs(tmp_path / "feed", **t))


def test_unknown_stop_reference(tmp_path):
    t = _minimal_tables()
    t["stop_times"][1]["stop_id"] = "ghost"
    with pytest.raises(DanglingReference):
        load_feed(write_gtfs(tmp_path / "feed", **t))


def test_unknown_route_reference(tmp_path):
    t = _minimal_tables()
    t["trips"][0]["route_id"] = "ghost"
    with pytest.raises(DanglingReference):
        load_feed(write_gtfs(tmp_path / "feed", **t))


def test_missing_column_is_malformed(tmp_path):
    t = _minimal_tables()
    t["stops"] = [{"stop_id": "s1", "stop_name": "One"}]  # no coordinates at all
    with pytest.raises(MalformedRow):
        load_feed(write_gtfs(tmp_path / "feed", **t))


def test_bad_value_rows_are_rejected_with_diagnostics(tmp_path):
    t = _minimal_tables()
    t["stops"].append({"stop_id": "bad", "stop_name": "Bad", "stop_lat": "not-a-number",
                       "stop_lon": 9.0})
    feed = load_feed(write_gtfs(tmp_path / "feed", **t))
    assert "bad" not in feed.stops
    assert any("stops.txt:4" in d for d in feed.diagnostics)


def test_stop_times_sorted_by_sequence(tmp_path):
    t = _minimal_tables()
    t["stop_times"] = list(reversed(t["stop_times"]))
    feed = load_feed(write_gtfs(tmp_path / "feed", **t))
    assert feed.stop_times["t"] == ["s1", "s2"]


# ── projection ──────────────────────────────────────────────────────

def _haversine(lat1, lon1, lat2, lon2, r=6_371_000.0):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * r * math.asin(math.sqrt(a))


def test_projection_preserves_local_distances():
    lat0, lon0 = 48.78, 9.18
    rng = np.random.default_rng(17)
    for _ in range(40):
        lat1, lon1 = lat0 + rng.uniform(-0.2, 0.2), lon0 + rng.uniform(-0.2, 0.2)
        lat2, lon2 = lat0 + rng.uniform(-0.2, 0.2), lon0 + rng.uniform(-0.2, 0.2)
        x1, y1 = project_lonlat(lat1, lon1, lat0, lon0)
        x2, y2 = project_lonlat(lat2, lon2, lat0, lon0)
        d_proj = math.hypot(x2 - x1, y2 - y1)
        d_true = _haversine(lat1, lon1, lat2, lon2)
        assert d_proj == pytest.approx(d_true, rel=2e-3, abs=0.5)


def test_projection_center_is_origin():
    assert project_lonlat(47.0, 9.0, 47.0, 9.0) == pytest.approx((0.0, 0.0))


def test_projection_failure_far_from_meridian():
    with pytest.raises(ProjectionFailure):
        project_lonlat(0.0, 99.0, 0.0, 9.0)


# ── pattern expansion ───────────────────────────────────────────────

def test_five_route_feed_counts(tmp_path):
    # hand count: rail stations A-F, edges r1:AB,BC r2:AB,BC r3:CD r4:BE r5:EF
    feed = load_feed(write_gtfs(tmp_path / "feed", **basic_feed_tables()))
    net = build_raw_network(feed)
    assert sorted(net.stations) == ["A", "B", "C", "D", "E", "F"]
    assert len(net.edges) == 7
    assert sorted(net.lines) == ["r1", "r2", "r3", "r4", "r5"]
    assert net.lines["r1"].color == "#cc0000"
    assert all(line.color.startswith("#") and len(line.color) == 7
               for line in net.lines.values())


def test_duplicate_and_reversed_trips_collapse(tmp_path):
    t = _minimal_tables()
    t["trips"].append({"trip_id": "t2", "route_id": "r"})
    t["trips"].append({"trip_id": "t3", "route_id": "r"})
    t["stop_times"] += [
        {"trip_id": "t2", "stop_id": "s1", "stop_sequence": 1},
        {"trip_id": "t2", "stop_id": "s2", "stop_sequence": 2},
        # reversed service direction over the same geometry
        {"trip_id": "t3", "stop_id": "s2", "stop_sequence": 1},
        {"trip_id": "t3", "stop_id": "s1", "stop_sequence": 2},
    ]
    feed = load_feed(write_gtfs(tmp_path / "feed", **t))
    net = build_raw_network(feed)
    assert len(net.edges) == 1


def test_route_type_filter(tmp_path):
    feed = load_feed(write_gtfs(tmp_path / "feed", **basic_feed_tables()))
    net_all = build_raw_network(feed, route_types=(0, 1, 2, 3))
    assert "G" in net_all.stations
    assert len(net_all.edges) == 8
    net_bus = build_raw_network(feed, route_types=(3,))
    assert sorted(net_bus.stations) == ["A", "G"]
    assert len(net_bus.edges) == 1


# ── shape snapping ──────────────────────────────────────────────────

def test_snap_monotone_on_u_shaped_shape():
    # U shape: east 1000 m, north 200 m, back west 1000 m (length 2200).
    # Third stop at (500, 90) is nearer the first leg (90 m) than the
    # return leg (110 m); the monotone restriction must still pick the
    # return leg because the previous stop already sits past the turn.
    shape = Polyline([(0, 0), (1000, 0), (1000, 200), (0, 200)])
    stops = [np.array(p, dtype=float) for p in [(0, 5), (995, 100), (500, 90), (0, 195)]]
    params = _snap_stops_to_shape(shape, stops, snap_tol=150.0, context="u-test")
    assert all(b > a for a, b in zip(params, params[1:]))
    # frozen: x=500 on the return leg is arc length 1700 of 2200
    assert params[2] == pytest.approx(1700 / 2200, abs=1e-3)


def test_snap_beyond_tolerance_raises():
    shape = Polyline([(0, 0), (1000, 0)])
    stops = [np.array([0.0, 0.0]), np.array([500.0, 300.0])]
    with pytest.raises(ShapeMismatch):
        _snap_stops_to_shape(shape, stops, snap_tol=100.0, context="far-test")


def test_shape_detour_followed_between_stops(tmp_path):
    # stops at the shape's ends; the edge path must follow the detour,
    # giving an edge clearly longer than the straight connection
    lat0, lon0 = 47.0, 9.0
    dlat = 1.0 / 111194.9
    dlon = 1.0 / (111194.9 * math.cos(math.radians(lat0)))
    t = _minimal_tables()
    t["stops"] = [
        {"stop_id": "s1", "stop_name": "One", "stop_lat": lat0, "stop_lon": lon0},
        {"stop_id": "s2", "stop_name": "Two", "stop_lat": lat0, "stop_lon": lon0 + 1000 * dlon},
    ]
    t["trips"][0]["shape_id"] = "sh"
    t["shapes"] = [
        {"shape_id": "sh", "shape_pt_lat": lat0, "shape_pt_lon": lon0, "shape_pt_sequence": 0},
        {"shape_id": "sh", "shape_pt_lat": lat0 + 400 * dlat,
         "shape_pt_lon": lon0 + 500 * dlon, "shape_pt_sequence": 1},
        {"shape_id": "sh", "shape_pt_lat": lat0, "shape_pt_lon": lon0 + 1000 * dlon,
         "shape_pt_sequence": 2},
    ]
    feed = load_feed(write_gtfs(tmp_path / "feed", **t))
    net = build_raw_network(feed)
    assert len(net.edges) == 1
    path = net.edges[0].path
    # detour length ~ 2*sqrt(500^2+400^2) = 1280.6 m vs 1000 m straight
    assert path.length == pytest.approx(2 * math.hypot(500, 400), rel=2e-3)
    assert len(path.pts) >= 3


def test_unknown_shape_reference(tmp_path):
    t = _minimal_tables()
    t["trips"][0]["shape_id"] = "ghost"
    t["shapes"] = [
        {"shape_id": "sh", "shape_pt_lat": 47.0, "shape_pt_lon": 9.0, "shape_pt_sequence": 0},
        {"shape_id": "sh", "shape_pt_lat": 47.1, "shape_pt_lon": 9.0, "shape_pt_sequence": 1},
    ]
    with pytest.raises(DanglingReference):
        load_feed(write_gtfs(tmp_path / "feed", **t))
