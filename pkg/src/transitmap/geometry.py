"""Planar polyline geometry: arc-length parametrization, nearest-point
queries over a packed R-tree, shared-segment detection between polylines,
parallel offsetting with miter/bevel joins, and path averaging.

Coordinates are projected meters throughout.  Polyline parameters t are
arc-length fractions in [0, 1].
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSegment, SelfIntersectionUnresolved

_EPS = 1e-9


# ── polyline ────────────────────────────────────────────────────────

class Polyline:
    """Immutable planar polyline backed by an (N, 2) float array.

    Consecutive duplicate points are dropped on construction; fewer than
    two distinct points raise DegenerateSegment.
    """

    __slots__ = ("pts", "_cum", "_rtree")

    def __init__(self, points) -> None:
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DegenerateSegment(f"expected (N, 2) points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DegenerateSegment("non-finite coordinate in polyline")
        if len(pts) >= 2:
            keep = np.ones(len(pts), dtype=bool)
            keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > _EPS
            pts = pts[keep]
        if len(pts) < 2:
            raise DegenerateSegment("polyline collapsed below two distinct points")
        self.pts = pts
        self.pts.setflags(write=False)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        self._cum = np.concatenate(([0.0], np.cumsum(seg)))
        self._rtree: _SegmentRTree | None = None

    # basic measures -------------------------------------------------

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    @property
    def start(self) -> np.ndarray:
        return self.pts[0]

    @property
    def end(self) -> np.ndarray:
        return self.pts[-1]

    def bbox(self) -> tuple[float, float, float, float]:
        mn = self.pts.min(axis=0)
        mx = self.pts.max(axis=0)
        return (float(mn[0]), float(mn[1]), float(mx[0]), float(mx[1]))

    def reversed(self) -> "Polyline":
        return Polyline(self.pts[::-1])

    # arc-length parametrization --------------------------------------

    def param_points(self, ts) -> np.ndarray:
        """Points at arc-length fractions ts (vectorized)."""
        ts = np.clip(np.asarray(ts, dtype=float), 0.0, 1.0)
        s = ts * self.length
        idx = np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self.pts) - 2)
        seg_len = self._cum[idx + 1] - self._cum[idx]
        local = np.where(seg_len > _EPS, (s - self._cum[idx]) / np.maximum(seg_len, _EPS), 0.0)
        p0 = self.pts[idx]
        return p0 + local[:, None] * (self.pts[idx + 1] - p0)

    def param_point(self, t: float) -> np.ndarray:
        return self.param_points([t])[0]

    def tangent_at(self, t: float) -> np.ndarray:
        """Unit tangent of the segment containing parameter t."""
        s = min(max(t, 0.0), 1.0) * self.length
        idx = int(np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self.pts) - 2))
        d = self.pts[idx + 1] - self.pts[idx]
        n = np.linalg.norm(d)
        return d / max(n, _EPS)

    # nearest point ----------------------------------------------------

    def nearest_point_param(self, q) -> tuple[float, float]:
        """Arc-length parameter and distance of the point on this polyline
        nearest to q.  Uses a lazily built R-tree over the segments."""
        if self._rtree is None:
            self._rtree = _SegmentRTree(self.pts[:-1], self.pts[1:])
        seg_idx, local_t, dist = self._rtree.nearest(np.asarray(q, dtype=float))
        seg_len = self._cum[seg_idx + 1] - self._cum[seg_idx]
        t = (self._cum[seg_idx] + local_t * seg_len) / max(self.length, _EPS)
        return float(t), float(dist)

    def nearest_many(self, qs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Dense nearest-point query for many points at once.

        Returns (params, distances).  O(len(qs) * segments) but fully
        vectorized; preferred over per-point tree queries inside sweeps.
        """
        p0 = self.pts[:-1]
        d = self.pts[1:] - p0
        len2 = np.maximum(np.einsum("ij,ij->i", d, d), _EPS**2)
        rel = qs[:, None, :] - p0[None, :, :]
        tloc = np.clip(np.einsum("nmj,mj->nm", rel, d) / len2[None, :], 0.0, 1.0)
        proj = p0[None, :, :] + tloc[..., None] * d[None, :, :]
        dist2 = np.einsum("nmj,nmj->nm", qs[:, None, :] - proj, qs[:, None, :] - proj)
        best = np.argmin(dist2, axis=1)
        rows = np.arange(len(qs))
        seg_len = self._cum[1:] - self._cum[:-1]
        s = self._cum[best] + tloc[rows, best] * seg_len[best]
        return s / max(self.length, _EPS), np.sqrt(dist2[rows, best])

    # slicing ----------------------------------------------------------

    def sub(self, t0: float, t1: float) -> "Polyline":
        """Sub-polyline between arc-length fractions t0 < t1."""
        if t1 <= t0 + _EPS:
            raise DegenerateSegment(f"empty parameter range [{t0}, {t1}]")
        s0, s1 = t0 * self.length, t1 * self.length
        i0 = int(np.searchsorted(self._cum, s0, side="right"))
        i1 = int(np.searchsorted(self._cum, s1, side="left"))
        mid = self.pts[i0:i1]
        head = self.param_points([t0])
        tail = self.param_points([t1])
        return Polyline(np.vstack([head, mid, tail]))

    def resample(self, n: int) -> np.ndarray:
        """n points evenly spaced by arc length (endpoints included)."""
        return self.param_points(np.linspace(0.0, 1.0, max(int(n), 2)))

    def __len__(self) -> int:
        return len(self.pts)

    def __repr__(self) -> str:
        return f"Polyline({len(self.pts)} pts, {self.length:.1f} m)"


# ── packed R-tree over segments ─────────────────────────────────────

class _SegmentRTree:
    """Static STR-packed R-tree over line segments for nearest queries."""

    FANOUT = 8

    def __init__(self, p0: np.ndarray, p1: np.ndarray) -> None:
        self.p0 = p0
        self.p1 = p1
        m = len(p0)
        boxes = np.empty((m, 4))
        boxes[:, 0] = np.minimum(p0[:, 0], p1[:, 0])
        boxes[:, 1] = np.minimum(p0[:, 1], p1[:, 1])
        boxes[:, 2] = np.maximum(p0[:, 0], p1[:, 0])
        boxes[:, 3] = np.maximum(p0[:, 1], p1[:, 1])
        # STR packing: sort by x center, slice, sort slices by y center.
        cx = (boxes[:, 0] + boxes[:, 2]) / 2
        cy = (boxes[:, 1] + boxes[:, 3]) / 2
        n_leaves = max(1, math.ceil(m / self.FANOUT))
        n_slices = max(1, math.ceil(math.sqrt(n_leaves)))
        per_slice = math.ceil(m / n_slices)
        by_x = np.argsort(cx, kind="stable")
        order = np.empty(m, dtype=int)
        for i in range(n_slices):
            chunk = by_x[i * per_slice:(i + 1) * per_slice]
            order[i * per_slice:i * per_slice + len(chunk)] = chunk[np.argsort(cy[chunk], kind="stable")]
        self.order = order
        self.levels: list[np.ndarray] = [boxes[order]]
        while len(self.levels[-1]) > 1:
            below = self.levels[-1]
            k = math.ceil(len(below) / self.FANOUT)
            up = np.empty((k, 4))
            for j in range(k):
                grp = below[j * self.FANOUT:(j + 1) * self.FANOUT]
                up[j, 0:2] = grp[:, 0:2].min(axis=0)
                up[j, 2:4] = grp[:, 2:4].max(axis=0)
            self.levels.append(up)

    @staticmethod
    def _box_dist2(q: np.ndarray, box: np.ndarray) -> float:
        dx = max(box[0] - q[0], 0.0, q[0] - box[2])
        dy = max(box[1] - q[1], 0.0, q[1] - box[3])
        return dx * dx + dy * dy

    def _seg_dist(self, q: np.ndarray, seg: int) -> tuple[float, float]:
        a, b = self.p0[seg], self.p1[seg]
        d = b - a
        len2 = float(d @ d)
        t = 0.0 if len2 < _EPS**2 else float(np.clip((q - a) @ d / len2, 0.0, 1.0))
        p = a + t * d
        return float(np.linalg.norm(q - p)), t

    def nearest(self, q: np.ndarray) -> tuple[int, float, float]:
        """(segment index, local t on segment, distance) of nearest point."""
        top = len(self.levels) - 1
        heap: list[tuple[float, int, int]] = [(self._box_dist2(q, self.levels[top][0]), top, 0)]
        best = (math.inf, -1, 0.0)  # dist, seg, t
        while heap:
            d2, level, idx = heapq.heappop(heap)
            if d2 >= best[0] ** 2:
                break
            if level == 0:
                dist, t = self._seg_dist(q, int(self.order[idx]))
                if dist < best[0]:
                    best = (dist, int(self.order[idx]), t)
                continue
            lo = idx * self.FANOUT
            hi = min(lo + self.FANOUT, len(self.levels[level - 1]))
            for child in range(lo, hi):
                cd2 = self._box_dist2(q, self.levels[level - 1][child])
                if cd2 < best[0] ** 2:
                    heapq.heappush(heap, (cd2, level - 1, child))
        return best[1], best[2], best[0]


# ── shared segment detection ────────────────────────────────────────

@dataclass(frozen=True)
class SharedSegment:
    """A stretch where polyline a runs within d_hat of polyline b.

    range_a is increasing; range_b follows b's nearest-point parameters
    over the matched sweep and decreases for anti-parallel overlaps.
    extent is the arc length of range_a in meters.
    """

    range_a: tuple[float, float]
    range_b: tuple[float, float]
    extent: float


def shared_segments(
    a: Polyline,
    b: Polyline,
    d_hat: float,
    dt: float,
    k: int = 2,
    min_len: float = 0.0,
) -> list[SharedSegment]:
    """Sweep a at parameter steps dt and record maximal runs whose distance
    to b stays within d_hat; a run survives up to k consecutive outlier
    steps before it is closed at the last in-threshold step.  Runs shorter
    than min_len meters are dropped.
    """
    if dt <= 0 or dt > 0.5:
        raise ValueError(f"dt must be in (0, 0.5], got {dt}")
    n_steps = int(math.ceil(1.0 / dt))
    ts = np.linspace(0.0, 1.0, n_steps + 1)
    pts = a.param_points(ts)
    tb, dist = b.nearest_many(pts)
    inside = dist <= d_hat

    out: list[SharedSegment] = []
    open_first = -1
    last_in = -1
    misses = 0

    def close(first: int, last: int) -> None:
        extent = (ts[last] - ts[first]) * a.length
        if extent >= min_len and last > first:
            out.append(SharedSegment(
                range_a=(float(ts[first]), float(ts[last])),
                range_b=(float(tb[first]), float(tb[last])),
                extent=float(extent),
            ))

    for i in range(len(ts)):
        if inside[i]:
            if open_first < 0:
                open_first = i
            last_in = i
            misses = 0
        elif open_first >= 0:
            misses += 1
            if misses > k:
                close(open_first, last_in)
                open_first = -1
                misses = 0
    if open_first >= 0:
        close(open_first, last_in)
    return out


# ── offsetting ──────────────────────────────────────────────────────

def offset_polyline(p: Polyline, delta: float, miter_limit: float = 2.0) -> Polyline:
    """Offset p to the left of its travel direction by delta meters
    (negative = right).  Joins are mitered up to miter_limit, beveled
    beyond it; local loops from sharp inner corners are cleaned up.
    """
    if abs(delta) < _EPS:
        return Polyline(p.pts.copy())
    pts = p.pts
    seg = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    dirs = seg / seg_len[:, None]
    normals = np.stack([-dirs[:, 1], dirs[:, 0]], axis=1)  # left of travel

    out = [pts[0] + delta * normals[0]]
    for i in range(1, len(pts) - 1):
        n1, n2 = normals[i - 1], normals[i]
        dot = float(n1 @ n2)
        if dot < -1.0 + 1e-6:
            # full reversal: square off with both endpoint offsets
            out.append(pts[i] + delta * n1)
            out.append(pts[i] + delta * n2)
            continue
        miter_ratio = math.sqrt(2.0 / (1.0 + dot)) if dot < 1.0 else 1.0
        if miter_ratio > miter_limit:
            out.append(pts[i] + delta * n1)
            out.append(pts[i] + delta * n2)
        else:
            out.append(pts[i] + delta * (n1 + n2) / (1.0 + dot))
    out.append(pts[-1] + delta * normals[-1])
    cleaned = _remove_local_loops(np.asarray(out))
    return Polyline(cleaned)


_LOOP_WINDOW = 8


def _proper_intersection(a0, a1, b0, b1) -> np.ndarray | None:
    """Intersection point of segments (a0,a1) and (b0,b1) if they cross
    properly, else None."""
    r = a1 - a0
    s = b1 - b0
    denom = r[0] * s[1] - r[1] * s[0]
    if abs(denom) < _EPS:
        return None
    q = b0 - a0
    t = (q[0] * s[1] - q[1] * s[0]) / denom
    u = (q[0] * r[1] - q[1] * r[0]) / denom
    if _EPS < t < 1 - _EPS and _EPS < u < 1 - _EPS:
        return a0 + t * r
    return None


def _remove_local_loops(pts: np.ndarray) -> np.ndarray:
    """Cut small self-intersection loops that offsetting creates at sharp
    inner corners.  Checks segment pairs within a sliding window; raises
    if a loop survives the cleanup pass."""
    changed = True
    guard = 0
    while changed:
        changed = False
        guard += 1
        if guard > 100:
            raise SelfIntersectionUnresolved("offset loop cleanup did not converge")
        n = len(pts) - 1
        for i in range(n):
            hi = min(n, i + 1 + _LOOP_WINDOW)
            for j in range(i + 2, hi):
                x = _proper_intersection(pts[i], pts[i + 1], pts[j], pts[j + 1])
                if x is not None:
                    pts = np.vstack([pts[: i + 1], [x], pts[j + 1:]])
                    changed = True
                    break
            if changed:
                break
    # verification pass over the same window
    n = len(pts) - 1
    for i in range(n):
        for j in range(i + 2, min(n, i + 1 + _LOOP_WINDOW)):
            if _proper_intersection(pts[i], pts[i + 1], pts[j], pts[j + 1]) is not None:
                raise SelfIntersectionUnresolved("offset polyline still self-intersects")
    return pts


# ── averaging ───────────────────────────────────────────────────────

def average_path(a: Polyline, b: Polyline, step: float = 5.0) -> Polyline:
    """Pointwise midpoint of a and b after resampling both at a common
    count derived from step meters.  Inputs must already be oriented the
    same way."""
    n = max(2, int(math.ceil(max(a.length, b.length) / max(step, _EPS))) + 1)
    return Polyline((a.resample(n) + b.resample(n)) / 2.0)


# ── intersection counting (ground truth for crossing tests) ─────────

def count_proper_intersections(a_pts: np.ndarray, b_pts: np.ndarray) -> int:
    """Number of transversal (strictly interior, non-parallel) crossings
    between two polylines, vectorized over all segment pairs."""
    a0, a1 = a_pts[:-1], a_pts[1:]
    b0, b1 = b_pts[:-1], b_pts[1:]
    r = (a1 - a0)[:, None, :]
    s = (b1 - b0)[None, :, :]
    q = b0[None, :, :] - a0[:, None, :]
    denom = r[..., 0] * s[..., 1] - r[..., 1] * s[..., 0]
    ok = np.abs(denom) > _EPS
    denom = np.where(ok, denom, 1.0)
    t = (q[..., 0] * s[..., 1] - q[..., 1] * s[..., 0]) / denom
    u = (q[..., 0] * r[..., 1] - q[..., 1] * r[..., 0]) / denom
    hit = ok & (t > _EPS) & (t < 1 - _EPS) & (u > _EPS) & (u < 1 - _EPS)
    return int(hit.sum())
