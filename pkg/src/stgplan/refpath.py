"""Reference path and Cartesian <-> Frenet conversion.

The path is a polyline. Tangents are defined at the vertices (averaged
directions of the two adjacent segments) and interpolated linearly inside each
segment, which makes the frame continuous and lets ``to_frenet`` invert
``to_cartesian`` exactly for offsets smaller than the local turning radius.
Lateral offset ``d`` is positive to the left of the travel direction.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class OutOfRange(ValueError):
    pass


class AmbiguousProjection(ValueError):
    pass


@dataclass(frozen=True)
class FrenetState:
    s: float
    d: float
    s_dot: float = 0.0
    d_dot: float = 0.0

    def __post_init__(self):
        if not all(np.isfinite([self.s, self.d, self.s_dot, self.d_dot])):
            raise ValueError(f"non-finite Frenet state {self}")


def shift_to_ego(state: FrenetState, ego: FrenetState) -> FrenetState:
    return replace(state, s=state.s - ego.s, d=state.d - ego.d)


def unshift_from_ego(state: FrenetState, ego: FrenetState) -> FrenetState:
    return replace(state, s=state.s + ego.s, d=state.d + ego.d)


def _left(t: np.ndarray) -> np.ndarray:
    return np.stack([-t[..., 1], t[..., 0]], axis=-1)


class ReferencePath:
    """Arc-length parameterized polyline. Immutable after construction."""

    def __init__(self, points):
        pts = np.array(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("a reference path needs at least two (x, y) points")
        seg = np.diff(pts, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lengths <= 0.0):
            raise ValueError("consecutive path points must be distinct")
        self._points = pts
        self._points.setflags(write=False)
        self._seg = seg
        self._len = lengths
        self._cum = np.concatenate([[0.0], np.cumsum(lengths)])
        self._cum.setflags(write=False)
        unit = seg / lengths[:, None]
        tan = np.empty_like(pts)
        tan[0] = unit[0]
        tan[-1] = unit[-1]
        mid = unit[:-1] + unit[1:]
        tan[1:-1] = mid / np.linalg.norm(mid, axis=1)[:, None]
        self._tan = tan

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def cum_arclen(self) -> np.ndarray:
        return self._cum

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def __repr__(self):
        return f"ReferencePath({len(self._points)} points, length={self.length:.3f} m)"

    def _locate(self, s):
        s = np.asarray(s, dtype=np.float64)
        if np.any(s < 0.0) or np.any(s > self.length):
            raise OutOfRange(f"arc length outside [0, {self.length}]")
        i = np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self._len) - 1)
        u = (s - self._cum[i]) / self._len[i]
        return i, u

    def frame(self, s):
        """Point and unit tangent at arc length ``s`` (scalar or array)."""
        i, u = self._locate(s)
        u_ = np.asarray(u)[..., None]
        p = self._points[i] + u_ * self._seg[i]
        t = (1.0 - u_) * self._tan[i] + u_ * self._tan[i + 1]
        t = t / np.linalg.norm(t, axis=-1, keepdims=True)
        return p, t

    def to_cartesian(self, s, d):
        """Frenet (s, d) -> Cartesian (x, y); vectorized over arrays."""
        p, t = self.frame(s)
        return p + np.asarray(d, dtype=np.float64)[..., None] * _left(t)

    def to_frenet(self, point) -> tuple[float, float]:
        """Cartesian point -> (s, d) via the segment whose interpolated normal passes through it."""
        p = np.asarray(point, dtype=np.float64)
        A = self._points[:-1]
        e = self._seg
        tA, tB = self._tan[:-1], self._tan[1:]
        w = p - A
        dt = tB - tA
        # (w - u e) . (tA + u dt) = 0  ->  c2 u^2 + c1 u + c0 = 0
        c0 = (w * tA).sum(axis=1)
        c1 = (w * dt).sum(axis=1) - (e * tA).sum(axis=1)
        c2 = -(e * dt).sum(axis=1)
        seg_ids, roots = _segment_roots(c2, c1, c0)
        if len(seg_ids) == 0:
            self._raise_out_of_range(p)
        foot = A[seg_ids] + roots[:, None] * e[seg_ids]
        dist = np.linalg.norm(p - foot, axis=1)
        order = np.lexsort((self._cum[seg_ids] + roots * self._len[seg_ids], dist))
        best = order[0]
        for other in order[1:]:
            if dist[other] - dist[best] > 1e-6:
                break
            if abs(seg_ids[other] - seg_ids[best]) > 1:
                raise AmbiguousProjection(f"point {p} projects equally onto two path pieces")
        k, u = seg_ids[best], roots[best]
        s = self._cum[k] + u * self._len[k]
        t = (1.0 - u) * tA[k] + u * tB[k]
        t = t / np.linalg.norm(t)
        d = float((p - foot[best]) @ _left(t))
        return float(s), d

    def _raise_out_of_range(self, p):
        if (p - self._points[0]) @ self._tan[0] < 0.0:
            raise OutOfRange(f"point {p} projects before the path start")
        raise OutOfRange(f"point {p} projects past the path end")


def _segment_roots(c2, c1, c0):
    """Roots in [0, 1] of c2 u^2 + c1 u + c0 for every segment."""
    scale = np.maximum(np.maximum(np.abs(c1), np.abs(c0)), 1e-300)
    linear = np.abs(c2) <= 1e-12 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        lin_root = np.where(c1 != 0.0, -c0 / c1, np.nan)
        disc = c1 * c1 - 4.0 * c2 * c0
        sq = np.sqrt(np.where(disc >= 0.0, disc, np.nan))
        q = -0.5 * (c1 + np.copysign(sq, c1))
        r1 = np.where(q != 0.0, q / c2, -c1 / (2.0 * c2))
        r2 = np.where(q != 0.0, c0 / q, np.nan)
    r1 = np.where(linear, lin_root, r1)
    r2 = np.where(linear, np.nan, r2)
    ids = np.concatenate([np.arange(len(c0)), np.arange(len(c0))])
    u = np.concatenate([r1, r2])
    ok = np.isfinite(u) & (u >= -1e-12) & (u <= 1.0 + 1e-12)
    return ids[ok], np.clip(u[ok], 0.0, 1.0)


def straight_path(length: float, heading: float = 0.0, origin=(0.0, 0.0), step: float = 10.0) -> ReferencePath:
    n = max(int(np.ceil(length / step)), 1)
    s = np.linspace(0.0, length, n + 1)
    o = np.asarray(origin, dtype=np.float64)
    return ReferencePath(o + s[:, None] * np.array([np.cos(heading), np.sin(heading)]))


def arc_path(radius: float, sweep: float, n_segments: int = 200, center=(0.0, 0.0)) -> ReferencePath:
    """Counter-clockwise circular arc starting at angle -pi/2 (heading +x)."""
    ang = -np.pi / 2 + np.linspace(0.0, sweep, n_segments + 1)
    c = np.asarray(center, dtype=np.float64)
    return ReferencePath(c + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1))
