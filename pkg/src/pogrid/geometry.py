"""Polyline utilities: arc length parametrisation, projection, ray casting."""

from __future__ import annotations

import math

import numpy as np


class Polyline:
    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("a polyline needs at least two 2-D points")
        seg = np.diff(pts, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        keep = np.concatenate([[True], lengths > 1e-12])
        if not keep.all():
            pts = pts[keep]
            seg = np.diff(pts, axis=0)
            lengths = np.hypot(seg[:, 0], seg[:, 1])
        self.points = pts
        self._seg = seg
        self._len = lengths
        self.s = np.concatenate([[0.0], np.cumsum(lengths)])

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def _segment(self, s: float) -> int:
        k = int(np.searchsorted(self.s, s, side="right")) - 1
        return min(max(k, 0), len(self._len) - 1)

    def point_at(self, s: float) -> np.ndarray:
        """Point at arc length ``s``; extrapolates linearly past both ends."""
        k = self._segment(s)
        u = (s - self.s[k]) / self._len[k]
        return self.points[k] + u * self._seg[k]

    def heading_at(self, s: float) -> float:
        dx, dy = self._seg[self._segment(s)]
        return math.atan2(dy, dx)

    def project(self, p) -> tuple[float, float]:
        """Return ``(s, d)``: arc length of the closest point and signed lateral
        offset (positive to the left of the direction of travel)."""
        p = np.asarray(p, dtype=float)
        rel = p - self.points[:-1]
        u = np.einsum("ij,ij->i", rel, self._seg) / self._len**2
        u = np.clip(u, 0.0, 1.0)
        foot = self.points[:-1] + u[:, None] * self._seg
        dist2 = np.sum((p - foot) ** 2, axis=1)
        k = int(np.argmin(dist2))
        s = self.s[k] + u[k] * self._len[k]
        cross = self._seg[k, 0] * rel[k, 1] - self._seg[k, 1] * rel[k, 0]
        d = math.sqrt(dist2[k])
        return float(s), float(math.copysign(d, cross) if d > 0 else 0.0)

    def extended(self, extra: float) -> "Polyline":
        """Copy with a straight continuation of ``extra`` metres past the end."""
        end = self.points[-1]
        h = self.heading_at(self.length)
        tail = end + extra * np.array([math.cos(h), math.sin(h)])
        return Polyline(np.vstack([self.points, tail]))

    def sample(self, step: float) -> np.ndarray:
        n = max(int(math.ceil(self.length / step)), 1)
        return np.array([self.point_at(s) for s in np.linspace(0.0, self.length, n + 1)])


def concat(polylines) -> Polyline:
    pts = [polylines[0].points]
    for pl in polylines[1:]:
        q = pl.points
        if np.hypot(*(q[0] - pts[-1][-1])) < 1e-9:
            q = q[1:]
        pts.append(q)
    return Polyline(np.vstack(pts))


def ray_distance(origin, direction, polylines) -> float:
    """Distance along a ray to the first crossing with any polyline (inf if none)."""
    ox, oy = origin
    dx, dy = direction
    best = math.inf
    for pl in polylines:
        a = pl.points[:-1]
        e = pl._seg
        denom = dx * e[:, 1] - dy * e[:, 0]
        ok = np.abs(denom) > 1e-12
        if not ok.any():
            continue
        wx = a[ok, 0] - ox
        wy = a[ok, 1] - oy
        t = (wx * e[ok, 1] - wy * e[ok, 0]) / denom[ok]
        u = (wx * dy - wy * dx) / denom[ok]
        hit = (t >= 0.0) & (u >= 0.0) & (u <= 1.0)
        if hit.any():
            best = min(best, float(t[hit].min()))
    return best


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi
