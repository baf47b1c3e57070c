"""Small planar-geometry helpers on numpy polylines."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    return -((-np.asarray(a) + np.pi) % (2 * np.pi) - np.pi)


def angle_diff(a, b):
    """Absolute smallest difference between two angles, in [0, pi]."""
    return np.abs(wrap_angle(np.asarray(a) - np.asarray(b)))


def circular_mean(angles) -> float:
    angles = np.asarray(angles, dtype=float)
    return float(math.atan2(np.sin(angles).mean(), np.cos(angles).mean()))


def cumulative_length(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def point_at(points: np.ndarray, s: float) -> np.ndarray:
    cum = cumulative_length(points)
    s = min(max(s, 0.0), cum[-1])
    return np.array([np.interp(s, cum, points[:, 0]), np.interp(s, cum, points[:, 1])])


def start_heading(points: np.ndarray, reach: float = 5.0) -> float:
    """Chord heading from the first point to the point ``reach`` metres along."""
    cum = cumulative_length(points)
    far = point_at(points, min(reach, cum[-1]))
    d = far - points[0]
    return math.atan2(d[1], d[0])


def end_heading(points: np.ndarray, reach: float = 5.0) -> float:
    cum = cumulative_length(points)
    near = point_at(points, max(cum[-1] - reach, 0.0))
    d = points[-1] - near
    return math.atan2(d[1], d[0])


@dataclass(frozen=True)
class Projection:
    lateral: np.ndarray  # distance to the centreline
    s: np.ndarray  # arc length of the foot point
    heading: np.ndarray  # heading of the segment the foot lies on
    inside: np.ndarray  # foot falls between the two polyline ends (not clipped)


def project(points: np.ndarray, xy: np.ndarray) -> Projection:
    """Project each row of ``xy`` onto the polyline ``points``."""
    a = points[:-1]
    ab = np.diff(points, axis=0)
    seg_len2 = (ab**2).sum(axis=1)
    cum = cumulative_length(points)
    ap = xy[:, None, :] - a[None, :, :]
    u = (ap * ab[None]).sum(axis=2) / seg_len2[None]
    uc = np.clip(u, 0.0, 1.0)
    foot = a[None] + uc[..., None] * ab[None]
    dist = np.linalg.norm(xy[:, None, :] - foot, axis=2)
    k = dist.argmin(axis=1)
    rows = np.arange(len(xy))
    ub = u[rows, k]
    seg_heading = np.arctan2(ab[:, 1], ab[:, 0])
    last = len(ab) - 1
    inside = ~(((k == 0) & (ub < 0)) | ((k == last) & (ub > 1)))
    s = cum[k] + uc[rows, k] * np.sqrt(seg_len2[k])
    return Projection(dist[rows, k], s, seg_heading[k], inside)


def bezier(p0, p1, p2, n: int = 12) -> np.ndarray:
    """Quadratic Bezier through control point ``p1``, sampled at ``n`` points."""
    t = np.linspace(0.0, 1.0, n)[:, None]
    p0, p1, p2 = (np.asarray(p, dtype=float) for p in (p0, p1, p2))
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2
