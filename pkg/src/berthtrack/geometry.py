"""Frames, hull footprint and obstacle queries."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels


class Pose(NamedTuple):
    x0: float
    y0: float
    psi: float


class Velocity(NamedTuple):
    u: float
    vm: float
    r: float


class VesselState(NamedTuple):
    pose: Pose
    vel: Velocity

    def as_array(self) -> np.ndarray:
        """Flat ``(x0, y0, psi, u, vm, r)`` array."""
        return np.array([*self.pose, *self.vel], dtype=float)

    @classmethod
    def from_array(cls, a) -> "VesselState":
        a = [float(v) for v in a]
        return cls(Pose(a[0], a[1], a[2]), Velocity(a[3], a[4], a[5]))


class BodyError3(NamedTuple):
    ex: float
    ey: float
    epsi: float


class BodyError2(NamedTuple):
    ex: float
    ey: float


@dataclass(frozen=True)
class ShipGeometry:
    """Hull dimensions and the elliptical footprint used for clearance.

    The defaults describe a 3 m model ship; they are not taken from any
    published hull.
    """
    L: float = 3.0
    B: float = 0.49
    footprint_semi_major_ratio: float = 0.75
    footprint_semi_minor: float | None = None

    def __post_init__(self):
        if not (self.L > 0 and self.B > 0 and self.footprint_semi_major_ratio > 0):
            raise ValueError("ship dimensions must be positive")

    @property
    def semi_major(self) -> float:
        return self.footprint_semi_major_ratio * self.L

    @property
    def semi_minor(self) -> float:
        return self.B if self.footprint_semi_minor is None else self.footprint_semi_minor


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return math.pi - (math.pi - a) % (2.0 * math.pi)


def _segments_intersect(p1, p2, q1, q2):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _is_simple(ring: np.ndarray) -> bool:
    n = len(ring)
    for i in range(n):
        a1, a2 = ring[i], ring[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_intersect(a1, a2, ring[j], ring[(j + 1) % n]):
                return False
    return True


@dataclass(frozen=True, eq=False)
class ObstacleSet:
    """Union of solid polygons.

    ``dummy`` marks pseudo-obstacles: they shape the controller input but
    contact with them is never a collision.
    """
    polygons: tuple = ()
    dummy: bool = False
    segs: np.ndarray = field(init=False, repr=False)
    starts: np.ndarray = field(init=False, repr=False)
    bbox: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rings = []
        for poly in self.polygons:
            ring = np.asarray(poly, dtype=float).reshape(-1, 2)
            if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
                ring = ring[:-1]
            if len(ring) < 3:
                raise ValueError("obstacle polygon needs at least 3 vertices")
            if not np.all(np.isfinite(ring)):
                raise ValueError("obstacle polygon has non-finite vertices")
            if not _is_simple(ring):
                raise ValueError("obstacle polygon is self-intersecting")
            rings.append(ring)
        object.__setattr__(self, "polygons", tuple(rings))
        segs = [np.hstack([r, np.roll(r, -1, axis=0)]) for r in rings]
        counts = [len(r) for r in rings]
        object.__setattr__(self, "segs", np.ascontiguousarray(np.vstack(segs)) if segs else np.empty((0, 4)))
        object.__setattr__(self, "starts", np.concatenate([[0], np.cumsum(counts)]).astype(np.int64))
        bbox = np.array([[*r.min(axis=0), *r.max(axis=0)] for r in rings]) if rings else np.empty((0, 4))
        object.__setattr__(self, "bbox", bbox)

    def __len__(self):
        return len(self.polygons)

    def edge_polygon(self, edge_index: int) -> int:
        return int(np.searchsorted(self.starts, edge_index, side="right") - 1)

    @classmethod
    def union(cls, sets: Sequence["ObstacleSet"], dummy: bool = False) -> "ObstacleSet":
        polys = [p for s in sets for p in s.polygons]
        return cls(tuple(polys), dummy=dummy)


def body_frame_error(desired: Pose, actual: Pose) -> BodyError3:
    """Pose error of ``desired`` seen from the ship-fixed frame of ``actual``."""
    dx = desired[0] - actual[0]
    dy = desired[1] - actual[1]
    c = math.cos(actual[2])
    s = math.sin(actual[2])
    return BodyError3(c * dx + s * dy, -s * dx + c * dy, wrap_angle(desired[2] - actual[2]))


def bow_stern_positions(pose: Pose, geom: ShipGeometry):
    h = 0.5 * geom.L
    c = math.cos(pose[2])
    s = math.sin(pose[2])
    bow = np.array([pose[0] + h * c, pose[1] + h * s])
    stern = np.array([pose[0] - h * c, pose[1] - h * s])
    return bow, stern


def nearest_obstacle_point(obstacles: ObstacleSet, query) -> np.ndarray:
    """Closest point on any polygon boundary.

    Ties resolve to the lowest polygon index, then the lowest edge index.
    """
    if len(obstacles) == 0:
        raise ValueError("no obstacles")
    px, py, _ = kernels.nearest_point(obstacles.segs, float(query[0]), float(query[1]))
    return np.array([px, py])


def nearest_obstacle_points(obstacles: ObstacleSet, queries) -> np.ndarray:
    if len(obstacles) == 0:
        raise ValueError("no obstacles")
    q = np.ascontiguousarray(np.asarray(queries, dtype=float).reshape(-1, 2))
    pts, _ = kernels.nearest_points(obstacles.segs, q)
    return pts


def obstacle_offset_body(o_near, pose: Pose) -> BodyError2:
    dx = o_near[0] - pose[0]
    dy = o_near[1] - pose[1]
    c = math.cos(pose[2])
    s = math.sin(pose[2])
    return BodyError2(c * dx + s * dy, -s * dx + c * dy)


def obstacle_line_normal(desired: Pose, geom: ShipGeometry) -> np.ndarray:
    """Normal of the line through the obstacle point with the desired heading.

    (bow - stern, 0) x e_z = (d_y, -d_x): length L, pointing to starboard.
    """
    bow, stern = bow_stern_positions(desired, geom)
    d = bow - stern
    return np.array([d[1], -d[0]])


def distance_to_obstacle_line(n, anchor, query) -> float:
    nx, ny = float(n[0]), float(n[1])
    norm = math.hypot(nx, ny)
    if norm == 0.0:
        raise ValueError("obstacle line normal has zero length")
    return abs(nx * (query[0] - anchor[0]) + ny * (query[1] - anchor[1])) / norm


def footprint_collides(pose: Pose, geom: ShipGeometry, obstacles: ObstacleSet,
                       semi_major: float | None = None) -> bool:
    """True if the footprint ellipse touches or overlaps any obstacle polygon."""
    a = geom.semi_major if semi_major is None else semi_major
    if a <= 0:
        raise ValueError("semi_major must be positive")
    if len(obstacles) == 0:
        return False
    return bool(kernels.ellipse_hits(obstacles.segs, obstacles.starts, obstacles.bbox,
                                     float(pose[0]), float(pose[1]), float(pose[2]),
                                     float(a), float(geom.semi_minor)))


def ellipse_hits_polygon(center, heading, a, b, ring) -> bool:
    """Exact ellipse/polygon overlap test for a single ring."""
    obs = ObstacleSet((ring,))
    return bool(kernels.ellipse_hits(obs.segs, obs.starts, obs.bbox, float(center[0]),
                                     float(center[1]), float(heading), float(a), float(b)))
