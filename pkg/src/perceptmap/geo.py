"""Geometry helpers: haversine distance, ray-casting containment, Hilbert order.

Coordinates are WGS84 (lat, lon) degrees throughout. Local metric conversions
use the spherical approximation, which is accurate to well under a percent at
city scale.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

from .errors import GeometryError

EARTH_RADIUS_M = 6_371_000.0


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters between two (lat, lon) points."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def meters_per_degree(lat: float) -> tuple[float, float]:
    """(meters per degree latitude, meters per degree longitude) at `lat`."""
    m_lat = math.pi * EARTH_RADIUS_M / 180.0
    m_lon = m_lat * math.cos(math.radians(lat))
    return m_lat, m_lon


def close_ring(vertices: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Validate a polygon ring and return it closed (first vertex repeated last).

    Raises GeometryError for fewer than 3 distinct vertices or a
    self-intersecting ring.
    """
    ring = [(float(lat), float(lon)) for lat, lon in vertices]
    if len(ring) >= 2 and ring[0] == ring[-1]:
        ring = ring[:-1]
    if len(ring) < 3:
        raise GeometryError(f"polygon needs at least 3 vertices, got {len(ring)}")
    if len(set(ring)) != len(ring):
        raise GeometryError("polygon ring repeats a vertex")
    if _self_intersects(ring):
        raise GeometryError("polygon ring is self-intersecting")
    return ring + [ring[0]]


def _self_intersects(ring: list[tuple[float, float]]) -> bool:
    n = len(ring)
    edges = [(ring[i], ring[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            # Adjacent edges share an endpoint by construction.
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(*edges[i], *edges[j]):
                return True
    return False


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


def point_in_ring(lat: float, lon: float, ring: Sequence[tuple[float, float]]) -> bool:
    """Ray-casting containment test; points on an edge count as inside."""
    inside = False
    n = len(ring) - 1 if ring[0] == ring[-1] else len(ring)
    for i in range(n):
        y1, x1 = ring[i]
        y2, x2 = ring[(i + 1) % n]
        if (y1 > lat) != (y2 > lat):
            x_cross = x1 + (lat - y1) * (x2 - x1) / (y2 - y1)
            if lon < x_cross:
                inside = not inside
            elif lon == x_cross:
                return True
        elif y1 == y2 == lat and min(x1, x2) <= lon <= max(x1, x2):
            return True
    return inside


# -- Hilbert curve ------------------------------------------------------------

def hilbert_index(order: int, x: int, y: int) -> int:
    """Distance along the Hilbert curve of 2^order x 2^order cells at (x, y)."""
    side = 1 << order
    if not (0 <= x < side and 0 <= y < side):
        raise ValueError(f"cell ({x}, {y}) outside 2^{order} grid")
    d = 0
    s = side >> 1
    while s > 0:
        rx = 1 if (x & s) > 0 else 0
        ry = 1 if (y & s) > 0 else 0
        d += s * s * ((3 * rx) ^ ry)
        # Rotate the quadrant so the sub-curve lines up.
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        s >>= 1
    return d


def hilbert_cell(order: int, d: int) -> tuple[int, int]:
    """Inverse of hilbert_index: curve distance back to (x, y)."""
    side = 1 << order
    if not (0 <= d < side * side):
        raise ValueError(f"distance {d} outside 2^{2 * order} curve")
    x = y = 0
    t = d
    s = 1
    while s < side:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        x += s * rx
        y += s * ry
        t //= 4
        s <<= 1
    return x, y


def hilbert_sort(points: Iterable[tuple[str, float, float]],
                 order: int = 16) -> list[str]:
    """Sort (key, lat, lon) triples along a Hilbert curve over their bbox.

    Ties (identical cells) fall back to the key so the order is total and
    reproducible.
    """
    items = list(points)
    if not items:
        return []
    lats = [p[1] for p in items]
    lons = [p[2] for p in items]
    lat_min, lat_max = min(lats), max(lats)
    lon_min, lon_max = min(lons), max(lons)
    side = (1 << order) - 1
    lat_span = (lat_max - lat_min) or 1.0
    lon_span = (lon_max - lon_min) or 1.0

    def cell(lat: float, lon: float) -> tuple[int, int]:
        gx = int(round((lon - lon_min) / lon_span * side))
        gy = int(round((lat - lat_min) / lat_span * side))
        return gx, gy

    keyed = [(hilbert_index(order, *cell(lat, lon)), key) for key, lat, lon in items]
    keyed.sort()
    return [key for _, key in keyed]
