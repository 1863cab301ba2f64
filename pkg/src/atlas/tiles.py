"""Web-Mercator XYZ tile arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geo import BBox, GeoPoint

MAX_ZOOM = 22

# Latitude limit of the square Web-Mercator projection: atan(sinh(pi)).
MERCATOR_LAT_LIMIT = math.degrees(math.atan(math.sinh(math.pi)))


@dataclass(frozen=True)
class TileIndex:
    z: int
    x: int
    y: int

    def __post_init__(self):
        if not (0 <= self.z <= MAX_ZOOM):
            raise ValueError(f"zoom out of range: {self.z}")
        n = 1 << self.z
        if not (0 <= self.x < n and 0 <= self.y < n):
            raise ValueError(f"tile coords out of range for z={self.z}: ({self.x}, {self.y})")

    def key(self) -> str:
        return f"{self.z}/{self.x}/{self.y}"


def latlon_to_tile(p: GeoPoint, z: int) -> TileIndex:
    """XYZ tile containing p at zoom z; lat must be inside the Mercator range."""
    if abs(p.lat) > 85.05113:
        raise ValueError(f"latitude outside Mercator range: {p.lat}")
    n = 1 << z
    x = math.floor((p.lon + 180.0) / 360.0 * n)
    lat_rad = math.radians(p.lat)
    y = math.floor((1.0 - math.asinh(math.tan(lat_rad)) / math.pi) / 2.0 * n)
    return TileIndex(z, min(max(x, 0), n - 1), min(max(y, 0), n - 1))


def _tile_edge_lat(z: int, y: int) -> float:
    n = 1 << z
    return math.degrees(math.atan(math.sinh(math.pi * (1.0 - 2.0 * y / n))))


def tile_bounds(t: TileIndex) -> BBox:
    """Geographic bounds of a tile; adjacent tiles share edges exactly."""
    n = 1 << t.z
    min_lon = t.x / n * 360.0 - 180.0
    max_lon = (t.x + 1) / n * 360.0 - 180.0
    return BBox(_tile_edge_lat(t.z, t.y + 1), min_lon, _tile_edge_lat(t.z, t.y), max_lon)


def tiles_in_bbox(box: BBox, z: int) -> list[TileIndex]:
    """All z-level tiles intersecting box, row-major from the north-west corner."""
    limit = MERCATOR_LAT_LIMIT
    lo_lat = min(max(box.min_lat, -limit), limit)
    hi_lat = min(max(box.max_lat, -limit), limit)
    nw = latlon_to_tile(GeoPoint(hi_lat, box.min_lon), z)
    se = latlon_to_tile(GeoPoint(lo_lat, min(box.max_lon, 180.0 - 1e-9)), z)
    return [TileIndex(z, x, y)
            for y in range(nw.y, se.y + 1)
            for x in range(nw.x, se.x + 1)]
