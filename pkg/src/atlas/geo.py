"""Geodesy primitives: points, rings, haversine, and bucket-grid spatial indexing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

# IUGG mean Earth radius, meters.
EARTH_RADIUS_M = 6_371_008.8

# Meters per degree of arc along a great circle.
METERS_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0

_EPS = 1e-12


@dataclass(frozen=True)
class GeoPoint:
    """A WGS-ish lat/lon point; lon is normalized into [-180, 180) on construction."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"lat out of range: {self.lat!r}")
        if math.isnan(self.lon) or math.isinf(self.lon):
            raise ValueError(f"lon not finite: {self.lon!r}")
        lon = ((self.lon + 180.0) % 360.0) - 180.0
        object.__setattr__(self, "lon", lon)


@dataclass(frozen=True)
class BBox:
    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float

    def __post_init__(self):
        if self.min_lat > self.max_lat or self.min_lon > self.max_lon:
            raise ValueError("bbox min exceeds max")

    def contains(self, p: GeoPoint) -> bool:
        return (self.min_lat <= p.lat <= self.max_lat
                and self.min_lon <= p.lon <= self.max_lon)


@dataclass(frozen=True)
class PolygonRing:
    """Closed ring of vertices (first == last, at least 4 entries including closure)."""

    vertices: tuple[GeoPoint, ...]

    def __post_init__(self):
        verts = tuple(self.vertices)
        if len(verts) < 4:
            raise ValueError("ring needs >= 4 vertices including closure")
        first, last = verts[0], verts[-1]
        if first.lat != last.lat or first.lon != last.lon:
            raise ValueError("ring is not closed (first != last)")
        object.__setattr__(self, "vertices", verts)

    def centroid(self) -> GeoPoint:
        """Arithmetic mean of the distinct vertices (closure vertex excluded)."""
        pts = self.vertices[:-1]
        return GeoPoint(sum(p.lat for p in pts) / len(pts),
                        sum(p.lon for p in pts) / len(pts))

    def bbox(self) -> BBox:
        lats = [p.lat for p in self.vertices]
        lons = [p.lon for p in self.vertices]
        return BBox(min(lats), min(lons), max(lats), max(lons))


def ring_from_coords(coords: Sequence[tuple[float, float]]) -> PolygonRing:
    """Build a ring from (lat, lon) pairs, appending the closure vertex if missing."""
    pts = [GeoPoint(lat, lon) for lat, lon in coords]
    if pts and (pts[0].lat != pts[-1].lat or pts[0].lon != pts[-1].lon):
        pts.append(pts[0])
    return PolygonRing(tuple(pts))


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on the mean-radius sphere."""
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def _on_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> bool:
    cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon)
    if abs(cross) > _EPS:
        return False
    return (min(a.lat, b.lat) - _EPS <= p.lat <= max(a.lat, b.lat) + _EPS
            and min(a.lon, b.lon) - _EPS <= p.lon <= max(a.lon, b.lon) + _EPS)


def point_in_polygon(p: GeoPoint, ring: PolygonRing) -> bool:
    """Ray-casting containment test in lat/lon space; boundary points count as inside."""
    verts = ring.vertices
    for i in range(len(verts) - 1):
        if _on_segment(p, verts[i], verts[i + 1]):
            return True
    inside = False
    for i in range(len(verts) - 1):
        a, b = verts[i], verts[i + 1]
        if (a.lat > p.lat) != (b.lat > p.lat):
            x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat)
            if p.lon < x:
                inside = not inside
    return inside


def _point_segment_distance(ax: float, ay: float, bx: float, by: float) -> float:
    # Distance from the origin to segment (a, b) in a local plane.
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        return math.hypot(ax, ay)
    t = -(ax * dx + ay * dy) / seg2
    t = max(0.0, min(1.0, t))
    return math.hypot(ax + t * dx, ay + t * dy)


def point_to_polygon_distance(p: GeoPoint, ring: PolygonRing) -> float:
    """Meters from p to the ring's footprint: 0 inside/on boundary, else nearest edge.

    Edges are measured in a local equirectangular plane centered at p, which is
    accurate at the sub-10-km scales the filters operate on.
    """
    if point_in_polygon(p, ring):
        return 0.0
    cos_lat = math.cos(math.radians(p.lat))
    verts = ring.vertices

    def project(v: GeoPoint) -> tuple[float, float]:
        dlon = ((v.lon - p.lon + 180.0) % 360.0) - 180.0
        return dlon * cos_lat * METERS_PER_DEG, (v.lat - p.lat) * METERS_PER_DEG

    best = math.inf
    prev = project(verts[0])
    for v in verts[1:]:
        cur = project(v)
        best = min(best, _point_segment_distance(prev[0], prev[1], cur[0], cur[1]))
        prev = cur
    return best


class SpatialIndex:
    """Uniform lat/lon bucket grid; radius queries match a brute-force haversine scan."""

    def __init__(self, bucket_deg: float = 0.1):
        if bucket_deg <= 0:
            raise ValueError("bucket_deg must be positive")
        self.bucket_deg = bucket_deg
        self._buckets: dict[tuple[int, int], list[tuple[object, GeoPoint]]] = {}
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def _key(self, p: GeoPoint) -> tuple[int, int]:
        b = self.bucket_deg
        return (math.floor(p.lat / b), math.floor(p.lon / b))

    def insert(self, item_id, p: GeoPoint) -> None:
        self._buckets.setdefault(self._key(p), []).append((item_id, p))
        self._count += 1

    def query_radius(self, p: GeoPoint, radius_m: float) -> list:
        """Ids of all entries whose haversine distance to p is <= radius_m."""
        if radius_m < 0:
            return []
        b = self.bucket_deg
        dlat = radius_m / METERS_PER_DEG + 1e-9
        lat_lo, lat_hi = max(-90.0, p.lat - dlat), min(90.0, p.lat + dlat)

        # Longitude window from the haversine lower bound over the latitude band:
        # sin^2(dlon/2) <= sin^2(r/2R) / (cos lat_p * min cos over band).
        cos_band = min(math.cos(math.radians(lat_lo)), math.cos(math.radians(lat_hi)))
        cos_prod = math.cos(math.radians(p.lat)) * cos_band
        sin_half = math.sin(min(math.pi / 2, radius_m / (2.0 * EARTH_RADIUS_M)))
        dlon = 180.0
        if cos_prod > 0:
            arg = sin_half / math.sqrt(cos_prod)
            if arg < 1.0:
                dlon = math.degrees(2.0 * math.asin(arg)) + 1e-9
        if dlon >= 180.0:
            windows = [(-180.0, 180.0)]
        else:
            lo, hi = p.lon - dlon, p.lon + dlon
            windows = [(max(lo, -180.0), min(hi, 180.0))]
            if lo < -180.0:
                windows.append((lo + 360.0, 180.0))
            if hi > 180.0:
                windows.append((-180.0, hi - 360.0))

        keys = set()
        i_lo, i_hi = math.floor(lat_lo / b), math.floor(lat_hi / b)
        for w_lo, w_hi in windows:
            for i in range(i_lo, i_hi + 1):
                for j in range(math.floor(w_lo / b), math.floor(w_hi / b) + 1):
                    keys.add((i, j))
        out = []
        for key in sorted(keys):
            for item_id, q in self._buckets.get(key, ()):
                if haversine_distance(p, q) <= radius_m:
                    out.append(item_id)
        return out

    def query_bbox(self, box: BBox) -> list:
        """(id, point) pairs whose point lies inside box (inclusive edges)."""
        b = self.bucket_deg
        out = []
        for i in range(math.floor(box.min_lat / b), math.floor(box.max_lat / b) + 1):
            for j in range(math.floor(box.min_lon / b), math.floor(box.max_lon / b) + 1):
                for item_id, q in self._buckets.get((i, j), ()):
                    if box.contains(q):
                        out.append((item_id, q))
        return out


def index_build(points: Iterable[tuple[object, GeoPoint]], bucket_deg: float = 0.1) -> SpatialIndex:
    idx = SpatialIndex(bucket_deg=bucket_deg)
    for item_id, p in points:
        idx.insert(item_id, p)
    return idx


def index_query_radius(idx: SpatialIndex, p: GeoPoint, radius_m: float) -> list:
    return idx.query_radius(p, radius_m)


@dataclass
class FootprintIndex:
    """Building footprints indexed by centroid for containment and distance queries."""

    rings: dict = field(default_factory=dict)       # id -> PolygonRing
    centroids: dict = field(default_factory=dict)   # id -> GeoPoint
    max_radius_m: float = 0.0
    _index: SpatialIndex = field(default_factory=lambda: SpatialIndex(bucket_deg=0.05))

    @classmethod
    def build(cls, footprints: Iterable[tuple[object, PolygonRing]], bucket_deg: float = 0.05):
        fpi = cls(_index=SpatialIndex(bucket_deg=bucket_deg))
        for fid, ring in footprints:
            fpi.add(fid, ring)
        return fpi

    def add(self, fid, ring: PolygonRing) -> None:
        c = ring.centroid()
        self.rings[fid] = ring
        self.centroids[fid] = c
        self._index.insert(fid, c)
        for v in ring.vertices:
            self.max_radius_m = max(self.max_radius_m, haversine_distance(c, v))

    def __len__(self) -> int:
        return len(self.rings)

    def contains(self, p: GeoPoint):
        """Id of a footprint containing p (smallest id when several), or None."""
        hits = [fid for fid in self._index.query_radius(p, self.max_radius_m)
                if point_in_polygon(p, self.rings[fid])]
        if not hits:
            return None
        return min(hits, key=lambda f: str(f))

    def min_distance_within(self, p: GeoPoint, max_m: float):
        """Exact minimum footprint distance if it is <= max_m, else None."""
        best = None
        for fid in self._index.query_radius(p, max_m + self.max_radius_m):
            d = point_to_polygon_distance(p, self.rings[fid])
            if d <= max_m and (best is None or d < best):
                best = d
                if best == 0.0:
                    break
        return best

    def centroids_in_bbox(self, box: BBox) -> list:
        """(id, centroid) pairs for footprints whose centroid lies inside box."""
        return self._index.query_bbox(box)

    def centroid_candidates_near(self, p: GeoPoint, radius_m: float) -> list:
        """Footprint ids whose centroid is within radius_m + max footprint radius of p."""
        return self._index.query_radius(p, radius_m + self.max_radius_m)
