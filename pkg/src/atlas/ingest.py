"""Dataset readers (GeoJSON/CSV), building-layer merging, and clients for the
POI API and the geocoder, each with an offline fixture mode."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import httpx

from .cleanse import normalize_name
from .geo import GeoPoint, PolygonRing, SpatialIndex, index_build, ring_from_coords

SCHOOL_SOURCES = ("official", "osm")
BUILDING_SOURCES = ("osm", "microsoft", "google")


@dataclass
class SchoolRecord:
    id: str
    name: str
    point: Optional[GeoPoint] = None
    admin_zone: Optional[str] = None
    address: Optional[str] = None
    source: str = "official"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.name:
            raise ValueError("school name must be non-empty")
        if self.source not in SCHOOL_SOURCES:
            raise ValueError(f"unknown school source: {self.source!r}")


@dataclass
class PoiRecord:
    id: str
    point: GeoPoint
    name: Optional[str] = None
    tags: dict = field(default_factory=dict)


@dataclass
class BuildingFootprint:
    id: str
    ring: PolygonRing
    source: str
    confidence: Optional[float] = None

    def __post_init__(self):
        if self.source not in BUILDING_SOURCES:
            raise ValueError(f"unknown building source: {self.source!r}")
        if self.source != "osm":
            if self.confidence is None:
                raise ValueError(f"{self.source} footprint requires a confidence")
            if not (0.0 <= self.confidence <= 1.0):
                raise ValueError(f"confidence out of range: {self.confidence}")


@dataclass
class AdminZone:
    code: str
    ring: PolygonRing


@dataclass
class RejectEntry:
    index: int
    reason: str
    record_id: Optional[str] = None

    def to_json(self) -> dict:
        return {"index": self.index, "id": self.record_id, "reason": self.reason}


def _load_feature_collection(path) -> list:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection" or not isinstance(doc.get("features"), list):
        raise ValueError(f"{path}: not a GeoJSON FeatureCollection")
    return doc["features"]


def _point_from_geometry(geom) -> Optional[GeoPoint]:
    if geom is None:
        return None
    if geom.get("type") != "Point":
        raise ValueError(f"expected Point geometry, got {geom.get('type')!r}")
    lon, lat = geom["coordinates"][0], geom["coordinates"][1]
    if not (-90.0 <= lat <= 90.0):
        raise ValueError("lat out of range")
    return GeoPoint(lat, lon)


def _ring_from_geometry(geom) -> PolygonRing:
    if geom is None or geom.get("type") != "Polygon":
        raise ValueError(f"expected Polygon geometry, got {(geom or {}).get('type')!r}")
    outer = geom["coordinates"][0]
    return ring_from_coords([(lat, lon) for lon, lat in outer])


def read_schools(path, csv_columns: Optional[dict] = None):
    """Read schools from GeoJSON, or from CSV when the path ends in .csv.

    Returns (records, rejects); malformed rows land in rejects with a reason.
    """
    if str(path).lower().endswith(".csv"):
        return read_schools_csv(path, csv_columns or {})
    records, rejects, seen = [], [], set()
    for i, feat in enumerate(_load_feature_collection(path)):
        props = dict(feat.get("properties") or {})
        rid = props.pop("id", None)
        try:
            if rid is None:
                raise ValueError("missing id")
            rid = str(rid)
            if rid in seen:
                raise ValueError("duplicate id")
            point = _point_from_geometry(feat.get("geometry"))
            rec = SchoolRecord(
                id=rid,
                name=props.pop("name", "") or "",
                point=point,
                admin_zone=props.pop("admin_zone", None),
                address=props.pop("address", None),
                source=props.pop("source", "official"),
                meta=props,
            )
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            rejects.append(RejectEntry(index=i, record_id=str(rid) if rid else None,
                                       reason=str(exc) or type(exc).__name__))
            continue
        seen.add(rid)
        records.append(rec)
    return records, rejects


def read_schools_csv(path, columns: dict):
    """CSV reader with a declared column mapping (defaults: id,name,lat,lon,...)."""
    cols = {"id": "id", "name": "name", "lat": "lat", "lon": "lon",
            "admin_zone": "admin_zone", "address": "address"}
    cols.update(columns)
    records, rejects, seen = [], [], set()
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            rid = row.get(cols["id"])
            try:
                if not rid:
                    raise ValueError("missing id")
                if rid in seen:
                    raise ValueError("duplicate id")
                lat_raw = (row.get(cols["lat"]) or "").strip()
                lon_raw = (row.get(cols["lon"]) or "").strip()
                point = None
                if lat_raw and lon_raw:
                    lat = float(lat_raw)
                    if not (-90.0 <= lat <= 90.0):
                        raise ValueError("lat out of range")
                    point = GeoPoint(lat, float(lon_raw))
                rec = SchoolRecord(
                    id=rid,
                    name=(row.get(cols["name"]) or "").strip(),
                    point=point,
                    admin_zone=(row.get(cols["admin_zone"]) or "").strip() or None,
                    address=(row.get(cols["address"]) or "").strip() or None,
                )
            except ValueError as exc:
                rejects.append(RejectEntry(index=i, record_id=rid, reason=str(exc)))
                continue
            seen.add(rid)
            records.append(rec)
    return records, rejects


def read_pois(path):
    records, rejects, seen = [], [], set()
    for i, feat in enumerate(_load_feature_collection(path)):
        props = dict(feat.get("properties") or {})
        rid = props.pop("id", None)
        try:
            if rid is None:
                raise ValueError("missing id")
            rid = str(rid)
            if rid in seen:
                raise ValueError("duplicate id")
            point = _point_from_geometry(feat.get("geometry"))
            if point is None:
                raise ValueError("missing point geometry")
            records.append(PoiRecord(id=rid, point=point,
                                     name=props.get("name"), tags=props))
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            rejects.append(RejectEntry(index=i, record_id=str(rid) if rid else None,
                                       reason=str(exc) or type(exc).__name__))
            continue
        seen.add(rid)
    return records, rejects


def read_buildings(path):
    records, rejects, seen = [], [], set()
    for i, feat in enumerate(_load_feature_collection(path)):
        props = dict(feat.get("properties") or {})
        rid = props.get("id")
        try:
            if rid is None:
                raise ValueError("missing id")
            rid = str(rid)
            if rid in seen:
                raise ValueError("duplicate id")
            conf = props.get("confidence")
            records.append(BuildingFootprint(
                id=rid,
                ring=_ring_from_geometry(feat.get("geometry")),
                source=props.get("source", "osm"),
                confidence=float(conf) if conf is not None else None,
            ))
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            rejects.append(RejectEntry(index=i, record_id=str(rid) if rid else None,
                                       reason=str(exc) or type(exc).__name__))
            continue
        seen.add(rid)
    return records, rejects


def read_admin_zones(path):
    records, rejects, seen = [], [], set()
    for i, feat in enumerate(_load_feature_collection(path)):
        props = dict(feat.get("properties") or {})
        code = props.get("code")
        try:
            if code is None:
                raise ValueError("missing code")
            code = str(code)
            if code in seen:
                raise ValueError("duplicate code")
            records.append(AdminZone(code=code, ring=_ring_from_geometry(feat.get("geometry"))))
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            rejects.append(RejectEntry(index=i, record_id=str(code) if code else None,
                                       reason=str(exc) or type(exc).__name__))
            continue
        seen.add(code)
    return records, rejects


def merge_building_layers(osm: Sequence, microsoft: Sequence, google: Sequence,
                          confidence_min: float = 0.7,
                          exclusion_radius_m: float = 25.0) -> list:
    """Merge footprint layers, prioritising OSM.

    Every OSM footprint is kept. A Microsoft/Google footprint is added only if
    its confidence is >= confidence_min and its centroid is strictly farther
    than exclusion_radius_m from every OSM footprint centroid.
    """
    merged = list(osm)
    osm_centroids = index_build((b.id, b.ring.centroid()) for b in osm)
    for layer in (microsoft, google):
        for b in layer:
            if b.confidence is None or b.confidence < confidence_min:
                continue
            centroid = b.ring.centroid()
            hits = osm_centroids.query_radius(centroid, exclusion_radius_m)
            if hits:
                continue
            merged.append(b)
    return merged


class OverpassError(RuntimeError):
    pass


def _parse_overpass_elements(doc) -> tuple[list, list]:
    elements = doc.get("elements")
    if not isinstance(elements, list):
        raise OverpassError("malformed response: no elements array")
    pois, rejects = [], []
    for i, el in enumerate(elements):
        etype = el.get("type")
        eid = f"{etype}/{el.get('id')}"
        tags = el.get("tags") or {}
        if etype == "node":
            if not tags:
                rejects.append(RejectEntry(index=i, record_id=eid, reason="node without tags"))
                continue
            lat, lon = el.get("lat"), el.get("lon")
        elif etype in ("way", "relation"):
            center = el.get("center")
            if not center:
                rejects.append(RejectEntry(index=i, record_id=eid,
                                           reason="way without center point"))
                continue
            lat, lon = center.get("lat"), center.get("lon")
        else:
            rejects.append(RejectEntry(index=i, record_id=eid,
                                       reason=f"unsupported element type {etype!r}"))
            continue
        try:
            point = GeoPoint(float(lat), float(lon))
        except (TypeError, ValueError):
            rejects.append(RejectEntry(index=i, record_id=eid, reason="bad coordinates"))
            continue
        pois.append(PoiRecord(id=eid, point=point, name=tags.get("name"), tags=tags))
    return pois, rejects


def overpass_fetch(query: str, endpoint: str, attempts: int = 3,
                   backoff_s: float = 1.0, timeout_s: float = 30.0,
                   client: Optional[httpx.Client] = None,
                   sleep: Callable[[float], None] = time.sleep):
    """Fetch POIs from an Overpass-style endpoint, or from a local JSON fixture.

    A path that exists on disk (or a file:// URL) is read directly and parsed
    with the exact same element schema, bypassing the network.
    """
    fixture = None
    if endpoint.startswith("file://"):
        fixture = Path(endpoint[len("file://"):])
    elif "://" not in endpoint:
        fixture = Path(endpoint)
    if fixture is not None:
        try:
            doc = json.loads(fixture.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise OverpassError(f"malformed fixture JSON: {exc}") from exc
        return _parse_overpass_elements(doc)

    own_client = client is None
    http = client or httpx.Client(timeout=timeout_s)
    try:
        last_error = "unknown"
        for attempt in range(attempts):
            if attempt:
                sleep(backoff_s * (2 ** (attempt - 1)))
            try:
                resp = http.post(endpoint, data={"data": query})
            except httpx.HTTPError as exc:
                last_error = f"transport failure: {exc}"
                continue
            if resp.status_code == 200:
                try:
                    doc = resp.json()
                except (json.JSONDecodeError, ValueError) as exc:
                    raise OverpassError(f"malformed response JSON: {exc}") from exc
                return _parse_overpass_elements(doc)
            if resp.status_code == 429:
                last_error = "rate-limited (HTTP 429)"
                continue
            last_error = f"HTTP {resp.status_code}"
            if 400 <= resp.status_code < 500 and resp.status_code != 429:
                break
        raise OverpassError(f"overpass fetch failed after {attempts} attempts: {last_error}")
    finally:
        if own_client:
            http.close()


class GeocoderError(RuntimeError):
    pass


class FixtureGeocoder:
    """Geocoder client backed by a JSON map from normalized query to {lat, lon}."""

    def __init__(self, mapping: dict):
        self.mapping = mapping

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def lookup(self, query: str) -> Optional[GeoPoint]:
        hit = self.mapping.get(query)
        if hit is None:
            return None
        return GeoPoint(float(hit["lat"]), float(hit["lon"]))


def geocode_query(record: SchoolRecord) -> str:
    parts = [record.name]
    if record.address:
        parts.append(record.address)
    return normalize_name(" ".join(parts))


@dataclass
class GeocodeOutcome:
    status: str                      # attached | dropped | deferred
    point: Optional[GeoPoint] = None
    reason: Optional[str] = None


def geocode(record: SchoolRecord, client, zones: Sequence) -> GeocodeOutcome:
    """Geocode a coordinate-less record; the result must fall inside the record's
    stated admin zone or the record is dropped."""
    from .geo import point_in_polygon

    if record.admin_zone is None:
        return GeocodeOutcome(status="dropped", reason="no admin zone to verify against")
    zone = next((z for z in zones if z.code == record.admin_zone), None)
    if zone is None:
        return GeocodeOutcome(status="dropped",
                              reason=f"unknown admin zone {record.admin_zone!r}")
    try:
        point = client.lookup(geocode_query(record))
    except Exception as exc:
        return GeocodeOutcome(status="deferred", reason=f"geocoder failure: {exc}")
    if point is None:
        return GeocodeOutcome(status="dropped", reason="no geocode result")
    if not point_in_polygon(point, zone.ring):
        return GeocodeOutcome(status="dropped", reason="zone mismatch")
    return GeocodeOutcome(status="attached", point=point)


def schools_to_geojson(records: Sequence) -> dict:
    features = []
    for r in records:
        props = {"id": r.id, "name": r.name, "source": r.source}
        if r.admin_zone is not None:
            props["admin_zone"] = r.admin_zone
        if r.address is not None:
            props["address"] = r.address
        props.update(r.meta)
        geom = None
        if r.point is not None:
            geom = {"type": "Point", "coordinates": [r.point.lon, r.point.lat]}
        features.append({"type": "Feature", "geometry": geom, "properties": props})
    return {"type": "FeatureCollection", "features": features}


def pois_to_geojson(records: Sequence) -> dict:
    features = []
    for r in records:
        props = dict(r.tags)
        props["id"] = r.id
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [r.point.lon, r.point.lat]},
            "properties": props,
        })
    return {"type": "FeatureCollection", "features": features}


def buildings_to_geojson(records: Sequence) -> dict:
    features = []
    for b in records:
        props = {"id": b.id, "source": b.source}
        if b.confidence is not None:
            props["confidence"] = b.confidence
        coords = [[v.lon, v.lat] for v in b.ring.vertices]
        features.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [coords]},
            "properties": props,
        })
    return {"type": "FeatureCollection", "features": features}


def write_geojson(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
