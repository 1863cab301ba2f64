"""Known-negative sample construction: POI filtering against a school-term
lexicon, building containment, and stratified POI/remote sampling."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .cleanse import largest_remainder_quotas, normalize_name, stratum_key
from .geo import BBox, FootprintIndex, GeoPoint, SpatialIndex, index_build
from .raster import RasterGrid, raster_sample

# Tag values that explicitly mark a POI as a school-like facility.
DEFAULT_SCHOOL_TAGS = {
    "amenity": {"school", "kindergarten", "college", "university"},
    "building": {"school", "kindergarten", "college", "university"},
    "landuse": {"education"},
    "office": {"educational_institution"},
}


@dataclass
class ExclusionLexicon:
    """Normalized school synonyms; any substring hit excludes a POI."""

    terms: list

    def __post_init__(self):
        self.terms = [normalize_name(t) for t in self.terms if normalize_name(t)]

    def match(self, normalized_name: str) -> Optional[str]:
        for term in self.terms:
            if term in normalized_name:
                return term
        return None


def load_lexicon(path) -> ExclusionLexicon:
    """One term per line, UTF-8, '#' starts a comment."""
    terms = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        term = line.split("#", 1)[0].strip()
        if term:
            terms.append(term)
    return ExclusionLexicon(terms=terms)


@dataclass
class NegativeSample:
    id: str
    point: GeoPoint
    origin: str    # "poi" | "remote"
    stratum: str


def filter_poi_candidates(pois: Sequence, lexicon: ExclusionLexicon,
                          school_tags: dict = None):
    """Drop POIs that are tagged as schools, are unnamed, or whose normalized
    name contains a lexicon term. Returns (kept, rejects)."""
    school_tags = DEFAULT_SCHOOL_TAGS if school_tags is None else school_tags
    kept, rejects = [], []
    for poi in pois:
        marker = next((f"{k}={poi.tags[k]}" for k, values in school_tags.items()
                       if poi.tags.get(k) in values), None)
        if marker is not None:
            rejects.append((poi.id, f"school tag {marker}"))
            continue
        if not poi.name or not poi.name.strip():
            rejects.append((poi.id, "unnamed"))
            continue
        term = lexicon.match(normalize_name(poi.name))
        if term is not None:
            rejects.append((poi.id, f"lexicon term {term!r} in name"))
            continue
        kept.append(poi)
    return kept, rejects


def geographic_filter_neg(pois: Sequence, landcover: RasterGrid,
                          buildings: FootprintIndex, water_class: float = 80):
    """Keep only POIs on land whose point lies inside some building footprint."""
    kept, rejects = [], []
    for poi in pois:
        if raster_sample(landcover, poi.point) == water_class:
            rejects.append((poi.id, "water"))
            continue
        if buildings.contains(poi.point) is None:
            rejects.append((poi.id, "not inside any footprint"))
            continue
        kept.append(poi)
    return kept, rejects


def _stratified_pick(keyed: list, n: int, rng: random.Random) -> list:
    """Largest-remainder quota per stratum, then a seeded sample within each."""
    strata: dict[str, list] = {}
    for key, item in keyed:
        strata.setdefault(key, []).append(item)
    quotas = largest_remainder_quotas({k: len(v) for k, v in strata.items()}, n)
    picked = []
    for key in sorted(strata):
        picked.extend(rng.sample(strata[key], quotas[key]))
    return picked


def sample_poi_negatives(pois: Sequence, degurba: RasterGrid, n: int = 8000,
                         seed: int = 0):
    """Stratified (DEGURBA, largest remainder) seeded sample of POI negatives.

    No spacing constraint applies. When n exceeds the pool, everything is
    taken and the report carries the shortfall.
    """
    report = {"requested": n, "available": len(pois), "shortfall": max(0, n - len(pois))}
    ordered = sorted(pois, key=lambda p: p.id)
    keyed = [(stratum_key(raster_sample(degurba, p.point)), p) for p in ordered]
    if n >= len(ordered):
        chosen = ordered
    else:
        chosen = _stratified_pick(keyed, n, random.Random(seed))
    strata = dict((p.id, k) for k, p in keyed)
    chosen_ids = {p.id for p in chosen}
    samples = [NegativeSample(id=p.id, point=p.point, origin="poi", stratum=strata[p.id])
               for p in ordered if p.id in chosen_ids]
    return samples, report


def built_cell_centers(builtup: RasterGrid, threshold: float = 0.0) -> list:
    """Centers of cells whose built-up value exceeds threshold (nodata excluded)."""
    centers = []
    for row in range(builtup.nrows):
        for col in range(builtup.ncols):
            v = builtup.cell_value(row, col)
            if v != builtup.nodata and v > threshold:
                centers.append(builtup.cell_center(row, col))
    return centers


def sample_remote_negatives(builtup: RasterGrid, landcover: RasterGrid, aoi: BBox,
                            n: int = 2000, min_dist_m: float = 1000.0, seed: int = 0,
                            built_threshold: float = 0.0, water_class: float = 80,
                            pool_factor: int = 3, max_draws: int = 1_000_000):
    """Seeded rejection sampling of far-from-structure negatives inside aoi.

    A draw is accepted when every built-up cell center is strictly farther than
    min_dist_m and the land-cover sample is present and not water. The accepted
    pool (pool_factor * n draws) is then stratified by land-cover class down to
    n. Starvation at max_draws yields a partial result plus a report.
    """
    centers = built_cell_centers(builtup, built_threshold)
    built_index = index_build(enumerate(centers), bucket_deg=max(0.1, builtup.cellsize))
    rng = random.Random(seed)
    pool: list[tuple[str, GeoPoint]] = []
    pool_target = max(n, n * pool_factor)
    draws = 0
    while len(pool) < pool_target and draws < max_draws:
        draws += 1
        lat = rng.uniform(aoi.min_lat, aoi.max_lat)
        lon = rng.uniform(aoi.min_lon, aoi.max_lon)
        p = GeoPoint(lat, lon)
        if built_index.query_radius(p, min_dist_m):
            continue
        lc = raster_sample(landcover, p)
        if lc is None or lc == water_class:
            continue
        pool.append((stratum_key(lc), p))

    if len(pool) <= n:
        chosen = list(range(len(pool)))
    else:
        keyed = [(key, i) for i, (key, _) in enumerate(pool)]
        chosen = sorted(_stratified_pick(keyed, n, rng))
    samples = [NegativeSample(id=f"remote-{i:06d}", point=pool[i][1], origin="remote",
                              stratum=pool[i][0])
               for i in chosen]
    report = {
        "requested": n,
        "draws": draws,
        "pool": len(pool),
        "shortfall": max(0, n - len(samples)),
        "starved": len(pool) < pool_target and draws >= max_draws,
    }
    return samples, report


def negatives_to_geojson(samples: Sequence) -> dict:
    features = [{
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [s.point.lon, s.point.lat]},
        "properties": {"id": s.id, "origin": s.origin, "stratum": s.stratum},
    } for s in samples]
    return {"type": "FeatureCollection", "features": features}


def read_negatives_geojson(path):
    import json

    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    samples = []
    for feat in doc["features"]:
        props = feat["properties"]
        lon, lat = feat["geometry"]["coordinates"]
        samples.append(NegativeSample(id=props["id"], point=GeoPoint(lat, lon),
                                      origin=props["origin"], stratum=props["stratum"]))
    return samples
