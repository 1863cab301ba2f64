"""Synthetic mini-country generator: inputs for an end-to-end run of the whole
funnel (schools with planted duplicates and placement errors, POIs, building
layers, the raster stack, a geocoder fixture, and rendered imagery tiles)."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

from PIL import Image, ImageDraw

from .geo import METERS_PER_DEG, BBox, FootprintIndex, GeoPoint, ring_from_coords
from .ingest import geocode_query, SchoolRecord
from .raster import grid_from_rows, write_ascii_grid
from .tiles import TileIndex, latlon_to_tile, tile_bounds, tiles_in_bbox

AOI = BBox(0.0, 30.0, 0.2, 30.2)
CELL = 0.01
NCELLS = 20
TILE_ZOOM = 16

M = 1.0 / METERS_PER_DEG  # degrees per meter


@dataclass(frozen=True)
class Town:
    name: str
    lat: float
    lon: float
    degurba: int
    buildings: int
    pop_weight: float
    has_schools: bool


TOWNS = (
    Town("Kumari", 0.05, 30.05, 3, 220, 350.0, True),
    Town("Basoda", 0.14, 30.13, 2, 140, 220.0, True),
    # The planted mapping gaps: buildings and people, no recorded schools.
    Town("Nilova", 0.03, 30.16, 2, 110, 180.0, False),
    Town("Lusito", 0.17, 30.07, 2, 90, 150.0, False),
)

LAKE = BBox(0.16, 30.0, 0.2, 30.04)

NAME_STEMS = ("Mwangi", "Kijani", "Umoja", "Tumaini", "Baraka", "Amani", "Jua",
              "Safina", "Upendo", "Zawadi", "Neema", "Imara", "Busara", "Fahari")
SCHOOL_KINDS = ("Primary School", "Secondary School", "Academy")
POI_NAMES = ("Central Market", "Corner Bakery", "Health Post", "Grand Mosque",
             "Pharmacy Plus", "Hotel Luna", "Hardware Store", "City Butchery",
             "Cafe Rosa", "Police Post", "Savings Bank", "Repair Garage",
             "Green Grocer", "Tailor House", "Community Hall")
SCHOOLISH_POI_NAMES = ("Sunrise School Supplies", "École Stationers",
                       "Academy Sports Shop", "Madrasa Bookstore",
                       "Shule Uniform Store")
LEXICON_TERMS = ("school", "école", "academy", "shule", "madrasa",
                 "kindergarten", "college")


def _cell_center(row: int, col: int) -> GeoPoint:
    return GeoPoint(AOI.min_lat + (NCELLS - row - 0.5) * CELL,
                    AOI.min_lon + (col + 0.5) * CELL)


def _town_distance(p: GeoPoint, town: Town) -> float:
    return math.hypot(p.lat - town.lat, p.lon - town.lon)


def build_rasters(rng: random.Random) -> dict:
    rows = {name: [] for name in ("climate", "landcover", "terrain", "population",
                                  "degurba", "nightlights", "builtup")}
    for r in range(NCELLS):
        row_vals = {name: [] for name in rows}
        for c in range(NCELLS):
            p = _cell_center(r, c)
            in_lake = LAKE.contains(p)
            row_vals["climate"].append([7.0, 14.0, 26.0][(r + c) // 14])
            row_vals["landcover"].append(
                80.0 if in_lake else rng.choice([30.0, 30.0, 40.0, 10.0]))
            row_vals["terrain"].append(float(1 + r // 7))
            pop = rng.uniform(0.0, 5.0)
            for town in TOWNS:
                d = _town_distance(p, town)
                pop += town.pop_weight * math.exp(-((d / 0.03) ** 2))
            if in_lake:
                pop = 0.0
            row_vals["population"].append(round(pop, 3))
            degurba = 1.0
            if _town_distance(p, TOWNS[0]) < 0.025:
                degurba = 3.0
            elif any(_town_distance(p, t) < 0.02 for t in TOWNS[1:]):
                degurba = 2.0
            row_vals["degurba"].append(degurba)
            row_vals["nightlights"].append(
                0.0 if in_lake else round(max(0.0, pop / 40.0 + rng.gauss(0, 0.2)), 3))
            built = any(_town_distance(p, t) < 0.02 for t in TOWNS) and not in_lake
            row_vals["builtup"].append(1.0 if built else 0.0)
        for name in rows:
            rows[name].append(row_vals[name])
    kinds = {"climate": "categorical", "landcover": "categorical",
             "terrain": "categorical", "population": "continuous",
             "degurba": "categorical", "nightlights": "continuous",
             "builtup": "continuous"}
    return {name: grid_from_rows(rows[name], xll=AOI.min_lon, yll=AOI.min_lat,
                                 cellsize=CELL, kind=kinds[name])
            for name in rows}


def _rect_ring(lat: float, lon: float, half_lat_m: float, half_lon_m: float):
    hla, hlo = half_lat_m * M, half_lon_m * M
    return ring_from_coords([(lat - hla, lon - hlo), (lat - hla, lon + hlo),
                             (lat + hla, lon + hlo), (lat + hla, lon - hlo)])


def build_buildings(rng: random.Random):
    """(features_by_source, centroids) for three provider layers."""
    layers = {"osm": [], "microsoft": [], "google": []}
    centroids = []
    serial = 0

    def place(lat, lon, source, confidence=None):
        nonlocal serial
        serial += 1
        ring = _rect_ring(lat, lon, rng.uniform(14, 30), rng.uniform(14, 30))
        props = {"id": f"b{serial:05d}", "source": source}
        if confidence is not None:
            props["confidence"] = round(confidence, 3)
        coords = [[v.lon, v.lat] for v in ring.vertices]
        layers[source].append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [coords]},
            "properties": props,
        })
        centroids.append((props["id"], ring.centroid(), ring))
        return props["id"]

    for town in TOWNS:
        for _ in range(town.buildings):
            lat = min(max(rng.gauss(town.lat, 0.005), AOI.min_lat + 0.001), AOI.max_lat - 0.001)
            lon = min(max(rng.gauss(town.lon, 0.005), AOI.min_lon + 0.001), AOI.max_lon - 0.001)
            if LAKE.contains(GeoPoint(lat, lon)):
                continue
            roll = rng.random()
            if roll < 0.8:
                place(lat, lon, "osm")
            elif roll < 0.92:
                place(lat, lon, "microsoft", rng.uniform(0.55, 0.99))
            else:
                place(lat, lon, "google", rng.uniform(0.5, 0.95))
    # Isolated rural structures.
    for _ in range(25):
        lat, lon = rng.uniform(0.0, 0.2), rng.uniform(30.0, 30.2)
        p = GeoPoint(lat, lon)
        if LAKE.contains(p) or any(_town_distance(p, t) < 0.03 for t in TOWNS):
            continue
        place(lat, lon, "osm")
    # Microsoft shadows of OSM buildings: excluded by the merge radius rule.
    osm_entries = [e for e in centroids if e[0].startswith("b")][:15]
    for _, centroid, _ in osm_entries:
        place(centroid.lat + 8 * M, centroid.lon, "microsoft", 0.9)
    return layers, centroids


def _feature(point, props):
    geom = None
    if point is not None:
        geom = {"type": "Point", "coordinates": [point.lon, point.lat]}
    return {"type": "Feature", "geometry": geom, "properties": props}


def _name_variant(rng: random.Random, name: str) -> str:
    roll = rng.random()
    if roll < 0.3:
        return name.upper()
    if roll < 0.55:
        return "  " + name.lower() + " "
    if roll < 0.8:
        return name.replace("School", "Schöol") if "School" in name else name + "s"
    return name.replace("a", "à", 1)


def build_schools(rng: random.Random, centroids, buildings_index: FootprintIndex):
    features = []
    geocoder = {}
    serial = 0

    def next_id():
        nonlocal serial
        serial += 1
        return f"s{serial:04d}"

    town_buildings = {}
    for bid, centroid, _ in centroids:
        for town in TOWNS:
            if town.has_schools and _town_distance(centroid, town) < 0.03:
                town_buildings.setdefault(town.name, []).append(centroid)
                break

    authentic = []
    for town in TOWNS:
        if not town.has_schools:
            continue
        spots = town_buildings.get(town.name, [])
        count = 210 if town.degurba == 3 else 90
        for _ in range(count):
            c = rng.choice(spots)
            point = GeoPoint(c.lat + rng.uniform(-4, 4) * M,
                             c.lon + rng.uniform(-4, 4) * M)
            name = f"{rng.choice(NAME_STEMS)} {rng.choice(SCHOOL_KINDS)}"
            sid = next_id()
            zone = "Z1" if point.lon < 30.1 else "Z2"
            authentic.append((sid, name, point))
            features.append(_feature(point, {
                "id": sid, "name": name, "admin_zone": zone,
                "source": rng.choice(["official", "official", "osm"]),
                "level": rng.choice(["primary", "secondary"])}))

    # Planted duplicates: same school, jittered point, mangled name.
    for sid, name, point in rng.sample(authentic, 60):
        dup = GeoPoint(point.lat + rng.uniform(-10, 10) * M,
                       point.lon + rng.uniform(-10, 10) * M)
        features.append(_feature(dup, {
            "id": next_id(), "name": _name_variant(rng, name),
            "admin_zone": "Z1" if dup.lon < 30.1 else "Z2",
            "source": "osm"}))

    # Schools recorded in the lake.
    for i in range(40):
        point = GeoPoint(rng.uniform(LAKE.min_lat + 0.002, LAKE.max_lat - 0.002),
                         rng.uniform(LAKE.min_lon + 0.002, LAKE.max_lon - 0.002))
        features.append(_feature(point, {
            "id": next_id(), "name": f"Lakeside School {i + 1}", "admin_zone": "Z1",
            "source": "official"}))

    # Schools far from any registered building.
    placed = 0
    while placed < 35:
        point = GeoPoint(rng.uniform(0.0, 0.2), rng.uniform(30.0, 30.2))
        if LAKE.contains(point) or any(_town_distance(point, t) < 0.035 for t in TOWNS):
            continue
        if buildings_index.min_distance_within(point, 400) is not None:
            continue
        placed += 1
        features.append(_feature(point, {
            "id": next_id(), "name": f"Remote School {placed}",
            "admin_zone": "Z1" if point.lon < 30.1 else "Z2", "source": "official"}))

    # Coordinate-less records resolved through the geocoder fixture.
    z1_spots = [c for c in town_buildings.get("Kumari", []) if c.lon < 30.1]
    for i in range(30):
        sid = next_id()
        name = f"{rng.choice(NAME_STEMS)} Listed School {i + 1}"
        address = f"{i + 1} Harbor Road"
        rec = SchoolRecord(id=sid, name=name, admin_zone="Z1", address=address)
        features.append(_feature(None, {"id": sid, "name": name, "admin_zone": "Z1",
                                        "address": address, "source": "official"}))
        key = geocode_query(rec)
        if i % 10 == 7:
            continue  # no geocoder entry: dropped as unresolvable
        if i % 10 in (8, 9):
            geocoder[key] = {"lat": 0.15, "lon": 30.15}  # lands in Z2: zone mismatch
        else:
            spot = rng.choice(z1_spots)
            geocoder[key] = {"lat": spot.lat, "lon": spot.lon}

    # Malformed rows the reader must reject, never silently drop.
    for i in range(10):
        features.append(_feature(GeoPoint(0.1, 30.1), {"id": f"bad-lat-{i}", "name": "X"}))
        features[-1]["geometry"]["coordinates"] = [30.1, 95.0]
    for i in range(8):
        features.append(_feature(GeoPoint(0.1, 30.1), {"id": f"noname-{i}", "name": ""}))
    for i in range(7):
        features.append(_feature(GeoPoint(0.1, 30.1), {"id": "s0001", "name": "Clone School"}))

    return {"type": "FeatureCollection", "features": features}, geocoder


def build_pois(rng: random.Random, centroids):
    features = []
    serial = 0

    def add(point, name, tags):
        nonlocal serial
        serial += 1
        props = dict(tags)
        props["id"] = f"p{serial:04d}"
        if name is not None:
            props["name"] = name
        features.append(_feature(point, props))

    spots = [centroid for _, centroid, _ in centroids]
    for _ in range(240):
        c = rng.choice(spots)
        add(GeoPoint(c.lat, c.lon), rng.choice(POI_NAMES),
            {"amenity": rng.choice(["marketplace", "clinic", "place_of_worship",
                                    "bank", "restaurant"])})
    for _ in range(60):
        c = rng.choice(spots)
        add(GeoPoint(c.lat, c.lon), rng.choice(SCHOOLISH_POI_NAMES), {"shop": "stationery"})
    for _ in range(40):
        c = rng.choice(spots)
        add(GeoPoint(c.lat, c.lon), None, {"shop": "yes"})
    for _ in range(30):
        c = rng.choice(spots)
        add(GeoPoint(c.lat, c.lon), f"{rng.choice(NAME_STEMS)} Learning Centre",
            {"amenity": rng.choice(["school", "kindergarten"])})
    for _ in range(50):
        point = GeoPoint(rng.uniform(0.0, 0.2), rng.uniform(30.0, 30.2))
        add(point, rng.choice(POI_NAMES), {"amenity": "fuel"})
    return {"type": "FeatureCollection", "features": features}


def build_zones():
    def rect(code, min_lon, max_lon):
        ring = [[min_lon, 0.0], [max_lon, 0.0], [max_lon, 0.2], [min_lon, 0.2],
                [min_lon, 0.0]]
        return {"type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {"code": code}}

    return {"type": "FeatureCollection",
            "features": [rect("Z1", 30.0, 30.1), rect("Z2", 30.1, 30.2)]}


LANDCOVER_COLORS = {30.0: (132, 158, 92), 40.0: (181, 170, 112),
                    10.0: (74, 118, 80), 80.0: (64, 96, 150)}
BUILDING_COLOR = (128, 124, 118)


def render_tiles(root: Path, landcover, centroids) -> int:
    """Rasterize imagery tiles around the towns; returns the tile count."""
    tiles = set()
    for town in TOWNS:
        box = BBox(town.lat - 0.02, town.lon - 0.02, town.lat + 0.02, town.lon + 0.02)
        tiles.update(tiles_in_bbox(box, TILE_ZOOM))
    rings = [(ring.bbox(), ring) for _, _, ring in centroids]
    from .raster import raster_sample

    for tile in sorted(tiles, key=lambda t: (t.z, t.x, t.y)):
        b = tile_bounds(tile)
        center = GeoPoint((b.min_lat + b.max_lat) / 2, (b.min_lon + b.max_lon) / 2)
        lc = raster_sample(landcover, center)
        img = Image.new("RGB", (256, 256), LANDCOVER_COLORS.get(lc, (128, 140, 96)))
        draw = ImageDraw.Draw(img)
        dlon = (b.max_lon - b.min_lon) / 256
        dlat = (b.max_lat - b.min_lat) / 256
        for rbox, ring in rings:
            if (rbox.max_lon < b.min_lon or rbox.min_lon > b.max_lon
                    or rbox.max_lat < b.min_lat or rbox.min_lat > b.max_lat):
                continue
            px = [((v.lon - b.min_lon) / dlon, (b.max_lat - v.lat) / dlat)
                  for v in ring.vertices]
            draw.polygon(px, fill=BUILDING_COLOR)
        path = root / str(tile.z) / str(tile.x) / f"{tile.y}.png"
        path.parent.mkdir(parents=True, exist_ok=True)
        img.save(path)
    return len(tiles)


CONFIG_TEMPLATE = """\
[paths]
schools = "inputs/schools.geojson"
pois = "inputs/pois.geojson"
buildings_osm = "inputs/buildings_osm.geojson"
buildings_microsoft = "inputs/buildings_microsoft.geojson"
buildings_google = "inputs/buildings_google.geojson"
admin_zones = "inputs/zones.geojson"
lexicon = "inputs/lexicon.txt"
geocoder_fixture = "inputs/geocoder.json"

[paths.rasters]
climate = "inputs/rasters/climate.asc"
landcover = "inputs/rasters/landcover.asc"
terrain = "inputs/rasters/terrain.asc"
population = "inputs/rasters/population.asc"
degurba = "inputs/rasters/degurba.asc"
nightlights = "inputs/rasters/nightlights.asc"
builtup = "inputs/rasters/builtup.asc"

[paths.aoi]
min_lat = 0.0
min_lon = 30.0
max_lat = 0.2
max_lon = 30.2

[thresholds]
thin_target = 200
thin_min_spacing_m = 300.0
poi_negatives_n = 60
remote_negatives_n = 120
search_n_iter = 4
search_space = {{ n_trees = [50, 100], max_depth = [8, 12], min_samples_leaf = [1, 2], max_features = ["sqrt"], bootstrap = [true] }}
gap_cell_m = 2000.0
candidate_zoom = {zoom}
candidate_p_min = 0.03
candidate_dedupe_m = 120.0
candidate_max_tiles = 1500

[seeds]
master = {seed}

[output]
dir = "out"

[service]
upstream_template = "file://{tiles_dir}/{{z}}/{{x}}/{{y}}.png"
host = "127.0.0.1"
port = 8731

[service.scorer]
kind = "built_fraction"
subgrid = 16
"""


def generate_demo(root, seed: int = 42) -> dict:
    """Write the demo dataset under root; deterministic for a fixed seed."""
    root = Path(root)
    inputs = root / "inputs"
    (inputs / "rasters").mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)

    rasters = build_rasters(rng)
    for name, grid in rasters.items():
        write_ascii_grid(grid, inputs / "rasters" / f"{name}.asc")

    layers, centroids = build_buildings(rng)
    for source, feats in layers.items():
        (inputs / f"buildings_{source}.geojson").write_text(
            json.dumps({"type": "FeatureCollection", "features": feats},
                       sort_keys=True, indent=1) + "\n", encoding="utf-8")
    index = FootprintIndex.build((bid, ring) for bid, _, ring in centroids)

    schools, geocoder = build_schools(rng, centroids, index)
    (inputs / "schools.geojson").write_text(
        json.dumps(schools, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    (inputs / "geocoder.json").write_text(
        json.dumps(geocoder, sort_keys=True, indent=1) + "\n", encoding="utf-8")

    pois = build_pois(rng, centroids)
    (inputs / "pois.geojson").write_text(
        json.dumps(pois, sort_keys=True, indent=1) + "\n", encoding="utf-8")

    (inputs / "zones.geojson").write_text(
        json.dumps(build_zones(), sort_keys=True, indent=1) + "\n", encoding="utf-8")
    (inputs / "lexicon.txt").write_text(
        "# school synonyms for negative-sample exclusion\n"
        + "\n".join(LEXICON_TERMS) + "\n", encoding="utf-8")

    tiles_dir = root / "tiles"
    n_tiles = render_tiles(tiles_dir, rasters["landcover"], centroids)

    config_path = root / "config.toml"
    config_path.write_text(CONFIG_TEMPLATE.format(
        seed=seed, zoom=TILE_ZOOM, tiles_dir=tiles_dir.resolve()), encoding="utf-8")
    return {
        "config": str(config_path),
        "schools": len(schools["features"]),
        "pois": len(pois["features"]),
        "buildings": len(centroids),
        "tiles": n_tiles,
    }
