import json

import httpx
import pytest

from atlas.geo import GeoPoint, haversine_distance, ring_from_coords
from atlas.ingest import (
    AdminZone,
    BuildingFootprint,
    FixtureGeocoder,
    OverpassError,
    SchoolRecord,
    geocode,
    merge_building_layers,
    overpass_fetch,
    read_buildings,
    read_pois,
    read_schools,
)

M_TO_DEG = 360.0 / 40_030_228.88  # roughly one meter in degrees of arc


def fc(features):
    return {"type": "FeatureCollection", "features": features}


def point_feature(props, lat, lon):
    return {"type": "Feature",
            "geometry": {"type": "Point", "coordinates": [lon, lat]},
            "properties": props}


def square_feature(props, lat, lon, half_deg=0.0002):
    ring = [[lon - half_deg, lat - half_deg], [lon + half_deg, lat - half_deg],
            [lon + half_deg, lat + half_deg], [lon - half_deg, lat + half_deg],
            [lon - half_deg, lat - half_deg]]
    return {"type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": props}


class TestReadSchools:
    def test_empty_collection(self, tmp_path):
        p = tmp_path / "schools.geojson"
        p.write_text(json.dumps(fc([])))
        records, rejects = read_schools(p)
        assert records == [] and rejects == []

    def test_golden_fixture_field_for_field(self, tmp_path):
        feats = [
            point_feature({"id": "s1", "name": "North Primary", "admin_zone": "Z1",
                           "source": "official", "level": "primary"}, 1.0, 2.0),
            point_feature({"id": "s2", "name": "South Primary"}, -1.0, 2.0),
            point_feature({"id": "s3", "name": "East School", "source": "osm"}, 1.0, 3.0),
            {"type": "Feature", "geometry": None,
             "properties": {"id": "s4", "name": "No Coords School",
                            "address": "12 Main St", "admin_zone": "Z2"}},
            point_feature({"id": "s5", "name": "West School"}, 0.5, -2.0),
        ]
        p = tmp_path / "schools.geojson"
        p.write_text(json.dumps(fc(feats)))
        records, rejects = read_schools(p)
        assert rejects == []
        assert [r.id for r in records] == ["s1", "s2", "s3", "s4", "s5"]
        s1 = records[0]
        assert s1.name == "North Primary"
        assert s1.point == GeoPoint(1.0, 2.0)
        assert s1.admin_zone == "Z1"
        assert s1.source == "official"
        assert s1.meta == {"level": "primary"}
        s4 = records[3]
        assert s4.point is None
        assert s4.address == "12 Main St"

    def test_out_of_range_lat_rejected(self, tmp_path):
        p = tmp_path / "schools.geojson"
        p.write_text(json.dumps(fc([point_feature({"id": "bad", "name": "X"}, 95.0, 0.0)])))
        records, rejects = read_schools(p)
        assert records == []
        assert len(rejects) == 1
        assert "lat out of range" in rejects[0].reason

    def test_records_plus_rejects_partition_input(self, tmp_path):
        feats = [
            point_feature({"id": "a", "name": "A"}, 0, 0),
            point_feature({"id": "a", "name": "Dup"}, 0, 1),       # duplicate id
            point_feature({"id": "b", "name": ""}, 0, 2),           # empty name
            point_feature({"name": "No Id"}, 0, 3),                 # missing id
            point_feature({"id": "c", "name": "C"}, 0, 4),
        ]
        p = tmp_path / "schools.geojson"
        p.write_text(json.dumps(fc(feats)))
        records, rejects = read_schools(p)
        assert len(records) + len(rejects) == len(feats)
        assert [r.id for r in records] == ["a", "c"]

    def test_csv_with_column_mapping(self, tmp_path):
        p = tmp_path / "schools.csv"
        p.write_text("code,title,latitude,longitude,zone,addr\n"
                     "s1,Alpha School,1.5,2.5,Z1,1 High St\n"
                     "s2,Beta School,,,Z2,2 Low Rd\n"
                     "s3,Gamma School,95,3.0,Z1,\n")
        records, rejects = read_schools(p, csv_columns={
            "id": "code", "name": "title", "lat": "latitude", "lon": "longitude",
            "admin_zone": "zone", "address": "addr"})
        assert [r.id for r in records] == ["s1", "s2"]
        assert records[0].point == GeoPoint(1.5, 2.5)
        assert records[1].point is None and records[1].address == "2 Low Rd"
        assert len(rejects) == 1 and "lat out of range" in rejects[0].reason


class TestReadBuildingsAndPois:
    def test_building_confidence_required_for_non_osm(self, tmp_path):
        feats = [square_feature({"id": "m1", "source": "microsoft"}, 0, 0),
                 square_feature({"id": "m2", "source": "microsoft", "confidence": 0.9}, 0, 1)]
        p = tmp_path / "b.geojson"
        p.write_text(json.dumps(fc(feats)))
        records, rejects = read_buildings(p)
        assert [b.id for b in records] == ["m2"]
        assert "confidence" in rejects[0].reason

    def test_poi_missing_geometry_rejected(self, tmp_path):
        feats = [{"type": "Feature", "geometry": None, "properties": {"id": "p1"}},
                 point_feature({"id": "p2", "name": "Shop", "shop": "bakery"}, 1, 1)]
        p = tmp_path / "p.geojson"
        p.write_text(json.dumps(fc(feats)))
        records, rejects = read_pois(p)
        assert [r.id for r in records] == ["p2"]
        assert records[0].tags["shop"] == "bakery"
        assert len(rejects) == 1


def building(bid, lat, lon, source="osm", confidence=None, half_m=15.0):
    h = half_m * M_TO_DEG
    ring = ring_from_coords([(lat - h, lon - h), (lat - h, lon + h),
                             (lat + h, lon + h), (lat + h, lon - h)])
    return BuildingFootprint(id=bid, ring=ring, source=source, confidence=confidence)


class TestMergeBuildingLayers:
    def test_osm_empty_keeps_qualifying_rest(self):
        ms = [building("m1", 0, 0, "microsoft", 0.9)]
        gg = [building("g1", 0, 0.01, "google", 0.8)]
        merged = merge_building_layers([], ms, gg, confidence_min=0.7, exclusion_radius_m=25)
        assert [b.id for b in merged] == ["m1", "g1"]

    def test_nearby_non_osm_centroid_excluded(self):
        osm = [building("o1", 0, 0)]
        ms = [building("m1", 5 * M_TO_DEG, 0, "microsoft", 0.99)]
        d = haversine_distance(osm[0].ring.centroid(), ms[0].ring.centroid())
        assert d == pytest.approx(5, abs=0.1)
        merged = merge_building_layers(osm, ms, [], exclusion_radius_m=25)
        assert [b.id for b in merged] == ["o1"]

    def test_low_confidence_excluded(self):
        gg = [building("g1", 1, 1, "google", 0.5)]
        merged = merge_building_layers([], [], gg, confidence_min=0.7)
        assert merged == []

    def test_merge_invariants_brute_force(self):
        import random
        rng = random.Random(21)
        osm = [building(f"o{i}", rng.uniform(0, 0.01), rng.uniform(0, 0.01))
               for i in range(20)]
        ms = [building(f"m{i}", rng.uniform(0, 0.01), rng.uniform(0, 0.01),
                       "microsoft", rng.random()) for i in range(30)]
        merged = merge_building_layers(osm, ms, [], confidence_min=0.7,
                                       exclusion_radius_m=25)
        ids = {b.id for b in merged}
        assert {b.id for b in osm} <= ids
        for b in ms:
            qualifies = (b.confidence >= 0.7 and
                         all(haversine_distance(b.ring.centroid(), o.ring.centroid()) > 25
                             for o in osm))
            assert (b.id in ids) == qualifies


OVERPASS_DOC = {
    "elements": [
        {"type": "node", "id": 1, "lat": 1.0, "lon": 2.0,
         "tags": {"amenity": "marketplace", "name": "Central Market"}},
        {"type": "node", "id": 2, "lat": 1.1, "lon": 2.1,
         "tags": {"shop": "bakery", "name": "Corner Bakery"}},
        {"type": "node", "id": 3, "lat": 1.2, "lon": 2.2,
         "tags": {"amenity": "clinic"}},
        {"type": "way", "id": 4, "center": {"lat": 1.3, "lon": 2.3},
         "tags": {"building": "retail", "name": "Mall"}},
        {"type": "way", "id": 5, "tags": {"building": "yes"}},
    ]
}


class TestOverpassFetch:
    def test_fixture_mode_parses_nodes_and_way_centers(self, tmp_path):
        p = tmp_path / "overpass.json"
        p.write_text(json.dumps(OVERPASS_DOC))
        pois, rejects = overpass_fetch("q", str(p))
        assert [r.id for r in pois] == ["node/1", "node/2", "node/3", "way/4"]
        assert pois[0].tags == {"amenity": "marketplace", "name": "Central Market"}
        assert pois[3].point == GeoPoint(1.3, 2.3)
        assert len(rejects) == 1 and "center" in rejects[0].reason

    def test_fixture_mode_deterministic(self, tmp_path):
        p = tmp_path / "overpass.json"
        p.write_text(json.dumps(OVERPASS_DOC))
        first = overpass_fetch("q", str(p))
        second = overpass_fetch("q", str(p))
        assert first == second

    def test_empty_elements(self, tmp_path):
        p = tmp_path / "overpass.json"
        p.write_text(json.dumps({"elements": []}))
        pois, rejects = overpass_fetch("q", str(p))
        assert pois == [] and rejects == []

    def test_http_429_thrice_surfaces_rate_limit(self):
        calls = []

        def handler(request):
            calls.append(request.url)
            return httpx.Response(429)

        client = httpx.Client(transport=httpx.MockTransport(handler))
        with pytest.raises(OverpassError, match="rate-limit"):
            overpass_fetch("q", "https://overpass.example/api", attempts=3,
                           client=client, sleep=lambda s: None)
        assert len(calls) == 3

    def test_http_success_after_retry(self):
        state = {"n": 0}

        def handler(request):
            state["n"] += 1
            if state["n"] < 2:
                return httpx.Response(500)
            return httpx.Response(200, json=OVERPASS_DOC)

        client = httpx.Client(transport=httpx.MockTransport(handler))
        pois, _ = overpass_fetch("q", "https://overpass.example/api",
                                 client=client, sleep=lambda s: None)
        assert len(pois) == 4

    def test_malformed_json_errors(self):
        client = httpx.Client(transport=httpx.MockTransport(
            lambda request: httpx.Response(200, content=b"not json")))
        with pytest.raises(OverpassError, match="JSON"):
            overpass_fetch("q", "https://overpass.example/api", client=client,
                           sleep=lambda s: None)


ZONES = [AdminZone(code="Z1", ring=ring_from_coords([(0, 0), (0, 1), (1, 1), (1, 0)])),
         AdminZone(code="Z2", ring=ring_from_coords([(0, 1), (0, 2), (1, 2), (1, 1)]))]


class TestGeocode:
    def rec(self, zone="Z1"):
        return SchoolRecord(id="s", name="Alpha School", address="1 Road",
                            admin_zone=zone)

    def test_result_inside_zone_attached(self):
        client = FixtureGeocoder({"alpha school 1 road": {"lat": 0.5, "lon": 0.5}})
        out = geocode(self.rec(), client, ZONES)
        assert out.status == "attached"
        assert out.point == GeoPoint(0.5, 0.5)

    def test_result_outside_zone_dropped(self):
        client = FixtureGeocoder({"alpha school 1 road": {"lat": 0.5, "lon": 1.5}})
        out = geocode(self.rec(), client, ZONES)
        assert out.status == "dropped"
        assert out.reason == "zone mismatch"

    def test_client_failure_deferred(self):
        class Failing:
            def lookup(self, q):
                raise TimeoutError("geocoder timed out")

        out = geocode(self.rec(), Failing(), ZONES)
        assert out.status == "deferred"
        assert "timed out" in out.reason

    def test_no_result_dropped(self):
        out = geocode(self.rec(), FixtureGeocoder({}), ZONES)
        assert out.status == "dropped"
        assert out.reason == "no geocode result"

    def test_unknown_zone_dropped(self):
        client = FixtureGeocoder({"alpha school 1 road": {"lat": 0.5, "lon": 0.5}})
        out = geocode(self.rec(zone="Z9"), client, ZONES)
        assert out.status == "dropped"
