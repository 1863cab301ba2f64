import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from atlas.cleanse import (
    FilterReport,
    dedup_schools,
    geographic_filter,
    largest_remainder_quotas,
    levenshtein,
    name_similarity,
    normalize_name,
    stratified_thin,
    stratum_key,
)
from atlas.geo import METERS_PER_DEG, FootprintIndex, GeoPoint, haversine_distance, ring_from_coords
from atlas.ingest import SchoolRecord
from atlas.raster import grid_from_rows

M_TO_DEG = 1.0 / METERS_PER_DEG


def school(sid, name, lat, lon, **kw):
    return SchoolRecord(id=sid, name=name, point=GeoPoint(lat, lon), **kw)


def levenshtein_oracle(a, b):
    """Full-matrix dynamic program, kept independent of the implementation."""
    m, n = len(a), len(b)
    dp = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        dp[i][0] = i
    for j in range(n + 1):
        dp[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            dp[i][j] = min(dp[i - 1][j] + 1,
                           dp[i][j - 1] + 1,
                           dp[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return dp[m][n]


class TestNormalizeName:
    def test_accents_case_and_whitespace(self):
        assert normalize_name("École  Primaire ") == "ecole primaire"

    def test_empty(self):
        assert normalize_name("") == ""

    def test_decomposition_plus_fold(self):
        assert normalize_name("ŠKOLA Ž") == "skola z"


class TestLevenshtein:
    def test_kitten_sitting(self):
        assert levenshtein("kitten", "sitting") == 3
        assert name_similarity("kitten", "sitting") == pytest.approx(1 - 3 / 7)

    def test_identical(self):
        assert levenshtein("abc", "abc") == 0
        assert name_similarity("abc", "abc") == 1.0

    def test_against_empty(self):
        assert levenshtein("abc", "") == 3
        assert name_similarity("abc", "") == 0.0
        assert name_similarity("", "") == 1.0

    def test_matches_dp_oracle_on_random_pairs(self):
        rng = random.Random(424242)
        alphabet = "abcde"
        for _ in range(1000):
            a = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))
            b = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))
            expected = levenshtein_oracle(a, b)
            assert levenshtein(a, b) == expected
            assert levenshtein(b, a) == expected
            assert expected <= max(len(a), len(b))

    @given(st.text(max_size=16), st.text(max_size=16))
    def test_symmetry_and_bound_property(self, a, b):
        d = levenshtein(a, b)
        assert d == levenshtein(b, a)
        assert d <= max(len(a), len(b))
        assert (d == 0) == (a == b)

    @given(st.text(max_size=12), st.text(max_size=12), st.text(max_size=12))
    def test_triangle_inequality_property(self, a, b, c):
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


def closure_oracle(ids, linked_pairs):
    """Transitive closure by repeated merging, independent of union-find."""
    groups = {i: {i} for i in ids}
    for a, b in linked_pairs:
        union = groups[a] | groups[b]
        for member in union:
            groups[member] = union
    return {frozenset(g) for g in groups.values()}


class TestDedupSchools:
    def test_same_name_10m_apart_merges(self):
        a = school("s1", "Hillside Academy", 0.0, 0.0)
        b = school("s2", "hillside academy", 10 * M_TO_DEG, 0.0)
        out, log = dedup_schools([a, b])
        assert len(out) == 1
        assert out[0].id == "s1"
        assert len(log.clusters) == 1

    def test_same_name_30m_apart_stays_separate(self):
        a = school("s1", "Hillside Academy", 0.0, 0.0)
        b = school("s2", "Hillside Academy", 30 * M_TO_DEG, 0.0)
        out, _ = dedup_schools([a, b])
        assert len(out) == 2

    def test_dissimilar_names_close_together_stay_separate(self):
        a = school("s1", "Hillside Academy", 0.0, 0.0)
        b = school("s2", "Central Mosque", 10 * M_TO_DEG, 0.0)
        assert name_similarity(normalize_name(a.name), normalize_name(b.name)) < 0.85
        out, _ = dedup_schools([a, b])
        assert len(out) == 2

    def test_chain_merges_transitively(self):
        a = school("a", "Lakeview School 1", 0.0, 0.0)
        b = school("b", "Lakeview School 2", 20 * M_TO_DEG, 0.0)
        c = school("c", "Lakeview School 3", 40 * M_TO_DEG, 0.0)
        assert haversine_distance(a.point, c.point) > 25
        out, log = dedup_schools([a, b, c])
        assert len(out) == 1
        cluster = log.clusters[0]
        assert cluster.canonical_id == "a"
        assert cluster.member_ids == ["a", "b", "c"]
        # Closure oracle over the recorded links agrees.
        linked = [(l.a, l.b) for l in log.links]
        assert frozenset(cluster.member_ids) in closure_oracle(["a", "b", "c"], linked)

    def test_merged_point_is_member_centroid(self):
        a = school("a", "Twin School", 0.0, 0.0)
        b = school("b", "Twin School", 20 * M_TO_DEG, 0.0)
        out, _ = dedup_schools([a, b])
        assert out[0].point.lat == pytest.approx(10 * M_TO_DEG)
        assert out[0].point.lon == 0.0

    def test_metadata_union_with_canonical_precedence(self):
        a = school("a", "Twin School", 0.0, 0.0, meta={"level": "primary"})
        b = school("b", "Twin School", 10 * M_TO_DEG, 0.0,
                   meta={"level": "secondary", "roof": "tin"})
        out, _ = dedup_schools([a, b])
        assert out[0].meta == {"level": "primary", "roof": "tin"}

    def test_every_link_reverifies_constraints(self):
        rng = random.Random(99)
        records = [school(f"r{i:03d}", rng.choice(["North School", "South School", "Bakery"]),
                          rng.uniform(0, 0.002), rng.uniform(0, 0.002))
                   for i in range(60)]
        _, log = dedup_schools(records)
        by_id = {r.id: r for r in records}
        assert log.links, "fixture should produce at least one link"
        for link in log.links:
            assert link.distance_m <= 25.0
            assert link.similarity >= 0.85
            a, b = by_id[link.a], by_id[link.b]
            assert haversine_distance(a.point, b.point) == pytest.approx(link.distance_m)
            assert name_similarity(normalize_name(a.name),
                                   normalize_name(b.name)) == pytest.approx(link.similarity)

    def test_idempotent(self):
        rng = random.Random(17)
        records = [school(f"r{i:03d}", rng.choice(["Alpha School", "alpha school ", "Beta School"]),
                          rng.uniform(0, 0.001), rng.uniform(0, 0.001))
                   for i in range(40)]
        once, _ = dedup_schools(records)
        twice, _ = dedup_schools(once)
        assert twice == once

    def test_missing_point_rejected(self):
        with pytest.raises(ValueError):
            dedup_schools([SchoolRecord(id="x", name="No Point School")])


def make_square(lat, lon, half_m):
    h = half_m * M_TO_DEG
    return ring_from_coords([(lat - h, lon - h), (lat - h, lon + h),
                             (lat + h, lon + h), (lat + h, lon - h)])


class TestGeographicFilter:
    @pytest.fixture
    def landcover(self):
        # 2x2 one-degree cells at origin: NW water (80), everything else grass (30).
        return grid_from_rows([[80.0, 30.0], [30.0, 30.0]], xll=0.0, yll=0.0,
                              cellsize=1.0, kind="categorical")

    @pytest.fixture
    def buildings(self):
        return FootprintIndex.build([("bldg", make_square(0.5, 0.5, 20))])

    def test_water_point_removed(self, landcover, buildings):
        rep = geographic_filter([school("w", "Water School", 1.5, 0.5)], landcover, buildings)
        assert rep.removed == [("w", "water")]

    def test_point_inside_footprint_kept(self, landcover, buildings):
        rep = geographic_filter([school("in", "Inside School", 0.5, 0.5)], landcover, buildings)
        assert rep.kept == ["in"]

    def test_point_200m_from_building_removed(self, landcover, buildings):
        rec = school("far", "Far School", 0.5, 0.5 + 220 * M_TO_DEG)
        # Haversine oracle: nearest footprint edge is ~200 m away.
        edge = GeoPoint(0.5, 0.5 + 20 * M_TO_DEG)
        assert haversine_distance(rec.point, edge) == pytest.approx(200, abs=1)
        rep = geographic_filter([rec], landcover, buildings, max_dist_m=150)
        assert rep.removed == [("far", "far_from_building")]

    def test_point_within_150m_kept(self, landcover, buildings):
        rec = school("near", "Near School", 0.5, 0.5 + 100 * M_TO_DEG)
        rep = geographic_filter([rec], landcover, buildings, max_dist_m=150)
        assert rep.kept == ["near"]

    def test_missing_landcover_kept_and_flagged(self, buildings):
        tiny = grid_from_rows([[30.0]], xll=10.0, yll=10.0, cellsize=1.0)
        rep = geographic_filter([school("s", "School", 0.5, 0.5)], tiny, buildings)
        assert rep.kept == ["s"]
        assert rep.flagged["s"] == ["no_landcover"]

    def test_no_coordinates_removed(self, landcover, buildings):
        rep = geographic_filter([SchoolRecord(id="np", name="Nowhere School")],
                                landcover, buildings)
        assert rep.removed == [("np", "no_coordinates")]

    def test_report_partitions_input(self, landcover, buildings):
        rng = random.Random(4)
        records = [school(f"s{i}", "Some School", rng.uniform(0, 2), rng.uniform(0, 2))
                   for i in range(80)]
        rep = geographic_filter(records, landcover, buildings)
        kept, removed = set(rep.kept), {i for i, _ in rep.removed}
        assert kept | removed == {r.id for r in records}
        assert kept & removed == set()


class TestLargestRemainderQuotas:
    def test_three_strata_hand_arithmetic(self):
        assert largest_remainder_quotas({"a": 50, "b": 30, "c": 20}, 10) == \
            {"a": 5, "b": 3, "c": 2}

    def test_remainder_seats(self):
        # Shares 7/3 of 7 seats: exact 4.9 / 2.1 -> base 4/2, leftover to "a".
        assert largest_remainder_quotas({"a": 7, "b": 3}, 7) == {"a": 5, "b": 2}

    def test_total_never_exceeded(self):
        rng = random.Random(2)
        for _ in range(200):
            counts = {f"k{i}": rng.randint(0, 40) for i in range(rng.randint(1, 6))}
            total = rng.randint(0, 60)
            q = largest_remainder_quotas(counts, total)
            assert sum(q.values()) == min(total, sum(counts.values())) if total >= 0 else 0
            for k in q:
                assert 0 <= q[k] <= counts[k]

    def test_stratum_key(self):
        assert stratum_key(None) == "unclassified"
        assert stratum_key(3.0) == "3"
        assert stratum_key(2.5) == "2.5"


class TestStratifiedThin:
    @pytest.fixture
    def degurba(self):
        # West half class 1, east half class 3, over [0,2]x[0,2].
        return grid_from_rows([[1.0, 3.0], [1.0, 3.0]], xll=0.0, yll=0.0,
                              cellsize=1.0, kind="categorical")

    def test_all_close_selects_exactly_one(self, degurba):
        records = [school(f"s{i}", "S", 0.5 + i * 10 * M_TO_DEG, 0.5) for i in range(20)]
        out = stratified_thin(records, degurba, target_total=10, min_spacing_m=10_000)
        assert len(out) == 1

    def test_spacing_constraint_exact(self, degurba):
        rng = random.Random(11)
        records = [school(f"s{i:03d}", "S", rng.uniform(0, 2), rng.uniform(0, 2))
                   for i in range(300)]
        out = stratified_thin(records, degurba, target_total=40, min_spacing_m=10_000, seed=5)
        assert 1 <= len(out) <= 40
        for i in range(len(out)):
            for j in range(i + 1, len(out)):
                assert haversine_distance(out[i].point, out[j].point) >= 10_000

    def test_same_seed_is_deterministic(self, degurba):
        rng = random.Random(12)
        records = [school(f"s{i:03d}", "S", rng.uniform(0, 2), rng.uniform(0, 2))
                   for i in range(150)]
        a = stratified_thin(records, degurba, target_total=30, min_spacing_m=5_000, seed=9)
        b = stratified_thin(records, degurba, target_total=30, min_spacing_m=5_000, seed=9)
        assert [r.id for r in a] == [r.id for r in b]

    def test_quota_allocation_without_spacing_effects(self, degurba):
        # 60 west (class 1) and 40 east (class 3), negligible spacing: quotas 6/4.
        records = []
        for i in range(60):
            records.append(school(f"w{i:02d}", "S", 0.1 + (i % 10) * 0.08, 0.1 + (i // 10) * 0.12))
        for i in range(40):
            records.append(school(f"e{i:02d}", "S", 0.1 + (i % 10) * 0.08, 1.1 + (i // 10) * 0.15))
        out = stratified_thin(records, degurba, target_total=10, min_spacing_m=1.0, seed=3)
        assert len(out) == 10
        west = sum(1 for r in out if r.id.startswith("w"))
        assert west == 6 and len(out) - west == 4

    def test_empty_input(self, degurba):
        assert stratified_thin([], degurba) == []
