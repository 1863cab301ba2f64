"""School dataset preparation: name normalization, fuzzy dedup, geographic
filtering, and distance-constrained stratified thinning."""

from __future__ import annotations

import math
import random
import unicodedata
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .geo import (
    METERS_PER_DEG,
    FootprintIndex,
    GeoPoint,
    SpatialIndex,
    haversine_distance,
    index_build,
)
from .raster import RasterGrid, raster_sample

UNCLASSIFIED = "unclassified"


def normalize_name(s: str) -> str:
    """Case-fold, strip accents (canonical decomposition), collapse whitespace."""
    decomposed = unicodedata.normalize("NFKD", s)
    stripped = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    return " ".join(stripped.casefold().split())


def levenshtein(a: str, b: str) -> int:
    """Unit-cost insert/delete/substitute distance over Unicode scalar values."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def name_similarity(a: str, b: str) -> float:
    """1 - distance / max length; two empty strings are identical (1.0)."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


@dataclass
class MergeLink:
    a: str
    b: str
    distance_m: float
    similarity: float


@dataclass
class MergeCluster:
    canonical_id: str
    member_ids: list
    merged_point: GeoPoint


@dataclass
class MergeLog:
    clusters: list = field(default_factory=list)
    links: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "clusters": [
                {
                    "canonical_id": c.canonical_id,
                    "member_ids": list(c.member_ids),
                    "merged_point": {"lat": c.merged_point.lat, "lon": c.merged_point.lon},
                }
                for c in self.clusters
            ],
            "links": [
                {"a": l.a, "b": l.b, "distance_m": l.distance_m, "similarity": l.similarity}
                for l in self.links
            ],
        }


class _UnionFind:
    def __init__(self, ids):
        self.parent = {i: i for i in ids}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        # Keep the lexicographically smallest id as the root (the canonical id).
        lo, hi = (ra, rb) if ra < rb else (rb, ra)
        self.parent[hi] = lo


def dedup_schools(records: Sequence, radius_m: float = 25.0, sim_min: float = 0.85):
    """Merge records that are close and similarly named; returns (records, MergeLog).

    Linked pairs satisfy haversine <= radius_m and name similarity >= sim_min on
    normalized names; clusters are the transitive closure of links. The merged
    record keeps the lexicographically smallest member id and the member
    centroid; metadata is unioned with canonical precedence.
    """
    for r in records:
        if r.point is None:
            raise ValueError(f"record {r.id} has no point; dedup requires coordinates")
    by_id = {r.id: r for r in records}
    if len(by_id) != len(records):
        raise ValueError("duplicate record ids")
    norm = {r.id: normalize_name(r.name) for r in records}
    idx = index_build((r.id, r.point) for r in records)
    uf = _UnionFind(by_id)
    links = []
    for r in records:
        for other_id in idx.query_radius(r.point, radius_m):
            if other_id <= r.id:
                continue
            sim = name_similarity(norm[r.id], norm[other_id])
            if sim >= sim_min:
                links.append(MergeLink(
                    a=r.id, b=other_id,
                    distance_m=haversine_distance(r.point, by_id[other_id].point),
                    similarity=sim))
                uf.union(r.id, other_id)

    members_by_root: dict[str, list] = {}
    for r in records:
        members_by_root.setdefault(uf.find(r.id), []).append(r.id)

    merged: dict[str, object] = {}
    clusters = []
    for root in sorted(members_by_root):
        member_ids = sorted(members_by_root[root])
        if len(member_ids) == 1:
            continue
        pts = [by_id[m].point for m in member_ids]
        center = GeoPoint(sum(p.lat for p in pts) / len(pts),
                          sum(p.lon for p in pts) / len(pts))
        meta: dict = {}
        for m in member_ids:
            if m != root:
                meta.update(by_id[m].meta)
        meta.update(by_id[root].meta)
        merged[root] = replace(by_id[root], point=center, meta=meta)
        clusters.append(MergeCluster(canonical_id=root, member_ids=member_ids,
                                     merged_point=center))

    out = []
    emitted = set()
    for r in records:
        root = uf.find(r.id)
        if root in emitted:
            continue
        emitted.add(root)
        out.append(merged.get(root, by_id[root]))
    return out, MergeLog(clusters=clusters, links=links)


REMOVAL_REASONS = ("water", "far_from_building", "zone_mismatch", "no_coordinates")


@dataclass
class FilterReport:
    kept: list = field(default_factory=list)
    removed: list = field(default_factory=list)   # (id, reason)
    flagged: dict = field(default_factory=dict)   # id -> list of data-gap flags

    def kept_set(self) -> set:
        return set(self.kept)

    def to_json(self) -> dict:
        return {
            "kept": list(self.kept),
            "removed": [{"id": i, "reason": r} for i, r in self.removed],
            "flagged": {k: list(v) for k, v in self.flagged.items()},
        }


def geographic_filter(records: Sequence, landcover: RasterGrid,
                      buildings: FootprintIndex, water_class: float = 80,
                      max_dist_m: float = 150.0) -> FilterReport:
    """Remove records in water cells or farther than max_dist_m from any footprint.

    A missing land-cover sample never removes a record; it is flagged in the
    report and the building-distance rule still applies.
    """
    report = FilterReport()
    for r in records:
        if r.point is None:
            report.removed.append((r.id, "no_coordinates"))
            continue
        lc = raster_sample(landcover, r.point)
        if lc is None:
            report.flagged.setdefault(r.id, []).append("no_landcover")
        elif lc == water_class:
            report.removed.append((r.id, "water"))
            continue
        if buildings.min_distance_within(r.point, max_dist_m) is None:
            report.removed.append((r.id, "far_from_building"))
            continue
        report.kept.append(r.id)
    return report


def stratum_key(value) -> str:
    """Stable string key for a raster class value; None maps to 'unclassified'."""
    if value is None:
        return UNCLASSIFIED
    f = float(value)
    return str(int(f)) if f.is_integer() else str(f)


def largest_remainder_quotas(counts: dict, total: int) -> dict:
    """Proportional seat allocation by the largest-remainder method.

    Remainder ties break by ascending stratum key; quotas never exceed counts.
    """
    n = sum(counts.values())
    if n == 0 or total <= 0:
        return {k: 0 for k in counts}
    if total >= n:
        return dict(counts)
    quotas = {}
    fractions = []
    assigned = 0
    for key in sorted(counts):
        exact = total * counts[key] / n
        base = math.floor(exact)
        quotas[key] = base
        assigned += base
        fractions.append((-(exact - base), key))
    fractions.sort()
    for _, key in fractions[: total - assigned]:
        quotas[key] += 1
    return quotas


def stratified_thin(records: Sequence, degurba: RasterGrid,
                    target_total: int = 10_000, min_spacing_m: float = 10_000.0,
                    seed: int = 0) -> list:
    """Pick up to target_total records, stratified by DEGURBA class, keeping every
    selected pair at least min_spacing_m apart (across strata).

    Per-stratum quotas use the largest-remainder method; records are visited in
    a seed-determined random order and unfilled quotas are redistributed once to
    strata that still have unvisited records. Deterministic for a fixed seed.
    """
    if not records:
        return []
    for r in records:
        if r.point is None:
            raise ValueError(f"record {r.id} has no point")

    strata: dict[str, list] = {}
    for r in sorted(records, key=lambda r: r.id):
        strata.setdefault(stratum_key(raster_sample(degurba, r.point)), []).append(r)

    rng = random.Random(seed)
    order = {}
    for key in sorted(strata):
        order[key] = rng.sample(strata[key], len(strata[key]))

    target = min(target_total, len(records))
    quotas = largest_remainder_quotas({k: len(v) for k, v in strata.items()}, target)

    accepted: list = []
    accepted_pts: dict = {}
    bucket = max(0.1, min_spacing_m / METERS_PER_DEG)
    spacing_index = SpatialIndex(bucket_deg=bucket)
    cursor = {k: 0 for k in order}

    def spacing_ok(p: GeoPoint) -> bool:
        for hit in spacing_index.query_radius(p, min_spacing_m):
            if haversine_distance(p, accepted_pts[hit]) < min_spacing_m:
                return False
        return True

    def fill(key: str, quota: int) -> None:
        lst = order[key]
        taken = 0
        while cursor[key] < len(lst) and taken < quota:
            rec = lst[cursor[key]]
            cursor[key] += 1
            if spacing_ok(rec.point):
                accepted.append(rec)
                accepted_pts[rec.id] = rec.point
                spacing_index.insert(rec.id, rec.point)
                taken += 1

    for key in sorted(order):
        fill(key, quotas[key])

    leftover = target - len(accepted)
    if leftover > 0:
        remaining = {k: len(order[k]) - cursor[k] for k in order if len(order[k]) > cursor[k]}
        if remaining:
            second = largest_remainder_quotas(remaining, min(leftover, sum(remaining.values())))
            for key in sorted(second):
                fill(key, second[key])

    chosen = {r.id for r in accepted}
    return [r for r in records if r.id in chosen]
