"""Pluggable tile scorers: the score contract, dihedral test-time augmentation,
a remote HTTP scorer, built-in stand-ins, candidate generation, and the
uncertainty-ordered review queue."""

from __future__ import annotations

import hashlib
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import httpx
import numpy as np
from PIL import Image

from .geo import BBox, FootprintIndex, GeoPoint, haversine_distance, point_in_polygon
from .tiles import TileIndex, tile_bounds, tiles_in_bbox

TILE_SIZE = 256


class ScorerError(RuntimeError):
    """A scorer failed to produce a result; never silently defaulted."""


@dataclass
class TileImage:
    """Square RGB tile (8-bit, row-major bytes) with its geographic placement."""

    width: int
    height: int
    pixels: bytes
    bounds: BBox
    tile: TileIndex

    def __post_init__(self):
        if self.width != self.height:
            raise ValueError("tile images must be square")
        if len(self.pixels) != self.width * self.height * 3:
            raise ValueError("pixel buffer length must be width*height*3")

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(
            self.height, self.width, 3)

    @classmethod
    def from_array(cls, arr: np.ndarray, bounds: BBox, tile: TileIndex) -> "TileImage":
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        return cls(width=arr.shape[1], height=arr.shape[0], pixels=arr.tobytes(),
                   bounds=bounds, tile=tile)


@dataclass
class ScoreResult:
    probability: float
    model_version: str
    saliency: Optional[np.ndarray] = None

    def __post_init__(self):
        p = float(self.probability)
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"probability out of range: {p}")
        self.probability = p
        if self.saliency is not None:
            grid = np.asarray(self.saliency, dtype=np.float64)
            if grid.ndim != 2:
                raise ValueError("saliency must be a 2-D grid")
            if grid.size and (grid.min() < 0.0 or grid.max() > 1.0):
                raise ValueError("saliency values must lie in [0, 1]")
            self.saliency = grid


def encode_tile_png(img: TileImage) -> bytes:
    pil = Image.frombytes("RGB", (img.width, img.height), img.pixels)
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def decode_tile_png(data: bytes, bounds: BBox, tile: TileIndex) -> TileImage:
    pil = Image.open(io.BytesIO(data)).convert("RGB")
    return TileImage(width=pil.width, height=pil.height, pixels=pil.tobytes(),
                     bounds=bounds, tile=tile)


# The eight dihedral-group elements as (quarter-turns, horizontal-flip-first).
DIHEDRAL_ELEMENTS = tuple((k, f) for f in (0, 1) for k in (0, 1, 2, 3))


def dihedral_transform(arr: np.ndarray, k: int, f: int) -> np.ndarray:
    a = np.fliplr(arr) if f else arr
    return np.rot90(a, k)


def dihedral_inverse(arr: np.ndarray, k: int, f: int) -> np.ndarray:
    a = np.rot90(arr, -k)
    return np.fliplr(a) if f else a


def _transform_image(img: TileImage, k: int, f: int) -> TileImage:
    if k == 0 and f == 0:
        return img
    return TileImage.from_array(dihedral_transform(img.to_array(), k, f),
                                bounds=img.bounds, tile=img.tile)


def tta_score(scorer, img: TileImage) -> ScoreResult:
    """Average the scorer over the 8 dihedral transforms of the tile.

    The probability is the arithmetic mean of the 8 scores; saliency, when every
    transform supplies one, is the mean of the inverse-transformed grids.
    Scorer errors propagate; there is no partial averaging.
    """
    results = []
    for k, f in DIHEDRAL_ELEMENTS:
        results.append((scorer.score(_transform_image(img, k, f)), k, f))
    probability = sum(r.probability for r, _, _ in results) / len(results)
    saliency = None
    if all(r.saliency is not None for r, _, _ in results):
        grids = [dihedral_inverse(r.saliency, k, f) for r, k, f in results]
        saliency = np.mean(np.stack(grids), axis=0)
    version = results[0][0].model_version + "+tta8"
    return ScoreResult(probability=probability, model_version=version, saliency=saliency)


class RemoteScorerTransportError(ScorerError):
    pass


class RemoteScorerProtocolError(ScorerError):
    pass


def remote_score(endpoint: str, img: TileImage, timeout_s: float = 10.0,
                 retries: int = 2, client: Optional[httpx.Client] = None,
                 sleep: Callable[[float], None] = time.sleep) -> ScoreResult:
    """POST the tile as PNG to a scorer service and validate the JSON reply.

    Reply schema: {"probability": float, "model_version": str,
    "saliency": optional row-major floats, "saliency_size": [rows, cols]}.
    """
    own = client is None
    http = client or httpx.Client(timeout=timeout_s)
    payload = encode_tile_png(img)
    try:
        last = "unknown"
        for attempt in range(retries + 1):
            if attempt:
                sleep(0.25 * (2 ** (attempt - 1)))
            try:
                resp = http.post(endpoint, content=payload,
                                 headers={"content-type": "image/png"})
            except httpx.HTTPError as exc:
                last = f"transport failure: {exc}"
                continue
            if resp.status_code >= 500:
                last = f"upstream HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise RemoteScorerProtocolError(f"scorer replied HTTP {resp.status_code}")
            try:
                doc = resp.json()
            except (json.JSONDecodeError, ValueError) as exc:
                raise RemoteScorerProtocolError(f"malformed scorer JSON: {exc}") from exc
            return _parse_remote_result(doc)
        raise RemoteScorerTransportError(
            f"scorer unreachable after {retries + 1} attempts: {last}")
    finally:
        if own:
            http.close()


def _parse_remote_result(doc) -> ScoreResult:
    if not isinstance(doc, dict) or "probability" not in doc:
        raise RemoteScorerProtocolError("scorer reply missing probability")
    version = doc.get("model_version")
    if not isinstance(version, str) or not version:
        raise RemoteScorerProtocolError("scorer reply missing model_version")
    saliency = None
    if doc.get("saliency") is not None:
        size = doc.get("saliency_size")
        if (not isinstance(size, (list, tuple)) or len(size) != 2
                or not all(isinstance(v, int) and v > 0 for v in size)):
            raise RemoteScorerProtocolError("saliency without a valid saliency_size")
        flat = doc["saliency"]
        if len(flat) != size[0] * size[1]:
            raise RemoteScorerProtocolError("saliency length does not match saliency_size")
        saliency = np.array(flat, dtype=np.float64).reshape(size[0], size[1])
    try:
        return ScoreResult(probability=doc["probability"], model_version=version,
                           saliency=saliency)
    except (TypeError, ValueError) as exc:
        raise RemoteScorerProtocolError(str(exc)) from exc


class RemoteScorer:
    """Scorer-contract adapter around remote_score."""

    def __init__(self, endpoint: str, timeout_s: float = 10.0, retries: int = 2,
                 client: Optional[httpx.Client] = None):
        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self.retries = retries
        self.client = client

    def score(self, img: TileImage) -> ScoreResult:
        return remote_score(self.endpoint, img, timeout_s=self.timeout_s,
                            retries=self.retries, client=self.client)


class ConstantScorer:
    def __init__(self, probability: float):
        self.probability = float(probability)
        self.model_version = f"constant-{self.probability}"

    def score(self, img: TileImage) -> ScoreResult:
        return ScoreResult(probability=self.probability, model_version=self.model_version)


class FixtureScorer:
    """Probabilities (and optional saliency) looked up by tile key 'z/x/y'."""

    def __init__(self, lookup: dict, default: Optional[float] = None):
        self.lookup = lookup
        self.default = default
        blob = json.dumps(lookup, sort_keys=True) + repr(default)
        self.model_version = "fixture-" + hashlib.sha256(blob.encode()).hexdigest()[:10]

    @classmethod
    def from_file(cls, path, default: Optional[float] = None):
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh), default=default)

    def score(self, img: TileImage) -> ScoreResult:
        entry = self.lookup.get(img.tile.key())
        if entry is None:
            if self.default is None:
                raise ScorerError(f"no fixture entry for tile {img.tile.key()}")
            entry = self.default
        if isinstance(entry, dict):
            saliency = entry.get("saliency")
            return ScoreResult(probability=entry["probability"],
                               model_version=self.model_version,
                               saliency=np.array(saliency) if saliency is not None else None)
        return ScoreResult(probability=float(entry), model_version=self.model_version)


class BuiltFractionScorer:
    """Probability = fraction of a subcell grid whose centers fall inside any
    footprint; the in/out grid doubles as the saliency."""

    def __init__(self, buildings: FootprintIndex, subgrid: int = 16):
        self.buildings = buildings
        self.subgrid = subgrid
        self.model_version = f"builtfrac{subgrid}-n{len(buildings)}"

    def score(self, img: TileImage) -> ScoreResult:
        b = img.bounds
        n = self.subgrid
        dlat = (b.max_lat - b.min_lat) / n
        dlon = (b.max_lon - b.min_lon) / n
        grid = np.zeros((n, n), dtype=np.float64)
        center = GeoPoint((b.min_lat + b.max_lat) / 2, (b.min_lon + b.max_lon) / 2)
        half_diag = haversine_distance(center, GeoPoint(b.max_lat, b.max_lon))
        # Ring bboxes prefilter the point-in-polygon tests.
        candidates = [(self.buildings.rings[fid].bbox(), self.buildings.rings[fid])
                      for fid in self.buildings.centroid_candidates_near(center, half_diag)]
        if candidates:
            for r in range(n):
                lat = b.max_lat - (r + 0.5) * dlat
                for c in range(n):
                    p = GeoPoint(lat, b.min_lon + (c + 0.5) * dlon)
                    if any(box.contains(p) and point_in_polygon(p, ring)
                           for box, ring in candidates):
                        grid[r, c] = 1.0
        return ScoreResult(probability=float(grid.mean()),
                           model_version=self.model_version, saliency=grid)


VALID_STATUSES = ("pending", "confirmed", "rejected", "unsure")


@dataclass
class Candidate:
    id: str
    point: GeoPoint
    tile: TileIndex
    probability: float
    status: str = "pending"
    snapped_building_id: Optional[str] = None

    def __post_init__(self):
        if not (0.0 <= self.probability <= 1.0):
            raise ValueError("candidate probability out of range")
        if self.status not in VALID_STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    @property
    def uncertainty(self) -> float:
        return abs(self.probability - 0.5)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "lat": self.point.lat,
            "lon": self.point.lon,
            "tile": {"z": self.tile.z, "x": self.tile.x, "y": self.tile.y},
            "probability": self.probability,
            "uncertainty": self.uncertainty,
            "status": self.status,
            "snapped_building_id": self.snapped_building_id,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Candidate":
        return cls(id=doc["id"], point=GeoPoint(doc["lat"], doc["lon"]),
                   tile=TileIndex(doc["tile"]["z"], doc["tile"]["x"], doc["tile"]["y"]),
                   probability=doc["probability"], status=doc.get("status", "pending"),
                   snapped_building_id=doc.get("snapped_building_id"))


def generate_candidates(gap_cells: Sequence, scorer, tile_source, cell_m: float,
                        z: int = 17, p_min: float = 0.7,
                        buildings: Optional[FootprintIndex] = None,
                        dedupe_m: float = 100.0,
                        max_tiles: Optional[int] = None,
                        gap_min: float = 0.0):
    """Score tiles under the priority cells and emit deduplicated candidates.

    Cells are visited by descending gap score (cells at or below gap_min are
    skipped as saturated); each qualifying tile becomes a candidate at the
    centroid of the footprint nearest the tile center (when one lies within the
    tile) or at the tile center. Candidates within dedupe_m of a
    higher-probability candidate are suppressed; suppression runs on the
    (probability desc, id asc) order, so the output does not depend on tile
    enumeration order. Returns (candidates, report).
    """
    half = cell_m / 2.0 / (40_030_228.88 / 360.0)
    ranked = sorted((c for c in gap_cells
                     if c.gap_score is not None and c.gap_score > gap_min),
                    key=lambda c: (-c.gap_score, c.center.lat, c.center.lon))
    seen_tiles = set()
    queue = []
    for cell in ranked:
        box = BBox(cell.center.lat - half, cell.center.lon - half,
                   cell.center.lat + half, cell.center.lon + half)
        for tile in tiles_in_bbox(box, z):
            if tile in seen_tiles:
                continue
            seen_tiles.add(tile)
            queue.append(tile)
            if max_tiles is not None and len(queue) >= max_tiles:
                break
        if max_tiles is not None and len(queue) >= max_tiles:
            break

    tentative = []
    failed = []
    for tile in queue:
        try:
            img = tile_source(tile)
        except Exception as exc:
            failed.append({"tile": tile.key(), "error": str(exc)})
            continue
        result = tta_score(scorer, img)
        if result.probability < p_min:
            continue
        bounds = tile_bounds(tile)
        center = GeoPoint((bounds.min_lat + bounds.max_lat) / 2,
                          (bounds.min_lon + bounds.max_lon) / 2)
        point, snapped = center, None
        if buildings is not None:
            inside = buildings.centroids_in_bbox(bounds)
            if inside:
                snapped, point = min(
                    inside, key=lambda e: (haversine_distance(center, e[1]), str(e[0])))
        tentative.append(Candidate(
            id=f"cand-{tile.z}-{tile.x}-{tile.y}", point=point, tile=tile,
            probability=result.probability, snapped_building_id=snapped))

    tentative.sort(key=lambda c: (-c.probability, c.id))
    emitted: list = []
    suppressed = 0
    for cand in tentative:
        if any(haversine_distance(cand.point, kept.point) <= dedupe_m for kept in emitted):
            suppressed += 1
            continue
        emitted.append(cand)
    report = {"tiles_considered": len(queue), "tiles_failed": failed,
              "qualifying": len(tentative), "suppressed": suppressed,
              "emitted": len(emitted)}
    return emitted, report


def rank_review_queue(candidates: Sequence) -> list:
    """Pending candidates ordered most-ambiguous first: ascending |p - 0.5|,
    ties by id."""
    return sorted((c for c in candidates if c.status == "pending"),
                  key=review_order_key)


def review_order_key(candidate) -> tuple:
    return (candidate.uncertainty, candidate.id)
