"""Review-service backend: cached tile proxy, on-the-fly tile prediction,
saliency overlays, ground-truth/candidate serving, and feedback persistence."""

from __future__ import annotations

import io
import json
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import httpx
import numpy as np
from fastapi import Body, FastAPI, HTTPException, Query, Response
from PIL import Image

from .cache import LruTtlCache
from .geo import BBox, FootprintIndex, GeoPoint
from .scorer import (
    BuiltFractionScorer,
    Candidate,
    ConstantScorer,
    FixtureScorer,
    RemoteScorer,
    ScorerError,
    decode_tile_png,
    review_order_key,
    tta_score,
)
from .tiles import TileIndex, tile_bounds

VERDICTS = ("confirmed", "rejected", "unsure")


@dataclass
class ServiceConfig:
    upstream_template: str = ""
    scorer: dict = field(default_factory=dict)
    groundtruth_path: Optional[str] = None
    candidates_path: Optional[str] = None
    feedback_log_path: str = "feedback.jsonl"
    buildings_path: Optional[str] = None
    tile_cache_capacity: int = 512
    tile_ttl_fallback_s: float = 86_400.0
    pred_cache_capacity: int = 2048
    pred_ttl_s: Optional[float] = 86_400.0
    host: str = "127.0.0.1"
    port: int = 8000


@dataclass
class FetchResult:
    status: int
    body: bytes = b""
    max_age: Optional[float] = None


_MAX_AGE_RE = re.compile(r"max-age\s*=\s*(\d+)", re.IGNORECASE)


class TileFetcher:
    """Fetches tiles from an XYZ/WMS URL template or a file:// template."""

    def __init__(self, template: str, client: Optional[httpx.Client] = None,
                 timeout_s: float = 20.0):
        if not template:
            raise ValueError("upstream tile template is not configured")
        self.template = template
        self._client = client
        self._timeout_s = timeout_s

    def _url(self, t: TileIndex) -> str:
        url = self.template
        if "{bbox}" in url:
            b = tile_bounds(t)
            url = url.replace("{bbox}", f"{b.min_lon},{b.min_lat},{b.max_lon},{b.max_lat}")
        return (url.replace("{z}", str(t.z))
                   .replace("{x}", str(t.x))
                   .replace("{y}", str(t.y)))

    def fetch(self, t: TileIndex) -> FetchResult:
        url = self._url(t)
        if url.startswith("file://"):
            path = Path(url[len("file://"):])
            if not path.is_file():
                return FetchResult(status=404)
            return FetchResult(status=200, body=path.read_bytes())
        client = self._client or httpx.Client(timeout=self._timeout_s)
        try:
            resp = client.get(url)
        except httpx.HTTPError as exc:
            raise ConnectionError(f"upstream unreachable: {exc}") from exc
        finally:
            if self._client is None:
                client.close()
        max_age = None
        m = _MAX_AGE_RE.search(resp.headers.get("cache-control", ""))
        if m:
            max_age = float(m.group(1))
        return FetchResult(status=resp.status_code, body=resp.content, max_age=max_age)


@dataclass
class FeedbackRecord:
    candidate_id: str
    verdict: str
    operator: str
    timestamp: str                 # UTC ISO-8601
    probability_at_review: float

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"invalid verdict {self.verdict!r}")
        if not (0.0 <= self.probability_at_review <= 1.0):
            raise ValueError("probability_at_review out of range")

    def to_json(self) -> dict:
        return {"candidate_id": self.candidate_id, "verdict": self.verdict,
                "operator": self.operator, "timestamp": self.timestamp,
                "probability_at_review": self.probability_at_review}


class FeedbackLog:
    """Append-only JSONL log; startup replay is the only state reconstruction."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def replay(self) -> list:
        if not self.path.is_file():
            return []
        records = []
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            records.append(FeedbackRecord(
                candidate_id=doc["candidate_id"], verdict=doc["verdict"],
                operator=doc["operator"], timestamp=doc["timestamp"],
                probability_at_review=doc["probability_at_review"]))
        return records

    def append(self, record: FeedbackRecord) -> None:
        line = json.dumps(record.to_json(), sort_keys=True)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


class CandidateStore:
    """Candidate state folded from the feedback log; latest verdict wins
    (by timestamp, ties by log order)."""

    def __init__(self, candidates, log: FeedbackLog):
        self._lock = threading.Lock()
        self.by_id = {c.id: c for c in candidates}
        self.log = log
        self.history: dict[str, list] = {c.id: [] for c in candidates}
        self._latest: dict[str, tuple] = {}
        self._seq = 0
        for rec in log.replay():
            self._apply(rec, self._seq)
            self._seq += 1

    def _apply(self, rec: FeedbackRecord, seq: int) -> None:
        cand = self.by_id.get(rec.candidate_id)
        if cand is None:
            return
        self.history[rec.candidate_id].append(rec)
        marker = (rec.timestamp, seq)
        prev = self._latest.get(rec.candidate_id)
        if prev is None or marker >= prev:
            self._latest[rec.candidate_id] = marker
            cand.status = rec.verdict

    def all(self) -> list:
        with self._lock:
            return list(self.by_id.values())

    def get(self, cid: str):
        with self._lock:
            return self.by_id.get(cid)

    def record_feedback(self, cid: str, verdict: str, operator: str,
                        timestamp: str) -> str:
        with self._lock:
            cand = self.by_id.get(cid)
            if cand is None:
                raise KeyError(cid)
            rec = FeedbackRecord(candidate_id=cid, verdict=verdict, operator=operator,
                                 timestamp=timestamp,
                                 probability_at_review=cand.probability)
            self.log.append(rec)
            self._apply(rec, self._seq)
            self._seq += 1
            return cand.status


def load_candidates(path) -> list:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [Candidate.from_json(d) for d in doc]


def save_candidates(candidates, path) -> None:
    doc = [c.to_json() for c in candidates]
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n",
                          encoding="utf-8")


def load_groundtruth(path) -> list:
    """(GeoPoint, properties) pairs from a GeoJSON point collection."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    out = []
    for feat in doc.get("features", []):
        geom = feat.get("geometry")
        if not geom or geom.get("type") != "Point":
            continue
        lon, lat = geom["coordinates"][0], geom["coordinates"][1]
        out.append((GeoPoint(lat, lon), dict(feat.get("properties") or {})))
    return out


def build_scorer(spec: dict, buildings_path: Optional[str] = None):
    kind = spec.get("kind")
    if kind == "constant":
        return ConstantScorer(float(spec["probability"]))
    if kind == "fixture":
        return FixtureScorer.from_file(spec["path"], default=spec.get("default"))
    if kind == "built_fraction":
        from .ingest import read_buildings
        path = spec.get("buildings_path") or buildings_path
        if not path:
            raise ValueError("built_fraction scorer needs a buildings_path")
        buildings, _ = read_buildings(path)
        index = FootprintIndex.build((b.id, b.ring) for b in buildings)
        return BuiltFractionScorer(index, subgrid=int(spec.get("subgrid", 16)))
    if kind == "remote":
        return RemoteScorer(spec["endpoint"], timeout_s=float(spec.get("timeout_s", 10)),
                            retries=int(spec.get("retries", 2)))
    raise ValueError(f"unknown scorer kind {kind!r}")


# 256-entry warm (black-red-yellow-white) colormap.
def _warm_colormap() -> np.ndarray:
    t = np.linspace(0.0, 1.0, 256)
    r = np.clip(3 * t, 0, 1)
    g = np.clip(3 * t - 1, 0, 1)
    b = np.clip(3 * t - 2, 0, 1)
    return np.round(np.stack([r, g, b], axis=1) * 255).astype(np.uint8)


WARM_COLORMAP = _warm_colormap()
SALIENCY_ALPHA_MAX = 180


def render_saliency_png(grid: np.ndarray, size: int = 256) -> bytes:
    """Nearest-resample to size x size and colorize: warm map, alpha 180 * v."""
    grid = np.asarray(grid, dtype=np.float64)
    gh, gw = grid.shape
    rows = (np.arange(size) * gh) // size
    cols = (np.arange(size) * gw) // size
    resampled = grid[rows][:, cols]
    idx = np.round(resampled * 255).astype(np.int64).clip(0, 255)
    alpha = np.round(SALIENCY_ALPHA_MAX * resampled).astype(np.uint8)
    rgba = np.dstack([WARM_COLORMAP[idx], alpha])
    buf = io.BytesIO()
    Image.fromarray(rgba, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def parse_bbox(raw: str) -> BBox:
    parts = raw.split(",")
    if len(parts) != 4:
        raise ValueError("bbox must be min_lon,min_lat,max_lon,max_lat")
    min_lon, min_lat, max_lon, max_lat = (float(p) for p in parts)
    return BBox(min_lat, min_lon, max_lat, max_lon)


class ReviewService:
    """All mutable service state; the FastAPI app is a thin routing layer."""

    def __init__(self, config: ServiceConfig, scorer=None,
                 fetcher: Optional[TileFetcher] = None, clock=time.time):
        self.config = config
        self.clock = clock
        self.fetcher = fetcher or (TileFetcher(config.upstream_template)
                                   if config.upstream_template else None)
        self.scorer = scorer if scorer is not None else (
            build_scorer(config.scorer, config.buildings_path) if config.scorer else None)
        self.tile_cache = LruTtlCache(config.tile_cache_capacity,
                                      ttl_s=config.tile_ttl_fallback_s)
        self.pred_cache = LruTtlCache(config.pred_cache_capacity,
                                      ttl_s=config.pred_ttl_s)
        self.feedback_log = FeedbackLog(config.feedback_log_path)
        candidates = (load_candidates(config.candidates_path)
                      if config.candidates_path else [])
        self.candidates = CandidateStore(candidates, self.feedback_log)
        self.groundtruth = (load_groundtruth(config.groundtruth_path)
                            if config.groundtruth_path else [])
        self.counters = {"tile_fetches": 0, "predictions_computed": 0}
        self._counter_lock = threading.Lock()
        self._inflight: dict = {}
        self._inflight_lock = threading.Lock()

    def _count(self, key: str) -> None:
        with self._counter_lock:
            self.counters[key] += 1

    def tile_png(self, t: TileIndex) -> bytes:
        if self.fetcher is None:
            raise HTTPException(status_code=502, detail="no upstream tile source configured")
        cached = self.tile_cache.get(t.key())
        if cached is not None:
            return cached
        try:
            result = self.fetcher.fetch(t)
        except ConnectionError as exc:
            raise HTTPException(status_code=502, detail=str(exc)) from exc
        if result.status != 200:
            raise HTTPException(status_code=502,
                                detail=f"upstream status {result.status}")
        self._count("tile_fetches")
        self.tile_cache.put(t.key(), result.body, ttl_s=result.max_age)
        return result.body

    def predict(self, t: TileIndex):
        """(ScoreResult, cached) for a tile; caching keyed by (z,x,y,model_version)."""
        if self.scorer is None:
            raise HTTPException(status_code=503, detail="no scorer configured")
        key = (t.z, t.x, t.y, self.scorer.model_version)
        hit = self.pred_cache.get(key)
        if hit is not None:
            return hit, True
        with self._inflight_lock:
            lock = self._inflight.setdefault(key, threading.Lock())
        try:
            with lock:
                hit = self.pred_cache.get(key)
                if hit is not None:
                    return hit, True
                png = self.tile_png(t)
                img = decode_tile_png(png, tile_bounds(t), t)
                try:
                    result = tta_score(self.scorer, img)
                except ScorerError as exc:
                    raise HTTPException(status_code=503,
                                        detail=f"scorer failure: {exc}") from exc
                self._count("predictions_computed")
                self.pred_cache.put(key, result)
        finally:
            with self._inflight_lock:
                self._inflight.pop(key, None)
        return result, False

    def now_iso(self) -> str:
        return datetime.fromtimestamp(self.clock(), tz=timezone.utc).isoformat()


def export_collection(store: CandidateStore, status: str = "confirmed") -> dict:
    """Candidates with the given status as school points with review provenance."""
    features = []
    for c in sorted(store.all(), key=lambda c: c.id):
        if c.status != status:
            continue
        history = store.history.get(c.id, [])
        props = {
            "id": c.id, "probability": c.probability, "status": c.status,
            "operator_count": len({r.operator for r in history}),
            "first_feedback_at": history[0].timestamp if history else None,
            "last_feedback_at": history[-1].timestamp if history else None,
        }
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [c.point.lon, c.point.lat]},
            "properties": props,
        })
    return {"type": "FeatureCollection", "features": features}


def _candidate_feature(c: Candidate) -> dict:
    return {
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [c.point.lon, c.point.lat]},
        "properties": {
            "id": c.id, "probability": c.probability, "uncertainty": c.uncertainty,
            "status": c.status, "tile": c.tile.key(),
            "snapped_building_id": c.snapped_building_id,
        },
    }


def _validated_tile(z: int, x: int, y: int) -> TileIndex:
    try:
        return TileIndex(z, x, y)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


def create_app(service: ReviewService) -> FastAPI:
    app = FastAPI(title="school-atlas review service")
    app.state.service = service

    @app.get("/tiles/{z}/{x}/{y}.png")
    def get_tile(z: int, x: int, y: int):
        png = service.tile_png(_validated_tile(z, x, y))
        return Response(content=png, media_type="image/png")

    @app.get("/predict/{z}/{x}/{y}")
    def get_prediction(z: int, x: int, y: int):
        result, cached = service.predict(_validated_tile(z, x, y))
        return {"probability": result.probability,
                "model_version": result.model_version, "cached": cached}

    @app.get("/saliency/{z}/{x}/{y}.png")
    def get_saliency(z: int, x: int, y: int):
        result, _ = service.predict(_validated_tile(z, x, y))
        if result.saliency is None:
            raise HTTPException(status_code=404, detail="scorer provides no saliency")
        return Response(content=render_saliency_png(result.saliency),
                        media_type="image/png")

    @app.get("/groundtruth")
    def get_groundtruth(bbox: str = Query(...)):
        try:
            box = parse_bbox(bbox)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        features = [{
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [p.lon, p.lat]},
            "properties": props,
        } for p, props in service.groundtruth if box.contains(p)]
        return {"type": "FeatureCollection", "features": features}

    @app.get("/candidates")
    def get_candidates(bbox: Optional[str] = None, status: Optional[str] = None):
        if status is not None and status not in ("pending", "confirmed", "rejected", "unsure"):
            raise HTTPException(status_code=400, detail=f"unknown status {status!r}")
        box = None
        if bbox is not None:
            try:
                box = parse_bbox(bbox)
            except ValueError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from exc
        selected = [c for c in service.candidates.all()
                    if (status is None or c.status == status)
                    and (box is None or box.contains(c.point))]
        selected.sort(key=review_order_key)
        return {"type": "FeatureCollection",
                "features": [_candidate_feature(c) for c in selected]}

    @app.post("/feedback")
    def post_feedback(payload: dict = Body(...)):
        cid = payload.get("candidate_id")
        verdict = payload.get("verdict")
        operator = payload.get("operator", "")
        if verdict not in VERDICTS:
            raise HTTPException(status_code=400, detail=f"invalid verdict {verdict!r}")
        if not cid or not isinstance(cid, str):
            raise HTTPException(status_code=400, detail="candidate_id required")
        try:
            new_status = service.candidates.record_feedback(
                cid, verdict, operator, service.now_iso())
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown candidate {cid!r}")
        return {"status": new_status}

    @app.get("/export")
    def export(status: str = "confirmed"):
        if status not in ("pending", "confirmed", "rejected", "unsure"):
            raise HTTPException(status_code=400, detail=f"unknown status {status!r}")
        return export_collection(service.candidates, status)

    @app.get("/stats")
    def stats():
        return {"counters": dict(service.counters),
                "tile_cache": {"size": len(service.tile_cache),
                               "hits": service.tile_cache.hits,
                               "misses": service.tile_cache.misses},
                "pred_cache": {"size": len(service.pred_cache),
                               "hits": service.pred_cache.hits,
                               "misses": service.pred_cache.misses}}

    return app
