"""Funnel stages wired to file artifacts: each stage reads the previous stage's
outputs from the output directory, writes its own, and always leaves a report."""

from __future__ import annotations

import dataclasses
import json
import time
from pathlib import Path

from . import cleanse, negatives as neg
from .config import RASTER_KINDS, PipelineConfig
from .features import LabeledDataset, build_dataset
from .forest import (
    DEFAULT_SEARCH_SPACE,
    Hyperparams,
    evaluate,
    feature_importance,
    gap_map,
    gap_map_from_geojson,
    gap_map_to_geojson,
    gap_map_to_grid,
    load_model,
    random_search,
    save_model,
    train_forest,
    train_test_split,
)
from .geo import FootprintIndex, SpatialIndex
from .ingest import (
    FixtureGeocoder,
    buildings_to_geojson,
    geocode,
    merge_building_layers,
    pois_to_geojson,
    read_admin_zones,
    read_buildings,
    read_pois,
    read_schools,
    schools_to_geojson,
    write_geojson,
)
from .raster import read_ascii_grid, write_ascii_grid
from .scorer import generate_candidates
from .service import (
    CandidateStore,
    FeedbackLog,
    ReviewService,
    ServiceConfig,
    TileFetcher,
    build_scorer,
    export_collection,
    load_candidates,
    save_candidates,
)
from .tiles import tile_bounds

STAGES = ("ingest", "clean", "negatives", "features", "train", "gapmap",
          "candidates", "serve", "export")

ARTIFACTS = {
    "schools_ingested": "schools_ingested.geojson",
    "pois": "pois.geojson",
    "buildings": "buildings_merged.geojson",
    "ingest_rejects": "ingest_rejects.json",
    "schools_clean": "schools_clean.geojson",
    "schools_sampled": "schools_sampled.geojson",
    "merge_log": "merge_log.json",
    "filter_report": "filter_report.json",
    "negatives": "negatives.geojson",
    "negatives_report": "negatives_report.json",
    "dataset": "dataset.csv",
    "model": "model.json",
    "metrics": "metrics.json",
    "search_trials": "search_trials.json",
    "gap_geojson": "gapmap.geojson",
    "gap_asc": "gapmap.asc",
    "candidates": "candidates.json",
    "candidates_report": "candidates_report.json",
    "export": "confirmed_schools.geojson",
}


class PipelineError(RuntimeError):
    pass


class MissingArtifactError(PipelineError):
    pass


def artifact(config: PipelineConfig, name: str) -> Path:
    return config.out() / ARTIFACTS[name]


def _require(config: PipelineConfig, names, produced_by: str) -> None:
    for name in names:
        if not artifact(config, name).is_file():
            raise MissingArtifactError(
                f"missing artifact {ARTIFACTS[name]}; run {produced_by} first")


def _write_json(doc, path) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n",
                          encoding="utf-8")


def load_stack(config: PipelineConfig) -> dict:
    return {key: read_ascii_grid(config.raster_path(key), kind=RASTER_KINDS[key])
            for key in ("climate", "landcover", "terrain", "population",
                        "degurba", "nightlights")}


def run_ingest(config: PipelineConfig) -> dict:
    out = config.out()
    out.mkdir(parents=True, exist_ok=True)
    schools, school_rejects = read_schools(
        config.path("schools"), csv_columns=config.paths.get("schools_csv_columns"))
    pois, poi_rejects = read_pois(config.path("pois"))
    osm, rej_osm = read_buildings(config.path("buildings_osm"))
    ms, rej_ms = read_buildings(config.path("buildings_microsoft"))
    gg, rej_gg = read_buildings(config.path("buildings_google"))
    zones, zone_rejects = read_admin_zones(config.path("admin_zones"))

    merged = merge_building_layers(
        osm, ms, gg,
        confidence_min=float(config.thresholds["building_confidence_min"]),
        exclusion_radius_m=float(config.thresholds["building_exclusion_radius_m"]))

    geocoded = dropped = deferred = 0
    geocode_log = []
    client = None
    if config.paths.get("geocoder_fixture"):
        client = FixtureGeocoder.from_file(config.path("geocoder_fixture"))
    kept_schools = []
    for rec in schools:
        if rec.point is not None or client is None:
            kept_schools.append(rec)
            continue
        outcome = geocode(rec, client, zones)
        geocode_log.append({"id": rec.id, "status": outcome.status,
                            "reason": outcome.reason})
        if outcome.status == "attached":
            kept_schools.append(dataclasses.replace(rec, point=outcome.point))
            geocoded += 1
        elif outcome.status == "deferred":
            kept_schools.append(rec)
            deferred += 1
        else:
            dropped += 1

    write_geojson(schools_to_geojson(kept_schools), artifact(config, "schools_ingested"))
    write_geojson(pois_to_geojson(pois), artifact(config, "pois"))
    write_geojson(buildings_to_geojson(merged), artifact(config, "buildings"))
    _write_json({
        "schools": [r.to_json() for r in school_rejects],
        "pois": [r.to_json() for r in poi_rejects],
        "buildings": [r.to_json() for r in rej_osm + rej_ms + rej_gg],
        "zones": [r.to_json() for r in zone_rejects],
        "geocode": geocode_log,
    }, artifact(config, "ingest_rejects"))
    return {"schools": len(kept_schools), "school_rejects": len(school_rejects),
            "pois": len(pois), "buildings_merged": len(merged),
            "geocoded": geocoded, "geocode_dropped": dropped,
            "geocode_deferred": deferred}


def _load_buildings_index(config: PipelineConfig) -> FootprintIndex:
    buildings, _ = read_buildings(artifact(config, "buildings"))
    return FootprintIndex.build((b.id, b.ring) for b in buildings)


def run_clean(config: PipelineConfig) -> dict:
    _require(config, ("schools_ingested", "buildings"), "ingest")
    records, _ = read_schools(artifact(config, "schools_ingested"))
    with_points = [r for r in records if r.point is not None]
    without_points = [r for r in records if r.point is None]

    t = config.thresholds
    deduped, merge_log = cleanse.dedup_schools(
        with_points, radius_m=float(t["dedup_radius_m"]),
        sim_min=float(t["dedup_sim_min"]))

    landcover = read_ascii_grid(config.raster_path("landcover"), kind="categorical")
    buildings = _load_buildings_index(config)
    report = cleanse.geographic_filter(
        deduped + without_points, landcover, buildings,
        water_class=t["water_class"], max_dist_m=float(t["max_building_dist_m"]))
    kept_ids = report.kept_set()
    clean_records = [r for r in deduped if r.id in kept_ids]

    degurba = read_ascii_grid(config.raster_path("degurba"), kind="categorical")
    sampled = cleanse.stratified_thin(
        clean_records, degurba, target_total=int(t["thin_target"]),
        min_spacing_m=float(t["thin_min_spacing_m"]), seed=config.seed("thin"))

    write_geojson(schools_to_geojson(clean_records), artifact(config, "schools_clean"))
    write_geojson(schools_to_geojson(sampled), artifact(config, "schools_sampled"))
    _write_json(merge_log.to_json(), artifact(config, "merge_log"))
    _write_json(report.to_json(), artifact(config, "filter_report"))
    return {"input": len(records), "after_dedup": len(deduped),
            "merged_clusters": len(merge_log.clusters),
            "removed": len(report.removed), "clean": len(clean_records),
            "sampled": len(sampled)}


def run_negatives(config: PipelineConfig) -> dict:
    _require(config, ("pois", "buildings"), "ingest")
    pois, _ = read_pois(artifact(config, "pois"))
    lexicon = neg.load_lexicon(config.path("lexicon"))
    named, name_rejects = neg.filter_poi_candidates(pois, lexicon)

    landcover = read_ascii_grid(config.raster_path("landcover"), kind="categorical")
    buildings = _load_buildings_index(config)
    t = config.thresholds
    contained, geo_rejects = neg.geographic_filter_neg(
        named, landcover, buildings, water_class=t["water_class"])

    degurba = read_ascii_grid(config.raster_path("degurba"), kind="categorical")
    poi_samples, poi_report = neg.sample_poi_negatives(
        contained, degurba, n=int(t["poi_negatives_n"]),
        seed=config.seed("poi_negatives"))

    builtup = read_ascii_grid(config.raster_path("builtup"), kind="continuous")
    remote_samples, remote_report = neg.sample_remote_negatives(
        builtup, landcover, config.aoi(), n=int(t["remote_negatives_n"]),
        min_dist_m=float(t["remote_min_dist_m"]), seed=config.seed("remote_negatives"),
        built_threshold=float(t["built_threshold"]), water_class=t["water_class"],
        pool_factor=int(t["remote_pool_factor"]),
        max_draws=int(t["remote_max_draws"]))

    samples = poi_samples + remote_samples
    write_geojson(neg.negatives_to_geojson(samples), artifact(config, "negatives"))
    _write_json({
        "name_rejects": [{"id": i, "reason": r} for i, r in name_rejects],
        "geo_rejects": [{"id": i, "reason": r} for i, r in geo_rejects],
        "poi_sampling": poi_report,
        "remote_sampling": remote_report,
    }, artifact(config, "negatives_report"))
    return {"pois_in": len(pois), "name_rejected": len(name_rejects),
            "geo_rejected": len(geo_rejects), "poi_negatives": len(poi_samples),
            "remote_negatives": len(remote_samples), "total": len(samples)}


def run_features(config: PipelineConfig) -> dict:
    _require(config, ("schools_sampled",), "clean")
    _require(config, ("negatives",), "negatives")
    positives, _ = read_schools(artifact(config, "schools_sampled"))
    negative_samples = neg.read_negatives_geojson(artifact(config, "negatives"))
    stack = load_stack(config)
    dataset = build_dataset(positives, negative_samples, stack)
    dataset.to_csv(artifact(config, "dataset"))
    return {"rows": len(dataset), "positives": int((dataset.labels == 1).sum()),
            "negatives": int((dataset.labels == 0).sum()),
            "drops": len(dataset.drops)}


def run_train(config: PipelineConfig) -> dict:
    _require(config, ("dataset",), "features")
    dataset = LabeledDataset.from_csv(artifact(config, "dataset"))
    t = config.thresholds
    n_iter = int(t["search_n_iter"])
    trials = []
    if n_iter > 0:
        space = t.get("search_space") or DEFAULT_SEARCH_SPACE
        params, trials = random_search(
            dataset, space, n_iter=n_iter, subset_frac=float(t["search_subset_frac"]),
            folds=int(t["search_folds"]), seed=config.seed("search"))
    else:
        params = Hyperparams(**t.get("params", {}))
    train, test = train_test_split(dataset, test_frac=float(t["eval_test_frac"]),
                                   seed=config.seed("train"))
    model = train_forest(train, params, seed=config.seed("train"))
    report = evaluate(model, test.rows, test.labels)
    save_model(model, artifact(config, "model"))
    _write_json({
        "metrics": report.to_json(),
        "params": params.to_json(),
        "importance": feature_importance(model),
        "train_rows": len(train), "test_rows": len(test),
        "model_version": model.model_version,
    }, artifact(config, "metrics"))
    _write_json(trials, artifact(config, "search_trials"))
    return {"train_rows": len(train), "test_rows": len(test),
            "f1_school": report.f1_1, "accuracy": report.accuracy}


def run_gapmap(config: PipelineConfig) -> dict:
    _require(config, ("model",), "train")
    _require(config, ("schools_clean",), "clean")
    model = load_model(artifact(config, "model"))
    known, _ = read_schools(artifact(config, "schools_clean"))
    index = SpatialIndex(bucket_deg=0.05)
    for rec in known:
        if rec.point is not None:
            index.insert(rec.id, rec.point)
    t = config.thresholds
    cells = gap_map(model, config.aoi(), cell_m=float(t["gap_cell_m"]),
                    stack=load_stack(config), known_index=index,
                    radius_m=float(t["gap_radius_m"]), k_sat=int(t["gap_k_sat"]))
    write_geojson(gap_map_to_geojson(cells, cell_m=float(t["gap_cell_m"])),
                  artifact(config, "gap_geojson"))
    write_ascii_grid(gap_map_to_grid(cells, config.aoi(), cell_m=float(t["gap_cell_m"])),
                     artifact(config, "gap_asc"))
    scored = [c for c in cells if c.gap_score is not None]
    return {"cells": len(cells), "scored": len(scored),
            "max_gap": max((c.gap_score for c in scored), default=None)}


def _service_config(config: PipelineConfig) -> ServiceConfig:
    raw = dict(config.service)
    scorer = raw.get("scorer") or {}
    out = config.out()

    def resolve(key, default_path):
        value = raw.get(key)
        if value is None:
            return str(default_path) if default_path is not None else None
        p = Path(value)
        return str(p if p.is_absolute() else config.base_dir / p)

    return ServiceConfig(
        upstream_template=raw.get("upstream_template", ""),
        scorer=scorer,
        groundtruth_path=resolve("groundtruth_path", artifact(config, "schools_clean")),
        candidates_path=resolve("candidates_path", artifact(config, "candidates")),
        feedback_log_path=resolve("feedback_log_path", out / "feedback.jsonl"),
        buildings_path=resolve("buildings_path", artifact(config, "buildings")),
        tile_cache_capacity=int(raw.get("tile_cache_capacity", 512)),
        tile_ttl_fallback_s=float(raw.get("tile_ttl_fallback_s", 86_400.0)),
        pred_cache_capacity=int(raw.get("pred_cache_capacity", 2048)),
        pred_ttl_s=raw.get("pred_ttl_s", 86_400.0),
        host=raw.get("host", "127.0.0.1"),
        port=int(raw.get("port", 8000)),
    )


def run_candidates(config: PipelineConfig) -> dict:
    _require(config, ("gap_geojson",), "gapmap")
    _require(config, ("buildings",), "ingest")
    cells = gap_map_from_geojson(
        json.loads(artifact(config, "gap_geojson").read_text(encoding="utf-8")))
    svc = _service_config(config)
    if not svc.upstream_template:
        raise PipelineError("service.upstream_template is required for the candidates stage")
    if not svc.scorer:
        raise PipelineError("service.scorer is required for the candidates stage")
    scorer = build_scorer(svc.scorer, buildings_path=svc.buildings_path)
    fetcher = TileFetcher(svc.upstream_template)
    buildings = _load_buildings_index(config)

    from .scorer import decode_tile_png

    def tile_source(tile):
        result = fetcher.fetch(tile)
        if result.status != 200:
            raise IOError(f"upstream status {result.status}")
        return decode_tile_png(result.body, tile_bounds(tile), tile)

    t = config.thresholds
    max_tiles = t.get("candidate_max_tiles")
    candidates, report = generate_candidates(
        cells, scorer, tile_source, cell_m=float(t["gap_cell_m"]),
        z=int(t["candidate_zoom"]), p_min=float(t["candidate_p_min"]),
        buildings=buildings, dedupe_m=float(t["candidate_dedupe_m"]),
        max_tiles=int(max_tiles) if max_tiles is not None else None,
        gap_min=float(t["candidate_gap_min"]))
    save_candidates(candidates, artifact(config, "candidates"))
    _write_json(report, artifact(config, "candidates_report"))
    return {"candidates": len(candidates),
            "tiles_considered": report["tiles_considered"],
            "tiles_failed": len(report["tiles_failed"])}


def run_export(config: PipelineConfig) -> dict:
    _require(config, ("candidates",), "candidates")
    svc = _service_config(config)
    store = CandidateStore(load_candidates(svc.candidates_path),
                           FeedbackLog(svc.feedback_log_path))
    doc = export_collection(store, "confirmed")
    write_geojson(doc, artifact(config, "export"))
    return {"confirmed": len(doc["features"]),
            "candidates": len(store.all())}


def run_serve(config: PipelineConfig) -> dict:
    import uvicorn

    from .service import create_app

    svc = _service_config(config)
    service = ReviewService(svc)
    app = create_app(service)
    uvicorn.run(app, host=svc.host, port=svc.port, log_level="info")
    return {"served": True}


_RUNNERS = {
    "ingest": run_ingest,
    "clean": run_clean,
    "negatives": run_negatives,
    "features": run_features,
    "train": run_train,
    "gapmap": run_gapmap,
    "candidates": run_candidates,
    "export": run_export,
    "serve": run_serve,
}

ALL_CHAIN = ("ingest", "clean", "negatives", "features", "train", "gapmap", "candidates")


def run_stage(name: str, config: PipelineConfig) -> dict:
    """Execute one stage; a machine-readable report is written win or lose."""
    if name not in _RUNNERS:
        raise PipelineError(f"unknown stage {name!r}")
    out = config.out()
    out.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    report = {"stage": name, "ok": False, "counts": {}, "timings": {}}
    try:
        report["counts"] = _RUNNERS[name](config)
        report["ok"] = True
        return report["counts"]
    except Exception as exc:
        report["error"] = str(exc)
        raise
    finally:
        report["timings"] = {"seconds": time.monotonic() - started}
        _write_json(report, out / f"report_{name}.json")


def run_all(config: PipelineConfig) -> dict:
    counts = {}
    for stage in ALL_CHAIN:
        counts[stage] = run_stage(stage, config)
    return counts
