"""Pipeline configuration: TOML file, defaults, validation, ATLAS_ env overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .geo import BBox

ENV_PREFIX = "ATLAS_"

RASTER_KEYS = ("climate", "landcover", "terrain", "population", "degurba",
               "nightlights", "builtup")

RASTER_KINDS = {"climate": "categorical", "landcover": "categorical",
                "terrain": "categorical", "population": "continuous",
                "degurba": "categorical", "nightlights": "continuous",
                "builtup": "continuous"}

DEFAULT_THRESHOLDS = {
    "dedup_radius_m": 25.0,
    "dedup_sim_min": 0.85,
    "water_class": 80,
    "max_building_dist_m": 150.0,
    "thin_target": 10_000,
    "thin_min_spacing_m": 10_000.0,
    "building_confidence_min": 0.7,
    "building_exclusion_radius_m": 25.0,
    "poi_negatives_n": 8_000,
    "remote_negatives_n": 2_000,
    "remote_min_dist_m": 1_000.0,
    "built_threshold": 0.0,
    "remote_pool_factor": 3,
    "remote_max_draws": 1_000_000,
    "search_n_iter": 10,
    "search_subset_frac": 0.2,
    "search_folds": 3,
    "eval_test_frac": 0.2,
    "gap_cell_m": 2_000.0,
    "gap_radius_m": 2_000.0,
    "gap_k_sat": 3,
    "candidate_zoom": 17,
    "candidate_p_min": 0.7,
    "candidate_dedupe_m": 100.0,
    "candidate_max_tiles": 2_000,
    "candidate_gap_min": 0.0,
}


@dataclass
class PipelineConfig:
    paths: dict = field(default_factory=dict)        # input files incl. paths["rasters"]
    thresholds: dict = field(default_factory=dict)   # merged over DEFAULT_THRESHOLDS
    seeds: dict = field(default_factory=dict)
    out_dir: str = "out"
    service: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        merged = dict(DEFAULT_THRESHOLDS)
        merged.update(self.thresholds)
        self.thresholds = merged
        self.seeds.setdefault("master", 0)

    def seed(self, stage: str) -> int:
        """Per-stage seed: explicit entry, else derived from the master seed."""
        if stage in self.seeds:
            return int(self.seeds[stage])
        offsets = {"thin": 1, "poi_negatives": 2, "remote_negatives": 3,
                   "search": 4, "train": 5}
        return int(self.seeds["master"]) * 1000 + offsets.get(stage, 0)

    def path(self, key: str) -> Path:
        raw = self.paths.get(key)
        if raw is None:
            raise KeyError(key)
        return self._resolve(raw)

    def raster_path(self, key: str) -> Path:
        return self._resolve(self.paths.get("rasters", {})[key])

    def _resolve(self, raw: str) -> Path:
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    def aoi(self) -> BBox:
        a = self.paths.get("aoi") or {}
        return BBox(a["min_lat"], a["min_lon"], a["max_lat"], a["max_lon"])

    def out(self) -> Path:
        p = Path(self.out_dir)
        return p if p.is_absolute() else self.base_dir / p


def _coerce_env_value(raw: str):
    try:
        doc = tomllib.loads(f"v = {raw}")
        return doc["v"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_env_overrides(doc: dict, environ=None) -> dict:
    """ATLAS_SECTION__KEY=value overrides doc[section][key]; double underscore
    separates nesting levels, names are lowercased."""
    environ = os.environ if environ is None else environ
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = [p.lower() for p in name[len(ENV_PREFIX):].split("__") if p]
        if not parts:
            continue
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                break
        else:
            node[parts[-1]] = _coerce_env_value(raw)
    return doc


def load_config(path, environ=None) -> PipelineConfig:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    doc = apply_env_overrides(doc, environ)
    return PipelineConfig(
        paths=doc.get("paths", {}),
        thresholds=doc.get("thresholds", {}),
        seeds=doc.get("seeds", {}),
        out_dir=doc.get("output", {}).get("dir", "out"),
        service=doc.get("service", {}),
        base_dir=Path(path).resolve().parent,
    )


REQUIRED_PATH_KEYS = ("schools", "pois", "buildings_osm", "buildings_microsoft",
                      "buildings_google", "admin_zones", "lexicon")


def validate_config(config: PipelineConfig) -> list:
    """Every problem at once; an empty list means the config is usable."""
    errors = []
    for key in REQUIRED_PATH_KEYS:
        raw = config.paths.get(key)
        if raw is None:
            errors.append(f"paths.{key} is not set")
        elif not config._resolve(raw).is_file():
            errors.append(f"paths.{key}: file not found: {raw}")
    rasters = config.paths.get("rasters")
    if not isinstance(rasters, dict):
        errors.append("paths.rasters table is not set")
    else:
        for key in RASTER_KEYS:
            raw = rasters.get(key)
            if raw is None:
                errors.append(f"paths.rasters.{key} is not set")
            elif not config._resolve(raw).is_file():
                errors.append(f"paths.rasters.{key}: file not found: {raw}")
    gf = config.paths.get("geocoder_fixture")
    if gf is not None and not config._resolve(gf).is_file():
        errors.append(f"paths.geocoder_fixture: file not found: {gf}")
    try:
        config.aoi()
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(f"paths.aoi invalid: {exc}")
    t = config.thresholds
    for key in ("dedup_sim_min", "building_confidence_min", "candidate_p_min"):
        if not (0.0 <= float(t[key]) <= 1.0):
            errors.append(f"thresholds.{key} must be in [0, 1]")
    for key in ("dedup_radius_m", "max_building_dist_m", "thin_min_spacing_m",
                "remote_min_dist_m", "gap_cell_m", "candidate_dedupe_m"):
        if float(t[key]) < 0:
            errors.append(f"thresholds.{key} must be non-negative")
    if not (0 <= int(t["candidate_zoom"]) <= 22):
        errors.append("thresholds.candidate_zoom must be in [0, 22]")
    return errors
