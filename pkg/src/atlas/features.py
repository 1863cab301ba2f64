"""Feature engineering: point + raster stack -> the 10-column training vector."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geo import GeoPoint
from .raster import RasterGrid, raster_sample

FEATURE_COLUMNS = (
    "sin_lat", "cos_lat", "sin_lon", "cos_lon",
    "climate", "landcover", "terrain", "population", "degurba", "nightlights",
)

FEATURE_GROUPS = {
    "coordinates": [0, 1, 2, 3],
    "climate": [4],
    "landcover": [5],
    "terrain": [6],
    "population": [7],
    "degurba": [8],
    "nightlights": [9],
}

CATEGORICAL_LAYERS = ("climate", "landcover", "terrain", "degurba")
CONTINUOUS_LAYERS = ("population", "nightlights")
RASTER_LAYERS = ("climate", "landcover", "terrain", "population", "degurba", "nightlights")


@dataclass(frozen=True)
class FeatureVector:
    sin_lat: float
    cos_lat: float
    sin_lon: float
    cos_lon: float
    climate: float
    landcover: float
    terrain: float
    population: float
    degurba: float
    nightlights: float

    def __post_init__(self):
        row = self.as_row()
        if any(math.isnan(v) or math.isinf(v) for v in row):
            raise ValueError("feature vector contains non-finite values")
        if abs(self.sin_lat ** 2 + self.cos_lat ** 2 - 1.0) > 1e-12:
            raise ValueError("lat encoding violates sin^2+cos^2 = 1")
        if abs(self.sin_lon ** 2 + self.cos_lon ** 2 - 1.0) > 1e-12:
            raise ValueError("lon encoding violates sin^2+cos^2 = 1")

    def as_row(self) -> list:
        return [self.sin_lat, self.cos_lat, self.sin_lon, self.cos_lon,
                self.climate, self.landcover, self.terrain, self.population,
                self.degurba, self.nightlights]


def encode_coordinates(p: GeoPoint) -> tuple[float, float, float, float]:
    """sin/cos of latitude and longitude in radians."""
    lat, lon = math.radians(p.lat), math.radians(p.lon)
    return math.sin(lat), math.cos(lat), math.sin(lon), math.cos(lon)


def extract_features(p: GeoPoint, stack: dict):
    """Sample the raster stack at p; returns (FeatureVector, None) or (None, reason).

    Absent continuous samples (population, nightlights) read as 0; an absent
    categorical sample drops the point.
    """
    values = {}
    for layer in CATEGORICAL_LAYERS:
        v = raster_sample(stack[layer], p)
        if v is None:
            return None, f"missing categorical: {layer}"
        values[layer] = float(v)
    for layer in CONTINUOUS_LAYERS:
        v = raster_sample(stack[layer], p)
        values[layer] = 0.0 if v is None else float(v)
    sin_lat, cos_lat, sin_lon, cos_lon = encode_coordinates(p)
    return FeatureVector(sin_lat=sin_lat, cos_lat=cos_lat, sin_lon=sin_lon,
                         cos_lon=cos_lon, **values), None


@dataclass
class LabeledDataset:
    rows: np.ndarray
    labels: np.ndarray
    ids: list
    feature_groups: dict = field(default_factory=lambda: {k: list(v) for k, v in FEATURE_GROUPS.items()})
    drops: list = field(default_factory=list)   # (id, reason)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.rows) != len(self.labels) or len(self.rows) != len(self.ids):
            raise ValueError("rows, labels, and ids must have equal lengths")
        covered = sorted(i for idxs in self.feature_groups.values() for i in idxs)
        if covered != list(range(self.rows.shape[1] if len(self.rows) else len(FEATURE_COLUMNS))):
            raise ValueError("feature groups must partition the columns")

    def __len__(self) -> int:
        return len(self.ids)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "label", *FEATURE_COLUMNS])
            for rid, label, row in zip(self.ids, self.labels, self.rows):
                writer.writerow([rid, int(label), *[repr(float(v)) for v in row]])

    @classmethod
    def from_csv(cls, path):
        ids, labels, rows = [], [], []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["id", "label", *FEATURE_COLUMNS]:
                raise ValueError(f"unexpected dataset header in {path}")
            for rec in reader:
                ids.append(rec[0])
                labels.append(int(rec[1]))
                rows.append([float(v) for v in rec[2:]])
        return cls(rows=np.array(rows, dtype=np.float64).reshape(len(ids), len(FEATURE_COLUMNS)),
                   labels=np.array(labels, dtype=np.int64), ids=ids)


def build_dataset(positives: Sequence, negatives: Sequence, stack: dict) -> LabeledDataset:
    """Label 1 for schools, 0 for negatives; drops are reported, order preserved."""
    pos_ids = {r.id for r in positives}
    overlap = pos_ids & {r.id for r in negatives}
    if overlap:
        raise ValueError(f"positive/negative ids overlap: {sorted(overlap)[:5]}")
    ids, labels, rows, drops = [], [], [], []
    for label, group in ((1, positives), (0, negatives)):
        for rec in group:
            fv, reason = extract_features(rec.point, stack)
            if fv is None:
                drops.append((rec.id, reason))
                continue
            ids.append(rec.id)
            labels.append(label)
            rows.append(fv.as_row())
    arr = np.array(rows, dtype=np.float64).reshape(len(ids), len(FEATURE_COLUMNS))
    dataset = LabeledDataset(rows=arr, labels=np.array(labels, dtype=np.int64),
                             ids=ids, drops=drops)
    if len(dataset) and (dataset.labels == 1).sum() == 0:
        raise ValueError("no positive rows survived feature extraction")
    if len(dataset) and (dataset.labels == 0).sum() == 0:
        raise ValueError("no negative rows survived feature extraction")
    if not len(dataset):
        raise ValueError("no rows survived feature extraction")
    return dataset
