"""Decision-forest classifier built from scratch: greedy Gini CART trees,
bootstrap bagging, randomized hyperparameter search, evaluation metrics,
grouped impurity importance, and the school-gap map."""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .features import FEATURE_COLUMNS, FEATURE_GROUPS, LabeledDataset, extract_features
from .geo import METERS_PER_DEG, BBox, GeoPoint, SpatialIndex
from .raster import RasterGrid


@dataclass
class Hyperparams:
    n_trees: int = 200
    max_depth: int = 16
    min_samples_leaf: int = 1
    max_features: object = "sqrt"   # int count, "sqrt", or "half"
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not (self.max_features in ("sqrt", "half")
                or (isinstance(self.max_features, int) and self.max_features >= 1)):
            raise ValueError(f"bad max_features: {self.max_features!r}")

    def to_json(self) -> dict:
        return {"n_trees": self.n_trees, "max_depth": self.max_depth,
                "min_samples_leaf": self.min_samples_leaf,
                "max_features": self.max_features, "bootstrap": self.bootstrap}


def resolve_max_features(max_features, n_features: int) -> int:
    if max_features == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    if max_features == "half":
        return max(1, n_features // 2)
    return min(max(1, int(max_features)), n_features)


@dataclass
class TreeNode:
    """Split node (feature >= 0, x[feature] <= threshold goes left) or leaf."""

    feature: int = -1
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    counts: Optional[tuple] = None   # (n0, n1) on leaves

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def __post_init__(self):
        if self.is_leaf:
            if self.counts is None or sum(self.counts) <= 0 or min(self.counts) < 0:
                raise ValueError("leaf needs non-negative counts, not both zero")


def gini_impurity(c0: float, c1: float) -> float:
    n = c0 + c1
    if n == 0:
        return 0.0
    p0, p1 = c0 / n, c1 / n
    return 1.0 - p0 * p0 - p1 * p1


def _best_split(X: np.ndarray, y: np.ndarray, idx: np.ndarray,
                feature_ids, min_leaf: int):
    """Lowest weighted-Gini split over the sampled features.

    Ties break toward the lowest feature index, then the lowest threshold
    (features iterate ascending; argmin picks the first, smallest midpoint).
    """
    n = len(idx)
    ysub = y[idx].astype(np.float64)
    best = None  # (cost, feature, threshold)
    positions = np.arange(1, n, dtype=np.float64)
    for f in feature_ids:
        v = X[idx, f]
        order = np.argsort(v, kind="mergesort")
        vs = v[order]
        prefix1 = np.cumsum(ysub[order])
        total1 = prefix1[-1]
        valid = (vs[1:] > vs[:-1])
        if min_leaf > 1:
            valid &= (positions >= min_leaf) & ((n - positions) >= min_leaf)
        if not valid.any():
            continue
        l1 = prefix1[:-1]
        l0 = positions - l1
        r1 = total1 - l1
        r0 = (n - positions) - r1
        with np.errstate(invalid="ignore"):
            gini_l = 1.0 - (l0 / positions) ** 2 - (l1 / positions) ** 2
            gini_r = 1.0 - (r0 / (n - positions)) ** 2 - (r1 / (n - positions)) ** 2
        cost = (positions * gini_l + (n - positions) * gini_r) / n
        cost[~valid] = np.inf
        k = int(np.argmin(cost))
        if best is None or cost[k] < best[0]:
            mid = (vs[k] + vs[k + 1]) / 2.0
            # Guard against the midpoint rounding up to the right-hand value.
            thr = mid if mid < vs[k + 1] else vs[k]
            best = (float(cost[k]), f, float(thr))
    return best


def train_tree(X: np.ndarray, y: np.ndarray, params: Hyperparams,
               rng: random.Random) -> TreeNode:
    """Greedy CART tree minimizing weighted Gini impurity.

    Candidate features are a seeded sample per node; candidate thresholds are
    midpoints between consecutive distinct sorted values. Recursion stops on
    pure nodes, max_depth, or min_samples_leaf.
    """
    if len(X) < 1:
        raise ValueError("need at least one row")
    n_features = X.shape[1]
    k = resolve_max_features(params.max_features, n_features)

    def build(idx: np.ndarray, depth: int) -> TreeNode:
        c1 = int(y[idx].sum())
        c0 = len(idx) - c1
        if (c0 == 0 or c1 == 0 or depth >= params.max_depth
                or len(idx) < 2 * params.min_samples_leaf):
            return TreeNode(counts=(c0, c1))
        feature_ids = sorted(rng.sample(range(n_features), k))
        split = _best_split(X, y, idx, feature_ids, params.min_samples_leaf)
        if split is None:
            return TreeNode(counts=(c0, c1))
        _, f, thr = split
        mask = X[idx, f] <= thr
        return TreeNode(feature=f, threshold=thr,
                        left=build(idx[mask], depth + 1),
                        right=build(idx[~mask], depth + 1))

    return build(np.arange(len(X)), 0)


def _tree_arrays(root: TreeNode) -> dict:
    feature, threshold, left, right, count0, count1 = [], [], [], [], [], []

    def emit(node: TreeNode) -> int:
        i = len(feature)
        feature.append(node.feature)
        threshold.append(node.threshold)
        left.append(-1)
        right.append(-1)
        count0.append(node.counts[0] if node.is_leaf else 0)
        count1.append(node.counts[1] if node.is_leaf else 0)
        if not node.is_leaf:
            left[i] = emit(node.left)
            right[i] = emit(node.right)
        return i

    emit(root)
    return {"feature": feature, "threshold": threshold, "left": left,
            "right": right, "count0": count0, "count1": count1}


def _tree_from_arrays(arrays: dict) -> TreeNode:
    def build(i: int) -> TreeNode:
        if arrays["feature"][i] < 0:
            return TreeNode(counts=(arrays["count0"][i], arrays["count1"][i]))
        return TreeNode(feature=arrays["feature"][i],
                        threshold=arrays["threshold"][i],
                        left=build(arrays["left"][i]),
                        right=build(arrays["right"][i]))

    return build(0)


def _model_payload(trees_arrays, params: Hyperparams, feature_groups: dict,
                   seed: int) -> dict:
    return {"format": "atlas-forest/1", "params": params.to_json(),
            "feature_groups": {k: list(v) for k, v in sorted(feature_groups.items())},
            "seed": seed, "trees": trees_arrays}


def _content_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class ForestModel:
    trees: list
    params: Hyperparams
    feature_groups: dict
    seed: int
    n_features: int
    model_version: str = ""

    def __post_init__(self):
        if not self.trees:
            raise ValueError("a forest needs at least one tree")
        if not self.model_version:
            payload = _model_payload([_tree_arrays(t) for t in self.trees],
                                     self.params, self.feature_groups, self.seed)
            self.model_version = _content_hash(payload)


def train_forest(dataset: LabeledDataset, params: Hyperparams, seed: int = 0) -> ForestModel:
    """Bagged forest; tree i uses an rng seeded with seed XOR i, so training is
    bit-deterministic per seed and schedule-independent."""
    y = dataset.labels
    if (y == 0).sum() == 0 or (y == 1).sum() == 0:
        raise ValueError("training data must contain both classes")
    X = dataset.rows
    n = len(X)
    trees = []
    for i in range(params.n_trees):
        rng = random.Random(seed ^ i)
        if params.bootstrap:
            idx = np.array([rng.randrange(n) for _ in range(n)], dtype=np.int64)
            trees.append(train_tree(X[idx], y[idx], params, rng))
        else:
            trees.append(train_tree(X, y, params, rng))
    return ForestModel(trees=trees, params=params,
                       feature_groups={k: list(v) for k, v in dataset.feature_groups.items()},
                       seed=seed, n_features=X.shape[1])


def _leaf_fraction(node: TreeNode, row) -> float:
    while not node.is_leaf:
        node = node.left if row[node.feature] <= node.threshold else node.right
    c0, c1 = node.counts
    return c1 / (c0 + c1)


def predict_proba(model: ForestModel, fv) -> float:
    """Soft-vote probability: mean over trees of the leaf class-1 fraction."""
    row = fv.as_row() if hasattr(fv, "as_row") else list(fv)
    if len(row) != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {len(row)}")
    return sum(_leaf_fraction(t, row) for t in model.trees) / len(model.trees)


def predict_proba_batch(model: ForestModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    return np.array([sum(_leaf_fraction(t, row) for t in model.trees) / len(model.trees)
                     for row in X])


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int

    @staticmethod
    def _prf(tp, fp, fn):
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return precision, recall, f1

    @property
    def precision_1(self):
        return self._prf(self.tp, self.fp, self.fn)[0]

    @property
    def recall_1(self):
        return self._prf(self.tp, self.fp, self.fn)[1]

    @property
    def f1_1(self):
        return self._prf(self.tp, self.fp, self.fn)[2]

    @property
    def precision_0(self):
        return self._prf(self.tn, self.fn, self.fp)[0]

    @property
    def recall_0(self):
        return self._prf(self.tn, self.fn, self.fp)[1]

    @property
    def f1_0(self):
        return self._prf(self.tn, self.fn, self.fp)[2]

    @property
    def accuracy(self):
        total = self.tp + self.fp + self.fn + self.tn
        return (self.tp + self.tn) / total if total else 0.0

    def to_json(self) -> dict:
        return {
            "confusion": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
            "accuracy": self.accuracy,
            "class_1": {"precision": self.precision_1, "recall": self.recall_1,
                        "f1": self.f1_1},
            "class_0": {"precision": self.precision_0, "recall": self.recall_0,
                        "f1": self.f1_0},
        }


def evaluate(model: ForestModel, X: np.ndarray, y: np.ndarray,
             threshold: float = 0.5) -> MetricsReport:
    if len(X) == 0:
        raise ValueError("test split is empty")
    proba = predict_proba_batch(model, X)
    pred = (proba >= threshold).astype(np.int64)
    y = np.asarray(y, dtype=np.int64)
    return MetricsReport(
        tp=int(((pred == 1) & (y == 1)).sum()),
        fp=int(((pred == 1) & (y == 0)).sum()),
        fn=int(((pred == 0) & (y == 1)).sum()),
        tn=int(((pred == 0) & (y == 0)).sum()),
    )


def train_test_split(dataset: LabeledDataset, test_frac: float = 0.2, seed: int = 0):
    """Stratified, seeded holdout split; returns (train, test) datasets."""
    rng = random.Random(seed)
    test_idx = set()
    for cls in (0, 1):
        members = [i for i in range(len(dataset)) if dataset.labels[i] == cls]
        n_test = max(1, round(test_frac * len(members))) if members else 0
        test_idx.update(rng.sample(members, min(n_test, len(members))))

    def subset(indices):
        indices = sorted(indices)
        return LabeledDataset(rows=dataset.rows[indices],
                              labels=dataset.labels[indices],
                              ids=[dataset.ids[i] for i in indices],
                              feature_groups={k: list(v) for k, v in dataset.feature_groups.items()})

    train_idx = [i for i in range(len(dataset)) if i not in test_idx]
    return subset(train_idx), subset(test_idx)


DEFAULT_SEARCH_SPACE = {
    "n_trees": [100, 200, 400],
    "max_depth": [8, 12, 16, 32],
    "min_samples_leaf": [1, 2, 5],
    "max_features": ["sqrt", "half"],
    "bootstrap": [True],
}


def random_search(dataset: LabeledDataset, space: dict = None, n_iter: int = 10,
                  subset_frac: float = 0.2, folds: int = 3, seed: int = 0):
    """Randomized search scored by mean class-1 F1 over stratified k-fold CV on a
    seeded stratified subset. Returns (best Hyperparams, trial reports);
    score ties keep the earliest draw."""
    space = dict(DEFAULT_SEARCH_SPACE if space is None else space)
    if not space or any(not v for v in space.values()):
        raise ValueError("search space must be non-empty")
    rng = random.Random(seed)

    # Stratified subset of the training data.
    sub_idx = []
    for cls in (0, 1):
        members = [i for i in range(len(dataset)) if dataset.labels[i] == cls]
        take = max(1, round(subset_frac * len(members))) if members else 0
        sub_idx.extend(rng.sample(members, min(take, len(members))))
    sub_idx.sort()
    X = dataset.rows[sub_idx]
    y = dataset.labels[sub_idx]

    # Stratified fold assignment on the subset.
    fold_of = {}
    for cls in (0, 1):
        members = [i for i in range(len(sub_idx)) if y[i] == cls]
        if len(members) < folds:
            raise ValueError(
                f"subset too small for {folds}-fold CV: class {cls} has {len(members)} rows")
        rng.shuffle(members)
        for pos, i in enumerate(members):
            fold_of[i] = pos % folds

    groups = {k: list(v) for k, v in dataset.feature_groups.items()}
    best, best_score = None, -1.0
    trials = []
    for it in range(n_iter):
        draw = {key: rng.choice(space[key]) for key in sorted(space)}
        params = Hyperparams(**draw)
        fold_seeds = [rng.randrange(2 ** 31) for _ in range(folds)]
        scores = []
        for f in range(folds):
            train_rows = [i for i in range(len(sub_idx)) if fold_of[i] != f]
            test_rows = [i for i in range(len(sub_idx)) if fold_of[i] == f]
            fold_train = LabeledDataset(rows=X[train_rows], labels=y[train_rows],
                                        ids=[str(i) for i in train_rows],
                                        feature_groups=groups)
            model = train_forest(fold_train, params, seed=fold_seeds[f])
            scores.append(evaluate(model, X[test_rows], y[test_rows]).f1_1)
        mean_f1 = sum(scores) / folds
        trials.append({"params": params.to_json(), "mean_f1": mean_f1, "fold_f1": scores})
        if mean_f1 > best_score:
            best, best_score = params, mean_f1
    return best, trials


def feature_importance(model: ForestModel) -> dict:
    """Grouped mean decrease in Gini impurity, normalized to sum to 1.

    Per split: gain times the node's sample fraction; summed per tree from the
    serialized leaf counts, averaged over trees, then summed within groups.
    """
    per_column = np.zeros(model.n_features)
    for tree in model.trees:
        contrib = np.zeros(model.n_features)

        def walk(node):
            if node.is_leaf:
                return node.counts[0], node.counts[1]
            l0, l1 = walk(node.left)
            r0, r1 = walk(node.right)
            c0, c1 = l0 + r0, l1 + r1
            n, nl, nr = c0 + c1, l0 + l1, r0 + r1
            gain = gini_impurity(c0, c1) - (nl * gini_impurity(l0, l1)
                                            + nr * gini_impurity(r0, r1)) / n
            contrib[node.feature] += gain * n
            return c0, c1

        root_counts = walk(tree)
        total = sum(root_counts)
        if total:
            per_column += contrib / total
    per_column /= len(model.trees)
    s = per_column.sum()
    if s > 0:
        per_column = per_column / s
    return {group: float(per_column[idxs].sum())
            for group, idxs in model.feature_groups.items()}


@dataclass
class GapCell:
    center: GeoPoint
    p_school: Optional[float]
    n_known: int
    gap_score: Optional[float]


def gap_map(model: ForestModel, aoi: BBox, cell_m: float, stack: dict,
            known_index: SpatialIndex, radius_m: float = 2000.0,
            k_sat: int = 3) -> list:
    """Regular grid over aoi scored as p_school * (1 - min(1, n_known / k_sat)).

    Cells whose feature extraction drops (missing categorical coverage) carry
    absent p_school/gap_score.
    """
    d = cell_m / METERS_PER_DEG
    nrows = max(1, math.ceil((aoi.max_lat - aoi.min_lat) / d))
    ncols = max(1, math.ceil((aoi.max_lon - aoi.min_lon) / d))
    cells = []
    for r in range(nrows):
        lat = aoi.min_lat + (nrows - r - 0.5) * d
        for c in range(ncols):
            center = GeoPoint(lat, aoi.min_lon + (c + 0.5) * d)
            n_known = len(known_index.query_radius(center, radius_m))
            fv, _ = extract_features(center, stack)
            if fv is None:
                cells.append(GapCell(center=center, p_school=None,
                                     n_known=n_known, gap_score=None))
                continue
            p = predict_proba(model, fv)
            gap = p * (1.0 - min(1.0, n_known / k_sat))
            cells.append(GapCell(center=center, p_school=p, n_known=n_known,
                                 gap_score=gap))
    return cells


def gap_map_to_geojson(cells: Sequence, cell_m: float) -> dict:
    h = cell_m / METERS_PER_DEG / 2.0
    features = []
    for cell in cells:
        lat, lon = cell.center.lat, cell.center.lon
        ring = [[lon - h, lat - h], [lon + h, lat - h], [lon + h, lat + h],
                [lon - h, lat + h], [lon - h, lat - h]]
        features.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": {"p_school": cell.p_school, "n_known": cell.n_known,
                           "gap_score": cell.gap_score,
                           "center_lat": lat, "center_lon": lon},
        })
    return {"type": "FeatureCollection", "features": features}


def gap_map_from_geojson(doc: dict) -> list:
    cells = []
    for feat in doc["features"]:
        props = feat["properties"]
        cells.append(GapCell(center=GeoPoint(props["center_lat"], props["center_lon"]),
                             p_school=props.get("p_school"),
                             n_known=props.get("n_known", 0),
                             gap_score=props.get("gap_score")))
    return cells


def gap_map_to_grid(cells: Sequence, aoi: BBox, cell_m: float,
                    nodata: float = -9999.0) -> RasterGrid:
    d = cell_m / METERS_PER_DEG
    nrows = max(1, math.ceil((aoi.max_lat - aoi.min_lat) / d))
    ncols = max(1, math.ceil((aoi.max_lon - aoi.min_lon) / d))
    values = [nodata] * (nrows * ncols)
    for cell in cells:
        c = int((cell.center.lon - aoi.min_lon) / d)
        r = nrows - 1 - int((cell.center.lat - aoi.min_lat) / d)
        if 0 <= r < nrows and 0 <= c < ncols and cell.gap_score is not None:
            values[r * ncols + c] = cell.gap_score
    return RasterGrid(ncols=ncols, nrows=nrows, xll=aoi.min_lon, yll=aoi.min_lat,
                      cellsize=d, nodata=nodata, values=values)


def save_model(model: ForestModel, path) -> None:
    payload = _model_payload([_tree_arrays(t) for t in model.trees],
                             model.params, model.feature_groups, model.seed)
    doc = dict(payload)
    doc["model_version"] = model.model_version
    doc["n_features"] = model.n_features
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n",
                          encoding="utf-8")


def load_model(path) -> ForestModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "atlas-forest/1":
        raise ValueError(f"unknown model format in {path}")
    params = Hyperparams(**doc["params"])
    payload = _model_payload(doc["trees"], params, doc["feature_groups"], doc["seed"])
    expected = _content_hash(payload)
    if doc.get("model_version") != expected:
        raise ValueError("model file content hash mismatch")
    trees = [_tree_from_arrays(arr) for arr in doc["trees"]]
    return ForestModel(trees=trees, params=params, feature_groups=doc["feature_groups"],
                       seed=doc["seed"], n_features=doc["n_features"],
                       model_version=doc["model_version"])
