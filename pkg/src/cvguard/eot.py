"""Bagged ensemble of Gini decision trees with a fail-safe majority vote.

Trees are stored as flat node lists so models serialize to a canonical
JSON document (sorted keys, repr floats, SHA-256 over the body).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import N_PROBES

FORMAT_NAME = "cvguard-eot"
FORMAT_VERSION = 1


class TrainingError(ValueError):
    pass


class ModelFileError(ValueError):
    pass


class VersionMismatchError(ModelFileError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    tree_count: int = 25
    max_depth: int = 8
    min_leaf: int = 1
    feature_subsample: int = math.ceil(math.sqrt(N_PROBES))
    seed: int = 0

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.feature_subsample < 1:
            raise ValueError("feature_subsample must be >= 1")


@dataclass
class TrainingSet:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.size == 0 or len(self.y) == 0:
            raise TrainingError("training set is empty")
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise TrainingError("features and labels disagree in shape")
        if not set(np.unique(self.y)) <= {0, 1}:
            raise TrainingError("labels must be 0 or 1")
        if len(np.unique(self.y)) < 2:
            raise TrainingError("training set has a single class")
        if not np.all(np.isfinite(self.X)):
            raise TrainingError("non-finite feature value")

    @property
    def l(self) -> int:
        return len(self.y)

    @classmethod
    def from_vectors(cls, normal, abnormal):
        rows = [fv.as_array() for fv in normal] + [fv.as_array() for fv in abnormal]
        labels = [1] * len(normal) + [0] * len(abnormal)
        if not rows:
            raise TrainingError("training set is empty")
        return cls(np.vstack(rows), np.array(labels))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"f{k}" for k in range(self.X.shape[1])] + ["label"])
            for row, lab in zip(self.X.tolist(), self.y.tolist()):
                w.writerow([repr(x) for x in row] + [lab])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][-1] != "label":
            raise TrainingError(f"{path}: missing header with trailing 'label' column")
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
        if data.size == 0:
            raise TrainingError(f"{path}: no rows")
        return cls(data[:, :-1], data[:, -1].astype(int))


# A tree is a list of nodes.  Internal node: [feature, threshold, left, right];
# leaf: [label].  Index 0 is the root.  x[feature] <= threshold goes left.

def _gini(pos, n):
    if n == 0:
        return 0.0
    p = pos / n
    return 2.0 * p * (1.0 - p)


def _majority(y):
    ones = int(y.sum())
    return 1 if 2 * ones > len(y) else 0


def _best_split(X, y, features, min_leaf):
    n = len(y)
    best = None  # (impurity, feature, threshold)
    for f in sorted(features):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        left_pos = np.cumsum(ys)
        total_pos = left_pos[-1]
        for k in range(min_leaf, n - min_leaf + 1):
            if k == n or xs[k - 1] == xs[k]:
                continue
            nl, nr = k, n - k
            pl = left_pos[k - 1]
            imp = (nl * _gini(pl, nl) + nr * _gini(total_pos - pl, nr)) / n
            thr = 0.5 * (xs[k - 1] + xs[k])
            if thr >= xs[k]:  # midpoint rounded up onto the right value
                thr = xs[k - 1]
            cand = (imp, f, thr)
            if best is None or cand < best:
                best = cand
    return best


def _grow(X, y, cfg: TrainConfig, rng: np.random.Generator):
    nodes = []

    def build(idx, depth):
        slot = len(nodes)
        nodes.append(None)
        ys = y[idx]
        pure = ys.min() == ys.max()
        if pure or depth >= cfg.max_depth or len(idx) < 2 * cfg.min_leaf:
            nodes[slot] = [_majority(ys)]
            return slot
        k = min(cfg.feature_subsample, X.shape[1])
        feats = rng.choice(X.shape[1], size=k, replace=False)
        split = _best_split(X[idx], ys, feats.tolist(), cfg.min_leaf)
        if split is None:
            nodes[slot] = [_majority(ys)]
            return slot
        _, f, thr = split
        go_left = X[idx, f] <= thr
        left = build(idx[go_left], depth + 1)
        right = build(idx[~go_left], depth + 1)
        nodes[slot] = [int(f), float(thr), left, right]
        return slot

    build(np.arange(len(y)), 0)
    return nodes


def tree_predict(tree, x) -> int:
    node = tree[0]
    while len(node) == 4:
        f, thr, left, right = node
        node = tree[left] if x[f] <= thr else tree[right]
    return node[0]


def leaf_count(tree) -> int:
    return sum(1 for node in tree if len(node) == 1)


@dataclass(frozen=True, eq=False)
class EotModel:
    trees: tuple
    config: TrainConfig
    l: int
    training_error: float
    n_features: int = N_PROBES
    meta: dict = field(default_factory=dict)

    @property
    def tree_count(self) -> int:
        return len(self.trees)

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def n_leaves(self) -> int:
        return sum(leaf_count(t) for t in self.trees)

    def votes(self, x) -> list[int]:
        x = np.asarray(getattr(x, "values", x), dtype=float)
        if x.shape != (self.n_features,):
            raise ValueError(f"expected {self.n_features} features, got shape {x.shape}")
        return [tree_predict(t, x) for t in self.trees]


def tally(votes) -> int:
    """Strict majority of 1-votes wins; a tie is reported abnormal (0)."""
    votes = list(votes)
    return 1 if 2 * sum(votes) > len(votes) else 0


def predict(model: EotModel, x) -> int:
    return tally(model.votes(x))


def predict_many(model: EotModel, X) -> np.ndarray:
    return np.array([predict(model, row) for row in np.asarray(X, dtype=float)], dtype=int)


def train(data: TrainingSet, config: TrainConfig = TrainConfig()) -> EotModel:
    """Bagging: every tree sees a seeded bootstrap resample of size ``l``."""
    rng = np.random.default_rng(config.seed)
    X, y = data.X, data.y
    trees = []
    for _ in range(config.tree_count):
        boot = rng.integers(0, len(y), size=len(y))
        trees.append(_grow(X[boot], y[boot], config, rng))
    model = EotModel(tuple(trees), config, data.l, 0.0, n_features=X.shape[1])
    err = float(np.mean(predict_many(model, X) != y))
    return EotModel(tuple(trees), config, data.l, err, n_features=X.shape[1])


# -- persistence --------------------------------------------------------------

def _body(model: EotModel) -> dict:
    c = model.config
    return {
        "config": {
            "tree_count": c.tree_count,
            "max_depth": c.max_depth,
            "min_leaf": c.min_leaf,
            "feature_subsample": c.feature_subsample,
            "seed": c.seed,
        },
        "l": model.l,
        "n_features": model.n_features,
        "n_leaves": model.n_leaves,
        "training_error": model.training_error,
        "trees": [list(t) for t in model.trees],
        "meta": model.meta,
    }


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def dumps(model: EotModel) -> str:
    body = _body(model)
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "checksum": hashlib.sha256(_canonical(body).encode()).hexdigest(),
        "model": body,
    }
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def loads(text: str) -> EotModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"malformed model file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ModelFileError("malformed model file: not a cvguard EOT model")
    if doc.get("version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"model file version {doc.get('version')!r} is not supported "
            f"(expected {FORMAT_VERSION})")
    body = doc.get("model")
    if not isinstance(body, dict):
        raise ModelFileError("malformed model file: missing model body")
    if hashlib.sha256(_canonical(body).encode()).hexdigest() != doc.get("checksum"):
        raise ModelFileError("model file checksum mismatch")
    try:
        config = TrainConfig(**body["config"])
        trees = tuple(
            [[int(n[0])] if len(n) == 1 else [int(n[0]), float(n[1]), int(n[2]), int(n[3])]
             for n in tree]
            for tree in body["trees"])
        model = EotModel(trees, config, int(body["l"]), float(body["training_error"]),
                         int(body["n_features"]), dict(body.get("meta", {})))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ModelFileError(f"malformed model file: {exc}") from None
    for tree in trees:
        for node in tree:
            if len(node) == 4 and not 0 <= node[0] < model.n_features:
                raise ModelFileError("malformed model file: feature index out of range")
    if model.n_leaves != body["n_leaves"]:
        raise ModelFileError("malformed model file: leaf count disagrees with trees")
    return model


def save(model: EotModel, path) -> Path:
    path = Path(path)
    path.write_text(dumps(model), encoding="utf-8")
    return path


def load(path) -> EotModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise ModelFileError("malformed model file: not UTF-8 text") from None
    return loads(text)
