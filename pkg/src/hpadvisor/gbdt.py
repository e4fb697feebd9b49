"""Gradient-boosted regression trees for performance prediction.

Least-squares boosting: the initial prediction is the target mean, each
round fits one depth-bounded tree to the current residuals by greedy
exact variance-reduction splits, and tree outputs are shrunk by the
learning rate. The node structure keeps per-node training-sample covers,
which the attribution module uses as conditional-expectation weights, so
no external learner is involved.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .core import FEATURE_NAMES, EncodingTable, FeatureVector, METRIC_NAMES, encode
from .errors import DimensionError, InsufficientDataError, InvariantViolationError, ModelCorruptError
from .store import MetaDataset

# Splits below this variance-reduction gain are treated as pure noise.
GAIN_EPS = 1e-12

MODEL_FORMAT = "hpadvisor-gbdt"
MODEL_VERSION = 1


@dataclass(frozen=True)
class TreeNode:
    feature: int        # -1 for leaves
    threshold: float    # NaN for leaves
    left: int           # -1 for leaves
    right: int
    value: float        # leaf prediction; 0.0 on internal nodes
    cover: float        # training samples that reached this node

    @property
    def is_leaf(self) -> bool:
        return self.left < 0


@dataclass(frozen=True)
class RegressionTree:
    nodes: tuple[TreeNode, ...]

    def validate(self) -> None:
        if not self.nodes:
            raise InvariantViolationError("nodes", "tree must have at least one node")
        for i, node in enumerate(self.nodes):
            if node.cover <= 0:
                raise ModelCorruptError(f"node {i} has cover {node.cover}")
            if node.is_leaf:
                continue
            l, r = self.nodes[node.left], self.nodes[node.right]
            if abs(node.cover - (l.cover + r.cover)) > 1e-9:
                raise ModelCorruptError(f"node {i}: cover {node.cover} != {l.cover} + {r.cover}")
            if node.left <= i or node.right <= i:
                raise ModelCorruptError(f"node {i}: children must come after their parent")

    def predict_value(self, x: Sequence[float]) -> float:
        node = self.nodes[0]
        while not node.is_leaf:
            node = self.nodes[node.left] if x[node.feature] < node.threshold else self.nodes[node.right]
        return node.value

    def expectation(self) -> float:
        """Cover-weighted mean leaf value (bottom-up; children follow parents)."""
        exp = [0.0] * len(self.nodes)
        for i in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[i]
            if node.is_leaf:
                exp[i] = node.value
            else:
                l, r = self.nodes[node.left], self.nodes[node.right]
                exp[i] = (l.cover * exp[node.left] + r.cover * exp[node.right]) / node.cover
        return exp[0]

    def max_depth(self) -> int:
        depth = [0] * len(self.nodes)
        deepest = 0
        for i, node in enumerate(self.nodes):
            if not node.is_leaf:
                depth[node.left] = depth[i] + 1
                depth[node.right] = depth[i] + 1
        if depth:
            deepest = max(depth)
        return deepest


@dataclass(frozen=True)
class TrainParams:
    num_rounds: int = 200
    max_depth: int = 4
    min_samples_leaf: int = 2
    shrinkage: float = 0.1
    seed: int = 42

    def validate(self) -> None:
        if self.num_rounds < 1:
            raise InvariantViolationError("num_rounds", "must be >= 1")
        if self.max_depth < 0:
            raise InvariantViolationError("max_depth", "must be >= 0")
        if self.min_samples_leaf < 1:
            raise InvariantViolationError("min_samples_leaf", "must be >= 1")
        if not 0.0 < self.shrinkage <= 1.0:
            raise InvariantViolationError("shrinkage", "must be in (0, 1]")


@dataclass(frozen=True)
class GbdtModel:
    base_score: float
    trees: tuple[RegressionTree, ...]
    shrinkage: float
    feature_names: tuple[str, ...]
    encoding: EncodingTable
    target: str
    train_mse: tuple[float, ...] = ()
    constant_target: bool = False

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def expectation(self) -> float:
        """Model output with nothing conditioned on."""
        return self.base_score + self.shrinkage * sum(t.expectation() for t in self.trees)

    def packed(self) -> "PackedEnsemble":
        cached = getattr(self, "_packed_cache", None)
        if cached is None:
            cached = PackedEnsemble.from_model(self)
            object.__setattr__(self, "_packed_cache", cached)
        return cached


@dataclass(frozen=True)
class PackedEnsemble:
    """Flat node arrays for the numeric kernels."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    tree_start: np.ndarray
    max_depth: int

    @classmethod
    def from_model(cls, model: GbdtModel) -> "PackedEnsemble":
        feature, threshold, left, right, value, cover, start = [], [], [], [], [], [], []
        depth = 0
        for tree in model.trees:
            tree.validate()
            depth = max(depth, tree.max_depth())
            base = len(feature)
            start.append(base)
            for node in tree.nodes:
                feature.append(node.feature)
                threshold.append(node.threshold)
                left.append(node.left + base if node.left >= 0 else -1)
                right.append(node.right + base if node.right >= 0 else -1)
                value.append(node.value)
                cover.append(node.cover)
        return cls(
            feature=np.asarray(feature, dtype=np.int32),
            threshold=np.asarray(threshold, dtype=np.float64),
            left=np.asarray(left, dtype=np.int32),
            right=np.asarray(right, dtype=np.int32),
            value=np.asarray(value, dtype=np.float64),
            cover=np.asarray(cover, dtype=np.float64),
            tree_start=np.asarray(start, dtype=np.int32),
            max_depth=depth,
        )

    @property
    def n_trees(self) -> int:
        return len(self.tree_start)

    def buffer_size(self) -> int:
        d = self.max_depth + 2
        return (d + 1) * (d + 2) // 2 + d + 2

    def stack_capacity(self) -> int:
        longest = 1
        if self.n_trees:
            sizes = np.diff(np.append(self.tree_start, len(self.feature)))
            longest = int(sizes.max())
        return longest + 2


def _fit_tree(X: np.ndarray, residual: np.ndarray, max_depth: int, min_leaf: int) -> tuple[RegressionTree, np.ndarray]:
    """Greedy variance-reduction tree; returns it plus its fitted values."""
    nodes: list[TreeNode] = []
    fitted = np.empty(len(residual))

    def best_split(idx: np.ndarray) -> tuple[int, float, float]:
        sub = X[idx]
        r = residual[idx]
        n = len(idx)
        order = np.argsort(sub, axis=0, kind="stable")
        sv = np.take_along_axis(sub, order, axis=0)
        sr = r[order]
        csum = np.cumsum(sr, axis=0)
        csq = np.cumsum(sr * sr, axis=0)
        k = np.arange(1, n, dtype=np.float64)
        parent_sse = csq[-1, 0] - csum[-1, 0] ** 2 / n
        left_sse = csq[:-1] - csum[:-1] ** 2 / k[:, None]
        right_sse = (csq[-1] - csq[:-1]) - (csum[-1] - csum[:-1]) ** 2 / (n - k)[:, None]
        gain = parent_sse - (left_sse + right_sse)
        valid = sv[:-1] < sv[1:]
        counts_ok = (k >= min_leaf) & (n - k >= min_leaf)
        valid &= counts_ok[:, None]
        gain = np.where(valid, gain, -np.inf)
        best_feat, best_pos, best_gain = -1, -1, GAIN_EPS
        for f in range(X.shape[1]):
            pos = int(np.argmax(gain[:, f]))
            g = gain[pos, f]
            if g > best_gain:
                best_feat, best_pos, best_gain = f, pos, g
        if best_feat < 0:
            return -1, 0.0, 0.0
        thr = (sv[best_pos, best_feat] + sv[best_pos + 1, best_feat]) / 2.0
        return best_feat, float(thr), float(best_gain)

    def build(idx: np.ndarray, depth: int) -> int:
        node_id = len(nodes)
        nodes.append(TreeNode(-1, float("nan"), -1, -1, 0.0, float(len(idx))))
        mean = float(residual[idx].mean())
        if depth >= max_depth or len(idx) < 2 * min_leaf:
            nodes[node_id] = TreeNode(-1, float("nan"), -1, -1, mean, float(len(idx)))
            fitted[idx] = mean
            return node_id
        feat, thr, _gain = best_split(idx)
        if feat < 0:
            nodes[node_id] = TreeNode(-1, float("nan"), -1, -1, mean, float(len(idx)))
            fitted[idx] = mean
            return node_id
        mask = X[idx, feat] < thr
        left_id = build(idx[mask], depth + 1)
        right_id = build(idx[~mask], depth + 1)
        nodes[node_id] = TreeNode(feat, thr, left_id, right_id, 0.0, float(len(idx)))
        return node_id

    build(np.arange(len(residual)), 0)
    return RegressionTree(tuple(nodes)), fitted


def fit_gbdt(
    X: np.ndarray,
    y: np.ndarray,
    params: TrainParams,
    feature_names: tuple[str, ...] | None = None,
    encoding: EncodingTable | None = None,
    target: str = "y",
) -> GbdtModel:
    """Array-level training entry point (also used directly by tests)."""
    params.validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise DimensionError(f"X is {X.shape}, y has {len(y)} targets")
    if len(y) < 2:
        raise InsufficientDataError(f"need at least 2 records, got {len(y)}")
    names = feature_names or tuple(f"f{i}" for i in range(X.shape[1]))
    table = encoding if encoding is not None else EncodingTable({})
    base = float(y.mean())
    if float(np.var(y)) == 0.0:
        return GbdtModel(
            base_score=base,
            trees=(),
            shrinkage=params.shrinkage,
            feature_names=names,
            encoding=table,
            target=target,
            train_mse=(0.0,),
            constant_target=True,
        )
    pred = np.full(len(y), base)
    mse_history = [float(np.mean((y - pred) ** 2))]
    trees = []
    for _ in range(params.num_rounds):
        tree, fitted = _fit_tree(X, y - pred, params.max_depth, params.min_samples_leaf)
        pred = pred + params.shrinkage * fitted
        trees.append(tree)
        mse_history.append(float(np.mean((y - pred) ** 2)))
    return GbdtModel(
        base_score=base,
        trees=tuple(trees),
        shrinkage=params.shrinkage,
        feature_names=names,
        encoding=table,
        target=target,
        train_mse=tuple(mse_history),
    )


def dataset_matrix(dataset: MetaDataset, table: EncodingTable) -> np.ndarray:
    rows = [encode(r.meta, r.config, table).values for r in dataset.records]
    return np.asarray(rows, dtype=np.float64)


def train(dataset: MetaDataset, target: str = "acc", params: TrainParams | None = None) -> GbdtModel:
    """Train the performance model on a meta-dataset."""
    from .store import encoding_table_for

    if target not in METRIC_NAMES:
        raise ValueError(f"unknown target metric {target!r}; choose one of {METRIC_NAMES}")
    if len(dataset.records) < 2:
        raise InsufficientDataError(f"need at least 2 records to train, got {len(dataset.records)}")
    params = params or TrainParams()
    table = encoding_table_for(dataset)
    X = dataset_matrix(dataset, table)
    y = np.asarray([getattr(r.metrics, target) for r in dataset.records], dtype=np.float64)
    return fit_gbdt(X, y, params, feature_names=FEATURE_NAMES, encoding=table, target=target)


def _vector_values(x: FeatureVector | Sequence[float]) -> Sequence[float]:
    return x.values if isinstance(x, FeatureVector) else x


def predict(model: GbdtModel, x: FeatureVector | Sequence[float]) -> float:
    """base_score + shrinkage * sum of tree outputs for one input."""
    values = _vector_values(x)
    if len(values) != model.n_features:
        raise DimensionError(f"expected {model.n_features} features, got {len(values)}")
    return model.base_score + model.shrinkage * sum(t.predict_value(values) for t in model.trees)


def predict_matrix(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.shape[1] != model.n_features:
        raise DimensionError(f"expected {model.n_features} features, got {X.shape[1]}")
    packed = model.packed()
    if packed.n_trees == 0:
        return np.full(len(X), model.base_score)
    return _kernels.predict_batch(
        packed.feature, packed.threshold, packed.left, packed.right, packed.value,
        packed.tree_start, packed.n_trees, model.base_score, model.shrinkage, X,
    )


def evaluate(model: GbdtModel, dataset: MetaDataset, target: str | None = None) -> float:
    """Mean squared error of the model on a dataset."""
    if not dataset.records:
        raise InsufficientDataError("cannot evaluate on an empty dataset")
    target = target or model.target
    if target not in METRIC_NAMES:
        raise ValueError(f"unknown target metric {target!r}")
    X = dataset_matrix(dataset, model.encoding)
    y = np.asarray([getattr(r.metrics, target) for r in dataset.records], dtype=np.float64)
    return float(np.mean((predict_matrix(model, X) - y) ** 2))


def model_to_jsonable(model: GbdtModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "target": model.target,
        "base_score": model.base_score,
        "shrinkage": model.shrinkage,
        "constant_target": model.constant_target,
        "train_mse": list(model.train_mse),
        "feature_names": list(model.feature_names),
        "encoding": model.encoding.to_jsonable(),
        "trees": [
            {
                "feature": [n.feature for n in t.nodes],
                "threshold": [None if n.is_leaf else n.threshold for n in t.nodes],
                "left": [n.left for n in t.nodes],
                "right": [n.right for n in t.nodes],
                "value": [n.value for n in t.nodes],
                "cover": [n.cover for n in t.nodes],
            }
            for t in model.trees
        ],
    }


def save_model(model: GbdtModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_jsonable(model), indent=1), encoding="utf-8")


def model_from_jsonable(doc: dict) -> GbdtModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ModelCorruptError(f"not a {MODEL_FORMAT} document")
    trees = []
    for t in doc["trees"]:
        nodes = tuple(
            TreeNode(
                feature=int(f),
                threshold=float("nan") if thr is None else float(thr),
                left=int(l),
                right=int(r),
                value=float(v),
                cover=float(c),
            )
            for f, thr, l, r, v, c in zip(t["feature"], t["threshold"], t["left"], t["right"], t["value"], t["cover"])
        )
        tree = RegressionTree(nodes)
        tree.validate()
        trees.append(tree)
    return GbdtModel(
        base_score=float(doc["base_score"]),
        trees=tuple(trees),
        shrinkage=float(doc["shrinkage"]),
        feature_names=tuple(doc["feature_names"]),
        encoding=EncodingTable.from_jsonable(doc["encoding"]),
        target=doc["target"],
        train_mse=tuple(float(v) for v in doc["train_mse"]),
        constant_target=bool(doc.get("constant_target", False)),
    )


def load_model(path: str | Path) -> GbdtModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelCorruptError(f"model file is not valid JSON: {exc}") from None
    return model_from_jsonable(doc)
