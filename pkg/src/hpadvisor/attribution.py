"""Exact feature attributions for the tree ensemble, plus aggregation.

Shapley values use the tree-path-dependent formulation: conditional
expectations are weighted by per-node training covers stored in the
model, so no background dataset is needed. Positive values push the
predicted metric above the base value.

Per-record attributions are grouped by feature value and averaged into a
global summary; Pearson coefficients give the direction of numeric
effects; a deterministic renderer turns the summary into prompt text.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .core import (
    CATEGORICAL_FEATURES,
    CONFIG_NUMERIC_FEATURES,
    FEATURE_NAMES,
    FeatureVector,
    decimal_literal,
    feature_value,
)
from .errors import DimensionError, InsufficientDataError, ModelCorruptError
from .gbdt import GbdtModel, dataset_matrix, predict_matrix
from .store import MetaDataset

LOCAL_ACCURACY_TOL = 1e-9


@dataclass(frozen=True)
class ShapAttribution:
    """Per-feature contributions for one prediction."""

    phi: tuple[float, ...]
    base_value: float
    prediction: float

    def check_local_accuracy(self, tol: float = LOCAL_ACCURACY_TOL) -> float:
        gap = abs(self.base_value + sum(self.phi) - self.prediction)
        if gap > tol:
            raise ModelCorruptError(f"local accuracy violated by {gap:.3e}")
        return gap


@dataclass(frozen=True)
class FeatureGroup:
    value: str | float
    mean_shap: float
    support: int


@dataclass(frozen=True)
class FeatureSummary:
    name: str
    mean_abs_shap: float
    groups: tuple[FeatureGroup, ...]      # empty for continuous meta-features
    pearson_r: float | None = None        # None: categorical, or undefined
    pearson_undefined: bool = False       # True when numeric but zero-variance


@dataclass(frozen=True)
class ShapSummary:
    target: str
    n_records: int
    features: tuple[FeatureSummary, ...]  # ordered by mean |SHAP| descending


@dataclass(frozen=True)
class LocalFeature:
    name: str
    value: str | float
    shap: float


@dataclass(frozen=True)
class LocalTopFeatures:
    entries: tuple[LocalFeature, ...]


def _as_matrix_row(model: GbdtModel, x: FeatureVector | Sequence[float]) -> np.ndarray:
    values = x.values if isinstance(x, FeatureVector) else tuple(x)
    if len(values) != model.n_features:
        raise DimensionError(f"expected {model.n_features} features, got {len(values)}")
    return np.asarray([values], dtype=np.float64)


def _phi_matrix(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    packed = model.packed()
    if packed.n_trees == 0:
        return np.zeros((len(X), model.n_features))
    if np.any(packed.cover <= 0):
        raise ModelCorruptError("tree with non-positive cover")
    return _kernels.shap_matrix(
        packed.feature, packed.threshold, packed.left, packed.right, packed.value, packed.cover,
        packed.tree_start, packed.n_trees, model.shrinkage,
        np.ascontiguousarray(X, dtype=np.float64),
        packed.buffer_size(), packed.stack_capacity(),
    )


def tree_shap(model: GbdtModel, x: FeatureVector | Sequence[float]) -> ShapAttribution:
    """Exact Shapley values for one input; base + sum(phi) equals predict."""
    X = _as_matrix_row(model, x)
    phi = _phi_matrix(model, X)[0]
    return ShapAttribution(
        phi=tuple(float(v) for v in phi),
        base_value=model.expectation(),
        prediction=float(predict_matrix(model, X)[0]),
    )


def explain_dataset(model: GbdtModel, dataset: MetaDataset) -> list[ShapAttribution]:
    """One attribution per record, in record order."""
    if not dataset.records:
        raise InsufficientDataError("cannot explain an empty dataset")
    X = dataset_matrix(dataset, model.encoding)
    if X.shape[1] != model.n_features:
        raise DimensionError(f"expected {model.n_features} features, got {X.shape[1]}")
    phi = _phi_matrix(model, X)
    predictions = predict_matrix(model, X)
    base = model.expectation()
    return [
        ShapAttribution(phi=tuple(float(v) for v in phi[i]), base_value=base, prediction=float(predictions[i]))
        for i in range(len(X))
    ]


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Product-moment correlation; None when either side has zero variance."""
    if len(xs) != len(ys):
        raise DimensionError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise DimensionError("need at least 2 points")
    n = len(xs)
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    syy = math.fsum((y - my) ** 2 for y in ys)
    if sxx == 0.0 or syy == 0.0:
        return None
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    return max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))


def aggregate(attributions: Sequence[ShapAttribution], records: Sequence, target: str = "acc") -> ShapSummary:
    """Group contributions by feature value and average them.

    Categorical features group by label and discrete config numerics by
    exact value; continuous meta-features are summarized by correlation
    only, since grouping on them is degenerate.
    """
    if len(attributions) != len(records):
        raise DimensionError(f"{len(attributions)} attributions for {len(records)} records")
    if not attributions:
        raise DimensionError("nothing to aggregate")
    names = FEATURE_NAMES
    summaries = []
    for j, name in enumerate(names):
        phis = [a.phi[j] for a in attributions]
        raw = [feature_value(r.meta, r.config, name) for r in records]
        mean_abs = math.fsum(abs(p) for p in phis) / len(phis)
        groups: tuple[FeatureGroup, ...] = ()
        r_value: float | None = None
        undefined = False
        if name in CATEGORICAL_FEATURES or name in CONFIG_NUMERIC_FEATURES:
            groups = _group_means(raw, phis)
        if name not in CATEGORICAL_FEATURES:
            r_value = pearson([float(v) for v in raw], phis)
            undefined = r_value is None
        summaries.append(
            FeatureSummary(name=name, mean_abs_shap=mean_abs, groups=groups,
                           pearson_r=r_value, pearson_undefined=undefined)
        )
    order = sorted(range(len(summaries)), key=lambda i: (-summaries[i].mean_abs_shap, i))
    return ShapSummary(target=target, n_records=len(records), features=tuple(summaries[i] for i in order))


def _group_means(raw: list, phis: list[float]) -> tuple[FeatureGroup, ...]:
    buckets: dict = {}
    for value, phi in zip(raw, phis):
        buckets.setdefault(value, []).append(phi)
    groups = [
        FeatureGroup(value=value, mean_shap=math.fsum(vals) / len(vals), support=len(vals))
        for value, vals in buckets.items()
    ]
    groups.sort(key=lambda g: (-g.mean_shap, str(g.value)))
    return tuple(groups)


def top_local_features(
    attribution: ShapAttribution,
    names: Sequence[str],
    values: Sequence[str | float],
    k: int = 3,
) -> LocalTopFeatures:
    """The k largest |SHAP| entries, ties broken by feature order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not (len(names) == len(values) == len(attribution.phi)):
        raise DimensionError("names, values, and phi must be parallel")
    order = sorted(range(len(names)), key=lambda i: (-abs(attribution.phi[i]), i))
    picked = order[: min(k, len(names))]
    return LocalTopFeatures(
        entries=tuple(LocalFeature(names[i], values[i], attribution.phi[i]) for i in picked)
    )


def local_top_for_record(model: GbdtModel, attribution: ShapAttribution, record, k: int = 3) -> LocalTopFeatures:
    """Top-k local features with display values taken from the record."""
    names = model.feature_names
    values = [feature_value(record.meta, record.config, name) for name in names]
    return top_local_features(attribution, names, values, k=k)


# --- deterministic summary rendering ---

FEATURE_DISPLAY_NAMES = {
    "base_model": "Model Architecture",
    "learning_rate": "Learning Rate",
    "batch_size": "Batch Size",
    "dropout_rate": "Dropout Rate",
    "dense_units": "Dense Units",
    "optimizer": "Optimizer",
    "trainable_layers": "Fine-tuning Strategy",
    "modality": "Imaging Modality",
    "total_images": "Total Images",
    "num_classes": "Number of Classes",
    "class_imbalance_ratio": "Class Imbalance Ratio",
    "class_entropy": "Class Entropy",
    "mean_class_size": "Mean Class Size",
    "std_class_size": "Class Size Std",
    "min_class_size": "Min Class Size",
    "max_class_size": "Max Class Size",
    "resolution_width": "Image Width",
    "resolution_height": "Image Height",
}

TARGET_DISPLAY_NAMES = {
    "acc": "Test Accuracy",
    "f1": "F1 Score",
    "recall": "Recall",
    "precision": "Precision",
    "total_training_time": "Training Time",
}


def _display_value(value: str | float) -> str:
    if isinstance(value, str):
        return value
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return decimal_literal(float(value))


def _group_phrase(groups: Sequence[FeatureGroup]) -> str:
    positives = [g for g in groups if g.mean_shap > 0][:2]
    negatives = sorted((g for g in groups if g.mean_shap < 0), key=lambda g: (g.mean_shap, str(g.value)))[:2]
    if not positives and not negatives:
        return "No measurable effect across the records."
    if positives:
        listed = " and ".join(f"{_display_value(g.value)} ({g.mean_shap:+.3f})" for g in positives)
        verb = "show strong positive effects" if len(positives) > 1 else "shows a strong positive effect"
        head = f"{listed} {verb}"
    else:
        head = "no value shows a positive effect"
    if negatives:
        listed = " and ".join(f"{_display_value(g.value)} ({g.mean_shap:+.3f})" for g in negatives)
        verb = "perform poorly" if len(negatives) > 1 else "performs poorly"
        return f"{head}, while {listed} {verb}."
    return head + "."


def _correlation_phrase(summary: FeatureSummary, target_word: str) -> str:
    if summary.pearson_undefined:
        return "Correlation undefined (constant values)."
    assert summary.pearson_r is not None
    direction = "raise" if summary.pearson_r >= 0 else "lower"
    return f"Correlation between value and contribution: r = {summary.pearson_r:+.2f} (higher values tend to {direction} predicted {target_word})."


def render_summary(summary: ShapSummary) -> str:
    """Markdown text for the prompt; identical input gives identical bytes."""
    target_word = summary.target
    lines = [
        f"# SHAP Analysis Summary: Hyperparameter Effects on {TARGET_DISPLAY_NAMES.get(summary.target, summary.target)}",
        "",
        f"Derived from {summary.n_records} historical experiment records. Positive values push",
        f"the predicted {target_word} above the baseline; negative values push it below.",
        "",
    ]
    for feat in summary.features:
        display = FEATURE_DISPLAY_NAMES.get(feat.name, feat.name)
        parts = []
        if feat.groups:
            parts.append(_group_phrase(feat.groups))
        if feat.name not in CATEGORICAL_FEATURES:
            parts.append(_correlation_phrase(feat, target_word))
        if not parts:
            parts.append("No grouped values.")
        lines.append(f"**{display}**: " + " ".join(parts))
    return "\n".join(lines) + "\n"
