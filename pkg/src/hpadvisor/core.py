"""Domain types for the recommendation engine.

Holds dataset meta-features, hyperparameter configurations, the search
space they must live in, and the fixed-order numeric encoding consumed by
the performance model. Everything here is an immutable value object;
operations are pure functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from typing import Any, Iterable, Mapping

from .errors import (
    EmptyDatasetError,
    InvalidClassCountError,
    InvariantViolationError,
    RangeError,
    UnknownCategoryError,
)

# Display rounding used when records are serialized (full precision is kept
# in memory). Tolerances are the half-ulp of that rounding plus a cushion
# for binary representation error, used when re-validating reloaded records.
RATIO_DECIMALS = 2
ENTROPY_DECIMALS = 4
SIZE_STAT_DECIMALS = 2
RATIO_TOL = 0.5 * 10.0 ** -RATIO_DECIMALS + 1e-9
ENTROPY_TOL = 0.5 * 10.0 ** -ENTROPY_DECIMALS + 1e-9
SIZE_STAT_TOL = 0.5 * 10.0 ** -SIZE_STAT_DECIMALS + 1e-9

# Sentinel written into the encoded vector when a record has no resolution.
RESOLUTION_SENTINEL = 0.0

# Fixed encoding order: meta-features first (declaration order), then the
# hyperparameter configuration. Frozen with any trained model.
FEATURE_NAMES: tuple[str, ...] = (
    "total_images",
    "num_classes",
    "class_imbalance_ratio",
    "class_entropy",
    "mean_class_size",
    "std_class_size",
    "min_class_size",
    "max_class_size",
    "modality",
    "resolution_width",
    "resolution_height",
    "base_model",
    "learning_rate",
    "batch_size",
    "dropout_rate",
    "dense_units",
    "optimizer",
    "trainable_layers",
)

CATEGORICAL_FEATURES: tuple[str, ...] = ("modality", "base_model", "optimizer", "trainable_layers")

# Discrete numeric dimensions of the search space; the only numeric features
# whose SHAP contributions are aggregated by exact value.
CONFIG_NUMERIC_FEATURES: tuple[str, ...] = ("learning_rate", "batch_size", "dropout_rate", "dense_units")

CONFIG_PARAMETERS: tuple[str, ...] = (
    "base_model",
    "learning_rate",
    "batch_size",
    "dropout_rate",
    "dense_units",
    "optimizer",
    "trainable_layers",
)


def decimal_literal(x: float) -> str:
    """Render a float as a plain decimal literal (never scientific notation).

    The result parses back to the identical double.
    """
    s = repr(float(x))
    if "e" not in s and "E" not in s:
        return s
    return format(Decimal(s), "f")


# Accepted spellings of the fine-tuning strategy, normalized to the short form.
_TRAINABLE_ALIASES = {
    "feature_extraction": "feature_extraction",
    "feature extraction": "feature_extraction",
    "feature extraction only": "feature_extraction",
    "feature-extraction": "feature_extraction",
    "last_10": "last_10",
    "last 10": "last_10",
    "last 10 layers": "last_10",
    "partial fine-tuning (10 layers)": "last_10",
    "last_30": "last_30",
    "last 30": "last_30",
    "last 30 layers": "last_30",
    "partial fine-tuning (30 layers)": "last_30",
    "full": "full",
    "full fine-tuning": "full",
    "full_fine_tuning": "full",
}


def normalize_trainable_layers(value: str) -> str | None:
    """Map any accepted surface form to the canonical short label."""
    return _TRAINABLE_ALIASES.get(str(value).strip().lower())


@dataclass(frozen=True)
class MetaFeatures:
    """Statistical descriptors of one classification dataset."""

    total_images: int
    num_classes: int
    class_imbalance_ratio: float
    class_entropy: float
    mean_class_size: float
    std_class_size: float
    min_class_size: int
    max_class_size: int
    modality: str
    image_resolution: tuple[int, int] | None = None

    def validate(self) -> None:
        """Check structural invariants, tolerating display rounding."""
        if self.num_classes < 1:
            raise InvariantViolationError("num_classes", "must be >= 1")
        if self.min_class_size < 1:
            raise InvariantViolationError("min_class_size", "class counts must be >= 1")
        if self.max_class_size < self.min_class_size:
            raise InvariantViolationError("max_class_size", "must be >= min_class_size")
        if self.total_images < self.num_classes:
            raise InvariantViolationError("total_images", "fewer images than classes")
        if not (self.min_class_size - SIZE_STAT_TOL <= self.mean_class_size <= self.max_class_size + SIZE_STAT_TOL):
            raise InvariantViolationError("mean_class_size", "must lie between min and max class size")
        expected_mean = self.total_images / self.num_classes
        if abs(self.mean_class_size - expected_mean) > SIZE_STAT_TOL:
            raise InvariantViolationError("mean_class_size", f"inconsistent with total/num_classes ({expected_mean:.4f})")
        expected_ratio = self.max_class_size / self.min_class_size
        if abs(self.class_imbalance_ratio - expected_ratio) > RATIO_TOL:
            raise InvariantViolationError("class_imbalance_ratio", f"inconsistent with max/min ({expected_ratio:.4f})")
        if self.class_entropy < -ENTROPY_TOL:
            raise InvariantViolationError("class_entropy", "must be >= 0")
        if self.class_entropy > math.log2(self.num_classes) + ENTROPY_TOL:
            raise InvariantViolationError("class_entropy", f"exceeds log2(num_classes) = {math.log2(self.num_classes):.4f}")
        if self.std_class_size < 0:
            raise InvariantViolationError("std_class_size", "must be >= 0")
        if self.std_class_size > (self.max_class_size - self.min_class_size) / 2 + SIZE_STAT_TOL:
            raise InvariantViolationError("std_class_size", "exceeds (max-min)/2, impossible for a population std")
        if not self.modality:
            raise InvariantViolationError("modality", "must be non-empty")
        if self.image_resolution is not None:
            w, h = self.image_resolution
            if w < 1 or h < 1:
                raise InvariantViolationError("image_resolution", "dimensions must be >= 1")


@dataclass(frozen=True)
class HyperparameterConfig:
    """One point of the search space."""

    base_model: str
    learning_rate: float
    batch_size: int
    dropout_rate: float
    dense_units: int
    optimizer: str
    trainable_layers: str

    def validate(self) -> None:
        """Check range invariants that hold regardless of the search space."""
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise RangeError("dropout_rate", f"{self.dropout_rate} outside [0, 1]")
        if self.learning_rate <= 0:
            raise InvariantViolationError("learning_rate", "must be > 0")
        if self.batch_size < 1:
            raise InvariantViolationError("batch_size", "must be >= 1")
        if self.dense_units < 1:
            raise InvariantViolationError("dense_units", "must be >= 1")
        for field in ("base_model", "optimizer", "trainable_layers"):
            if not getattr(self, field):
                raise InvariantViolationError(field, "must be non-empty")


@dataclass(frozen=True)
class PerformanceMetrics:
    """Final evaluation results of one training run."""

    f1: float
    acc: float
    recall: float
    precision: float
    total_training_time: float

    RATE_FIELDS = ("f1", "acc", "recall", "precision")

    def validate(self) -> None:
        for field in self.RATE_FIELDS:
            v = getattr(self, field)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and 0.0 <= v <= 1.0):
                raise RangeError(field, f"{v} outside [0, 1]")
        if not (math.isfinite(self.total_training_time) and self.total_training_time > 0):
            raise InvariantViolationError("total_training_time", "must be finite and > 0")


METRIC_NAMES: tuple[str, ...] = ("f1", "acc", "recall", "precision", "total_training_time")


@dataclass(frozen=True)
class SearchSpace:
    """Admissible values per hyperparameter."""

    base_model: tuple[str, ...]
    learning_rate: tuple[float, ...]
    batch_size: tuple[int, ...]
    dropout_rate: tuple[float, ...]
    dense_units: tuple[int, ...]
    optimizer: tuple[str, ...]
    trainable_layers: tuple[str, ...]

    def validate(self) -> None:
        for param in CONFIG_PARAMETERS:
            values = getattr(self, param)
            if not values:
                raise InvariantViolationError(param, "value list must be non-empty")
            if len(set(values)) != len(values):
                raise InvariantViolationError(param, "value list has duplicates")
            if param in ("learning_rate", "batch_size", "dropout_rate", "dense_units"):
                if any(a >= b for a, b in zip(values, values[1:])):
                    raise InvariantViolationError(param, "numeric values must be strictly sorted")

    def values_for(self, param: str) -> tuple:
        if param not in CONFIG_PARAMETERS:
            raise KeyError(param)
        return getattr(self, param)


def default_search_space() -> SearchSpace:
    """The seven-backbone transfer-learning search space."""
    return SearchSpace(
        base_model=(
            "Xception",
            "EfficientNetB5",
            "ResNet50",
            "InceptionV3",
            "NASNetMobile",
            "DenseNet121",
            "EfficientNetB0",
        ),
        learning_rate=(1e-5, 1e-4, 1e-3),
        batch_size=(16, 32, 64),
        dropout_rate=(0.3, 0.4, 0.5),
        dense_units=(512, 1024, 1536),
        optimizer=("adam", "sgd", "rmsprop"),
        trainable_layers=("feature_extraction", "last_10", "last_30", "full"),
    )


@dataclass(frozen=True)
class Violation:
    parameter: str
    value: Any
    allowed: tuple

    def __str__(self) -> str:
        allowed = ", ".join(str(v) for v in self.allowed)
        return f"{self.parameter}={self.value!r} not in [{allowed}]"


@dataclass(frozen=True)
class ConfigValidation:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_config(config: HyperparameterConfig, space: SearchSpace) -> ConfigValidation:
    """Check membership of every field in the space; never raises."""
    violations = []
    for param in CONFIG_PARAMETERS:
        value = getattr(config, param)
        if value not in space.values_for(param):
            violations.append(Violation(param, value, space.values_for(param)))
    return ConfigValidation(tuple(violations))


def compute_meta_features(
    class_counts: Mapping[str, int],
    modality: str,
    resolution: tuple[int, int] | None = None,
) -> MetaFeatures:
    """Derive dataset descriptors from a per-class image-count manifest.

    Entropy is base-2 Shannon entropy of the class distribution; the
    standard deviation is the population form (divide by N); the imbalance
    ratio is max over min class size. Full precision is returned, display
    rounding happens only at serialization.
    """
    if not class_counts:
        raise EmptyDatasetError("class_counts is empty")
    counts = []
    for label, count in class_counts.items():
        if isinstance(count, bool) or not isinstance(count, int):
            raise InvalidClassCountError(f"class {label!r}: count must be an integer, got {count!r}")
        if count < 1:
            raise InvalidClassCountError(f"class {label!r}: count must be >= 1, got {count}")
        counts.append(count)
    counts.sort()  # canonical order: results are bitwise label/order independent
    total = sum(counts)
    n = len(counts)
    entropy = -math.fsum((c / total) * math.log2(c / total) for c in counts)
    mean = total / n
    std = math.sqrt(math.fsum((c - mean) ** 2 for c in counts) / n)
    return MetaFeatures(
        total_images=total,
        num_classes=n,
        class_imbalance_ratio=max(counts) / min(counts),
        class_entropy=entropy,
        mean_class_size=mean,
        std_class_size=std,
        min_class_size=min(counts),
        max_class_size=max(counts),
        modality=modality,
        image_resolution=resolution,
    )


class EncodingTable:
    """Integer codes for categorical labels, frozen with a trained model.

    Codes are assigned in first-seen order at ingestion and form a
    bijection per feature.
    """

    def __init__(self, codes: Mapping[str, Mapping[str, int]]):
        self._codes: dict[str, dict[str, int]] = {f: dict(m) for f, m in codes.items()}
        for feature, mapping in self._codes.items():
            if len(set(mapping.values())) != len(mapping):
                raise InvariantViolationError(feature, "encoding codes must be distinct per feature")

    @classmethod
    def from_observations(cls, observations: Iterable[tuple[str, str]]) -> "EncodingTable":
        """Build a table from (feature, label) pairs in first-seen order."""
        codes: dict[str, dict[str, int]] = {f: {} for f in CATEGORICAL_FEATURES}
        for feature, label in observations:
            mapping = codes.setdefault(feature, {})
            if label not in mapping:
                mapping[label] = len(mapping)
        return cls(codes)

    def code(self, feature: str, label: str) -> int:
        try:
            return self._codes[feature][label]
        except KeyError:
            raise UnknownCategoryError(feature, label) from None

    def label(self, feature: str, code: int) -> str:
        for label, c in self._codes.get(feature, {}).items():
            if c == code:
                return label
        raise UnknownCategoryError(feature, f"<code {code}>")

    def labels(self, feature: str) -> tuple[str, ...]:
        return tuple(self._codes.get(feature, {}))

    def to_jsonable(self) -> dict[str, dict[str, int]]:
        return {f: dict(m) for f, m in self._codes.items()}

    @classmethod
    def from_jsonable(cls, obj: Mapping[str, Mapping[str, int]]) -> "EncodingTable":
        return cls(obj)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, EncodingTable) and self._codes == other._codes

    def __repr__(self) -> str:
        return f"EncodingTable({self._codes!r})"


@dataclass(frozen=True)
class FeatureVector:
    """Fixed-order numeric representation of (meta-features, config)."""

    values: tuple[float, ...]
    names: tuple[str, ...]
    table: EncodingTable

    def __post_init__(self):
        if len(self.values) != len(self.names):
            raise InvariantViolationError("values", f"{len(self.values)} values for {len(self.names)} names")

    def as_list(self) -> list[float]:
        return list(self.values)


def encode(meta: MetaFeatures, config: HyperparameterConfig, table: EncodingTable) -> FeatureVector:
    """Encode one (meta, config) pair into the model's fixed feature order.

    Numerics pass through verbatim; categoricals become integer codes from
    the table; a missing resolution becomes the sentinel value.
    """
    if meta.image_resolution is None:
        res_w, res_h = RESOLUTION_SENTINEL, RESOLUTION_SENTINEL
    else:
        res_w, res_h = float(meta.image_resolution[0]), float(meta.image_resolution[1])
    values = (
        float(meta.total_images),
        float(meta.num_classes),
        float(meta.class_imbalance_ratio),
        float(meta.class_entropy),
        float(meta.mean_class_size),
        float(meta.std_class_size),
        float(meta.min_class_size),
        float(meta.max_class_size),
        float(table.code("modality", meta.modality)),
        res_w,
        res_h,
        float(table.code("base_model", config.base_model)),
        float(config.learning_rate),
        float(config.batch_size),
        float(config.dropout_rate),
        float(config.dense_units),
        float(table.code("optimizer", config.optimizer)),
        float(table.code("trainable_layers", config.trainable_layers)),
    )
    return FeatureVector(values=values, names=FEATURE_NAMES, table=table)


def feature_value(meta: MetaFeatures, config: HyperparameterConfig, name: str) -> float | str:
    """Raw (un-encoded) value of one named feature; labels for categoricals."""
    if name == "modality":
        return meta.modality
    if name in ("base_model", "optimizer", "trainable_layers"):
        return getattr(config, name)
    if name == "resolution_width":
        return float(meta.image_resolution[0]) if meta.image_resolution else RESOLUTION_SENTINEL
    if name == "resolution_height":
        return float(meta.image_resolution[1]) if meta.image_resolution else RESOLUTION_SENTINEL
    if name in CONFIG_NUMERIC_FEATURES:
        return float(getattr(config, name))
    return float(getattr(meta, name))
