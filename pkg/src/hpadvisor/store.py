"""Meta-dataset persistence.

The on-disk format is a UTF-8 JSON array of experiment entries; key names
and nesting are normative. A dedicated writer keeps key order stable,
applies the display rounding, and always serializes learning_rate as a
plain decimal literal.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

from .core import (
    ENTROPY_DECIMALS,
    RATIO_DECIMALS,
    SIZE_STAT_DECIMALS,
    EncodingTable,
    HyperparameterConfig,
    MetaFeatures,
    PerformanceMetrics,
    SearchSpace,
    decimal_literal,
    default_search_space,
    normalize_trainable_layers,
    validate_config,
)
from .errors import InvariantViolationError, ParseError, RangeError, SchemaError

_META_KEYS = (
    "total_images",
    "num_classes",
    "class_imbalance_ratio",
    "class_entropy",
    "mean_class_size",
    "std_class_size",
    "min_class_size",
    "max_class_size",
    "modality",
)
_CONFIG_KEYS = ("model", "learning_rate", "batch_size", "dropout_rate", "dense_units", "optimizer", "trainable_layers")
_METRIC_KEYS = ("f1", "acc", "recall", "precision", "total_training_time")
_ENTRY_KEYS = ("dataset_name", "meta", "config", "metrics")

@dataclass(frozen=True)
class ExperimentRecord:
    """One historical trial: dataset descriptors, configuration, outcome."""

    dataset_name: str
    meta: MetaFeatures
    config: HyperparameterConfig
    metrics: PerformanceMetrics
    record_id: int
    extra: tuple[tuple[str, ...], ...] = ()  # ((block, key, json-encoded value), ...)

    def validate(self, space: SearchSpace | None = None) -> None:
        if not self.dataset_name:
            raise InvariantViolationError("dataset_name", "must be non-empty")
        self.meta.validate()
        self.config.validate()
        self.metrics.validate()
        check = validate_config(self.config, space or default_search_space())
        if not check.ok:
            raise InvariantViolationError(check.violations[0].parameter, str(check.violations[0]))


@dataclass(frozen=True)
class MetaDataset:
    """Ordered collection of experiment records plus provenance."""

    records: tuple[ExperimentRecord, ...]
    source: str | None = None
    ingested_at: str | None = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def _require(entry: Mapping[str, Any], key: str, index: int) -> Any:
    if key not in entry:
        raise SchemaError("required key missing", record_index=index, field=key)
    return entry[key]


def _as_int(value: Any, field: str, index: int) -> int:
    if isinstance(value, bool):
        raise SchemaError(f"expected integer, got {value!r}", record_index=index, field=field)
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    raise SchemaError(f"expected integer, got {value!r}", record_index=index, field=field)


def _as_float(value: Any, field: str, index: int) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"expected number, got {value!r}", record_index=index, field=field)
    return float(value)


def _as_str(value: Any, field: str, index: int) -> str:
    if not isinstance(value, str):
        raise SchemaError(f"expected string, got {value!r}", record_index=index, field=field)
    return value


def _parse_meta(obj: Any, index: int) -> tuple[MetaFeatures, list[tuple[str, str, str]]]:
    if not isinstance(obj, dict):
        raise SchemaError("meta block must be an object", record_index=index, field="meta")
    for key in _META_KEYS:
        _require(obj, key, index)
    resolution = None
    if "image_resolution" in obj and obj["image_resolution"] is not None:
        raw = obj["image_resolution"]
        if not (isinstance(raw, (list, tuple)) and len(raw) == 2):
            raise SchemaError("image_resolution must be a [width, height] pair", record_index=index, field="meta.image_resolution")
        resolution = (_as_int(raw[0], "meta.image_resolution", index), _as_int(raw[1], "meta.image_resolution", index))
    meta = MetaFeatures(
        total_images=_as_int(obj["total_images"], "meta.total_images", index),
        num_classes=_as_int(obj["num_classes"], "meta.num_classes", index),
        class_imbalance_ratio=_as_float(obj["class_imbalance_ratio"], "meta.class_imbalance_ratio", index),
        class_entropy=_as_float(obj["class_entropy"], "meta.class_entropy", index),
        mean_class_size=_as_float(obj["mean_class_size"], "meta.mean_class_size", index),
        std_class_size=_as_float(obj["std_class_size"], "meta.std_class_size", index),
        min_class_size=_as_int(obj["min_class_size"], "meta.min_class_size", index),
        max_class_size=_as_int(obj["max_class_size"], "meta.max_class_size", index),
        modality=_as_str(obj["modality"], "meta.modality", index),
        image_resolution=resolution,
    )
    known = set(_META_KEYS) | {"image_resolution"}
    extras = [("meta", k, json.dumps(v)) for k, v in obj.items() if k not in known]
    return meta, extras


def _parse_config(obj: Any, index: int) -> tuple[HyperparameterConfig, list[tuple[str, str, str]]]:
    if not isinstance(obj, dict):
        raise SchemaError("config block must be an object", record_index=index, field="config")
    for key in _CONFIG_KEYS:
        _require(obj, key, index)
    trainable = normalize_trainable_layers(_as_str(obj["trainable_layers"], "config.trainable_layers", index))
    if trainable is None:
        raise SchemaError(
            f"unrecognized trainable_layers value {obj['trainable_layers']!r}",
            record_index=index,
            field="config.trainable_layers",
        )
    config = HyperparameterConfig(
        base_model=_as_str(obj["model"], "config.model", index),
        learning_rate=_as_float(obj["learning_rate"], "config.learning_rate", index),
        batch_size=_as_int(obj["batch_size"], "config.batch_size", index),
        dropout_rate=_as_float(obj["dropout_rate"], "config.dropout_rate", index),
        dense_units=_as_int(obj["dense_units"], "config.dense_units", index),
        optimizer=_as_str(obj["optimizer"], "config.optimizer", index).lower(),
        trainable_layers=trainable,
    )
    extras = [("config", k, json.dumps(v)) for k, v in obj.items() if k not in _CONFIG_KEYS]
    return config, extras


def _parse_metrics(obj: Any, index: int) -> tuple[PerformanceMetrics, list[tuple[str, str, str]]]:
    if not isinstance(obj, dict):
        raise SchemaError("metrics block must be an object", record_index=index, field="metrics")
    for key in _METRIC_KEYS:
        _require(obj, key, index)
    metrics = PerformanceMetrics(
        f1=_as_float(obj["f1"], "metrics.f1", index),
        acc=_as_float(obj["acc"], "metrics.acc", index),
        recall=_as_float(obj["recall"], "metrics.recall", index),
        precision=_as_float(obj["precision"], "metrics.precision", index),
        total_training_time=_as_float(obj["total_training_time"], "metrics.total_training_time", index),
    )
    extras = [("metrics", k, json.dumps(v)) for k, v in obj.items() if k not in _METRIC_KEYS]
    return metrics, extras


def record_from_jsonable(entry: Any, index: int, space: SearchSpace | None = None) -> ExperimentRecord:
    if not isinstance(entry, dict):
        raise SchemaError("entry must be an object", record_index=index)
    for key in _ENTRY_KEYS:
        _require(entry, key, index)
    meta, meta_extra = _parse_meta(entry["meta"], index)
    config, config_extra = _parse_config(entry["config"], index)
    metrics, metrics_extra = _parse_metrics(entry["metrics"], index)
    entry_extra = [("", k, json.dumps(v)) for k, v in entry.items() if k not in _ENTRY_KEYS]
    record = ExperimentRecord(
        dataset_name=_as_str(entry["dataset_name"], "dataset_name", index),
        meta=meta,
        config=config,
        metrics=metrics,
        record_id=index,
        extra=tuple(entry_extra + meta_extra + config_extra + metrics_extra),
    )
    try:
        record.validate(space)
    except RangeError as exc:
        raise RangeError(exc.field, exc.message, record_index=index) from None
    except InvariantViolationError as exc:
        raise SchemaError(exc.message, record_index=index, field=exc.field) from None
    return record


def load(path: str | Path, space: SearchSpace | None = None) -> MetaDataset:
    """Read and validate a meta-dataset document."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno) from None
    if not isinstance(doc, list):
        raise SchemaError("document root must be a JSON array of entries")
    records = tuple(record_from_jsonable(entry, i, space) for i, entry in enumerate(doc))
    return MetaDataset(
        records=records,
        source=str(path),
        ingested_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def _extras_for(record: ExperimentRecord, block: str) -> list[tuple[str, str]]:
    return [(k, raw) for b, k, raw in record.extra if b == block]


def _meta_jsonable_pairs(meta: MetaFeatures) -> list[tuple[str, str]]:
    pairs = [
        ("total_images", str(meta.total_images)),
        ("num_classes", str(meta.num_classes)),
        ("class_imbalance_ratio", decimal_literal(round(meta.class_imbalance_ratio, RATIO_DECIMALS))),
        ("class_entropy", decimal_literal(round(meta.class_entropy, ENTROPY_DECIMALS))),
        ("mean_class_size", decimal_literal(round(meta.mean_class_size, SIZE_STAT_DECIMALS))),
        ("std_class_size", decimal_literal(round(meta.std_class_size, SIZE_STAT_DECIMALS))),
        ("min_class_size", str(meta.min_class_size)),
        ("max_class_size", str(meta.max_class_size)),
        ("modality", json.dumps(meta.modality)),
    ]
    if meta.image_resolution is not None:
        pairs.append(("image_resolution", json.dumps(list(meta.image_resolution))))
    return pairs


def _config_jsonable_pairs(config: HyperparameterConfig) -> list[tuple[str, str]]:
    return [
        ("model", json.dumps(config.base_model)),
        ("learning_rate", decimal_literal(config.learning_rate)),
        ("batch_size", str(config.batch_size)),
        ("dropout_rate", decimal_literal(config.dropout_rate)),
        ("dense_units", str(config.dense_units)),
        ("optimizer", json.dumps(config.optimizer)),
        ("trainable_layers", json.dumps(config.trainable_layers)),
    ]


def _metrics_jsonable_pairs(metrics: PerformanceMetrics) -> list[tuple[str, str]]:
    return [
        ("f1", decimal_literal(metrics.f1)),
        ("acc", decimal_literal(metrics.acc)),
        ("recall", decimal_literal(metrics.recall)),
        ("precision", decimal_literal(metrics.precision)),
        ("total_training_time", decimal_literal(metrics.total_training_time)),
    ]


def _render_block(pairs: list[tuple[str, str]], indent: str) -> str:
    inner = ",\n".join(f'{indent}  {json.dumps(k)}: {v}' for k, v in pairs)
    return "{\n" + inner + "\n" + indent + "}"


def render_entry(record: ExperimentRecord, indent: str = "  ") -> str:
    """Serialize one record in the normative entry shape."""
    meta_pairs = _meta_jsonable_pairs(record.meta) + _extras_for(record, "meta")
    config_pairs = _config_jsonable_pairs(record.config) + _extras_for(record, "config")
    metrics_pairs = _metrics_jsonable_pairs(record.metrics) + _extras_for(record, "metrics")
    pairs = [
        ("dataset_name", json.dumps(record.dataset_name)),
        ("meta", _render_block(meta_pairs, indent + "  ")),
        ("config", _render_block(config_pairs, indent + "  ")),
        ("metrics", _render_block(metrics_pairs, indent + "  ")),
    ] + _extras_for(record, "")
    return _render_block(pairs, indent)


def dumps(dataset: MetaDataset) -> str:
    if not dataset.records:
        return "[]\n"
    body = ",\n".join("  " + render_entry(r) for r in dataset.records)
    return "[\n" + body + "\n]\n"


def save(dataset: MetaDataset, path: str | Path) -> None:
    """Write the dataset; load(save(d)) is field-identical up to rounding."""
    Path(path).write_text(dumps(dataset), encoding="utf-8")


def append(dataset: MetaDataset, record: ExperimentRecord, space: SearchSpace | None = None) -> MetaDataset:
    """Return a new dataset with the record at the tail, next ordinal id."""
    try:
        record.validate(space)
    except (RangeError, InvariantViolationError) as exc:
        raise SchemaError(exc.message, field=exc.field) from None
    next_id = dataset.records[-1].record_id + 1 if dataset.records else 0
    return MetaDataset(
        records=dataset.records + (replace(record, record_id=next_id),),
        source=dataset.source,
        ingested_at=dataset.ingested_at,
    )


def encoding_table_for(dataset: MetaDataset) -> EncodingTable:
    """Categorical codes in first-seen order over the dataset's records."""
    def observations():
        for record in dataset.records:
            yield "modality", record.meta.modality
            yield "base_model", record.config.base_model
            yield "optimizer", record.config.optimizer
            yield "trainable_layers", record.config.trainable_layers

    return EncodingTable.from_observations(observations())
