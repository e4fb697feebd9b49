"""Prompt assembly and strict parsing of the model's reply.

The rendered prompt is referentially transparent: the same inputs always
produce the same bytes, and the template is part of the repo contract
(golden-file tested). The reply parser accepts a reasoning preamble and
code fences, locates the first balanced JSON object, and enforces the
seven-key wire contract before validating values against the search
space.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any

from .core import (
    CONFIG_PARAMETERS,
    HyperparameterConfig,
    MetaFeatures,
    SearchSpace,
    decimal_literal,
    normalize_trainable_layers,
    validate_config,
)
from .errors import (
    EmptyContextError,
    FormatError,
    MissingExplanationError,
    OutOfSearchSpaceError,
    ResponseKeyError,
)
from .retrieval import RetrievedContext

REQUIRED_KEYS: tuple[str, ...] = CONFIG_PARAMETERS
KEY_LIST_LITERAL = "base_model, learning_rate, batch_size, dropout_rate, dense_units, optimizer, trainable_layers"

OUTPUT_SKELETON = """{
  "base_model": "...",
  "learning_rate": ...,
  "batch_size": ...,
  "dropout_rate": ...,
  "dense_units": ...,
  "optimizer": "...",
  "trainable_layers": "..."
}"""

CORE_INSTRUCTION = """You are an assistant specialized in selecting pretrained backbones and training hyperparameters for image classification. Base every recommendation strictly on the evidence supplied below: the dataset characteristics, the attribution summary, and the retrieved historical experiments. Do not invent values that never occur in that evidence.

Important note: the historical experiments were sampled at random, not chosen by an optimal strategy. Individual runs may be weak; look for patterns and trends across several experiments instead of copying any single one."""

TASK_INSTRUCTION = """Your task: analyze the dataset characteristics above and recommend one optimized configuration for it, grounded in the most similar historical experiments. Weigh the attribution summary and the historical experiments together; neither source alone should dominate the choice."""

EXPERIMENT_HEADER = "### Experiment"


@dataclass(frozen=True)
class PromptBundle:
    """The assembled prompt and its individually addressable blocks."""

    core_instruction: str
    dataset_block: str
    shap_block: str
    context_block: str
    format_block: str
    text: str


@dataclass(frozen=True)
class Provenance:
    model: str
    temperature: float
    latency_s: float


@dataclass(frozen=True)
class Recommendation:
    config: HyperparameterConfig
    explanation: str
    raw: str
    provenance: Provenance | None = None


def _meta_line(meta: MetaFeatures) -> str:
    obj: dict[str, Any] = {
        "total_images": meta.total_images,
        "num_classes": meta.num_classes,
        "class_imbalance_ratio": round(meta.class_imbalance_ratio, 2),
        "class_entropy": round(meta.class_entropy, 4),
        "mean_class_size": round(meta.mean_class_size, 2),
        "std_class_size": round(meta.std_class_size, 2),
        "min_class_size": meta.min_class_size,
        "max_class_size": meta.max_class_size,
        "modality": meta.modality,
    }
    if meta.image_resolution is not None:
        obj["image_resolution"] = list(meta.image_resolution)
    return json.dumps(obj)


def _config_line(config: HyperparameterConfig) -> str:
    parts = [
        f'"model": {json.dumps(config.base_model)}',
        f'"learning_rate": {decimal_literal(config.learning_rate)}',
        f'"batch_size": {config.batch_size}',
        f'"dropout_rate": {decimal_literal(config.dropout_rate)}',
        f'"dense_units": {config.dense_units}',
        f'"optimizer": {json.dumps(config.optimizer)}',
        f'"trainable_layers": {json.dumps(config.trainable_layers)}',
    ]
    return "{" + ", ".join(parts) + "}"


def _metrics_line(metrics) -> str:
    return json.dumps(
        {
            "f1": metrics.f1,
            "acc": metrics.acc,
            "recall": metrics.recall,
            "precision": metrics.precision,
            "total_training_time": metrics.total_training_time,
        }
    )


def _value_text(value: str | float) -> str:
    if isinstance(value, str):
        return value
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return decimal_literal(float(value))


def _context_block(context: RetrievedContext) -> str:
    sections = []
    for i, entry in enumerate(context.entries, start=1):
        influences = "; ".join(
            f"{f.name}={_value_text(f.value)} ({f.shap:+.4f})" for f in entry.top_features.entries
        )
        sections.append(
            "\n".join(
                [
                    f"{EXPERIMENT_HEADER} {i} (distance {entry.distance:.4f})",
                    f"dataset: {entry.record.dataset_name}",
                    f"meta: {_meta_line(entry.record.meta)}",
                    f"config: {_config_line(entry.record.config)}",
                    f"metrics: {_metrics_line(entry.record.metrics)}",
                    f"top_local_shap: {influences}",
                ]
            )
        )
    return "\n\n".join(sections)


def _space_lines(space: SearchSpace) -> str:
    def fmt(v):
        return _value_text(v) if not isinstance(v, str) else v

    return "\n".join(
        f"- {param}: {', '.join(fmt(v) for v in space.values_for(param))}" for param in CONFIG_PARAMETERS
    )


def _format_block(space: SearchSpace) -> str:
    return "\n".join(
        [
            "Use exactly the following keys in your recommendation:",
            KEY_LIST_LITERAL,
            "",
            "Every value must come from the admissible search space:",
            _space_lines(space),
            "",
            "Output format (strict): first a single JSON object, then the explanation.",
            OUTPUT_SKELETON,
            "",
            "Explanation:",
            "[plain-text reasoning tied to the dataset characteristics, the attribution summary, and the retrieved experiments]",
        ]
    )


def build_prompt(
    meta: MetaFeatures,
    summary_text: str,
    context: RetrievedContext,
    space: SearchSpace,
) -> PromptBundle:
    """Assemble the recommendation prompt from its five blocks."""
    if not context.entries:
        raise EmptyContextError("no retrieved experiments to include")
    if not summary_text.strip():
        raise ValueError("summary_text must be non-empty")
    dataset_block = _meta_line(meta)
    context_block = _context_block(context)
    format_block = _format_block(space)
    text = "\n\n".join(
        [
            CORE_INSTRUCTION,
            "Dataset characteristics:\n" + dataset_block,
            "Attribution summary:\n" + summary_text.rstrip("\n"),
            "Retrieved experiments:\n\n" + context_block,
            TASK_INSTRUCTION,
            format_block,
        ]
    ) + "\n"
    return PromptBundle(
        core_instruction=CORE_INSTRUCTION,
        dataset_block=dataset_block,
        shap_block=summary_text,
        context_block=context_block,
        format_block=format_block,
        text=text,
    )


def find_json_object(text: str) -> tuple[dict, int, int] | None:
    """First balanced {...} that parses as a JSON object, or None.

    Scans every opening brace, honoring string literals and escapes, so a
    reasoning preamble or code fence ahead of the object is harmless.
    """
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for pos in range(start, len(text)):
            ch = text[pos]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    candidate = text[start : pos + 1]
                    try:
                        obj = json.loads(candidate)
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict):
                        return obj, start, pos
                    break
        start = text.find("{", start + 1)
    return None


def _coerce_float(value: Any, param: str) -> float:
    if isinstance(value, bool):
        raise OutOfSearchSpaceError((param,), f"{param}: {value!r} is not a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value.strip())
        except ValueError:
            pass
    raise OutOfSearchSpaceError((param,), f"{param}: {value!r} is not a number")


def _coerce_int(value: Any, param: str) -> int:
    f = _coerce_float(value, param)
    if not f.is_integer():
        raise OutOfSearchSpaceError((param,), f"{param}: {value!r} is not an integer")
    return int(f)


def _coerce_str(value: Any, param: str) -> str:
    if isinstance(value, str) and value.strip():
        return value.strip()
    raise OutOfSearchSpaceError((param,), f"{param}: {value!r} is not a usable name")


_EXPLANATION_MARKER = re.compile(r"explanation\s*:", re.IGNORECASE)


def _extract_explanation(tail: str) -> str:
    match = _EXPLANATION_MARKER.search(tail)
    if match:
        tail = tail[match.end():]
    lines = [line for line in tail.splitlines() if line.strip() != "```"]
    return "\n".join(lines).strip()


def parse_recommendation(raw: str, space: SearchSpace) -> Recommendation:
    """Parse a strict-JSON-then-explanation reply into a validated config."""
    if not raw.strip():
        raise FormatError("empty reply")
    found = find_json_object(raw)
    if found is None:
        raise FormatError("no JSON object found in reply")
    obj, _start, end = found
    got = set(obj)
    want = set(REQUIRED_KEYS)
    if got != want:
        missing = tuple(sorted(want - got))
        extra = tuple(sorted(got - want))
        raise ResponseKeyError(missing, extra)
    trainable_raw = _coerce_str(obj["trainable_layers"], "trainable_layers")
    trainable = normalize_trainable_layers(trainable_raw)
    if trainable is None:
        trainable = trainable_raw  # leave as-is; space validation reports it
    config = HyperparameterConfig(
        base_model=_coerce_str(obj["base_model"], "base_model"),
        learning_rate=_coerce_float(obj["learning_rate"], "learning_rate"),
        batch_size=_coerce_int(obj["batch_size"], "batch_size"),
        dropout_rate=_coerce_float(obj["dropout_rate"], "dropout_rate"),
        dense_units=_coerce_int(obj["dense_units"], "dense_units"),
        optimizer=_coerce_str(obj["optimizer"], "optimizer").lower(),
        trainable_layers=trainable,
    )
    check = validate_config(config, space)
    if not check.ok:
        params = tuple(v.parameter for v in check.violations)
        raise OutOfSearchSpaceError(params, "; ".join(str(v) for v in check.violations))
    explanation = _extract_explanation(raw[end + 1 :])
    if not explanation:
        raise MissingExplanationError("no explanation text after the JSON object")
    return Recommendation(config=config, explanation=explanation, raw=raw)


def render_config_json(config: HyperparameterConfig) -> str:
    """Serialize a config in the reply's wire shape (seven keys)."""
    return "\n".join(
        [
            "{",
            f'  "base_model": {json.dumps(config.base_model)},',
            f'  "learning_rate": {decimal_literal(config.learning_rate)},',
            f'  "batch_size": {config.batch_size},',
            f'  "dropout_rate": {decimal_literal(config.dropout_rate)},',
            f'  "dense_units": {config.dense_units},',
            f'  "optimizer": {json.dumps(config.optimizer)},',
            f'  "trainable_layers": {json.dumps(config.trainable_layers)}',
            "}",
        ]
    )


def config_wire_jsonable(config: HyperparameterConfig) -> dict[str, Any]:
    return {
        "base_model": config.base_model,
        "learning_rate": config.learning_rate,
        "batch_size": config.batch_size,
        "dropout_rate": config.dropout_rate,
        "dense_units": config.dense_units,
        "optimizer": config.optimizer,
        "trainable_layers": config.trainable_layers,
    }


SUMMARY_REWRITE_PROMPT = """Rewrite the following hyperparameter attribution summary as short, fluent prose for a practitioner. Keep every number and every named value exactly as written; do not add or drop findings.

{summary}
"""
