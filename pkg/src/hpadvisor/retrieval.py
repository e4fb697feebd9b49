"""Exact nearest-neighbor search over dataset meta-features.

Numeric descriptors are z-scored with statistics from the indexed records
(zero-variance dimensions are dropped and flagged); modality is appended
as a unit-weight one-hot block, so a modality mismatch costs sqrt(2) in
normalized space. Search is exact brute force: meta-datasets are small
enough that an approximate structure would buy nothing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .attribution import LocalTopFeatures
from .core import MetaFeatures, RESOLUTION_SENTINEL
from .errors import InsufficientDataError, InvariantViolationError
from .store import ExperimentRecord, MetaDataset

# Numeric meta-feature dimensions considered for the distance, in order.
BASE_NUMERIC_DIMS: tuple[str, ...] = (
    "total_images",
    "num_classes",
    "class_imbalance_ratio",
    "class_entropy",
    "mean_class_size",
    "std_class_size",
    "min_class_size",
    "max_class_size",
)
RESOLUTION_DIMS: tuple[str, ...] = ("resolution_width", "resolution_height")


def _raw_numeric(meta: MetaFeatures, dim: str) -> float:
    if dim == "resolution_width":
        return float(meta.image_resolution[0]) if meta.image_resolution else RESOLUTION_SENTINEL
    if dim == "resolution_height":
        return float(meta.image_resolution[1]) if meta.image_resolution else RESOLUTION_SENTINEL
    return float(getattr(meta, dim))


@dataclass(frozen=True)
class RetrievalIndex:
    records: tuple[ExperimentRecord, ...]
    vectors: np.ndarray                 # n x (retained numeric + one-hot) rows
    numeric_dims: tuple[str, ...]       # retained, in order
    dropped_dims: tuple[str, ...]       # zero variance or absent resolution
    means: np.ndarray                   # per retained numeric dim
    stds: np.ndarray
    modalities: tuple[str, ...]         # one-hot column order (first seen)

    @property
    def record_ids(self) -> tuple[int, ...]:
        return tuple(r.record_id for r in self.records)

    def normalize(self, meta: MetaFeatures) -> np.ndarray:
        numeric = np.array([_raw_numeric(meta, d) for d in self.numeric_dims], dtype=np.float64)
        z = (numeric - self.means) / self.stds if len(numeric) else numeric
        onehot = np.zeros(len(self.modalities))
        if meta.modality in self.modalities:
            onehot[self.modalities.index(meta.modality)] = 1.0
        return np.concatenate([z, onehot])


def build_index(dataset: MetaDataset) -> RetrievalIndex:
    """Deterministic index over the dataset's meta-feature vectors."""
    if not dataset.records:
        raise InsufficientDataError("cannot index an empty dataset")
    records = dataset.records
    dims = list(BASE_NUMERIC_DIMS)
    dropped: list[str] = []
    if all(r.meta.image_resolution is not None for r in records):
        dims.extend(RESOLUTION_DIMS)
    else:
        dropped.extend(f"{d} (absent)" for d in RESOLUTION_DIMS)
    raw = np.array([[_raw_numeric(r.meta, d) for d in dims] for r in records], dtype=np.float64)
    means = raw.mean(axis=0)
    stds = raw.std(axis=0)
    keep = stds > 0.0
    dropped.extend(f"{d} (zero variance)" for d, k in zip(dims, keep) if not k)
    retained = tuple(d for d, k in zip(dims, keep) if k)
    z = (raw[:, keep] - means[keep]) / stds[keep]
    modalities: list[str] = []
    for r in records:
        if r.meta.modality not in modalities:
            modalities.append(r.meta.modality)
    onehot = np.zeros((len(records), len(modalities)))
    for i, r in enumerate(records):
        onehot[i, modalities.index(r.meta.modality)] = 1.0
    return RetrievalIndex(
        records=records,
        vectors=np.hstack([z, onehot]),
        numeric_dims=retained,
        dropped_dims=tuple(dropped),
        means=means[keep],
        stds=stds[keep],
        modalities=tuple(modalities),
    )


def query(
    index: RetrievalIndex,
    meta: MetaFeatures,
    k: int = 8,
    exclude_dataset: str | None = None,
) -> list[tuple[ExperimentRecord, float]]:
    """Exact k nearest records by Euclidean distance, ties by record id.

    k is clamped to the candidate count. With exclude_dataset set, records
    from that dataset are left out (leave-one-dataset-out evaluation).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    candidates = [
        i for i, r in enumerate(index.records)
        if exclude_dataset is None or r.dataset_name != exclude_dataset
    ]
    if not candidates:
        raise InsufficientDataError("no candidate records to retrieve")
    q = index.normalize(meta)
    dists = np.linalg.norm(index.vectors[candidates] - q, axis=1)
    ranked = sorted(range(len(candidates)), key=lambda j: (dists[j], index.records[candidates[j]].record_id))
    picked = ranked[: min(k, len(candidates))]
    return [(index.records[candidates[j]], float(dists[j])) for j in picked]


@dataclass(frozen=True)
class ContextEntry:
    record: ExperimentRecord
    distance: float
    top_features: LocalTopFeatures


@dataclass(frozen=True)
class RetrievedContext:
    entries: tuple[ContextEntry, ...]

    def __post_init__(self):
        for a, b in zip(self.entries, self.entries[1:]):
            if b.distance < a.distance - 1e-12:
                raise InvariantViolationError("entries", "distances must be non-decreasing")

    def __len__(self) -> int:
        return len(self.entries)


def build_context(
    results: Sequence[tuple[ExperimentRecord, float]],
    top_features_for: Callable[[ExperimentRecord], LocalTopFeatures],
) -> RetrievedContext:
    """Attach each retrieved record's local attribution highlights."""
    return RetrievedContext(
        entries=tuple(ContextEntry(record, distance, top_features_for(record)) for record, distance in results)
    )
