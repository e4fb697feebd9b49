import random
from dataclasses import replace

import numpy as np
import pytest

from hpadvisor.core import compute_meta_features
from hpadvisor.errors import InsufficientDataError
from hpadvisor.retrieval import build_context, build_index, query
from hpadvisor.store import MetaDataset

from conftest import MODALITIES, make_dataset, make_record


def random_meta(rng: random.Random):
    counts = {f"c{i}": rng.randint(30, 900) for i in range(rng.randint(2, 6))}
    return compute_meta_features(counts, rng.choice(MODALITIES))


class TestBuildIndex:
    def test_empty_dataset_rejected(self):
        with pytest.raises(InsufficientDataError):
            build_index(MetaDataset(records=()))

    def test_single_record_all_numeric_dims_dropped(self):
        ds = make_dataset(1, seed=0)
        index = build_index(ds)
        assert index.numeric_dims == ()
        assert len(index.modalities) == 1
        # vector is the one-hot block alone
        assert index.vectors.shape == (1, 1)
        assert index.vectors[0, 0] == 1.0

    def test_two_records_differing_only_in_total_images(self):
        ds = make_dataset(1, seed=0)
        a = ds.records[0]
        b = replace(a, record_id=1, meta=replace(a.meta, total_images=a.meta.total_images + 500))
        index = build_index(MetaDataset(records=(a, b)))
        assert index.numeric_dims == ("total_images",)

    def test_rebuild_identical(self, small_dataset):
        a = build_index(small_dataset)
        b = build_index(small_dataset)
        assert (a.vectors == b.vectors).all()
        assert a.numeric_dims == b.numeric_dims
        assert a.modalities == b.modalities

    def test_resolution_dims_used_only_when_always_present(self):
        rng = random.Random(1)
        with_res = []
        for i in range(4):
            r = make_record(rng, i)
            with_res.append(replace(r, meta=replace(r.meta, image_resolution=(224 + i, 224))))
        index = build_index(MetaDataset(records=tuple(with_res)))
        assert "resolution_width" in index.numeric_dims
        mixed = with_res[:3] + [replace(with_res[3], meta=replace(with_res[3].meta, image_resolution=None))]
        index2 = build_index(MetaDataset(records=tuple(mixed)))
        assert "resolution_width" not in index2.numeric_dims
        assert any("resolution_width" in d for d in index2.dropped_dims)


class TestQuery:
    def test_self_query_returns_distance_zero_first(self, small_dataset):
        index = build_index(small_dataset)
        target = small_dataset.records[5]
        results = query(index, target.meta, k=3)
        first_record, first_distance = results[0]
        assert first_distance == 0.0
        assert first_record.meta == target.meta

    def test_k_clamped_to_index_size(self):
        ds = make_dataset(3, seed=2)
        index = build_index(ds)
        results = query(index, ds.records[0].meta, k=8)
        assert len(results) == 3

    def test_k_must_be_positive(self, small_dataset):
        with pytest.raises(ValueError):
            query(build_index(small_dataset), small_dataset.records[0].meta, k=0)

    def test_five_hand_placed_vectors_match_exhaustive_ordering(self):
        rng = random.Random(42)
        ds = make_dataset(5, seed=42)
        index = build_index(ds)
        meta = random_meta(rng)
        q = index.normalize(meta)
        # oracle: exhaustive distance computation plus (distance, id) sort
        expected = sorted(
            ((float(np.linalg.norm(v - q)), r.record_id) for v, r in zip(index.vectors, index.records)),
        )
        got = [(d, r.record_id) for r, d in query(index, meta, k=5)]
        assert [(pytest.approx(d), i) for d, i in expected] == got

    def test_exactness_against_brute_force(self):
        rng = random.Random(7)
        for trial in range(25):
            ds = make_dataset(rng.randint(2, 40), seed=trial)
            index = build_index(ds)
            meta = random_meta(rng)
            q = index.normalize(meta)
            ranked = sorted(
                range(len(index.records)),
                key=lambda i: (float(np.linalg.norm(index.vectors[i] - q)), index.records[i].record_id),
            )
            for k in (1, 8, len(ds)):
                got = [r.record_id for r, _d in query(index, meta, k=k)]
                want = [index.records[i].record_id for i in ranked[: min(k, len(ds))]]
                assert got == want

    def test_monotone_k_prefix(self, small_dataset):
        index = build_index(small_dataset)
        rng = random.Random(3)
        meta = random_meta(rng)
        previous = [r.record_id for r, _d in query(index, meta, k=1)]
        for k in range(2, 12):
            current = [r.record_id for r, _d in query(index, meta, k=k)]
            assert current[: len(previous)] == previous
            previous = current

    def test_metric_symmetry(self, small_dataset):
        index = build_index(small_dataset)
        a, b = small_dataset.records[0], small_dataset.records[1]
        d_ab = next(d for r, d in query(index, a.meta, k=len(small_dataset)) if r.record_id == b.record_id)
        d_ba = next(d for r, d in query(index, b.meta, k=len(small_dataset)) if r.record_id == a.record_id)
        assert d_ab == pytest.approx(d_ba)

    def test_normalization_invariance_under_affine_rescale(self):
        rng = random.Random(11)
        ds = make_dataset(20, seed=5)
        index = build_index(ds)
        meta = random_meta(rng)
        baseline = [r.record_id for r, _d in query(index, meta, k=len(ds))]
        a = rng.choice([-1, 1]) * rng.uniform(0.5, 30.0)
        b = rng.uniform(-4.0, 4.0)

        def rescale(m):
            return replace(m, class_entropy=a * m.class_entropy + b)

        rescaled = MetaDataset(records=tuple(replace(r, meta=rescale(r.meta)) for r in ds.records))
        index2 = build_index(rescaled)
        got = [r.record_id for r, _d in query(index2, rescale(meta), k=len(ds))]
        assert got == baseline

    def test_leave_one_dataset_out(self, small_dataset):
        index = build_index(small_dataset)
        excluded = small_dataset.records[0].dataset_name
        results = query(index, small_dataset.records[0].meta, k=len(small_dataset), exclude_dataset=excluded)
        assert all(r.dataset_name != excluded for r, _d in results)

    def test_unseen_modality_still_ranks(self, small_dataset):
        index = build_index(small_dataset)
        meta = replace(small_dataset.records[0].meta, modality="PET")
        results = query(index, meta, k=3)
        assert len(results) == 3


class TestBuildContext:
    def test_entries_carry_top_features(self, small_dataset):
        from hpadvisor import attribution, gbdt

        model = gbdt.train(small_dataset, "acc", gbdt.TrainParams(num_rounds=5, max_depth=2))
        explanations = attribution.explain_dataset(model, small_dataset)
        by_id = {r.record_id: e for r, e in zip(small_dataset.records, explanations)}
        index = build_index(small_dataset)
        results = query(index, small_dataset.records[2].meta, k=4)
        context = build_context(
            results, lambda r: attribution.local_top_for_record(model, by_id[r.record_id], r)
        )
        assert len(context) == 4
        for entry in context.entries:
            assert len(entry.top_features.entries) == 3
        distances = [e.distance for e in context.entries]
        assert distances == sorted(distances)
