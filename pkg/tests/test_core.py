import math
import random

import pytest

from hpadvisor.core import (
    EncodingTable,
    FEATURE_NAMES,
    HyperparameterConfig,
    MetaFeatures,
    SearchSpace,
    compute_meta_features,
    decimal_literal,
    default_search_space,
    encode,
    normalize_trainable_layers,
    validate_config,
)
from hpadvisor.errors import (
    EmptyDatasetError,
    InvalidClassCountError,
    InvariantViolationError,
    UnknownCategoryError,
)

from conftest import BRAIN_CLASS_COUNTS


def manual_stats(counts):
    """Independent oracle: plain-math recomputation of all six statistics."""
    values = list(counts.values())
    total = 0
    for c in values:
        total += c
    entropy = 0.0
    for c in values:
        p = c / total
        entropy -= p * math.log2(p)
    mean = total / len(values)
    var = 0.0
    for c in values:
        var += (c - mean) ** 2
    std = math.sqrt(var / len(values))
    return total, len(values), max(values) / min(values), entropy, mean, std, min(values), max(values)


class TestComputeMetaFeatures:
    def test_published_example_counts_reproduce_all_six_statistics(self):
        # oracle first: the reconstructed counts must hit every published figure
        total, k, ratio, entropy, mean, std, lo, hi = manual_stats(BRAIN_CLASS_COUNTS)
        assert total == 3264
        assert k == 4
        assert round(ratio, 2) == 1.87
        assert round(entropy, 4) == 1.9598
        assert mean == 816.0
        assert round(std, 2) == 182.91
        assert (lo, hi) == (500, 937)

        meta = compute_meta_features(BRAIN_CLASS_COUNTS, "MRI")
        assert meta.total_images == total
        assert meta.num_classes == k
        assert meta.class_imbalance_ratio == pytest.approx(ratio)
        assert meta.class_entropy == pytest.approx(entropy)
        assert meta.mean_class_size == mean
        assert meta.std_class_size == pytest.approx(std)
        assert (meta.min_class_size, meta.max_class_size) == (500, 937)
        assert meta.modality == "MRI"
        assert meta.image_resolution is None
        meta.validate()

    def test_uniform_counts(self):
        meta = compute_meta_features({f"c{i}": 100 for i in range(4)}, "CT")
        assert meta.class_imbalance_ratio == 1.0
        assert meta.class_entropy == pytest.approx(2.0)
        assert meta.mean_class_size == 100.0
        assert meta.std_class_size == 0.0

    def test_single_class(self):
        meta = compute_meta_features({"only": 50}, "US")
        assert meta.num_classes == 1
        assert meta.class_imbalance_ratio == 1.0
        assert meta.class_entropy == 0.0

    def test_empty_manifest_rejected(self):
        with pytest.raises(EmptyDatasetError):
            compute_meta_features({}, "MRI")

    @pytest.mark.parametrize("bad", [0, -3, 2.5, True])
    def test_bad_counts_rejected(self, bad):
        with pytest.raises(InvalidClassCountError):
            compute_meta_features({"a": 10, "b": bad}, "MRI")

    def test_entropy_bounds_property(self):
        rng = random.Random(11)
        for _ in range(200):
            k = rng.randint(1, 12)
            counts = {f"c{i}": rng.randint(1, 5000) for i in range(k)}
            meta = compute_meta_features(counts, "MRI")
            assert -1e-12 <= meta.class_entropy <= math.log2(k) + 1e-12
            if len(set(counts.values())) == 1:
                assert meta.class_entropy == pytest.approx(math.log2(k))

    def test_entropy_max_iff_equal_counts(self):
        equal = compute_meta_features({"a": 7, "b": 7, "c": 7}, "CT")
        skewed = compute_meta_features({"a": 7, "b": 7, "c": 8}, "CT")
        assert equal.class_entropy == pytest.approx(math.log2(3))
        assert skewed.class_entropy < math.log2(3)

    def test_permutation_invariance(self):
        rng = random.Random(3)
        for _ in range(50):
            items = [(f"c{i}", rng.randint(1, 400)) for i in range(rng.randint(2, 8))]
            a = compute_meta_features(dict(items), "MRI")
            rng.shuffle(items)
            relabeled = {f"x{i}": count for i, (_n, count) in enumerate(items)}
            b = compute_meta_features(relabeled, "MRI")
            assert a == b

    def test_scale_relation(self):
        rng = random.Random(5)
        for _ in range(50):
            counts = {f"c{i}": rng.randint(1, 300) for i in range(rng.randint(2, 6))}
            k = rng.randint(2, 9)
            a = compute_meta_features(counts, "MRI")
            b = compute_meta_features({n: c * k for n, c in counts.items()}, "MRI")
            assert b.class_entropy == pytest.approx(a.class_entropy)
            assert b.class_imbalance_ratio == pytest.approx(a.class_imbalance_ratio)
            assert b.total_images == a.total_images * k
            assert b.mean_class_size == pytest.approx(a.mean_class_size * k)
            assert b.std_class_size == pytest.approx(a.std_class_size * k)
            assert b.min_class_size == a.min_class_size * k
            assert b.max_class_size == a.max_class_size * k


SAMPLE_CONFIG = HyperparameterConfig(
    base_model="ResNet50",
    learning_rate=1e-4,
    batch_size=32,
    dropout_rate=0.4,
    dense_units=1024,
    optimizer="sgd",
    trainable_layers="last_10",
)


class TestSearchSpace:
    def test_default_space_valid(self):
        default_search_space().validate()

    def test_sample_config_is_admissible(self):
        assert validate_config(SAMPLE_CONFIG, default_search_space()).ok

    def test_unknown_backbone_rejected(self):
        from dataclasses import replace

        check = validate_config(replace(SAMPLE_CONFIG, base_model="VGG16"), default_search_space())
        assert not check.ok
        assert [v.parameter for v in check.violations] == ["base_model"]

    def test_off_grid_learning_rate_rejected(self):
        from dataclasses import replace

        check = validate_config(replace(SAMPLE_CONFIG, learning_rate=5e-4), default_search_space())
        assert not check.ok
        assert [v.parameter for v in check.violations] == ["learning_rate"]

    def test_unsorted_numeric_space_rejected(self):
        space = default_search_space()
        bad = SearchSpace(
            base_model=space.base_model,
            learning_rate=(1e-3, 1e-4),
            batch_size=space.batch_size,
            dropout_rate=space.dropout_rate,
            dense_units=space.dense_units,
            optimizer=space.optimizer,
            trainable_layers=space.trainable_layers,
        )
        with pytest.raises(InvariantViolationError):
            bad.validate()

    def test_trainable_layers_normalization(self):
        assert normalize_trainable_layers("Feature extraction only") == "feature_extraction"
        assert normalize_trainable_layers("Partial fine-tuning (10 layers)") == "last_10"
        assert normalize_trainable_layers("last_30") == "last_30"
        assert normalize_trainable_layers("Full fine-tuning") == "full"
        assert normalize_trainable_layers("lasagna") is None


def sample_table() -> EncodingTable:
    return EncodingTable(
        {
            "modality": {"MRI": 0},
            "base_model": {"ResNet50": 0},
            "optimizer": {"sgd": 1},
            "trainable_layers": {"last_10": 2},
        }
    )


def is_subsequence(needle, haystack) -> bool:
    it = iter(haystack)
    return all(any(x == y for y in it) for x in needle)


class TestEncode:
    def test_manual_transcription(self):
        meta = MetaFeatures(3264, 4, 1.87, 1.9598, 816.0, 182.91, 500, 937, "MRI")
        vec = encode(meta, SAMPLE_CONFIG, sample_table())
        assert vec.names == FEATURE_NAMES
        assert vec.values == (
            3264.0, 4.0, 1.87, 1.9598, 816.0, 182.91, 500.0, 937.0,
            0.0,            # modality code
            0.0, 0.0,       # resolution sentinel
            0.0,            # backbone code
            0.0001, 32.0, 0.4, 1024.0,
            1.0,            # optimizer code
            2.0,            # trainable code
        )
        # the documented value listing is a subsequence of the full vector
        listed = (3264, 4, 1.87, 1.9598, 816.0, 182.91, 500, 937, 0, 0.0001, 32, 0.4, 1024, 1, 2)
        assert is_subsequence(listed, vec.values)

    def test_deterministic(self):
        meta = compute_meta_features(BRAIN_CLASS_COUNTS, "MRI")
        a = encode(meta, SAMPLE_CONFIG, sample_table())
        b = encode(meta, SAMPLE_CONFIG, sample_table())
        assert a.values == b.values

    def test_unknown_category(self):
        meta = compute_meta_features(BRAIN_CLASS_COUNTS, "MRI")
        from dataclasses import replace

        with pytest.raises(UnknownCategoryError) as exc:
            encode(meta, replace(SAMPLE_CONFIG, optimizer="adamw"), sample_table())
        assert exc.value.feature == "optimizer"
        assert exc.value.label == "adamw"

    def test_resolution_encoded_when_present(self):
        meta = compute_meta_features(BRAIN_CLASS_COUNTS, "MRI", resolution=(224, 224))
        vec = encode(meta, SAMPLE_CONFIG, sample_table())
        by_name = dict(zip(vec.names, vec.values))
        assert by_name["resolution_width"] == 224.0
        assert by_name["resolution_height"] == 224.0


class TestEncodingTable:
    def test_first_seen_order(self):
        table = EncodingTable.from_observations(
            [("optimizer", "sgd"), ("optimizer", "adam"), ("optimizer", "sgd"), ("modality", "CT")]
        )
        assert table.code("optimizer", "sgd") == 0
        assert table.code("optimizer", "adam") == 1
        assert table.code("modality", "CT") == 0

    def test_label_roundtrip(self):
        table = sample_table()
        assert table.label("trainable_layers", 2) == "last_10"

    def test_duplicate_codes_rejected(self):
        with pytest.raises(InvariantViolationError):
            EncodingTable({"optimizer": {"sgd": 0, "adam": 0}})


class TestDecimalLiteral:
    @pytest.mark.parametrize("value,text", [(1e-4, "0.0001"), (1e-5, "0.00001"), (0.001, "0.001"), (0.4, "0.4")])
    def test_plain_decimal(self, value, text):
        assert decimal_literal(value) == text
        assert float(decimal_literal(value)) == value
