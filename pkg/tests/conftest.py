import itertools
import json
import math
import random
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from hpadvisor.core import (
    EncodingTable,
    HyperparameterConfig,
    PerformanceMetrics,
    compute_meta_features,
    default_search_space,
)
from hpadvisor.gbdt import GbdtModel, RegressionTree, TreeNode
from hpadvisor.store import ExperimentRecord, MetaDataset

DATA_DIR = Path(__file__).parent / "data"

MODALITIES = ("MRI", "CT", "X-ray", "US", "DMS", "OCT")

BRAIN_CLASS_COUNTS = {"glioma": 926, "meningioma": 937, "no_tumor": 500, "pituitary": 901}


@pytest.fixture
def sample_dataset_path() -> Path:
    return DATA_DIR / "sample_meta_dataset.json"


def random_config(rng: random.Random) -> HyperparameterConfig:
    space = default_search_space()
    return HyperparameterConfig(
        base_model=rng.choice(space.base_model),
        learning_rate=rng.choice(space.learning_rate),
        batch_size=rng.choice(space.batch_size),
        dropout_rate=rng.choice(space.dropout_rate),
        dense_units=rng.choice(space.dense_units),
        optimizer=rng.choice(space.optimizer),
        trainable_layers=rng.choice(space.trainable_layers),
    )


_BACKBONE_EFFECT = {
    "ResNet50": 0.05,
    "EfficientNetB0": 0.06,
    "EfficientNetB5": 0.03,
    "NASNetMobile": -0.10,
    "Xception": -0.03,
    "InceptionV3": 0.00,
    "DenseNet121": 0.02,
}


def make_record(rng: random.Random, record_id: int, n_datasets: int = 6) -> ExperimentRecord:
    n_classes = rng.randint(2, 6)
    counts = {f"c{j}": rng.randint(50, 900) for j in range(n_classes)}
    meta = compute_meta_features(counts, rng.choice(MODALITIES))
    config = random_config(rng)
    # accuracy responds to the configuration so the learner has signal
    acc = 0.75 + _BACKBONE_EFFECT[config.base_model]
    acc -= 0.05 * abs(config.dropout_rate - 0.4)
    acc -= 0.04 * abs(math.log10(config.learning_rate) + 4.0) / 2.0
    acc += rng.gauss(0.0, 0.03)
    acc = max(0.01, min(0.99, acc))
    metrics = PerformanceMetrics(
        f1=acc * 0.98,
        acc=acc,
        recall=min(1.0, acc * 0.99),
        precision=min(1.0, acc * 1.01),
        total_training_time=rng.uniform(40.0, 700.0),
    )
    return ExperimentRecord(
        dataset_name=f"ds{record_id % n_datasets}",
        meta=meta,
        config=config,
        metrics=metrics,
        record_id=record_id,
    )


def make_dataset(n: int, seed: int = 0, n_datasets: int = 6) -> MetaDataset:
    rng = random.Random(seed)
    return MetaDataset(records=tuple(make_record(rng, i, n_datasets) for i in range(n)))


@pytest.fixture
def small_dataset() -> MetaDataset:
    return make_dataset(40, seed=7)


# ---- hand-built random trees for attribution oracles ----

def random_tree(rng: random.Random, n_features: int, max_depth: int, root_cover: int) -> RegressionTree:
    nodes: list[TreeNode] = []

    def build(depth: int, cover: int) -> int:
        idx = len(nodes)
        nodes.append(None)  # type: ignore[arg-type]
        if depth >= max_depth or cover < 2 or rng.random() < 0.25:
            nodes[idx] = TreeNode(-1, float("nan"), -1, -1, rng.uniform(-3, 3), float(cover))
            return idx
        left_cover = rng.randint(1, cover - 1)
        feature = rng.randrange(n_features)
        threshold = rng.uniform(-2.0, 2.0)
        left = build(depth + 1, left_cover)
        right = build(depth + 1, cover - left_cover)
        nodes[idx] = TreeNode(feature, threshold, left, right, 0.0, float(cover))
        return idx

    build(0, root_cover)
    return RegressionTree(tuple(nodes))


def random_model(rng: random.Random, n_features: int, n_trees: int, max_depth: int,
                 shrinkage: float = 1.0, base_score: float = 0.0) -> GbdtModel:
    trees = tuple(random_tree(rng, n_features, max_depth, rng.randint(4, 60)) for _ in range(n_trees))
    return GbdtModel(
        base_score=base_score,
        trees=trees,
        shrinkage=shrinkage,
        feature_names=tuple(f"f{i}" for i in range(n_features)),
        encoding=EncodingTable({}),
        target="y",
    )


# ---- independent Shapley oracle: cover-weighted conditional expectations ----

def conditional_expectation(tree: RegressionTree, conditioned: set[int], x) -> float:
    def walk(i: int) -> float:
        node = tree.nodes[i]
        if node.is_leaf:
            return node.value
        if node.feature in conditioned:
            return walk(node.left) if x[node.feature] < node.threshold else walk(node.right)
        lw = tree.nodes[node.left].cover
        rw = tree.nodes[node.right].cover
        return (walk(node.left) * lw + walk(node.right) * rw) / (lw + rw)

    return walk(0)


def model_expectation_for(model: GbdtModel, conditioned: set[int], x) -> float:
    return model.base_score + model.shrinkage * sum(
        conditional_expectation(tree, conditioned, x) for tree in model.trees
    )


def brute_force_shap(model: GbdtModel, x) -> list[float]:
    n = len(x)
    phi = [0.0] * n
    for f in range(n):
        others = [g for g in range(n) if g != f]
        for size in range(n):
            for subset in itertools.combinations(others, size):
                weight = math.factorial(size) * math.factorial(n - size - 1) / math.factorial(n)
                with_f = model_expectation_for(model, set(subset) | {f}, x)
                without_f = model_expectation_for(model, set(subset), x)
                phi[f] += weight * (with_f - without_f)
    return phi


# ---- scripted local HTTP stub standing in for the inference server ----

class StubLLM:
    """Minimal Ollama-shaped server driven by a script of canned steps.

    Each script step is one of: a str (completion text, returned with
    status 200), an int (HTTP status to return), or ("delay", seconds,
    text). The last step repeats for any extra requests.
    """

    def __init__(self, script):
        self.script = list(script)
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with stub._lock:
                    stub.requests.append(body)
                    step = stub.script[0]
                    if len(stub.script) > 1:
                        stub.script.pop(0)
                if isinstance(step, tuple) and step[0] == "delay":
                    time.sleep(step[1])
                    step = step[2]
                if isinstance(step, int):
                    self.send_response(step)
                    self.end_headers()
                    return
                payload = json.dumps({"response": step}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.server.server_address[1]}"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub_llm_factory():
    stubs = []

    def factory(script):
        stub = StubLLM(script)
        stubs.append(stub)
        return stub

    yield factory
    for stub in stubs:
        stub.close()
