"""Command-line pipeline: ingest, train, explain, recommend, judge, replay-eval.

Exit codes: 0 success, 1 validation/parse failure, 2 transport failure,
3 input/schema failure. Every pipeline failure names the stage it
happened in.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

from . import attribution, gateway, gbdt, prompting, retrieval, store
from .core import (
    HyperparameterConfig,
    MetaFeatures,
    compute_meta_features,
    default_search_space,
    normalize_trainable_layers,
)
from .errors import (
    AdvisorError,
    EmptyContextError,
    FormatError,
    InsufficientDataError,
    JudgeFormatError,
    JudgeUnavailableError,
    MissingExplanationError,
    OutOfSearchSpaceError,
    SchemaError,
    TransportError,
)
from .gateway import JudgeScores, LlmEndpointConfig
from .prompting import PromptBundle, Provenance, Recommendation

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_TRANSPORT = 2
EXIT_INPUT = 3

NON_LLM_STAGES = ("meta_features", "train_or_load", "shap", "retrieval", "prompt", "parse")

CORRECTIVE_SUFFIX = (
    "\n\nYour previous reply was rejected: {error}\n"
    "Answer again. Output exactly one JSON object with the required keys, "
    "then the marker 'Explanation:' followed by your reasoning."
)


class StageFailure(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(timings: dict[str, float], name: str):
    start = time.perf_counter()
    try:
        yield
    except StageFailure:
        raise
    except BaseException as exc:
        raise StageFailure(name, exc) from exc
    timings[name] = timings.get(name, 0.0) + time.perf_counter() - start


@dataclass
class RunReport:
    recommendation: Recommendation
    judge_scores: JudgeScores | None
    timings: dict[str, float]
    retrieved_record_ids: list[int]
    flags: dict
    assets: PromptBundle

    def to_jsonable(self) -> dict:
        prov = self.recommendation.provenance
        return {
            "recommendation": {
                "config": prompting.config_wire_jsonable(self.recommendation.config),
                "explanation": self.recommendation.explanation,
                "raw_reply": self.recommendation.raw,
                "provenance": None
                if prov is None
                else {"model": prov.model, "temperature": prov.temperature, "latency_s": prov.latency_s},
            },
            "judge": None if self.judge_scores is None else gateway.scores_to_jsonable(self.judge_scores),
            "timings": self.timings,
            "retrieved_record_ids": self.retrieved_record_ids,
            "flags": self.flags,
            "assets": {
                "dataset_characteristics": self.assets.dataset_block,
                "shap_summary": self.assets.shap_block,
                "context": self.assets.context_block,
            },
        }


def _render_human(report: dict) -> str:
    rec = report["recommendation"]
    lines = ["Recommended configuration:"]
    for key, value in rec["config"].items():
        lines.append(f"  {key}: {value}")
    prov = rec.get("provenance")
    if prov:
        lines.append(f"generated by {prov['model']} in {prov['latency_s']:.2f}s")
    if report.get("judge"):
        means = report["judge"]["means"]
        lines.append("judge scores: " + ", ".join(f"{k}={v:.2f}" for k, v in means.items()))
    lines.append("timings (s): " + ", ".join(f"{k}={v:.3f}" for k, v in report["timings"].items()))
    lines.append("")
    lines.append("Explanation:")
    lines.append(rec["explanation"])
    return "\n".join(lines)


def _read_manifest(path: str) -> tuple[str | None, MetaFeatures]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "class_counts" not in doc or "modality" not in doc:
        raise SchemaError("manifest must be an object with class_counts and modality")
    resolution = None
    if doc.get("resolution") is not None:
        raw = doc["resolution"]
        if not (isinstance(raw, (list, tuple)) and len(raw) == 2):
            raise SchemaError("manifest resolution must be a [width, height] pair")
        resolution = (int(raw[0]), int(raw[1]))
    meta = compute_meta_features(doc["class_counts"], doc["modality"], resolution)
    return doc.get("dataset_name"), meta


def _load_or_train(args, timings: dict[str, float]):
    with _stage(timings, "train_or_load"):
        dataset = store.load(args.data)
        model_path = Path(args.model_path)
        if model_path.exists():
            model = gbdt.load_model(model_path)
        else:
            params = gbdt.TrainParams(seed=args.seed)
            model = gbdt.train(dataset, target=args.target, params=params)
            gbdt.save_model(model, model_path)
    return dataset, model


def _endpoint_from_args(args, model: str, temperature: float) -> LlmEndpointConfig:
    return LlmEndpointConfig.from_env(
        model=model,
        base_url=args.endpoint_url,
        temperature=temperature,
        timeout_s=args.timeout,
        max_retries=args.retries,
    )


def _summary_pipeline(model, dataset, args, timings):
    with _stage(timings, "shap"):
        explanations = attribution.explain_dataset(model, dataset)
        summary = attribution.aggregate(explanations, dataset.records, target=model.target)
        summary_text = attribution.render_summary(summary)
    if getattr(args, "polish_summary", False):
        endpoint = _endpoint_from_args(args, args.llm_model, args.temperature)
        with _stage(timings, "llm_polish"):
            summary_text, _latency = gateway.generate(
                endpoint, prompting.SUMMARY_REWRITE_PROMPT.format(summary=summary_text)
            )
    return explanations, summary_text


def cmd_ingest(args) -> int:
    dataset = store.load(args.path)
    store.save(dataset, args.data)
    print(f"{len(dataset)} record(s) ingested into {args.data}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = store.load(args.data)
    params = gbdt.TrainParams(
        num_rounds=args.rounds,
        max_depth=args.depth,
        min_samples_leaf=args.min_leaf,
        shrinkage=args.shrinkage,
        seed=args.seed,
    )
    model = gbdt.train(dataset, target=args.target, params=params)
    gbdt.save_model(model, args.model_path)
    print(
        json.dumps(
            {
                "target": model.target,
                "rounds": len(model.trees),
                "train_mse": model.train_mse[-1],
                "constant_target": model.constant_target,
                "model_path": str(args.model_path),
            }
        )
    )
    return EXIT_OK


def cmd_explain(args) -> int:
    timings: dict[str, float] = {}
    dataset, model = _load_or_train(args, timings)
    _explanations, summary_text = _summary_pipeline(model, dataset, args, timings)
    print(summary_text, end="")
    return EXIT_OK


def cmd_recommend(args) -> int:
    timings: dict[str, float] = {}
    with _stage(timings, "meta_features"):
        dataset_name, meta = _read_manifest(args.manifest)
    dataset, model = _load_or_train(args, timings)
    explanations, summary_text = _summary_pipeline(model, dataset, args, timings)
    with _stage(timings, "retrieval"):
        index = retrieval.build_index(dataset)
        exclude = dataset_name if args.leave_one_out else None
        results = retrieval.query(index, meta, k=args.k, exclude_dataset=exclude)
        by_id = {record.record_id: exp for record, exp in zip(dataset.records, explanations)}
        context = retrieval.build_context(
            results, lambda record: attribution.local_top_for_record(model, by_id[record.record_id], record)
        )
    with _stage(timings, "prompt"):
        bundle = prompting.build_prompt(meta, summary_text, context, default_search_space())
    endpoint = _endpoint_from_args(args, args.llm_model, args.temperature)
    with _stage(timings, "llm"):
        reply, latency = gateway.generate(endpoint, bundle.text)
    space = default_search_space()
    recommendation = None
    with _stage(timings, "parse"):
        try:
            recommendation = prompting.parse_recommendation(reply, space)
        except (FormatError, OutOfSearchSpaceError, MissingExplanationError) as first_error:
            retry_prompt = bundle.text + CORRECTIVE_SUFFIX.format(error=first_error)
            reply2, latency2 = gateway.generate(endpoint, retry_prompt)
            latency += latency2
            recommendation = prompting.parse_recommendation(reply2, space)
    recommendation = Recommendation(
        config=recommendation.config,
        explanation=recommendation.explanation,
        raw=recommendation.raw,
        provenance=Provenance(model=endpoint.model, temperature=endpoint.temperature, latency_s=latency),
    )
    judge_scores = None
    if args.judge:
        judge_endpoint = _endpoint_from_args(args, args.judge_model or args.llm_model, gateway.JUDGE_TEMPERATURE)
        with _stage(timings, "judge"):
            judge_scores = gateway.judge(judge_endpoint, recommendation, bundle, runs=args.judge_runs)
    report = RunReport(
        recommendation=recommendation,
        judge_scores=judge_scores,
        timings=timings,
        retrieved_record_ids=[record.record_id for record, _d in results],
        flags={
            "k": args.k,
            "llm_model": args.llm_model,
            "leave_one_out": args.leave_one_out,
            "judge": args.judge,
            "target": args.target,
            "seed": args.seed,
            "polish_summary": args.polish_summary,
        },
        assets=bundle,
    )
    doc = report.to_jsonable()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2), encoding="utf-8")
    print(_render_human(doc) if args.human else json.dumps(doc, indent=2))
    return EXIT_OK


def _recommendation_from_report(doc: dict) -> Recommendation:
    rec = doc["recommendation"]
    cfg = rec["config"]
    trainable = normalize_trainable_layers(cfg["trainable_layers"]) or cfg["trainable_layers"]
    config = HyperparameterConfig(
        base_model=cfg["base_model"],
        learning_rate=float(cfg["learning_rate"]),
        batch_size=int(cfg["batch_size"]),
        dropout_rate=float(cfg["dropout_rate"]),
        dense_units=int(cfg["dense_units"]),
        optimizer=str(cfg["optimizer"]).lower(),
        trainable_layers=trainable,
    )
    return Recommendation(config=config, explanation=rec["explanation"], raw=rec.get("raw_reply", ""))


def _bundle_from_report(doc: dict) -> PromptBundle:
    assets = doc["assets"]
    return PromptBundle(
        core_instruction="",
        dataset_block=assets["dataset_characteristics"],
        shap_block=assets["shap_summary"],
        context_block=assets["context"],
        format_block="",
        text="",
    )


def cmd_judge(args) -> int:
    doc = json.loads(Path(args.report).read_text(encoding="utf-8"))
    recommendation = _recommendation_from_report(doc)
    bundle = _bundle_from_report(doc)
    endpoint = _endpoint_from_args(args, args.judge_model or args.llm_model, gateway.JUDGE_TEMPERATURE)
    scores = gateway.judge(endpoint, recommendation, bundle, runs=args.judge_runs)
    print(json.dumps(gateway.scores_to_jsonable(scores), indent=2))
    return EXIT_OK


def config_distance(a: HyperparameterConfig, b: HyperparameterConfig) -> tuple[int, list[str]]:
    differing = [
        param
        for param in prompting.REQUIRED_KEYS
        if getattr(a, param) != getattr(b, param)
    ]
    return len(differing), differing


def cmd_replay_eval(args) -> int:
    doc = json.loads(Path(args.report).read_text(encoding="utf-8"))
    recommendation = _recommendation_from_report(doc)
    heldout = store.load(args.heldout)
    records = [r for r in heldout.records if args.dataset is None or r.dataset_name == args.dataset]
    if not records:
        raise InsufficientDataError("no held-out records for the target dataset")
    best = None
    for record in records:
        distance, differing = config_distance(recommendation.config, record.config)
        key = (distance, record.record_id)
        if best is None or key < best[0]:
            best = (key, record, differing)
    (_distance, _rid), record, differing = best
    result = {
        "record_id": record.record_id,
        "dataset_name": record.dataset_name,
        "match": "exact" if not differing else f"nearest({len(differing)})",
        "differing_fields": differing,
        "metrics": {
            "f1": record.metrics.f1,
            "acc": record.metrics.acc,
            "recall": record.metrics.recall,
            "precision": record.metrics.precision,
            "total_training_time": record.metrics.total_training_time,
        },
    }
    print(json.dumps(result, indent=2))
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", default="meta_dataset.json", help="meta-dataset store path")
    parser.add_argument("--model-path", default="gbdt_model.json", help="trained model path")
    parser.add_argument("--target", default="acc", help="metric the model predicts")
    parser.add_argument("--seed", type=int, default=42)


def _add_llm(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--llm-model", default="deepseek-coder:6.7b", help="inference model name")
    parser.add_argument("--endpoint-url", default=None, help=f"server URL (or ${gateway.ENDPOINT_ENV_VAR})")
    parser.add_argument("--temperature", type=float, default=gateway.DEFAULT_TEMPERATURE)
    parser.add_argument("--timeout", type=float, default=120.0, help="request timeout in seconds")
    parser.add_argument("--retries", type=int, default=2, help="max transport retries")
    parser.add_argument("--polish-summary", action="store_true", help="rewrite the attribution summary through the LLM")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hpadvisor", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and persist a meta-dataset file")
    p.add_argument("path")
    _add_common(p)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("train", help="train the performance model")
    _add_common(p)
    p.add_argument("--rounds", type=int, default=gbdt.TrainParams().num_rounds)
    p.add_argument("--depth", type=int, default=gbdt.TrainParams().max_depth)
    p.add_argument("--min-leaf", type=int, default=gbdt.TrainParams().min_samples_leaf)
    p.add_argument("--shrinkage", type=float, default=gbdt.TrainParams().shrinkage)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("explain", help="print the rendered attribution summary")
    _add_common(p)
    _add_llm(p)
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("recommend", help="full pipeline: manifest in, configuration out")
    p.add_argument("manifest", help="JSON manifest: {class_counts, modality, resolution?, dataset_name?}")
    _add_common(p)
    _add_llm(p)
    p.add_argument("--k", type=int, default=8, help="retrieved experiments")
    p.add_argument("--leave-one-out", action="store_true", help="exclude records of the manifest's dataset")
    p.add_argument("--judge", action="store_true", help="score the output with a judge LLM")
    p.add_argument("--judge-model", default=None, help="judge model (defaults to --llm-model)")
    p.add_argument("--judge-runs", type=int, default=gateway.JUDGE_RUNS)
    p.add_argument("--human", action="store_true", help="human-readable report instead of JSON")
    p.add_argument("--out", default=None, help="also write the JSON report to this path")
    p.set_defaults(fn=cmd_recommend)

    p = sub.add_parser("judge", help="re-score a saved recommendation report")
    p.add_argument("--report", required=True)
    _add_llm(p)
    p.add_argument("--judge-model", default=None)
    p.add_argument("--judge-runs", type=int, default=gateway.JUDGE_RUNS)
    p.set_defaults(fn=cmd_judge)

    p = sub.add_parser("replay-eval", help="look up the held-out record nearest to a recommendation")
    p.add_argument("--report", required=True)
    p.add_argument("--heldout", required=True, help="held-out meta-dataset file")
    p.add_argument("--dataset", default=None, help="restrict to one dataset name")
    p.set_defaults(fn=cmd_replay_eval)

    return parser


def _exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (FormatError, OutOfSearchSpaceError, MissingExplanationError, EmptyContextError, JudgeFormatError)):
        return EXIT_VALIDATION
    if isinstance(exc, (TransportError, JudgeUnavailableError)):
        return EXIT_TRANSPORT
    return EXIT_INPUT


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except StageFailure as failure:
        print(f"error in stage '{failure.stage}': {failure.cause}", file=sys.stderr)
        return _exit_code_for(failure.cause)
    except (AdvisorError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
