"""HTTP client for a local Ollama-compatible inference server.

Generation posts {model, prompt, stream: false, options: {temperature}}
to /api/generate and reads the completion from the response's "response"
field; any server honoring that shape works, including the test stub.
Judging sends a rubric prompt several times and averages the integer
scores.
"""
from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass
from typing import Mapping

import requests

from .errors import (
    InvariantViolationError,
    JudgeFormatError,
    JudgeUnavailableError,
    RequestTimeoutError,
    ServerError,
    UnavailableError,
)
from .prompting import PromptBundle, Recommendation, find_json_object

ENDPOINT_ENV_VAR = "HPADVISOR_ENDPOINT"
DEFAULT_BASE_URL = "http://localhost:11434"
DEFAULT_TEMPERATURE = 0.1
JUDGE_TEMPERATURE = 0.0
JUDGE_RUNS = 3

JUDGE_DIMENSIONS: tuple[str, ...] = ("consistency", "completeness", "conciseness", "fluency", "format")


@dataclass(frozen=True)
class LlmEndpointConfig:
    model: str
    base_url: str = DEFAULT_BASE_URL
    temperature: float = DEFAULT_TEMPERATURE
    timeout_s: float = 120.0
    max_retries: int = 2
    backoff_s: float = 0.25

    def validate(self) -> None:
        if self.timeout_s <= 0:
            raise InvariantViolationError("timeout_s", "must be > 0")
        if self.max_retries < 0:
            raise InvariantViolationError("max_retries", "must be >= 0")
        if self.temperature < 0:
            raise InvariantViolationError("temperature", "must be >= 0")

    @classmethod
    def from_env(cls, model: str, **overrides) -> "LlmEndpointConfig":
        base_url = overrides.pop("base_url", None) or os.environ.get(ENDPOINT_ENV_VAR, DEFAULT_BASE_URL)
        return cls(model=model, base_url=base_url, **overrides)


def generate(endpoint: LlmEndpointConfig, prompt: str) -> tuple[str, float]:
    """Return (completion text, transport latency in seconds).

    Connection failures and 5xx responses are transient and retried with
    exponential backoff; a timeout or any other non-success status raises
    immediately. Latency covers only the successful transport call.
    """
    endpoint.validate()
    url = endpoint.base_url.rstrip("/") + "/api/generate"
    payload = {
        "model": endpoint.model,
        "prompt": prompt,
        "stream": False,
        "options": {"temperature": endpoint.temperature},
    }
    last_failure = "no attempt made"
    for attempt in range(endpoint.max_retries + 1):
        if attempt:
            time.sleep(endpoint.backoff_s * 2 ** (attempt - 1))
        start = time.perf_counter()
        try:
            response = requests.post(url, json=payload, timeout=endpoint.timeout_s)
        except requests.Timeout:
            raise RequestTimeoutError(f"no answer from {url} within {endpoint.timeout_s}s") from None
        except requests.ConnectionError as exc:
            last_failure = f"connection error: {exc}"
            continue
        latency = time.perf_counter() - start
        if response.status_code >= 500:
            last_failure = f"status {response.status_code}"
            continue
        if response.status_code != 200:
            raise ServerError(response.status_code, response.text[:200])
        try:
            body = response.json()
        except ValueError:
            raise ServerError(response.status_code, "response body is not JSON") from None
        if "response" not in body:
            raise ServerError(response.status_code, 'response body lacks a "response" field')
        return str(body["response"]), latency
    raise UnavailableError(f"retries exhausted against {url} ({last_failure})")


@dataclass(frozen=True)
class JudgeScores:
    """Per-dimension means over the successful judge runs."""

    consistency: float
    completeness: float
    conciseness: float
    fluency: float
    format: float
    raw_runs: tuple[Mapping[str, int], ...]
    runs_requested: int
    failures: tuple[str, ...] = ()

    def as_dict(self) -> dict[str, float]:
        return {dim: getattr(self, dim) for dim in JUDGE_DIMENSIONS}


JUDGE_PROMPT_TEMPLATE = """You are a strict evaluator of an automated hyperparameter recommendation. Score the candidate output below against the assets it was built from.

Assets given to the recommender:

Dataset characteristics:
{dataset}

Attribution summary:
{summary}

Retrieved experiments:
{context}

Candidate output (JSON configuration followed by an explanation):
{candidate}

Score five dimensions with integers from 0 (unacceptable) to 4 (excellent):
- consistency: the explanation accurately reflects the assets and the chosen values
- completeness: all relevant assets (dataset characteristics, attribution summary, experiments) are addressed
- conciseness: no padding or repetition
- fluency: clear, well-formed prose
- format: the candidate obeys the required JSON-then-explanation output format

Reply with ONLY a JSON object in this exact shape:
{{
  "consistency": <0-4>,
  "completeness": <0-4>,
  "conciseness": <0-4>,
  "fluency": <0-4>,
  "format": <0-4>,
  "justifications": {{
    "consistency": "<one line>",
    "completeness": "<one line>",
    "conciseness": "<one line>",
    "fluency": "<one line>",
    "format": "<one line>"
  }}
}}
"""


def build_judge_prompt(recommendation: Recommendation, assets: PromptBundle) -> str:
    return JUDGE_PROMPT_TEMPLATE.format(
        dataset=assets.dataset_block,
        summary=assets.shap_block.rstrip("\n"),
        context=assets.context_block,
        candidate=recommendation.raw,
    )


def _parse_judge_reply(text: str) -> dict[str, int]:
    found = find_json_object(text)
    if found is None:
        raise JudgeFormatError("no JSON object in judge reply")
    obj = found[0]
    scores: dict[str, int] = {}
    for dim in JUDGE_DIMENSIONS:
        if dim not in obj:
            raise JudgeFormatError(f"judge reply lacks dimension {dim!r}")
        value = obj[dim]
        if isinstance(value, bool) or not isinstance(value, int):
            raise JudgeFormatError(f"judge score for {dim!r} must be an integer, got {value!r}")
        if not 0 <= value <= 4:
            raise JudgeFormatError(f"judge score for {dim!r} out of range: {value}")
        scores[dim] = value
    return scores


def judge(
    endpoint: LlmEndpointConfig,
    recommendation: Recommendation,
    assets: PromptBundle,
    runs: int = JUDGE_RUNS,
) -> JudgeScores:
    """Run the scoring rubric `runs` times and average per dimension.

    A run whose reply cannot be parsed gets one retry; if that also fails
    the run is excluded and recorded. All runs failing raises.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    prompt = build_judge_prompt(recommendation, assets)
    successes: list[dict[str, int]] = []
    failures: list[str] = []
    for _ in range(runs):
        scores = None
        for attempt in range(2):
            text, _latency = generate(endpoint, prompt)
            try:
                scores = _parse_judge_reply(text)
                break
            except JudgeFormatError as exc:
                if attempt == 1:
                    failures.append(str(exc))
        if scores is not None:
            successes.append(scores)
    if not successes:
        raise JudgeUnavailableError(f"all {runs} judge runs failed: {failures}")
    means = {dim: math.fsum(run[dim] for run in successes) / len(successes) for dim in JUDGE_DIMENSIONS}
    return JudgeScores(
        consistency=means["consistency"],
        completeness=means["completeness"],
        conciseness=means["conciseness"],
        fluency=means["fluency"],
        format=means["format"],
        raw_runs=tuple(successes),
        runs_requested=runs,
        failures=tuple(failures),
    )


def scores_to_jsonable(scores: JudgeScores) -> dict:
    return {
        "means": scores.as_dict(),
        "raw_runs": [dict(run) for run in scores.raw_runs],
        "runs_requested": scores.runs_requested,
        "failures": list(scores.failures),
    }
