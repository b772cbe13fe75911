"""Solver backends: recorded equation predictions and an LLM sampler.

The tree track replays model predictions from JSONL stores, parsing
each equation (infix or pre-order) once at load and evaluating it
exactly on demand.  The LLM track builds few-shot prompts, samples
completions over HTTP one request per sample, and extracts a numeric
answer from each completion.  All HTTP traffic can be recorded into a
content-addressed cache and replayed byte-for-byte later, so test runs
and published results never need the network.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

import requests

from mwpsolve.corpus import Problem
from mwpsolve.eqtree import (
    DEFAULT_LIMITS,
    EquationParseError,
    EquationTree,
    EvaluationError,
    EvaluationLimits,
    evaluate,
    from_preorder,
    parse_equation,
)
from mwpsolve.postproc import (
    DEFAULT_NORMALIZATION,
    AnswerParseError,
    AnswerValue,
    NormalizationConfig,
    parse_answer_literal,
)

__all__ = [
    "DEFAULT_ANSWER_MARKER",
    "ENDPOINT_ENV_VAR",
    "BackendError",
    "EndpointAdapter",
    "Exemplar",
    "GenerationCache",
    "LlmBackendConfig",
    "PredictionRecord",
    "PredictionStore",
    "PredictionStoreError",
    "PromptConfigError",
    "PromptSpec",
    "ReplayCacheMiss",
    "RetryPolicy",
    "SolverOutput",
    "build_prompt",
    "default_prompt_spec",
    "extract_answer",
    "parse_prediction_equation",
    "replay_solve",
    "sample_generations",
]

ENDPOINT_ENV_VAR = "MWP_LLM_ENDPOINT"
DEFAULT_ANSWER_MARKER = "The answer is"

_DEFAULT_PROMPT_RESOURCE = "default_prompt.json"


class BackendError(RuntimeError):
    """A solver backend could not produce its output."""


class ReplayCacheMiss(BackendError):
    """Replay mode needed a generation that was never recorded."""


class PredictionStoreError(ValueError):
    """A prediction store file is malformed."""


class PromptConfigError(ValueError):
    """A prompt template definition is invalid."""


def parse_prediction_equation(text: str) -> EquationTree:
    """Parse a stored equation: pre-order first, infix as the fallback."""
    try:
        return from_preorder(text)
    except EquationParseError:
        return parse_equation(text)


@dataclass(frozen=True)
class PredictionRecord:
    """One model's stored equation for one problem."""

    problem_id: str
    model_id: str
    equation: str
    tree: EquationTree
    confidence_context: Optional[dict] = None


@dataclass(frozen=True)
class PredictionStore:
    """Recorded predictions keyed by (model id, problem id)."""

    records: dict[tuple[str, str], PredictionRecord]
    source_path: Optional[str] = None

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PredictionStore":
        """Load a JSONL store, parsing every equation up front."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise FileNotFoundError(f"prediction store not found: {path}") from None
        records: dict[tuple[str, str], PredictionRecord] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PredictionStoreError(f"{where}: invalid JSON: {exc}") from exc
            if not isinstance(payload, dict):
                raise PredictionStoreError(f"{where}: expected an object")
            try:
                problem_id = str(payload["problem_id"])
                model_id = str(payload["model_id"])
                equation = payload["equation"]
            except KeyError as exc:
                raise PredictionStoreError(
                    f"{where}: missing field {exc.args[0]!r}"
                ) from None
            if not isinstance(equation, str) or not equation.strip():
                raise PredictionStoreError(f"{where}: equation must be non-empty")
            try:
                tree = parse_prediction_equation(equation)
            except EquationParseError as exc:
                raise PredictionStoreError(
                    f"{where}: unparseable equation {equation!r}: {exc}"
                ) from exc
            context = payload.get("confidence_context")
            if context is not None and not isinstance(context, dict):
                raise PredictionStoreError(
                    f"{where}: confidence_context must be an object"
                )
            key = (model_id, problem_id)
            if key in records:
                raise PredictionStoreError(
                    f"{where}: duplicate prediction for model {model_id!r}, "
                    f"problem {problem_id!r}"
                )
            records[key] = PredictionRecord(
                problem_id, model_id, equation, tree, context
            )
        return cls(records, str(path))

    @classmethod
    def merge(cls, stores: Sequence["PredictionStore"]) -> "PredictionStore":
        merged: dict[tuple[str, str], PredictionRecord] = {}
        for store in stores:
            for key, record in store.records.items():
                if key in merged:
                    raise PredictionStoreError(
                        f"duplicate prediction for model {key[0]!r}, "
                        f"problem {key[1]!r} across stores"
                    )
                merged[key] = record
        paths = sorted({s.source_path for s in stores if s.source_path})
        return cls(merged, ", ".join(paths) or None)

    def lookup(
        self, model_id: str, problem_id: str
    ) -> Optional[PredictionRecord]:
        return self.records.get((model_id, problem_id))

    def model_ids(self) -> tuple[str, ...]:
        return tuple(sorted({model for model, _ in self.records}))


@dataclass(frozen=True)
class SolverOutput:
    """One model's answer for one problem; ``answer`` None is an abstention."""

    model_id: str
    problem_id: str
    answer: Optional[AnswerValue]
    equation: Optional[str] = None
    error: Optional[str] = None


def replay_solve(
    problem_id: str,
    model_id: str,
    store: PredictionStore,
    limits: EvaluationLimits = DEFAULT_LIMITS,
    config: NormalizationConfig = DEFAULT_NORMALIZATION,
) -> SolverOutput:
    """Evaluate a stored equation; missing or failing ones abstain."""
    record = store.lookup(model_id, problem_id)
    if record is None:
        origin = store.source_path or "<in-memory store>"
        return SolverOutput(
            model_id,
            problem_id,
            answer=None,
            error=f"no prediction for problem {problem_id!r} by model "
            f"{model_id!r} in {origin}",
        )
    try:
        answer = evaluate(record.tree, limits, config)
    except EvaluationError as exc:
        return SolverOutput(
            model_id, problem_id, answer=None, equation=record.equation,
            error=f"evaluation failed: {exc}",
        )
    return SolverOutput(model_id, problem_id, answer, record.equation)


@dataclass(frozen=True)
class Exemplar:
    """One worked example shown in the few-shot prompt."""

    question: str
    reasoning: str
    answer: str

    def __post_init__(self) -> None:
        if not self.question or not self.reasoning:
            raise PromptConfigError("exemplar question and reasoning required")
        try:
            parse_answer_literal(self.answer)
        except AnswerParseError as exc:
            raise PromptConfigError(
                f"exemplar answer {self.answer!r} is not numeric"
            ) from exc


@dataclass(frozen=True)
class PromptSpec:
    """Few-shot prompt layout; ``exemplar_count`` 0 gives zero-shot."""

    exemplars: tuple[Exemplar, ...]
    instruction_header: str = ""
    answer_marker: str = DEFAULT_ANSWER_MARKER
    exemplar_count: int = 8

    def __post_init__(self) -> None:
        if not self.answer_marker.strip():
            raise PromptConfigError("answer marker must be non-empty")
        if not (0 <= self.exemplar_count <= len(self.exemplars)):
            raise PromptConfigError(
                f"exemplar_count {self.exemplar_count} outside "
                f"0..{len(self.exemplars)}"
            )

    @classmethod
    def from_dict(cls, payload: dict, where: str = "<prompt>") -> "PromptSpec":
        if not isinstance(payload, dict):
            raise PromptConfigError(f"{where}: expected a JSON object")
        exemplars_payload = payload.get("exemplars", [])
        if not isinstance(exemplars_payload, list):
            raise PromptConfigError(f"{where}: exemplars must be a list")
        exemplars = []
        for record in exemplars_payload:
            if not isinstance(record, dict):
                raise PromptConfigError(f"{where}: each exemplar must be an object")
            try:
                exemplars.append(
                    Exemplar(
                        question=str(record["question"]),
                        reasoning=str(record["reasoning"]),
                        answer=str(record["answer"]),
                    )
                )
            except KeyError as exc:
                raise PromptConfigError(
                    f"{where}: exemplar missing field {exc.args[0]!r}"
                ) from None
        return cls(
            exemplars=tuple(exemplars),
            instruction_header=str(payload.get("instruction_header", "")),
            answer_marker=str(payload.get("answer_marker", DEFAULT_ANSWER_MARKER)),
            exemplar_count=int(payload.get("exemplar_count", len(exemplars))),
        )


def default_prompt_spec() -> PromptSpec:
    """The prompt template shipped with the package."""
    text = (
        resources.files("mwpsolve")
        .joinpath("data")
        .joinpath(_DEFAULT_PROMPT_RESOURCE)
        .read_text(encoding="utf-8")
    )
    return PromptSpec.from_dict(json.loads(text), _DEFAULT_PROMPT_RESOURCE)


def build_prompt(problem: Union[Problem, str], spec: PromptSpec) -> str:
    """Render the few-shot prompt for one problem."""
    target = problem.raw_text if isinstance(problem, Problem) else problem
    parts: list[str] = []
    if spec.instruction_header:
        parts.append(spec.instruction_header + "\n\n")
    for exemplar in spec.exemplars[: spec.exemplar_count]:
        parts.append(
            f"Question: {exemplar.question}\n"
            f"Reasoning: {exemplar.reasoning}\n"
            f"{spec.answer_marker} {exemplar.answer}.\n\n"
        )
    parts.append(f"Question: {target}\nReasoning:")
    return "".join(parts)


@dataclass(frozen=True)
class RetryPolicy:
    """HTTP retry schedule: exponential backoff between attempts."""

    max_attempts: int = 3
    backoff_seconds: float = 1.0

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.backoff_seconds < 0:
            raise ValueError("backoff_seconds must be >= 0")


@dataclass(frozen=True)
class EndpointAdapter:
    """Field names mapping requests/responses onto a provider's schema."""

    prompt_field: str = "prompt"
    temperature_field: str = "temperature"
    max_tokens_field: str = "max_tokens"
    samples_field: str = "n"
    seed_field: str = "seed"
    choices_field: str = "choices"
    text_field: str = "text"

    @classmethod
    def from_dict(cls, payload: dict) -> "EndpointAdapter":
        known = {f: str(payload[f]) for f in (
            "prompt_field", "temperature_field", "max_tokens_field",
            "samples_field", "seed_field", "choices_field", "text_field",
        ) if f in payload}
        return cls(**known)


def canonical_request_key(body: dict) -> str:
    """Content address of a request: sha256 over its canonical JSON."""
    canonical = json.dumps(
        body, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GenerationCache:
    """File-per-request store of recorded LLM responses."""

    directory: Path

    def path_for(self, body: dict) -> Path:
        return self.directory / f"{canonical_request_key(body)}.json"

    def get(self, body: dict) -> Optional[list[str]]:
        path = self.path_for(body)
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except json.JSONDecodeError as exc:
            raise BackendError(f"corrupt cache entry {path}: {exc}") from exc
        responses = payload.get("responses") if isinstance(payload, dict) else None
        if not isinstance(responses, list) or not all(
            isinstance(r, str) for r in responses
        ):
            raise BackendError(f"corrupt cache entry {path}: bad responses")
        return responses

    def put(self, body: dict, responses: Sequence[str]) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.path_for(body)
        payload = {"request": body, "responses": list(responses)}
        tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
        tmp.write_text(
            json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        os.replace(tmp, path)


_MODES = ("replay", "record", "live")


@dataclass(frozen=True)
class LlmBackendConfig:
    """How to reach, sample, and cache the LLM endpoint."""

    endpoint: str = ""
    mode: str = "replay"
    temperature: float = 0.7
    num_samples: int = 20
    max_tokens: int = 256
    timeout: float = 30.0
    seed: int = 0
    parallelism: int = 1
    cache_dir: Optional[Path] = None
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    adapter: EndpointAdapter = field(default_factory=EndpointAdapter)

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {_MODES}")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.num_samples > 1 and self.temperature <= 0:
            raise ValueError("sampling several generations needs temperature > 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.mode in ("replay", "record") and self.cache_dir is None:
            raise ValueError(f"{self.mode} mode needs cache_dir")
        if self.mode in ("record", "live") and not self.endpoint:
            raise ValueError(f"{self.mode} mode needs an endpoint")

    @classmethod
    def from_dict(
        cls, payload: dict, base_dir: Optional[Path] = None
    ) -> "LlmBackendConfig":
        if not isinstance(payload, dict):
            raise ValueError("llm config must be a JSON object")
        endpoint = os.environ.get(
            ENDPOINT_ENV_VAR, str(payload.get("endpoint", ""))
        )
        cache_dir = payload.get("cache_dir")
        if cache_dir is not None:
            cache_dir = Path(cache_dir)
            if base_dir is not None and not cache_dir.is_absolute():
                cache_dir = base_dir / cache_dir
        retry_payload = payload.get("retry", {})
        if not isinstance(retry_payload, dict):
            raise ValueError("retry config must be a JSON object")
        adapter_payload = payload.get("adapter", {})
        if not isinstance(adapter_payload, dict):
            raise ValueError("adapter config must be a JSON object")
        return cls(
            endpoint=endpoint,
            mode=str(payload.get("mode", "replay")),
            temperature=float(payload.get("temperature", 0.7)),
            num_samples=int(payload.get("num_samples", 20)),
            max_tokens=int(payload.get("max_tokens", 256)),
            timeout=float(payload.get("timeout", 30.0)),
            seed=int(payload.get("seed", 0)),
            parallelism=int(payload.get("parallelism", 1)),
            cache_dir=cache_dir,
            retry=RetryPolicy(
                max_attempts=int(retry_payload.get("max_attempts", 3)),
                backoff_seconds=float(retry_payload.get("backoff_seconds", 1.0)),
            ),
            adapter=EndpointAdapter.from_dict(adapter_payload),
        )

    def request_body(self, prompt: str, sample_index: int) -> dict:
        """The wire body for one sample; the seed keys the cache entry."""
        adapter = self.adapter
        return {
            adapter.prompt_field: prompt,
            adapter.temperature_field: self.temperature,
            adapter.max_tokens_field: self.max_tokens,
            adapter.samples_field: 1,
            adapter.seed_field: self.seed + sample_index,
        }

    @property
    def cache(self) -> GenerationCache:
        if self.cache_dir is None:
            raise ValueError("no cache_dir configured")
        return GenerationCache(self.cache_dir)


def _choice_text(payload: object, adapter: EndpointAdapter) -> str:
    if not isinstance(payload, dict):
        raise ValueError("response body is not an object")
    choices = payload.get(adapter.choices_field)
    if not isinstance(choices, list) or not choices:
        raise ValueError(f"response has no {adapter.choices_field!r}")
    first = choices[0]
    if isinstance(first, str):
        return first
    if isinstance(first, dict) and isinstance(first.get(adapter.text_field), str):
        return first[adapter.text_field]
    raise ValueError("response choice has no text")


def _fetch_one(body: dict, config: LlmBackendConfig) -> Optional[str]:
    """One sample over HTTP with retries; None when every attempt fails."""
    for attempt in range(config.retry.max_attempts):
        try:
            response = requests.post(
                config.endpoint, json=body, timeout=config.timeout
            )
            response.raise_for_status()
            return _choice_text(response.json(), config.adapter)
        except (requests.RequestException, ValueError):
            if attempt + 1 < config.retry.max_attempts:
                time.sleep(config.retry.backoff_seconds * (2 ** attempt))
    return None


def _obtain_sample(body: dict, config: LlmBackendConfig) -> str:
    if config.mode == "replay":
        responses = config.cache.get(body)
        if responses is None:
            raise ReplayCacheMiss(
                f"no recorded response for request {canonical_request_key(body)} "
                f"in {config.cache_dir}"
            )
        if not responses:
            raise ReplayCacheMiss(
                f"recorded entry {canonical_request_key(body)} is empty"
            )
        return responses[0]
    if config.mode == "record":
        responses = config.cache.get(body)
        if responses:
            return responses[0]
        text = _fetch_one(body, config)
        if text is None:
            # failures are not recorded: a later run may still succeed
            return ""
        config.cache.put(body, [text])
        return text
    text = _fetch_one(body, config)
    return "" if text is None else text


def sample_generations(prompt: str, config: LlmBackendConfig) -> list[str]:
    """Draw ``num_samples`` completions for one prompt, in index order.

    Each sample is its own request (distinguished by seed), so replay
    and record address them individually.  A sample whose attempts all
    fail comes back as "" and never reaches the cache.
    """
    bodies = [config.request_body(prompt, i) for i in range(config.num_samples)]
    if config.parallelism == 1 or len(bodies) == 1:
        return [_obtain_sample(body, config) for body in bodies]
    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        futures = [pool.submit(_obtain_sample, body, config) for body in bodies]
        return [future.result() for future in futures]


_ANSWER_CANDIDATE_RE = re.compile(
    r"-?\d+\(\d+/\d+\)|-?\d+/\d+|-?\d+(?:\.\d+)?%?"
)


def extract_answer(
    text: str,
    marker: str = DEFAULT_ANSWER_MARKER,
    config: NormalizationConfig = DEFAULT_NORMALIZATION,
) -> Optional[AnswerValue]:
    """Pull the final numeric answer out of a generated completion.

    Looks after the last occurrence of the marker first; with no marker
    (or nothing parseable after it), the last parseable number anywhere
    in the text wins.  Returns None when no candidate parses.
    """
    matches = list(_ANSWER_CANDIDATE_RE.finditer(text))
    marker_pos = text.lower().rfind(marker.lower()) if marker else -1
    if marker_pos >= 0:
        after = marker_pos + len(marker)
        for match in matches:
            if match.start() < after:
                continue
            try:
                return parse_answer_literal(match.group(), config)
            except AnswerParseError:
                continue
    for match in reversed(matches):
        try:
            return parse_answer_literal(match.group(), config)
        except AnswerParseError:
            continue
    return None
