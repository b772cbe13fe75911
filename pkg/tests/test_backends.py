"""Prediction stores, prompt building, HTTP sampling, and the record/replay cache."""

import json
from fractions import Fraction
from pathlib import Path

import pytest

from mwpsolve.backends import (
    DEFAULT_ANSWER_MARKER,
    ENDPOINT_ENV_VAR,
    BackendError,
    EndpointAdapter,
    Exemplar,
    GenerationCache,
    LlmBackendConfig,
    PredictionStore,
    PredictionStoreError,
    PromptConfigError,
    PromptSpec,
    ReplayCacheMiss,
    RetryPolicy,
    build_prompt,
    canonical_request_key,
    default_prompt_spec,
    extract_answer,
    parse_prediction_equation,
    replay_solve,
    sample_generations,
)
from mwpsolve.corpus import Problem
from mwpsolve.eqtree import EquationParseError, evaluate


def write_store(path: Path, rows):
    path.write_text(
        "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows),
        encoding="utf-8",
    )
    return path


class TestParsePredictionEquation:
    def test_preorder(self):
        tree = parse_prediction_equation("/ * 450 2 1000")
        assert evaluate(tree).value == Fraction(9, 10)

    def test_bracketed_preorder(self):
        assert evaluate(parse_prediction_equation("[+ 180 150]")).value == 330

    def test_infix_fallback(self):
        assert evaluate(parse_prediction_equation("x = 180 + 150")).value == 330

    def test_unparseable(self):
        with pytest.raises(EquationParseError):
            parse_prediction_equation("+ one 2")


class TestPredictionStore:
    def test_load_and_lookup(self, tmp_path):
        path = write_store(
            tmp_path / "m.jsonl",
            [
                {"problem_id": "p1", "model_id": "M0", "equation": "x = 1 + 2"},
                {"problem_id": "p2", "model_id": "M0", "equation": "[- 9 4]"},
            ],
        )
        store = PredictionStore.load(path)
        assert store.lookup("M0", "p1").equation == "x = 1 + 2"
        assert store.lookup("M0", "missing") is None
        assert store.model_ids() == ("M0",)
        assert store.source_path == str(path)

    def test_confidence_context_kept(self, tmp_path):
        path = write_store(
            tmp_path / "m.jsonl",
            [{
                "problem_id": "p1", "model_id": "M0", "equation": "x = 1",
                "confidence_context": {"fold": 3},
            }],
        )
        assert PredictionStore.load(path).lookup("M0", "p1").confidence_context == {
            "fold": 3
        }

    @pytest.mark.parametrize(
        "row, fragment",
        [
            ({"model_id": "M0", "equation": "x = 1"}, "problem_id"),
            ({"problem_id": "p", "equation": "x = 1"}, "model_id"),
            ({"problem_id": "p", "model_id": "M0"}, "equation"),
            ({"problem_id": "p", "model_id": "M0", "equation": "  "}, "non-empty"),
            ({"problem_id": "p", "model_id": "M0", "equation": "1 +"}, "unparseable"),
            (
                {"problem_id": "p", "model_id": "M0", "equation": "x = 1",
                 "confidence_context": 5},
                "confidence_context",
            ),
        ],
    )
    def test_bad_rows_rejected(self, tmp_path, row, fragment):
        path = write_store(tmp_path / "m.jsonl", [row])
        with pytest.raises(PredictionStoreError, match=fragment):
            PredictionStore.load(path)

    def test_error_carries_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"problem_id": "p", "model_id": "M0", "equation": "x = 1"}\nnot json\n')
        with pytest.raises(PredictionStoreError, match=":2"):
            PredictionStore.load(path)

    def test_duplicate_key_rejected(self, tmp_path):
        row = {"problem_id": "p1", "model_id": "M0", "equation": "x = 1"}
        path = write_store(tmp_path / "m.jsonl", [row, row])
        with pytest.raises(PredictionStoreError, match="duplicate"):
            PredictionStore.load(path)

    def test_merge(self, tmp_path):
        a = PredictionStore.load(write_store(
            tmp_path / "a.jsonl",
            [{"problem_id": "p1", "model_id": "M0", "equation": "x = 1"}],
        ))
        b = PredictionStore.load(write_store(
            tmp_path / "b.jsonl",
            [{"problem_id": "p1", "model_id": "M1", "equation": "x = 2"}],
        ))
        merged = PredictionStore.merge([a, b])
        assert merged.model_ids() == ("M0", "M1")

    def test_merge_rejects_cross_store_duplicates(self, tmp_path):
        row = {"problem_id": "p1", "model_id": "M0", "equation": "x = 1"}
        a = PredictionStore.load(write_store(tmp_path / "a.jsonl", [row]))
        b = PredictionStore.load(write_store(tmp_path / "b.jsonl", [row]))
        with pytest.raises(PredictionStoreError, match="across stores"):
            PredictionStore.merge([a, b])

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            PredictionStore.load(tmp_path / "absent.jsonl")


class TestReplaySolve:
    def store(self, tmp_path):
        return PredictionStore.load(write_store(
            tmp_path / "m.jsonl",
            [
                {"problem_id": "p1", "model_id": "M0", "equation": "x = 180 + 150"},
                {"problem_id": "bad", "model_id": "M0", "equation": "x = 1 / 0"},
            ],
        ))

    def test_answer(self, tmp_path):
        output = replay_solve("p1", "M0", self.store(tmp_path))
        assert output.answer.value == Fraction(330)
        assert output.equation == "x = 180 + 150"
        assert output.error is None

    def test_missing_prediction_abstains_with_provenance(self, tmp_path):
        output = replay_solve("p9", "M0", self.store(tmp_path))
        assert output.answer is None
        assert "p9" in output.error
        assert "M0" in output.error
        assert "m.jsonl" in output.error

    def test_evaluation_failure_abstains(self, tmp_path):
        output = replay_solve("bad", "M0", self.store(tmp_path))
        assert output.answer is None
        assert "evaluation failed" in output.error


class TestPromptSpec:
    def test_exemplar_answer_must_parse(self):
        with pytest.raises(PromptConfigError, match="not numeric"):
            Exemplar("q", "r", "many")

    def test_exemplar_fields_required(self):
        with pytest.raises(PromptConfigError):
            Exemplar("", "r", "1")

    def test_count_bounds(self):
        exemplar = Exemplar("q", "r", "1")
        with pytest.raises(PromptConfigError, match="exemplar_count"):
            PromptSpec(exemplars=(exemplar,), exemplar_count=2)

    def test_marker_required(self):
        with pytest.raises(PromptConfigError, match="marker"):
            PromptSpec(exemplars=(), answer_marker="  ", exemplar_count=0)

    def test_from_dict_defaults_count_to_all(self):
        spec = PromptSpec.from_dict(
            {"exemplars": [{"question": "q", "reasoning": "r", "answer": "1"}]}
        )
        assert spec.exemplar_count == 1

    def test_from_dict_missing_field(self):
        with pytest.raises(PromptConfigError, match="missing field"):
            PromptSpec.from_dict({"exemplars": [{"question": "q"}]})

    def test_default_spec_ships_eight_shot(self):
        spec = default_prompt_spec()
        assert spec.exemplar_count == 8
        assert len(spec.exemplars) >= 8
        assert spec.answer_marker == DEFAULT_ANSWER_MARKER


class TestBuildPrompt:
    def spec(self, count=2, header="Solve each problem."):
        return PromptSpec(
            exemplars=(
                Exemplar("What is 1 + 1?", "1 and 1 make 2.", "2"),
                Exemplar("What is 2 + 2?", "2 and 2 make 4.", "4"),
            ),
            instruction_header=header,
            exemplar_count=count,
        )

    def test_layout(self):
        prompt = build_prompt("What is 3 + 3?", self.spec())
        assert prompt == (
            "Solve each problem.\n\n"
            "Question: What is 1 + 1?\n"
            "Reasoning: 1 and 1 make 2.\n"
            "The answer is 2.\n\n"
            "Question: What is 2 + 2?\n"
            "Reasoning: 2 and 2 make 4.\n"
            "The answer is 4.\n\n"
            "Question: What is 3 + 3?\n"
            "Reasoning:"
        )

    def test_exemplar_count_limits_shots(self):
        prompt = build_prompt("t", self.spec(count=1))
        assert "2 + 2" not in prompt

    def test_zero_shot_without_header(self):
        prompt = build_prompt("t", self.spec(count=0, header=""))
        assert prompt == "Question: t\nReasoning:"

    def test_accepts_problem_objects(self):
        problem = Problem("p1", ("hi",), "raw words")
        assert "Question: raw words" in build_prompt(problem, self.spec())


class TestRequestShape:
    def test_canonical_key_ignores_insertion_order(self):
        a = {"prompt": "你好", "seed": 1}
        b = {"seed": 1, "prompt": "你好"}
        assert canonical_request_key(a) == canonical_request_key(b)

    def test_key_distinguishes_seeds(self):
        assert canonical_request_key({"seed": 1}) != canonical_request_key({"seed": 2})

    def test_request_body_fields(self, tmp_path):
        config = LlmBackendConfig(cache_dir=tmp_path, seed=100, num_samples=20)
        body = config.request_body("P", 3)
        assert body == {
            "prompt": "P", "temperature": 0.7, "max_tokens": 256,
            "n": 1, "seed": 103,
        }

    def test_adapter_renames_fields(self, tmp_path):
        adapter = EndpointAdapter.from_dict(
            {"prompt_field": "input", "seed_field": "rng"}
        )
        config = LlmBackendConfig(cache_dir=tmp_path, adapter=adapter)
        body = config.request_body("P", 0)
        assert body["input"] == "P"
        assert body["rng"] == 0
        assert "prompt" not in body


class TestGenerationCache:
    def test_put_get_round_trip(self, tmp_path):
        cache = GenerationCache(tmp_path / "cache")
        body = {"prompt": "P", "seed": 0}
        cache.put(body, ["first response"])
        assert cache.get(body) == ["first response"]

    def test_get_missing(self, tmp_path):
        assert GenerationCache(tmp_path).get({"seed": 0}) is None

    def test_no_temp_files_left(self, tmp_path):
        cache = GenerationCache(tmp_path / "cache")
        cache.put({"seed": 0}, ["r"])
        names = [p.name for p in (tmp_path / "cache").iterdir()]
        assert len(names) == 1
        assert names[0].endswith(".json")
        assert not names[0].startswith(".")

    def test_entry_is_keyed_by_content_digest(self, tmp_path):
        cache = GenerationCache(tmp_path)
        body = {"prompt": "P", "seed": 5}
        cache.put(body, ["r"])
        assert cache.path_for(body).name == f"{canonical_request_key(body)}.json"

    def test_corrupt_entry_raises(self, tmp_path):
        cache = GenerationCache(tmp_path)
        body = {"seed": 0}
        cache.path_for(body).write_text("{broken", encoding="utf-8")
        with pytest.raises(BackendError, match="corrupt"):
            cache.get(body)

    def test_wrong_shape_raises(self, tmp_path):
        cache = GenerationCache(tmp_path)
        body = {"seed": 0}
        cache.path_for(body).write_text(json.dumps({"responses": [1, 2]}))
        with pytest.raises(BackendError, match="bad responses"):
            cache.get(body)


class TestLlmBackendConfig:
    def test_mode_validation(self, tmp_path):
        with pytest.raises(ValueError, match="unknown mode"):
            LlmBackendConfig(mode="offline", cache_dir=tmp_path)

    def test_replay_needs_cache_dir(self):
        with pytest.raises(ValueError, match="cache_dir"):
            LlmBackendConfig(mode="replay")

    def test_record_needs_endpoint(self, tmp_path):
        with pytest.raises(ValueError, match="endpoint"):
            LlmBackendConfig(mode="record", cache_dir=tmp_path)

    def test_live_needs_no_cache(self):
        config = LlmBackendConfig(mode="live", endpoint="http://e")
        with pytest.raises(ValueError, match="cache_dir"):
            config.cache

    def test_multi_sample_needs_positive_temperature(self, tmp_path):
        with pytest.raises(ValueError, match="temperature"):
            LlmBackendConfig(cache_dir=tmp_path, temperature=0.0, num_samples=20)
        LlmBackendConfig(cache_dir=tmp_path, temperature=0.0, num_samples=1)

    def test_retry_policy_validation(self):
        with pytest.raises(ValueError):
            RetryPolicy(max_attempts=0)
        with pytest.raises(ValueError):
            RetryPolicy(backoff_seconds=-1)

    def test_from_dict_resolves_relative_cache(self, tmp_path):
        config = LlmBackendConfig.from_dict(
            {"mode": "replay", "cache_dir": "cache"}, base_dir=tmp_path
        )
        assert config.cache_dir == tmp_path / "cache"

    def test_env_var_overrides_endpoint(self, tmp_path, monkeypatch):
        monkeypatch.setenv(ENDPOINT_ENV_VAR, "http://override")
        config = LlmBackendConfig.from_dict(
            {"mode": "record", "cache_dir": str(tmp_path), "endpoint": "http://orig"}
        )
        assert config.endpoint == "http://override"

    def test_from_dict_reads_retry_and_adapter(self, tmp_path):
        config = LlmBackendConfig.from_dict({
            "mode": "replay",
            "cache_dir": str(tmp_path),
            "retry": {"max_attempts": 5, "backoff_seconds": 0.5},
            "adapter": {"text_field": "completion"},
        })
        assert config.retry.max_attempts == 5
        assert config.adapter.text_field == "completion"


def replay_config(cache_dir, **kw):
    kw.setdefault("mode", "replay")
    kw.setdefault("num_samples", 3)
    return LlmBackendConfig(cache_dir=cache_dir, **kw)


class TestSampleGenerationsReplay:
    def test_reads_cached_samples_in_order(self, tmp_path):
        config = replay_config(tmp_path)
        for i in range(3):
            config.cache.put(config.request_body("P", i), [f"text {i}"])
        assert sample_generations("P", config) == ["text 0", "text 1", "text 2"]

    def test_miss_names_digest_and_directory(self, tmp_path):
        config = replay_config(tmp_path)
        missing = canonical_request_key(config.request_body("P", 0))
        with pytest.raises(ReplayCacheMiss) as err:
            sample_generations("P", config)
        assert missing in str(err.value)
        assert str(tmp_path) in str(err.value)

    def test_no_network_needed(self, tmp_path):
        # endpoint left empty on purpose: replay must never call out
        config = replay_config(tmp_path, num_samples=1)
        config.cache.put(config.request_body("P", 0), ["only"])
        assert sample_generations("P", config) == ["only"]


class TestSampleGenerationsHttp:
    def record_config(self, url, cache_dir, **kw):
        kw.setdefault("num_samples", 3)
        kw.setdefault("retry", RetryPolicy(max_attempts=2, backoff_seconds=0.0))
        return LlmBackendConfig(
            endpoint=url, mode="record", cache_dir=cache_dir, **kw
        )

    def test_record_then_replay_without_server(self, tmp_path, llm_server):
        config = self.record_config(llm_server.url, tmp_path / "cache")
        first = sample_generations("P", config)
        assert first == ["The answer is 0.", "The answer is 1.", "The answer is 2."]
        assert len(llm_server.requests) == 3

        # a second record run is served from the cache, no new requests
        assert sample_generations("P", config) == first
        assert len(llm_server.requests) == 3

        replay = replay_config(tmp_path / "cache")
        assert sample_generations("P", replay) == first

    def test_request_bodies_carry_distinct_seeds(self, tmp_path, llm_server):
        config = self.record_config(llm_server.url, tmp_path / "cache", seed=40)
        sample_generations("P", config)
        assert sorted(r["seed"] for r in llm_server.requests) == [40, 41, 42]
        assert all(r["n"] == 1 for r in llm_server.requests)

    def test_retry_recovers_after_one_failure(self, tmp_path, llm_server):
        failed = []

        def flaky(body):
            if body["seed"] == 0 and not failed:
                failed.append(body)
                return 500, {}
            return 200, {"choices": [{"text": "ok"}]}

        llm_server.respond = flaky
        config = self.record_config(llm_server.url, tmp_path / "c", num_samples=1)
        assert sample_generations("P", config) == ["ok"]
        assert len(llm_server.requests) == 2

    def test_exhausted_retries_yield_empty_and_skip_cache(self, tmp_path, llm_server):
        def selective(body):
            if body["seed"] == 1:
                return 500, {}
            return 200, {"choices": [{"text": f"s{body['seed']}"}]}

        llm_server.respond = selective
        config = self.record_config(llm_server.url, tmp_path / "c")
        assert sample_generations("P", config) == ["s0", "", "s2"]
        # the failed sample must not be cached; a later run can retry it
        assert config.cache.get(config.request_body("P", 1)) is None
        assert config.cache.get(config.request_body("P", 0)) == ["s0"]

    def test_malformed_response_body_yields_empty(self, tmp_path, llm_server):
        llm_server.respond = lambda body: (200, {"unexpected": True})
        config = self.record_config(llm_server.url, tmp_path / "c", num_samples=1)
        assert sample_generations("P", config) == [""]

    def test_live_mode_writes_nothing(self, tmp_path, llm_server):
        config = LlmBackendConfig(
            endpoint=llm_server.url, mode="live", num_samples=2,
            retry=RetryPolicy(max_attempts=1, backoff_seconds=0.0),
        )
        assert sample_generations("P", config) == [
            "The answer is 0.", "The answer is 1.",
        ]
        assert list(tmp_path.iterdir()) == []

    def test_parallel_results_keep_index_order(self, tmp_path, llm_server):
        config = self.record_config(
            llm_server.url, tmp_path / "c", num_samples=8, parallelism=4
        )
        results = sample_generations("P", config)
        assert results == [f"The answer is {i}." for i in range(8)]

    def test_string_choices_accepted(self, tmp_path, llm_server):
        llm_server.respond = lambda body: (200, {"choices": ["plain text"]})
        config = self.record_config(llm_server.url, tmp_path / "c", num_samples=1)
        assert sample_generations("P", config) == ["plain text"]

    def test_custom_adapter_end_to_end(self, tmp_path, llm_server):
        adapter = EndpointAdapter(
            prompt_field="input", choices_field="outputs", text_field="completion"
        )
        llm_server.respond = lambda body: (
            200, {"outputs": [{"completion": body["input"] + "!"}]}
        )
        config = self.record_config(
            llm_server.url, tmp_path / "c", num_samples=1, adapter=adapter
        )
        assert sample_generations("Hi", config) == ["Hi!"]


class TestExtractAnswer:
    @pytest.mark.parametrize(
        "text, value",
        [
            ("Two bags are 900 grams. The answer is 0.9.", Fraction(9, 10)),
            ("the ANSWER IS 42", Fraction(42)),
            ("The answer is 1. No wait. The answer is 2.", Fraction(2)),
            ("The answer is -5.", Fraction(-5)),
            ("The answer is 1(1/2).", Fraction(3, 2)),
            ("The answer is 3/4.", Fraction(3, 4)),
            ("The answer is 40%.", Fraction(2, 5)),
            ("所以应该填25。", Fraction(25)),
            ("I see 7 and then 8", Fraction(8)),
            ("Around 3.5 meters total", Fraction(7, 2)),
        ],
    )
    def test_extraction(self, text, value):
        answer = extract_answer(text)
        assert answer is not None
        assert answer.value == value

    def test_unparseable_after_marker_falls_back(self):
        text = "First compute 12. The answer is unknown."
        assert extract_answer(text).value == Fraction(12)

    def test_division_by_zero_candidate_skipped(self):
        text = "Ratio 1/0 is undefined, total stays 9"
        assert extract_answer(text).value == Fraction(9)

    def test_nothing_parseable(self):
        assert extract_answer("The answer is 1/0.") is None
        assert extract_answer("no numbers here") is None
        assert extract_answer("") is None

    def test_custom_marker(self):
        assert extract_answer("答案是 25。", marker="答案是").value == Fraction(25)
