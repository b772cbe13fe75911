"""Pipeline orchestration: route, solve, vote, grade, and report.

A run loads a dataset and rule set, routes every problem to the
equation-tree track or the LLM track, solves each problem on its track,
grades winners against gold answers, and writes deterministic artifacts
to the output directory: results.jsonl, votes.jsonl, routing.jsonl, and
a three-file accuracy report (text, JSON, and a rendered PNG chart).
Rows are emitted in problem-id order regardless of worker scheduling,
so repeated runs are byte-identical.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Union

from mwpsolve.backends import (
    BackendError,
    LlmBackendConfig,
    PredictionStore,
    PromptSpec,
    SolverOutput,
    build_prompt,
    default_prompt_spec,
    extract_answer,
    replay_solve,
    sample_generations,
)
from mwpsolve.classifier import (
    TRACK_TREE,
    Route,
    RuleSet,
    classify,
    default_ruleset,
    load_rules,
)
from mwpsolve.corpus import Dataset, Problem, load_dataset, load_folds
from mwpsolve.ensemble import (
    SCResult,
    Vote,
    VoteResult,
    plurality_vote,
    self_consistency,
    validation_confidence,
)
from mwpsolve.eqtree import DEFAULT_LIMITS, EvaluationLimits
from mwpsolve.postproc import (
    DEFAULT_NORMALIZATION,
    DEFAULT_TOLERANCE,
    NormalizationConfig,
    answers_equal,
    as_fraction,
    format_exact,
    normalize_answer,
)

__all__ = [
    "LlmOutcome",
    "PipelineConfig",
    "PipelineConfigError",
    "PipelineResult",
    "ProblemResult",
    "ReportRow",
    "ReportTable",
    "TreeModelSpec",
    "PERCENT_DISPLAY",
    "TreeOutcome",
    "accuracy_from_rows",
    "aggregate_report",
    "compute_accuracy",
    "load_pipeline_config",
    "run_pipeline",
    "vote_trace_payload",
    "write_jsonl",
    "write_report",
]

PERCENT_DISPLAY = NormalizationConfig(decimal_places=1, strip_trailing_zeros=False)


class PipelineConfigError(ValueError):
    """A pipeline configuration is inconsistent."""


@dataclass(frozen=True)
class TreeModelSpec:
    """One replayed solver model: its store and optional fixed confidence."""

    model_id: str
    store: Path
    confidence: Optional[Fraction] = None

    def __post_init__(self) -> None:
        if not self.model_id:
            raise PipelineConfigError("model_id must be non-empty")
        if self.confidence is not None and not (0 <= self.confidence <= 1):
            raise PipelineConfigError(
                f"model {self.model_id!r}: confidence outside [0, 1]"
            )


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs; paths are resolved at load time."""

    dataset: Path
    rules: Optional[Path] = None
    prompt: Optional[Path] = None
    tolerance: Fraction = DEFAULT_TOLERANCE
    normalization: NormalizationConfig = DEFAULT_NORMALIZATION
    limits: EvaluationLimits = DEFAULT_LIMITS
    models: tuple[TreeModelSpec, ...] = ()
    validation_folds: Optional[Path] = None
    llm: Optional[LlmBackendConfig] = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise PipelineConfigError("workers must be >= 1")
        if self.tolerance < 0:
            raise PipelineConfigError("tolerance must be >= 0")
        ids = [model.model_id for model in self.models]
        if len(set(ids)) != len(ids):
            raise PipelineConfigError("model ids must be unique")
        if self.models:
            fixed = [m for m in self.models if m.confidence is not None]
            if self.validation_folds is not None and fixed:
                raise PipelineConfigError(
                    "confidence must come from exactly one source: drop the "
                    "per-model values or the validation folds"
                )
            if self.validation_folds is None and len(fixed) != len(self.models):
                raise PipelineConfigError(
                    "either give every model a confidence or set validation folds"
                )


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_pipeline_config(path: Union[str, Path]) -> PipelineConfig:
    """Load a run config; relative paths resolve against the file's folder."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise PipelineConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise PipelineConfigError(f"{path}: expected a JSON object")
    base = path.parent
    try:
        dataset = payload["dataset"]
    except KeyError:
        raise PipelineConfigError(f"{path}: missing field 'dataset'") from None

    tree_payload = payload.get("tree", {})
    if not isinstance(tree_payload, dict):
        raise PipelineConfigError(f"{path}: tree must be a JSON object")
    models = []
    for record in tree_payload.get("models", []):
        if not isinstance(record, dict):
            raise PipelineConfigError(f"{path}: each model must be an object")
        try:
            model_id = str(record["model_id"])
            store = record["store"]
        except KeyError as exc:
            raise PipelineConfigError(
                f"{path}: model missing field {exc.args[0]!r}"
            ) from None
        confidence = record.get("confidence")
        models.append(
            TreeModelSpec(
                model_id=model_id,
                store=_resolve(base, str(store)),
                confidence=None if confidence is None else as_fraction(confidence),
            )
        )
    folds = tree_payload.get("validation_folds")

    llm_payload = payload.get("llm")
    norm_payload = payload.get("normalization", {})
    if not isinstance(norm_payload, dict):
        raise PipelineConfigError(f"{path}: normalization must be a JSON object")
    limits_payload = payload.get("limits", {})
    if not isinstance(limits_payload, dict):
        raise PipelineConfigError(f"{path}: limits must be a JSON object")
    try:
        return PipelineConfig(
            dataset=_resolve(base, str(dataset)),
            rules=(
                _resolve(base, str(payload["rules"]))
                if payload.get("rules") else None
            ),
            prompt=(
                _resolve(base, str(payload["prompt"]))
                if payload.get("prompt") else None
            ),
            tolerance=as_fraction(payload.get("tolerance", DEFAULT_TOLERANCE)),
            normalization=NormalizationConfig(
                decimal_places=int(norm_payload.get("decimal_places", 2)),
                strip_trailing_zeros=bool(
                    norm_payload.get("strip_trailing_zeros", True)
                ),
            ),
            limits=EvaluationLimits(
                max_digits=int(limits_payload.get("max_digits", 5000))
            ),
            models=tuple(models),
            validation_folds=(
                _resolve(base, str(folds)) if folds else None
            ),
            llm=(
                LlmBackendConfig.from_dict(llm_payload, base)
                if llm_payload is not None else None
            ),
            workers=int(payload.get("workers", 1)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, PipelineConfigError):
            raise
        raise PipelineConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class TreeOutcome:
    """Tree-track evidence: per-model outputs, their votes, the vote result."""

    outputs: tuple[SolverOutput, ...]
    votes: tuple[Vote, ...]
    result: VoteResult


@dataclass(frozen=True)
class LlmOutcome:
    """LLM-track evidence: per-sample answers and the consistency result."""

    samples: tuple[Optional[Fraction], ...]
    sc: SCResult


@dataclass(frozen=True)
class ProblemResult:
    """One problem's routed, solved, and graded outcome."""

    problem_id: str
    track: str
    matched_rule: Optional[str]
    winner: Optional[Fraction]
    canonical: Optional[str]
    correct: Optional[bool]
    error: Optional[str] = None
    tree: Optional[TreeOutcome] = None
    llm: Optional[LlmOutcome] = None

    def __post_init__(self) -> None:
        if self.tree is not None and self.llm is not None:
            raise ValueError("a result carries evidence from only one track")
        if self.error is None and self.tree is None and self.llm is None:
            raise ValueError("a result needs track evidence or an error")


@dataclass(frozen=True)
class _Context:
    dataset: Dataset
    ruleset: RuleSet
    prompt_spec: PromptSpec
    models: tuple[TreeModelSpec, ...]
    stores: dict[str, PredictionStore]
    confidences: dict[str, Fraction]
    llm: Optional[LlmBackendConfig]
    tolerance: Fraction
    normalization: NormalizationConfig
    limits: EvaluationLimits


def _build_context(config: PipelineConfig) -> _Context:
    dataset = load_dataset(config.dataset)
    ruleset = load_rules(config.rules) if config.rules else default_ruleset()
    if config.prompt:
        prompt_payload = json.loads(config.prompt.read_text(encoding="utf-8"))
        prompt_spec = PromptSpec.from_dict(prompt_payload, str(config.prompt))
    else:
        prompt_spec = default_prompt_spec()

    stores: dict[str, PredictionStore] = {}
    by_path: dict[Path, PredictionStore] = {}
    for model in config.models:
        if model.store not in by_path:
            by_path[model.store] = PredictionStore.load(model.store)
        stores[model.model_id] = by_path[model.store]

    confidences: dict[str, Fraction] = {}
    if config.models:
        if config.validation_folds is not None:
            folds = load_folds(config.validation_folds)
            if folds.k < len(config.models):
                raise PipelineConfigError(
                    f"{len(config.models)} models need at least as many folds, "
                    f"got k={folds.k}"
                )
            for index, model in enumerate(config.models):
                heldout = [
                    dataset.get(pid)
                    for pid in folds.fold_ids(index)
                    if pid in dataset.ids()
                ]
                if not heldout:
                    raise PipelineConfigError(
                        f"fold {index} holds no problems from the dataset"
                    )
                predicted = {
                    problem.id: replay_solve(
                        problem.id, model.model_id, stores[model.model_id],
                        config.limits, config.normalization,
                    ).answer
                    for problem in heldout
                }
                confidences[model.model_id] = validation_confidence(
                    predicted, heldout, config.tolerance
                )
        else:
            for model in config.models:
                assert model.confidence is not None
                confidences[model.model_id] = model.confidence

    return _Context(
        dataset=dataset,
        ruleset=ruleset,
        prompt_spec=prompt_spec,
        models=config.models,
        stores=stores,
        confidences=confidences,
        llm=config.llm,
        tolerance=config.tolerance,
        normalization=config.normalization,
        limits=config.limits,
    )


def _grade(
    winner: Optional[Fraction], problem: Problem, tolerance: Fraction
) -> Optional[bool]:
    if problem.gold_answer is None:
        return None
    if winner is None:
        return False
    return answers_equal(winner, problem.gold_answer, tolerance)


def _solve_tree(problem: Problem, route: Route, ctx: _Context) -> ProblemResult:
    if not ctx.models:
        return ProblemResult(
            problem.id, route.track, route.matched_rule,
            winner=None, canonical=None,
            correct=_grade(None, problem, ctx.tolerance),
            error="no tree models configured",
        )
    outputs = tuple(
        replay_solve(
            problem.id, model.model_id, ctx.stores[model.model_id],
            ctx.limits, ctx.normalization,
        )
        for model in ctx.models
    )
    votes = tuple(
        Vote(output.model_id, output.answer, ctx.confidences[output.model_id])
        for output in outputs
    )
    result = plurality_vote(votes, ctx.tolerance)
    winner = result.winner.representative if result.winner else None
    canonical = (
        normalize_answer(winner, ctx.normalization).canonical
        if winner is not None else None
    )
    return ProblemResult(
        problem.id, route.track, route.matched_rule,
        winner=winner, canonical=canonical,
        correct=_grade(winner, problem, ctx.tolerance),
        tree=TreeOutcome(outputs, votes, result),
    )


def _solve_llm(problem: Problem, route: Route, ctx: _Context) -> ProblemResult:
    if ctx.llm is None:
        return ProblemResult(
            problem.id, route.track, route.matched_rule,
            winner=None, canonical=None,
            correct=_grade(None, problem, ctx.tolerance),
            error="no llm backend configured",
        )
    prompt = build_prompt(problem, ctx.prompt_spec)
    try:
        texts = sample_generations(prompt, ctx.llm)
    except BackendError as exc:
        return ProblemResult(
            problem.id, route.track, route.matched_rule,
            winner=None, canonical=None,
            correct=_grade(None, problem, ctx.tolerance),
            error=str(exc),
        )
    answers = [
        extract_answer(text, ctx.prompt_spec.answer_marker, ctx.normalization)
        for text in texts
    ]
    sc = self_consistency(answers)
    winner = sc.winner
    canonical = (
        normalize_answer(winner, ctx.normalization).canonical
        if winner is not None else None
    )
    return ProblemResult(
        problem.id, route.track, route.matched_rule,
        winner=winner, canonical=canonical,
        correct=_grade(winner, problem, ctx.tolerance),
        llm=LlmOutcome(
            samples=tuple(a.value if a is not None else None for a in answers),
            sc=sc,
        ),
    )


def _solve_one(problem: Problem, route: Route, ctx: _Context) -> ProblemResult:
    if route.track == TRACK_TREE:
        return _solve_tree(problem, route, ctx)
    return _solve_llm(problem, route, ctx)


def compute_accuracy(
    results: Sequence[ProblemResult],
    dataset: Dataset,
    tolerance: Union[Fraction, int, float, str] = DEFAULT_TOLERANCE,
) -> Fraction:
    """Exact percent of correct winners; every result needs a gold answer."""
    if not results:
        raise ValueError("no results to grade")
    tol = as_fraction(tolerance)
    correct = 0
    for result in results:
        problem = dataset.get(result.problem_id)
        if problem.gold_answer is None:
            raise ValueError(f"problem {problem.id!r} has no gold answer")
        if result.winner is not None and answers_equal(
            result.winner, problem.gold_answer, tol
        ):
            correct += 1
    return Fraction(100 * correct, len(results))


def accuracy_from_rows(
    rows: Sequence[dict],
    dataset: Dataset,
    tolerance: Union[Fraction, int, float, str] = DEFAULT_TOLERANCE,
) -> Fraction:
    """Grade saved results.jsonl rows against a dataset's gold answers."""
    if not rows:
        raise ValueError("no results to grade")
    tol = as_fraction(tolerance)
    correct = 0
    for row in rows:
        problem = dataset.get(str(row.get("id")))
        if problem.gold_answer is None:
            raise ValueError(f"problem {problem.id!r} has no gold answer")
        winner = row.get("winner")
        if winner is not None and answers_equal(
            as_fraction(str(winner)), problem.gold_answer, tol
        ):
            correct += 1
    return Fraction(100 * correct, len(rows))


@dataclass(frozen=True)
class ReportRow:
    """One accuracy line: exact percent plus its fixed one-decimal display."""

    label: str
    accuracy: Fraction
    display: str

    @classmethod
    def make(cls, label: str, accuracy: Union[Fraction, int, float, str]) -> "ReportRow":
        exact = as_fraction(accuracy)
        return cls(label, exact, normalize_answer(exact, PERCENT_DISPLAY).canonical)


@dataclass(frozen=True)
class ReportTable:
    """Per-model rows, their mean, and the optional ensemble row."""

    model_rows: tuple[ReportRow, ...]
    mean_row: ReportRow
    ensemble_row: Optional[ReportRow] = None

    def all_rows(self) -> tuple[ReportRow, ...]:
        rows = self.model_rows + (self.mean_row,)
        if self.ensemble_row is not None:
            rows += (self.ensemble_row,)
        return rows


def aggregate_report(
    model_accuracies: Sequence[tuple[str, Union[Fraction, int, float, str]]],
    ensemble: Optional[tuple[str, Union[Fraction, int, float, str]]] = None,
) -> ReportTable:
    """Build the accuracy table: model rows, exact mean, optional ensemble.

    The mean is computed on exact rationals and only then rounded to one
    decimal, so displayed model rows never skew it.
    """
    if not model_accuracies:
        raise ValueError("report needs at least one model accuracy")
    rows = tuple(ReportRow.make(label, value) for label, value in model_accuracies)
    mean = sum((row.accuracy for row in rows), Fraction(0)) / len(rows)
    return ReportTable(
        model_rows=rows,
        mean_row=ReportRow.make("baseline-mean", mean),
        ensemble_row=(
            ReportRow.make(ensemble[0], ensemble[1]) if ensemble else None
        ),
    )


def write_report(
    table: ReportTable, out_dir: Union[str, Path], source: Optional[str] = None
) -> dict[str, Path]:
    """Write report.txt, report.json, and the report.png chart."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = table.all_rows()
    width = max(len(row.label) for row in rows)

    lines = ["solver accuracy (%)", ""]
    lines += [f"{row.label.ljust(width)}  {row.display.rjust(6)}" for row in rows]
    if source:
        lines += ["", f"source: {source}"]
    txt_path = out_dir / "report.txt"
    txt_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    def row_payload(row: ReportRow) -> dict:
        return {
            "label": row.label,
            "accuracy_percent": float(row.accuracy),
            "display": row.display,
        }

    json_path = out_dir / "report.json"
    json_payload = {
        "rows": [row_payload(row) for row in table.model_rows],
        "baseline_mean": row_payload(table.mean_row),
        "ensemble": (
            row_payload(table.ensemble_row) if table.ensemble_row else None
        ),
        "source": source,
    }
    json_path.write_text(
        json.dumps(json_payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )

    png_path = out_dir / "report.png"
    _render_chart(table, png_path)
    return {"txt": txt_path, "json": json_path, "png": png_path}


def _render_chart(table: ReportTable, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [row.label for row in table.model_rows]
    values = [float(row.accuracy) for row in table.model_rows]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.8 * len(labels) + 2), 4.0))
    ax.bar(labels, values, color="#4878a8", label="models")
    mean = float(table.mean_row.accuracy)
    ax.axhline(
        mean, color="#333333", linestyle="--", linewidth=1,
        label=f"baseline-mean {table.mean_row.display}",
    )
    if table.ensemble_row is not None:
        ax.bar(
            [table.ensemble_row.label],
            [float(table.ensemble_row.accuracy)],
            color="#b8860b",
            label=f"{table.ensemble_row.label} {table.ensemble_row.display}",
        )
    ax.set_ylabel("accuracy (%)")
    ax.legend(loc="best", fontsize="small")
    if len(labels) > 6:
        plt.setp(ax.get_xticklabels(), rotation=45, ha="right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


@dataclass(frozen=True)
class PipelineResult:
    """A finished run: per-problem results plus the aggregate view."""

    results: tuple[ProblemResult, ...]
    routes: dict[str, Route]
    accuracy: Optional[Fraction]
    table: Optional[ReportTable]
    out_dir: Path


def _fmt(value: Optional[Fraction]) -> Optional[str]:
    return None if value is None else format_exact(value)


def _result_row(result: ProblemResult) -> dict:
    row: dict[str, object] = {
        "id": result.problem_id,
        "track": result.track,
        "matched_rule": result.matched_rule,
        "winner": _fmt(result.winner),
        "canonical": result.canonical,
        "correct": result.correct,
        "error": result.error,
    }
    if result.tree is not None:
        row["model_answers"] = [
            {
                "model_id": output.model_id,
                "equation": output.equation,
                "answer": _fmt(vote.answer),
                "confidence": format_exact(vote.confidence),
                "error": output.error,
            }
            for output, vote in zip(result.tree.outputs, result.tree.votes)
        ]
        row["voting"] = vote_trace_payload(result.tree.result)
    if result.llm is not None:
        row["sample_answers"] = [_fmt(value) for value in result.llm.samples]
        sc = result.llm.sc
        row["sc"] = {
            "winner": _fmt(sc.winner),
            "count": sc.count,
            "total": sc.total,
            "first_seen_index": sc.first_seen_index,
        }
    return row


def vote_trace_payload(result: VoteResult) -> dict:
    return {
        "groups": [
            {
                "answer": format_exact(group.representative),
                "members": list(group.model_ids),
                "count": group.count,
                "confidence_sum": format_exact(group.confidence_sum),
            }
            for group in result.groups
        ],
        "winner": (
            format_exact(result.winner.representative)
            if result.winner is not None else None
        ),
        "decided_by": result.decided_by,
    }


def write_jsonl(path: Path, rows: Sequence[dict]) -> None:
    body = "\n".join(
        json.dumps(row, ensure_ascii=False, sort_keys=True) for row in rows
    )
    path.write_text(body + "\n" if rows else "", encoding="utf-8")


def run_pipeline(config: PipelineConfig, out_dir: Union[str, Path]) -> PipelineResult:
    """Execute a full run and write its artifacts under ``out_dir``."""
    ctx = _build_context(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    ordered = sorted(ctx.dataset, key=lambda problem: problem.id)
    routes = {p.id: classify(p, ctx.ruleset) for p in ordered}

    if config.workers == 1 or len(ordered) <= 1:
        results = [_solve_one(p, routes[p.id], ctx) for p in ordered]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = [
                pool.submit(_solve_one, p, routes[p.id], ctx) for p in ordered
            ]
            results = [future.result() for future in futures]

    write_jsonl(
        out_dir / "routing.jsonl",
        [
            {
                "id": p.id,
                "track": routes[p.id].track,
                "matched_rule": routes[p.id].matched_rule,
            }
            for p in ordered
        ],
    )
    write_jsonl(out_dir / "results.jsonl", [_result_row(r) for r in results])
    write_jsonl(
        out_dir / "votes.jsonl",
        [
            {"id": r.problem_id, **vote_trace_payload(r.tree.result)}
            for r in results
            if r.tree is not None
        ],
    )

    accuracy: Optional[Fraction] = None
    table: Optional[ReportTable] = None
    graded = all(p.gold_answer is not None for p in ordered)
    if graded and results:
        accuracy = compute_accuracy(results, ctx.dataset, ctx.tolerance)
        if ctx.models:
            model_rows = []
            for model in ctx.models:
                predicted = {
                    p.id: replay_solve(
                        p.id, model.model_id, ctx.stores[model.model_id],
                        ctx.limits, ctx.normalization,
                    ).answer
                    for p in ordered
                }
                solo = validation_confidence(predicted, ordered, ctx.tolerance)
                model_rows.append((model.model_id, 100 * solo))
            table = aggregate_report(model_rows, ensemble=("ensemble", accuracy))
            write_report(table, out_dir, source=ctx.dataset.source_path)

    return PipelineResult(
        results=tuple(results),
        routes=routes,
        accuracy=accuracy,
        table=table,
        out_dir=out_dir,
    )
