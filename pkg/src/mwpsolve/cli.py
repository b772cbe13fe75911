"""Command-line front end for the solving and evaluation pipeline.

Subcommands cover each pipeline stage: ``split-folds``, ``classify``,
``solve``, ``vote``, ``sc``, ``evaluate``, and ``report``.  Every
command exits with a documented status code so shell scripts can tell
usage mistakes from bad inputs and runtime failures apart.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from mwpsolve.backends import (
    BackendError,
    PredictionStoreError,
    PromptConfigError,
    extract_answer,
)
from mwpsolve.classifier import RuleConfigError, classify, default_ruleset, load_rules
from mwpsolve.corpus import (
    DatasetError,
    load_dataset,
    save_folds,
    split_folds,
)
from mwpsolve.ensemble import Vote, plurality_vote, self_consistency
from mwpsolve.eqtree import EvaluationError
from mwpsolve.harness import (
    PERCENT_DISPLAY,
    PipelineConfigError,
    accuracy_from_rows,
    aggregate_report,
    load_pipeline_config,
    run_pipeline,
    vote_trace_payload,
    write_jsonl,
    write_report,
)
from mwpsolve.postproc import as_fraction, normalize_answer

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING_INPUT = 4
EXIT_BAD_DATA = 5
EXIT_PROCESSING = 6

_EPILOG = """\
exit codes:
  0  success
  2  usage error (bad flags or arguments)
  3  configuration error (config, rules, or prompt files)
  4  missing input file
  5  malformed data file (dataset, folds, stores, results)
  6  processing failure (backend or evaluation)
"""


def _read_jsonl(path: Path) -> list[dict]:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"input file not found: {path}") from None
    rows: list[dict] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(row, dict):
            raise DatasetError(f"{path}:{lineno}: expected an object")
        rows.append(row)
    return rows


def _cmd_split_folds(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    folds = split_folds(dataset, k=args.k, seed=args.seed)
    save_folds(folds, args.folds)
    print(f"wrote {args.folds}: k={folds.k} seed={folds.seed} ids={len(folds.assignment)}")
    return EXIT_OK


def _cmd_classify(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    ruleset = load_rules(args.rules) if args.rules else default_ruleset()
    routes = [(p.id, classify(p, ruleset)) for p in sorted(dataset, key=lambda p: p.id)]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_jsonl(
        out_dir / "routing.jsonl",
        [
            {"id": pid, "track": route.track, "matched_rule": route.matched_rule}
            for pid, route in routes
        ],
    )
    counts: dict[str, int] = {}
    for _, route in routes:
        counts[route.track] = counts.get(route.track, 0) + 1
    for track in sorted(counts):
        print(f"{track} {counts[track]}")
    return EXIT_OK


def _cmd_solve(args: argparse.Namespace) -> int:
    config = load_pipeline_config(args.config)
    replacements: dict[str, object] = {}
    if args.dataset:
        replacements["dataset"] = Path(args.dataset)
    if args.rules:
        replacements["rules"] = Path(args.rules)
    if args.folds:
        replacements["validation_folds"] = Path(args.folds)
    if args.tolerance is not None:
        replacements["tolerance"] = as_fraction(args.tolerance)
    if args.workers is not None:
        replacements["workers"] = args.workers
    if replacements:
        config = dataclasses.replace(config, **replacements)
    if args.seed is not None and config.llm is not None:
        config = dataclasses.replace(
            config, llm=dataclasses.replace(config.llm, seed=args.seed)
        )
    outcome = run_pipeline(config, args.out_dir)
    print(f"solved {len(outcome.results)} problems -> {outcome.out_dir}")
    if outcome.accuracy is not None:
        display = normalize_answer(outcome.accuracy, PERCENT_DISPLAY).canonical
        print(f"accuracy {display}")
    return EXIT_OK


def _cmd_vote(args: argparse.Namespace) -> int:
    rows = _read_jsonl(Path(args.input))
    votes_by_problem: dict[str, list[Vote]] = {}
    for index, row in enumerate(rows):
        try:
            problem_id = str(row["problem_id"])
            model_id = str(row["model_id"])
        except KeyError as exc:
            raise DatasetError(
                f"{args.input}: row {index}: missing field {exc.args[0]!r}"
            ) from None
        answer = row.get("answer")
        confidence = row.get("confidence", 1)
        try:
            vote = Vote(
                model_id,
                None if answer is None else as_fraction(str(answer)),
                as_fraction(str(confidence)),
            )
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"{args.input}: row {index}: {exc}") from exc
        votes_by_problem.setdefault(problem_id, []).append(vote)
    tolerance = as_fraction(args.tolerance)
    trace = []
    for problem_id in sorted(votes_by_problem):
        result = plurality_vote(votes_by_problem[problem_id], tolerance)
        trace.append({"id": problem_id, **vote_trace_payload(result)})
    for row in trace:
        print(json.dumps(row, ensure_ascii=False, sort_keys=True))
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_jsonl(out_dir / "votes.jsonl", trace)
    return EXIT_OK


def _cmd_sc(args: argparse.Namespace) -> int:
    rows = _read_jsonl(Path(args.input))
    output = []
    for index, row in enumerate(rows):
        try:
            problem_id = str(row["problem_id"])
            samples = row["samples"]
        except KeyError as exc:
            raise DatasetError(
                f"{args.input}: row {index}: missing field {exc.args[0]!r}"
            ) from None
        if not isinstance(samples, list):
            raise DatasetError(f"{args.input}: row {index}: samples must be a list")
        answers = [extract_answer(str(sample)) for sample in samples]
        output.append((problem_id, self_consistency(answers)))
    for problem_id, sc in sorted(output):
        print(
            json.dumps(
                {
                    "id": problem_id,
                    "winner": (
                        None if sc.winner is None
                        else normalize_answer(sc.winner).canonical
                    ),
                    "count": sc.count,
                    "total": sc.total,
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    rows = _read_jsonl(Path(args.results))
    accuracy = accuracy_from_rows(rows, dataset, as_fraction(args.tolerance))
    print(normalize_answer(accuracy, PERCENT_DISPLAY).canonical)
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    if args.config:
        outcome = run_pipeline(load_pipeline_config(args.config), args.out_dir)
        table = outcome.table
        if table is None:
            print(
                "error: run produced no report (dataset lacks gold answers "
                "or no models configured)",
                file=sys.stderr,
            )
            return EXIT_PROCESSING
        source: Optional[str] = None  # already written by the run
    else:
        path = Path(args.accuracies)
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise FileNotFoundError(f"input file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(payload, dict) or not isinstance(
            payload.get("models"), dict
        ):
            raise DatasetError(f"{path}: expected an object with a 'models' map")
        models = [
            (str(label), as_fraction(str(value)))
            for label, value in payload["models"].items()
        ]
        ensemble = payload.get("ensemble")
        table = aggregate_report(
            models,
            ensemble=(
                ("ensemble", as_fraction(str(ensemble)))
                if ensemble is not None else None
            ),
        )
        source = str(path)
        write_report(table, args.out_dir, source=source)
    for row in table.all_rows():
        print(f"{row.label}\t{row.display}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mwpsolve",
        description="Solve and evaluate math word problems: rule routing, "
        "equation replay voting, and LLM self-consistency.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split-folds", help="deal dataset ids into k folds")
    p.add_argument("--dataset", required=True, help="dataset JSON/JSONL file")
    p.add_argument("--k", type=int, required=True, help="number of folds")
    p.add_argument("--seed", type=int, default=0, help="shuffle seed")
    p.add_argument("--folds", required=True, help="output fold JSON file")
    p.set_defaults(func=_cmd_split_folds)

    p = sub.add_parser("classify", help="route problems and write routing.jsonl")
    p.add_argument("--dataset", required=True, help="dataset JSON/JSONL file")
    p.add_argument("--rules", help="rule config JSON (default: built-in rules)")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("solve", help="run the full pipeline")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--dataset", help="override the config's dataset")
    p.add_argument("--folds", help="override the validation fold file")
    p.add_argument("--rules", help="override the rule config")
    p.add_argument("--tolerance", help="override the grading tolerance")
    p.add_argument("--workers", type=int, help="override worker count")
    p.add_argument("--seed", type=int, help="override the LLM sampling seed")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("vote", help="run plurality voting over recorded votes")
    p.add_argument(
        "--input", required=True,
        help="JSONL rows: problem_id, model_id, answer, confidence",
    )
    p.add_argument("--tolerance", default="1e-4", help="answer grouping tolerance")
    p.add_argument("--out-dir", help="also write votes.jsonl here")
    p.set_defaults(func=_cmd_vote)

    p = sub.add_parser("sc", help="self-consistency over sampled completions")
    p.add_argument(
        "--input", required=True, help="JSONL rows: problem_id, samples"
    )
    p.set_defaults(func=_cmd_sc)

    p = sub.add_parser("evaluate", help="grade a results file against gold answers")
    p.add_argument("--results", required=True, help="results.jsonl from a run")
    p.add_argument("--dataset", required=True, help="dataset with gold answers")
    p.add_argument("--tolerance", default="1e-4", help="grading tolerance")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="aggregate accuracies into report files")
    p.add_argument("--config", help="pipeline config to run and report on")
    p.add_argument(
        "--accuracies",
        help="JSON with a 'models' label->percent map and optional 'ensemble'",
    )
    p.add_argument("--out-dir", required=True, help="output directory")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "report" and bool(args.config) == bool(args.accuracies):
        parser.error("report needs exactly one of --config or --accuracies")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (DatasetError, PredictionStoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_DATA
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_BAD_DATA
    except (
        PipelineConfigError, RuleConfigError, PromptConfigError, ValueError
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BackendError, EvaluationError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROCESSING


if __name__ == "__main__":
    sys.exit(main())
