"""Problem corpus: loading, saving, tokenization, and fold splitting.

Datasets are JSON arrays or JSONL files of records with ``id``,
``original_text``, optional pre-segmented ``segmented_text``, an
optional ``equation`` (written as ``x = ...``), and an optional gold
``ans`` literal.  Fold assignment is deterministic: ids are sorted,
shuffled by a seeded Mersenne Twister, and dealt round-robin.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

from mwpsolve.postproc import (
    AnswerParseError,
    AnswerValue,
    format_exact,
    parse_answer_literal,
)

__all__ = [
    "Dataset",
    "DatasetError",
    "FOLD_GENERATOR",
    "FoldAssignment",
    "Problem",
    "fold_split",
    "is_cjk_char",
    "load_dataset",
    "load_folds",
    "save_dataset",
    "save_folds",
    "split_folds",
    "tokenize_text",
]

# shuffle implementation pinned into fold files so foreign folds are refused
FOLD_GENERATOR = "python-random-mt19937"

_EQUATION_PREFIX = "x"

_CJK_RANGES = (
    (0x4E00, 0x9FFF),  # unified ideographs
    (0x3400, 0x4DBF),  # ideograph extension A
    (0x3000, 0x303F),  # CJK symbols and punctuation
    (0xFF00, 0xFFEF),  # full-width forms
)


class DatasetError(ValueError):
    """A dataset or fold file is missing required structure."""


def is_cjk_char(ch: str) -> bool:
    code = ord(ch)
    return any(lo <= code <= hi for lo, hi in _CJK_RANGES)


def tokenize_text(text: str) -> tuple[str, ...]:
    """Split on whitespace, with each CJK character its own token."""
    tokens: list[str] = []
    current: list[str] = []

    def flush() -> None:
        if current:
            tokens.append("".join(current))
            current.clear()

    for ch in text:
        if ch.isspace():
            flush()
        elif is_cjk_char(ch):
            flush()
            tokens.append(ch)
        else:
            current.append(ch)
    flush()
    return tuple(tokens)


@dataclass(frozen=True)
class Problem:
    """One word problem, tokenized, with optional gold equation and answer."""

    id: str
    text: tuple[str, ...]
    raw_text: str
    equation_text: Optional[str] = None
    gold_answer: Optional[AnswerValue] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise DatasetError("problem id must be non-empty")
        if not self.raw_text:
            raise DatasetError(f"problem {self.id!r} has empty text")


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of problems with unique ids."""

    problems: tuple[Problem, ...]
    source_path: Optional[str] = None

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for problem in self.problems:
            if problem.id in seen:
                raise DatasetError(f"duplicate problem id {problem.id!r}")
            seen.add(problem.id)

    @cached_property
    def _index(self) -> dict[str, Problem]:
        return {problem.id: problem for problem in self.problems}

    def __len__(self) -> int:
        return len(self.problems)

    def __iter__(self) -> Iterator[Problem]:
        return iter(self.problems)

    def get(self, problem_id: str) -> Problem:
        try:
            return self._index[problem_id]
        except KeyError:
            raise KeyError(f"no problem with id {problem_id!r}") from None

    def ids(self) -> tuple[str, ...]:
        return tuple(problem.id for problem in self.problems)


def _problem_from_record(record: object, where: str) -> Problem:
    if not isinstance(record, dict):
        raise DatasetError(f"{where}: expected an object, got {type(record).__name__}")
    try:
        raw_id = record["id"]
        original = record["original_text"]
    except KeyError as exc:
        raise DatasetError(f"{where}: missing field {exc.args[0]!r}") from None
    problem_id = str(raw_id)
    if not isinstance(original, str) or not original:
        raise DatasetError(f"{where}: original_text must be a non-empty string")
    segmented = record.get("segmented_text")
    if segmented is not None and not isinstance(segmented, str):
        raise DatasetError(f"{where}: segmented_text must be a string")
    tokens = tuple(segmented.split()) if segmented else tokenize_text(original)

    equation = record.get("equation")
    if equation is not None:
        if not isinstance(equation, str):
            raise DatasetError(f"{where}: equation must be a string")
        head = equation.lstrip()
        if not head.startswith(_EQUATION_PREFIX) or "=" not in head[:4]:
            raise DatasetError(
                f"{where}: equation must start with 'x =', got {equation!r}"
            )

    gold: Optional[AnswerValue] = None
    ans = record.get("ans")
    if ans is not None:
        try:
            gold = parse_answer_literal(str(ans))
        except AnswerParseError as exc:
            raise DatasetError(f"{where}: bad gold answer: {exc}") from exc

    return Problem(
        id=problem_id,
        text=tokens,
        raw_text=original,
        equation_text=equation,
        gold_answer=gold,
    )


def load_dataset(path: Union[str, Path]) -> Dataset:
    """Load a dataset file; a leading '[' selects JSON array, else JSONL."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"dataset file not found: {path}") from None
    problems: list[Problem] = []
    if text.lstrip().startswith("["):
        try:
            records = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(records, list):
            raise DatasetError(f"{path}: expected a JSON array")
        for index, record in enumerate(records):
            problems.append(_problem_from_record(record, f"{path}[{index}]"))
    else:
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            problems.append(_problem_from_record(record, f"{path}:{lineno}"))
    return Dataset(tuple(problems), source_path=str(path))


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> None:
    """Write a dataset back out; '.jsonl' paths get JSONL, others an array."""
    path = Path(path)
    records = []
    for problem in dataset:
        record: dict[str, object] = {
            "id": problem.id,
            "original_text": problem.raw_text,
            "segmented_text": " ".join(problem.text),
        }
        if problem.equation_text is not None:
            record["equation"] = problem.equation_text
        if problem.gold_answer is not None:
            record["ans"] = format_exact(problem.gold_answer.value)
        records.append(record)
    if path.suffix == ".jsonl":
        body = "\n".join(
            json.dumps(r, ensure_ascii=False, sort_keys=True) for r in records
        )
        path.write_text(body + "\n", encoding="utf-8")
    else:
        path.write_text(
            json.dumps(records, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )


@dataclass(frozen=True)
class FoldAssignment:
    """Deterministic k-fold assignment of problem ids."""

    k: int
    seed: int
    assignment: dict[str, int]
    generator: str = FOLD_GENERATOR

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.generator != FOLD_GENERATOR:
            raise DatasetError(
                f"fold file was produced by {self.generator!r}, "
                f"this build replays only {FOLD_GENERATOR!r}"
            )
        for problem_id, fold in self.assignment.items():
            if not (0 <= fold < self.k):
                raise DatasetError(
                    f"fold index {fold} for id {problem_id!r} outside 0..{self.k - 1}"
                )

    def fold_ids(self, fold: int) -> tuple[str, ...]:
        """Ids held out in ``fold``, in sorted order."""
        if not (0 <= fold < self.k):
            raise ValueError(f"fold index {fold} outside 0..{self.k - 1}")
        return tuple(
            sorted(pid for pid, f in self.assignment.items() if f == fold)
        )


def split_folds(
    source: Union[Dataset, Iterable[str]], k: int, seed: int
) -> FoldAssignment:
    """Assign ids to k folds: sort, shuffle with the seed, deal i % k."""
    ids = source.ids() if isinstance(source, Dataset) else tuple(source)
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate ids in fold input")
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(ids):
        raise ValueError(f"k={k} exceeds the {len(ids)} available ids")
    ordered = sorted(ids)
    random.Random(seed).shuffle(ordered)
    assignment = {pid: i % k for i, pid in enumerate(ordered)}
    return FoldAssignment(k=k, seed=seed, assignment=assignment)


def fold_split(
    dataset: Dataset, folds: FoldAssignment, fold: int
) -> tuple[Dataset, Dataset]:
    """Partition into (train, heldout) for one fold; every id must be covered."""
    if not (0 <= fold < folds.k):
        raise ValueError(f"fold index {fold} outside 0..{folds.k - 1}")
    missing = [p.id for p in dataset if p.id not in folds.assignment]
    if missing:
        raise DatasetError(
            f"{len(missing)} dataset id(s) missing from fold assignment, "
            f"first: {missing[0]!r}"
        )
    train = tuple(p for p in dataset if folds.assignment[p.id] != fold)
    heldout = tuple(p for p in dataset if folds.assignment[p.id] == fold)
    return Dataset(train, dataset.source_path), Dataset(heldout, dataset.source_path)


def save_folds(folds: FoldAssignment, path: Union[str, Path]) -> None:
    payload = {
        "k": folds.k,
        "seed": folds.seed,
        "generator": folds.generator,
        "assignment": folds.assignment,
    }
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def load_folds(path: Union[str, Path]) -> FoldAssignment:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FileNotFoundError(f"fold file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise DatasetError(f"{path}: expected a JSON object")
    try:
        k = payload["k"]
        seed = payload["seed"]
        assignment = payload["assignment"]
    except KeyError as exc:
        raise DatasetError(f"{path}: missing field {exc.args[0]!r}") from None
    if not isinstance(k, int) or not isinstance(seed, int):
        raise DatasetError(f"{path}: k and seed must be integers")
    if not isinstance(assignment, dict):
        raise DatasetError(f"{path}: assignment must be an object")
    cleaned: dict[str, int] = {}
    for pid, fold in assignment.items():
        if not isinstance(fold, int):
            raise DatasetError(f"{path}: fold for id {pid!r} must be an integer")
        cleaned[str(pid)] = fold
    try:
        return FoldAssignment(
            k=k,
            seed=seed,
            assignment=cleaned,
            generator=str(payload.get("generator", FOLD_GENERATOR)),
        )
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
