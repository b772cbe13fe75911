"""Answer aggregation: weighted plurality voting and self-consistency.

Votes from solver models are grouped by numeric closeness (greedy
first-fit against each group's first member), then the winner is picked
by a three-step cascade: strict plurality on group size, then largest
exact sum of member confidences, then the group containing the
lexicographically smallest model id.  Abstaining models stay out of
both the groups and the confidence sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence, Union

from mwpsolve.corpus import Problem
from mwpsolve.postproc import (
    DEFAULT_TOLERANCE,
    AnswerValue,
    answers_equal,
    as_fraction,
)

__all__ = [
    "DECIDED_CONFIDENCE",
    "DECIDED_FALLBACK",
    "DECIDED_PLURALITY",
    "AnswerGroup",
    "SCResult",
    "Vote",
    "VoteResult",
    "group_answers",
    "plurality_vote",
    "self_consistency",
    "validation_confidence",
]

DECIDED_PLURALITY = "plurality"
DECIDED_CONFIDENCE = "confidence-sum"
DECIDED_FALLBACK = "fallback"

AnswerLike = Union[AnswerValue, Fraction, int, float, str]


def _coerce_answer(answer: Optional[AnswerLike]) -> Optional[Fraction]:
    if answer is None:
        return None
    if isinstance(answer, AnswerValue):
        return answer.value
    return as_fraction(answer)


@dataclass(frozen=True)
class Vote:
    """One model's answer (None = abstain) with its confidence weight."""

    model_id: str
    answer: Optional[Fraction]
    confidence: Fraction = Fraction(1)

    def __post_init__(self) -> None:
        object.__setattr__(self, "answer", _coerce_answer(self.answer))
        object.__setattr__(self, "confidence", as_fraction(self.confidence))
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if not (0 <= self.confidence <= 1):
            raise ValueError(
                f"confidence {self.confidence} for {self.model_id!r} outside [0, 1]"
            )

    @property
    def abstained(self) -> bool:
        return self.answer is None


@dataclass(frozen=True)
class AnswerGroup:
    """Votes whose answers agree within tolerance with the first member."""

    representative: Fraction
    members: tuple[Vote, ...]

    @property
    def count(self) -> int:
        return len(self.members)

    @property
    def confidence_sum(self) -> Fraction:
        return sum((vote.confidence for vote in self.members), Fraction(0))

    @property
    def model_ids(self) -> tuple[str, ...]:
        return tuple(vote.model_id for vote in self.members)


def group_answers(
    votes: Sequence[Vote],
    tolerance: Union[Fraction, int, float, str] = DEFAULT_TOLERANCE,
) -> tuple[AnswerGroup, ...]:
    """Group votes greedily in input order; abstentions are dropped.

    Each vote joins the earliest-created group whose representative
    (its first member's answer) it matches within relative tolerance;
    otherwise it opens a new group.
    """
    tol = as_fraction(tolerance)
    reps: list[Fraction] = []
    buckets: list[list[Vote]] = []
    for vote in votes:
        if vote.answer is None:
            continue
        for rep, bucket in zip(reps, buckets):
            if answers_equal(vote.answer, rep, tol):
                bucket.append(vote)
                break
        else:
            reps.append(vote.answer)
            buckets.append([vote])
    return tuple(
        AnswerGroup(rep, tuple(bucket)) for rep, bucket in zip(reps, buckets)
    )


@dataclass(frozen=True)
class VoteResult:
    """Outcome of one vote: all groups, the winner, and what decided it."""

    groups: tuple[AnswerGroup, ...]
    winner: Optional[AnswerGroup]
    decided_by: Optional[str]


def plurality_vote(
    votes: Sequence[Vote],
    tolerance: Union[Fraction, int, float, str] = DEFAULT_TOLERANCE,
) -> VoteResult:
    """Pick the winning answer group.

    Cascade: most members; then largest exact confidence sum; then the
    group holding the lexicographically smallest model id.  All votes
    abstaining yields no winner.
    """
    groups = group_answers(votes, tolerance)
    if not groups:
        return VoteResult(groups, None, None)
    top_count = max(group.count for group in groups)
    leaders = [group for group in groups if group.count == top_count]
    if len(leaders) == 1:
        return VoteResult(groups, leaders[0], DECIDED_PLURALITY)
    top_weight = max(group.confidence_sum for group in leaders)
    weighted = [group for group in leaders if group.confidence_sum == top_weight]
    if len(weighted) == 1:
        return VoteResult(groups, weighted[0], DECIDED_CONFIDENCE)
    winner = min(weighted, key=lambda group: min(group.model_ids))
    return VoteResult(groups, winner, DECIDED_FALLBACK)


@dataclass(frozen=True)
class SCResult:
    """Self-consistency outcome over one problem's samples."""

    winner: Optional[Fraction]
    count: int
    total: int
    first_seen_index: Optional[int]
    tally: tuple[tuple[Fraction, int], ...]


def self_consistency(answers: Sequence[Optional[AnswerLike]]) -> SCResult:
    """Modal answer across sampled generations.

    Unparseable samples (None) are excluded from the tally but still
    count toward ``total``.  Ties go to the value seen earliest.
    """
    counts: dict[Fraction, int] = {}
    first_seen: dict[Fraction, int] = {}
    for index, raw in enumerate(answers):
        value = _coerce_answer(raw)
        if value is None:
            continue
        if value not in counts:
            counts[value] = 0
            first_seen[value] = index
        counts[value] += 1
    tally = tuple(
        (value, counts[value])
        for value in sorted(counts, key=lambda v: first_seen[v])
    )
    if not counts:
        return SCResult(None, 0, len(answers), None, tally)
    winner = min(counts, key=lambda value: (-counts[value], first_seen[value]))
    return SCResult(
        winner, counts[winner], len(answers), first_seen[winner], tally
    )


def validation_confidence(
    predicted: Mapping[str, Optional[AnswerLike]],
    problems: Iterable[Problem],
    tolerance: Union[Fraction, int, float, str] = DEFAULT_TOLERANCE,
) -> Fraction:
    """A model's confidence: its exact accuracy on held-out problems.

    A problem with no prediction counts as wrong; every held-out
    problem must carry a gold answer, and the set must be non-empty.
    """
    tol = as_fraction(tolerance)
    total = 0
    correct = 0
    for problem in problems:
        if problem.gold_answer is None:
            raise ValueError(
                f"validation problem {problem.id!r} has no gold answer"
            )
        total += 1
        answer = _coerce_answer(predicted.get(problem.id))
        if answer is not None and answers_equal(answer, problem.gold_answer, tol):
            correct += 1
    if total == 0:
        raise ValueError("validation set is empty")
    return Fraction(correct, total)
