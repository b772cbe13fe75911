"""Math word problem solving and evaluation pipeline.

Subpackages cover the full path from raw problem text to a graded
answer: corpus loading and fold splitting, rule-based routing between an
equation-tree track and an LLM track, exact equation evaluation,
confidence-weighted voting and self-consistency aggregation, answer
normalization, and a reporting harness with a CLI front end.
"""

from mwpsolve.postproc import (
    AnswerParseError,
    AnswerValue,
    NormalizationConfig,
    answers_equal,
    normalize_answer,
    parse_answer_literal,
)

__version__ = "0.1.0"

__all__ = [
    "AnswerParseError",
    "AnswerValue",
    "NormalizationConfig",
    "answers_equal",
    "normalize_answer",
    "parse_answer_literal",
    "__version__",
]
