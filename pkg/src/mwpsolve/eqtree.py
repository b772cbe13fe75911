"""Equation trees: tokenizing, parsing, pre-order codec, exact evaluation.

Expressions are the arithmetic subset used by math word problem corpora:
binary ``+ - * / ^`` over non-negative decimal literals (optionally
percent-suffixed), with a leading ``x=`` allowed and ``× ÷ −`` plus
``**`` accepted as aliases.  Unary minus exists only fused into a number
literal.  Evaluation is exact rational arithmetic except for
non-integer exponents, which fall back to floats and mark the result
inexact.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Optional, Sequence, Union

from mwpsolve.postproc import (
    DEFAULT_NORMALIZATION,
    AnswerValue,
    NormalizationConfig,
    as_fraction,
    format_exact,
    normalize_answer,
)

__all__ = [
    "AnswerValue",
    "DEFAULT_LIMITS",
    "EqToken",
    "EquationParseError",
    "EquationTree",
    "EvaluationError",
    "EvaluationLimits",
    "OPERATORS",
    "PreorderSeq",
    "evaluate",
    "from_preorder",
    "parse_equation",
    "to_preorder",
    "tokenize_equation",
]

OPERATORS = ("+", "-", "*", "/", "^")

_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}
_RIGHT_ASSOCIATIVE = frozenset("^")

_OPEN_TO_CLOSE = {"(": ")", "[": "]", "（": "）"}
_CLOSERS = frozenset(_OPEN_TO_CLOSE.values())
_OP_ALIASES = {"×": "*", "÷": "/", "−": "-"}

_EQ_PREFIX_RE = re.compile(r"^\s*[xX]\s*=\s*")
_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?%?")


class EquationParseError(ValueError):
    """Equation text or a pre-order sequence is not well formed."""


class EvaluationError(ArithmeticError):
    """An equation tree has no finite value under the evaluation rules."""


@dataclass(frozen=True)
class EqToken:
    """One lexical token; ``value`` is set for numbers, ``closer`` for '('."""

    kind: str  # "number" | "op" | "lparen" | "rparen"
    text: str
    position: int
    value: Optional[Fraction] = None
    closer: Optional[str] = None


def _number_token(text: str, position: int, negate: bool = False) -> EqToken:
    body = text[:-1] if text.endswith("%") else text
    value = Fraction(body)
    if text.endswith("%"):
        value /= 100
    if negate:
        value = -value
        text = "-" + text
    return EqToken("number", text, position, value=value)


def tokenize_equation(text: str) -> list[EqToken]:
    """Lex equation text, dropping any leading ``x =``."""
    stripped = _EQ_PREFIX_RE.sub("", text)
    offset = len(text) - len(stripped)
    tokens: list[EqToken] = []
    i = 0
    n = len(stripped)
    while i < n:
        ch = stripped[i]
        if ch.isspace():
            i += 1
            continue
        pos = offset + i
        if ch.isdigit():
            m = _NUMBER_RE.match(stripped, i)
            assert m is not None
            tokens.append(_number_token(m.group(), pos))
            i = m.end()
            continue
        if stripped.startswith("**", i):
            tokens.append(EqToken("op", "**", pos))
            i += 2
            continue
        op = _OP_ALIASES.get(ch, ch)
        if op in _PRECEDENCE:
            unary_slot = not tokens or tokens[-1].kind in ("op", "lparen")
            if op == "-" and unary_slot:
                j = i + 1
                while j < n and stripped[j].isspace():
                    j += 1
                m = _NUMBER_RE.match(stripped, j)
                if m is None:
                    raise EquationParseError(
                        f"unary minus must precede a number (position {pos})"
                    )
                tokens.append(_number_token(m.group(), pos, negate=True))
                i = m.end()
                continue
            tokens.append(EqToken("op", ch, pos))
            i += 1
            continue
        if ch in _OPEN_TO_CLOSE:
            tokens.append(EqToken("lparen", ch, pos, closer=_OPEN_TO_CLOSE[ch]))
            i += 1
            continue
        if ch in _CLOSERS:
            tokens.append(EqToken("rparen", ch, pos))
            i += 1
            continue
        raise EquationParseError(f"unexpected character {ch!r} at position {pos}")
    return tokens


@dataclass(frozen=True)
class EquationTree:
    """Binary expression tree: a number leaf or an operator with two children."""

    op: Optional[str] = None
    value: Optional[Fraction] = None
    left: Optional["EquationTree"] = None
    right: Optional["EquationTree"] = None

    def __post_init__(self) -> None:
        if (self.op is None) == (self.value is None):
            raise ValueError("a node is exactly one of: operator, number leaf")
        if self.op is not None:
            if self.op not in OPERATORS:
                raise ValueError(f"unknown operator {self.op!r}")
            if self.left is None or self.right is None:
                raise ValueError(f"operator {self.op!r} needs two children")
        else:
            if self.left is not None or self.right is not None:
                raise ValueError("a number leaf has no children")
            if not isinstance(self.value, Fraction):
                object.__setattr__(self, "value", as_fraction(self.value))

    @property
    def is_leaf(self) -> bool:
        return self.op is None

    @classmethod
    def leaf(cls, value: Union[Fraction, int, float, str]) -> "EquationTree":
        return cls(value=as_fraction(value))

    @classmethod
    def node(cls, op: str, left: "EquationTree", right: "EquationTree") -> "EquationTree":
        return cls(op=op, left=left, right=right)

    def __iter__(self) -> Iterator["EquationTree"]:
        """Pre-order traversal, iterative so depth is unbounded."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)  # type: ignore[arg-type]
                stack.append(node.left)  # type: ignore[arg-type]


class _Parser:
    """Precedence climbing over the token list."""

    def __init__(self, tokens: Sequence[EqToken]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Optional[EqToken]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def advance(self) -> EqToken:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def parse_expression(self, min_precedence: int) -> EquationTree:
        left = self.parse_atom()
        while True:
            token = self.peek()
            if token is None or token.kind != "op":
                break
            op = "^" if token.text == "**" else _OP_ALIASES.get(token.text, token.text)
            precedence = _PRECEDENCE[op]
            if precedence < min_precedence:
                break
            self.advance()
            next_min = precedence if op in _RIGHT_ASSOCIATIVE else precedence + 1
            right = self.parse_expression(next_min)
            left = EquationTree.node(op, left, right)
        return left

    def parse_atom(self) -> EquationTree:
        token = self.peek()
        if token is None:
            raise EquationParseError("unexpected end of equation")
        if token.kind == "number":
            self.advance()
            assert token.value is not None
            return EquationTree(value=token.value)
        if token.kind == "lparen":
            self.advance()
            inner = self.parse_expression(0)
            closer = self.peek()
            if closer is None or closer.kind != "rparen":
                raise EquationParseError(
                    f"missing {token.closer!r} for group opened at position {token.position}"
                )
            if closer.text != token.closer:
                raise EquationParseError(
                    f"mismatched bracket {closer.text!r} at position {closer.position}"
                )
            self.advance()
            return inner
        raise EquationParseError(
            f"expected a number or group at position {token.position}, got {token.text!r}"
        )


def parse_equation(source: Union[str, Sequence[EqToken]]) -> EquationTree:
    """Parse infix equation text (or pre-lexed tokens) into a tree."""
    tokens = tokenize_equation(source) if isinstance(source, str) else list(source)
    if not tokens:
        raise EquationParseError("empty equation")
    parser = _Parser(tokens)
    tree = parser.parse_expression(0)
    trailing = parser.peek()
    if trailing is not None:
        raise EquationParseError(
            f"unexpected {trailing.text!r} at position {trailing.position}"
        )
    return tree


def _parse_preorder_number(token: str) -> Fraction:
    body = token[:-1] if token.endswith("%") else token
    try:
        value = Fraction(body)
    except (ValueError, ZeroDivisionError) as exc:
        raise EquationParseError(f"bad pre-order token {token!r}") from exc
    return value / 100 if token.endswith("%") else value


@dataclass(frozen=True)
class PreorderSeq:
    """A validated pre-order token sequence for a binary equation tree.

    Validity is the prefix-arity rule: scanning left to right with one
    open slot, operators consume a slot and open two, numbers consume
    one; the count must reach zero exactly at the final token.
    """

    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.tokens:
            raise EquationParseError("empty pre-order sequence")
        need = 1
        for index, token in enumerate(self.tokens):
            if need == 0:
                raise EquationParseError(
                    f"pre-order sequence complete before token {index} ({token!r})"
                )
            if token in OPERATORS:
                need += 1
            else:
                _parse_preorder_number(token)
                need -= 1
        if need != 0:
            raise EquationParseError(
                f"pre-order sequence is missing {need} operand(s)"
            )

    @classmethod
    def from_text(cls, text: str) -> "PreorderSeq":
        """Split whitespace-delimited tokens; one ``[ ]`` wrapper is allowed."""
        body = _EQ_PREFIX_RE.sub("", text).strip()
        if body.startswith("[") and body.endswith("]") and len(body) >= 2:
            body = body[1:-1]
        return cls(tuple(body.split()))

    def __str__(self) -> str:
        return " ".join(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


def to_preorder(tree: EquationTree) -> PreorderSeq:
    """Serialize a tree to its pre-order token sequence."""
    tokens = [
        node.op if not node.is_leaf else format_exact(node.value)  # type: ignore[arg-type]
        for node in tree
    ]
    return PreorderSeq(tuple(tokens))


def from_preorder(source: Union[str, PreorderSeq]) -> EquationTree:
    """Rebuild a tree from a pre-order sequence (text or validated form)."""
    seq = PreorderSeq.from_text(source) if isinstance(source, str) else source
    stack: list[EquationTree] = []
    for token in reversed(seq.tokens):
        if token in OPERATORS:
            left = stack.pop()
            right = stack.pop()
            stack.append(EquationTree.node(token, left, right))
        else:
            stack.append(EquationTree(value=_parse_preorder_number(token)))
    assert len(stack) == 1
    return stack[0]


@dataclass(frozen=True)
class EvaluationLimits:
    """Resource bounds for evaluation; exceeding them raises, never hangs."""

    max_digits: int = 5000

    def __post_init__(self) -> None:
        if self.max_digits < 1:
            raise ValueError("max_digits must be >= 1")

    @property
    def max_bits(self) -> int:
        # ~3.33 bits per decimal digit
        return self.max_digits * 10 // 3 + 1


DEFAULT_LIMITS = EvaluationLimits()


def _check_size(value: Fraction, limits: EvaluationLimits) -> Fraction:
    if value.numerator.bit_length() + value.denominator.bit_length() > limits.max_bits:
        raise EvaluationError(
            f"result exceeds {limits.max_digits} digits"
        )
    return value


def _power(base: Fraction, exponent: Fraction, limits: EvaluationLimits) -> tuple[Fraction, bool]:
    """Return (value, exact).  Integer exponents stay exact."""
    if exponent.denominator == 1:
        exp = exponent.numerator
        if base == 0 and exp < 0:
            raise EvaluationError("zero raised to a negative power")
        base_bits = base.numerator.bit_length() + base.denominator.bit_length()
        if abs(exp) * max(base_bits, 1) > limits.max_bits:
            raise EvaluationError(f"power result exceeds {limits.max_digits} digits")
        return _check_size(base ** exp, limits), True
    if base < 0:
        raise EvaluationError("negative base with a fractional exponent")
    if base == 0 and exponent < 0:
        raise EvaluationError("zero raised to a negative power")
    try:
        result = float(base) ** float(exponent)
    except OverflowError as exc:
        raise EvaluationError("power result overflows") from exc
    if math.isinf(result) or math.isnan(result):
        raise EvaluationError("power result overflows")
    return as_fraction(result), False


def evaluate(
    tree: EquationTree,
    limits: EvaluationLimits = DEFAULT_LIMITS,
    config: NormalizationConfig = DEFAULT_NORMALIZATION,
) -> AnswerValue:
    """Evaluate a tree to an exact answer value.

    Raises EvaluationError for division by zero, zero to a negative
    power, fractional powers of negative numbers, and results larger
    than the digit limit.
    """
    # iterative post-order: children first, then apply the operator
    stack: list[tuple[EquationTree, bool]] = [(tree, False)]
    values: list[tuple[Fraction, bool]] = []
    while stack:
        node, ready = stack.pop()
        if node.is_leaf:
            values.append((node.value, True))  # type: ignore[arg-type]
            continue
        if not ready:
            stack.append((node, True))
            stack.append((node.right, False))  # type: ignore[arg-type]
            stack.append((node.left, False))  # type: ignore[arg-type]
            continue
        right, right_exact = values.pop()
        left, left_exact = values.pop()
        exact = left_exact and right_exact
        if node.op == "+":
            value = _check_size(left + right, limits)
        elif node.op == "-":
            value = _check_size(left - right, limits)
        elif node.op == "*":
            value = _check_size(left * right, limits)
        elif node.op == "/":
            if right == 0:
                raise EvaluationError("division by zero")
            value = _check_size(left / right, limits)
        else:  # "^"
            value, pow_exact = _power(left, right, limits)
            exact = exact and pow_exact
        values.append((value, exact))
    final, exact = values.pop()
    assert not values
    return AnswerValue(final, normalize_answer(final, config).canonical, exact)
