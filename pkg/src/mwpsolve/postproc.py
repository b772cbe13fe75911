"""Answer post-processing: canonical answer strings and numeric grading.

Final answers are kept as exact rationals for as long as possible.  The
canonical display form rounds to a fixed number of decimal places
(half-away-from-zero) and strips trailing zeros; grading always compares
the pre-rounding exact values under a relative tolerance.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from typing import NamedTuple, Union

__all__ = [
    "AnswerParseError",
    "AnswerValue",
    "DEFAULT_NORMALIZATION",
    "DEFAULT_TOLERANCE",
    "NormalizationConfig",
    "Normalized",
    "answers_equal",
    "as_fraction",
    "format_exact",
    "normalize_answer",
    "parse_answer_literal",
    "round_half_away",
]

Numeric = Union[Fraction, int, float, str]

DEFAULT_TOLERANCE = Fraction(1, 10000)


class AnswerParseError(ValueError):
    """An answer literal could not be parsed as a number."""


def as_fraction(value: Numeric) -> Fraction:
    """Convert a number to an exact Fraction.

    Floats go through their shortest decimal repr, so 0.1 becomes 1/10
    rather than its binary expansion.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise AnswerParseError("bool is not a numeric answer value")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise AnswerParseError(f"non-finite value {value!r}")
        return Fraction(Decimal(repr(value)))
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise AnswerParseError(f"not a numeric literal: {value!r}") from exc
    raise AnswerParseError(f"cannot convert {type(value).__name__} to a number")


@dataclass(frozen=True)
class NormalizationConfig:
    """Rules for producing the canonical display string of an answer."""

    decimal_places: int = 2
    strip_trailing_zeros: bool = True
    rounding_mode: str = "half-away-from-zero"

    def __post_init__(self) -> None:
        if self.decimal_places < 0:
            raise ValueError("decimal_places must be >= 0")
        if self.rounding_mode != "half-away-from-zero":
            raise ValueError(f"unsupported rounding mode: {self.rounding_mode!r}")


DEFAULT_NORMALIZATION = NormalizationConfig()


class Normalized(NamedTuple):
    canonical: str
    rounded: Fraction


def round_half_away(value: Fraction, decimal_places: int) -> Fraction:
    """Round to ``decimal_places`` decimals, ties away from zero."""
    if decimal_places < 0:
        raise ValueError("decimal_places must be >= 0")
    scale = 10 ** decimal_places
    scaled = abs(value) * scale
    units = (scaled.numerator * 2 + scaled.denominator) // (scaled.denominator * 2)
    if value < 0:
        units = -units
    return Fraction(units, scale)


def _format_fixed(units: int, decimal_places: int, strip: bool) -> str:
    """Render ``units / 10**decimal_places`` as a plain decimal string."""
    sign = "-" if units < 0 else ""
    digits = str(abs(units))
    if decimal_places == 0:
        int_part, frac_part = digits, ""
    else:
        digits = digits.rjust(decimal_places + 1, "0")
        int_part, frac_part = digits[:-decimal_places], digits[-decimal_places:]
    if strip:
        frac_part = frac_part.rstrip("0")
    if units == 0:
        sign = ""  # "-0" collapses to "0"
    return sign + int_part + ("." + frac_part if frac_part else "")


def normalize_answer(
    value: Numeric, config: NormalizationConfig = DEFAULT_NORMALIZATION
) -> Normalized:
    """Round an exact value per ``config`` and render its canonical string."""
    exact = as_fraction(value)
    rounded = round_half_away(exact, config.decimal_places)
    units = rounded.numerator * (10 ** config.decimal_places) // rounded.denominator
    canonical = _format_fixed(units, config.decimal_places, config.strip_trailing_zeros)
    return Normalized(canonical, rounded)


@dataclass(frozen=True)
class AnswerValue:
    """An exact answer value plus its canonical display string."""

    value: Fraction
    canonical: str
    exact: bool = True

    @classmethod
    def from_value(
        cls,
        value: Numeric,
        config: NormalizationConfig = DEFAULT_NORMALIZATION,
        exact: bool = True,
    ) -> "AnswerValue":
        frac = as_fraction(value)
        return cls(frac, normalize_answer(frac, config).canonical, exact)

    def __str__(self) -> str:
        return self.canonical


_MIXED_RE = re.compile(r"^(-?)(\d+)\((\d+)/(\d+)\)$")
_PAREN_FRACTION_RE = re.compile(r"^(-?)\((\d+)/(\d+)\)$")


def parse_answer_literal(
    text: str, config: NormalizationConfig = DEFAULT_NORMALIZATION
) -> AnswerValue:
    """Parse a gold/extracted answer string into an AnswerValue.

    Accepts integers, decimals, percent suffixes ("20%" -> 1/5), simple
    fractions ("3/4", "(3/4)"), and mixed numbers written "1(1/2)".
    """
    raw = text.strip()
    if not raw:
        raise AnswerParseError("empty answer literal")
    if raw.endswith("%"):
        inner = parse_answer_literal(raw[:-1], config)
        return AnswerValue.from_value(inner.value / 100, config)
    m = _MIXED_RE.match(raw)
    if m:
        sign = -1 if m.group(1) else 1
        whole, num, den = int(m.group(2)), int(m.group(3)), int(m.group(4))
        if den == 0:
            raise AnswerParseError(f"zero denominator in {text!r}")
        return AnswerValue.from_value(sign * (whole + Fraction(num, den)), config)
    m = _PAREN_FRACTION_RE.match(raw)
    if m:
        sign = -1 if m.group(1) else 1
        num, den = int(m.group(2)), int(m.group(3))
        if den == 0:
            raise AnswerParseError(f"zero denominator in {text!r}")
        return AnswerValue.from_value(sign * Fraction(num, den), config)
    try:
        return AnswerValue.from_value(Fraction(raw), config)
    except (ValueError, ZeroDivisionError, InvalidOperation) as exc:
        raise AnswerParseError(f"unparseable answer literal: {text!r}") from exc


def format_exact(value: Fraction) -> str:
    """Lossless string form: integer, terminating decimal, or "p/q"."""
    value = as_fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{value.numerator}/{value.denominator}"
    places = max(twos, fives)
    units = value.numerator * (10 ** places) // value.denominator
    return _format_fixed(units, places, strip=True)


def answers_equal(
    a: "AnswerValue | Numeric",
    b: "AnswerValue | Numeric",
    tolerance: Numeric = DEFAULT_TOLERANCE,
) -> bool:
    """Numeric equality under relative tolerance: |a - b| <= tol * max(1, |b|).

    Comparison uses the exact pre-normalization values, never the rounded
    canonical strings.
    """
    va = a.value if isinstance(a, AnswerValue) else as_fraction(a)
    vb = b.value if isinstance(b, AnswerValue) else as_fraction(b)
    tol = as_fraction(tolerance)
    if tol < 0:
        raise ValueError("tolerance must be >= 0")
    return abs(va - vb) <= tol * max(Fraction(1), abs(vb))
