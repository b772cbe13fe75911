"""Answer normalization, literal parsing, and tolerance comparison."""

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mwpsolve.postproc import (
    DEFAULT_TOLERANCE,
    AnswerParseError,
    AnswerValue,
    NormalizationConfig,
    answers_equal,
    as_fraction,
    format_exact,
    normalize_answer,
    parse_answer_literal,
    round_half_away,
)


class TestAsFraction:
    def test_int(self):
        assert as_fraction(7) == Fraction(7)

    def test_float_uses_shortest_repr(self):
        # repr(0.1) is "0.1", not the binary expansion
        assert as_fraction(0.1) == Fraction(1, 10)
        assert as_fraction(2.675) == Fraction(2675, 1000)

    def test_string(self):
        assert as_fraction("3/4") == Fraction(3, 4)

    def test_fraction_passthrough(self):
        assert as_fraction(Fraction(9, 100)) == Fraction(9, 100)

    def test_bool_rejected(self):
        with pytest.raises(AnswerParseError):
            as_fraction(True)

    def test_nan_rejected(self):
        with pytest.raises(AnswerParseError):
            as_fraction(float("nan"))

    def test_inf_rejected(self):
        with pytest.raises(AnswerParseError):
            as_fraction(float("inf"))


class TestRounding:
    @pytest.mark.parametrize(
        "value, places, expected",
        [
            (Fraction(2675, 1000), 2, Fraction(268, 100)),
            (Fraction(-2675, 1000), 2, Fraction(-268, 100)),
            (Fraction(1, 3), 2, Fraction(33, 100)),
            (Fraction(2408, 100), 1, Fraction(241, 10)),
            (Fraction(2557, 100), 1, Fraction(256, 10)),
            (Fraction(5, 1000), 2, Fraction(1, 100)),
            (Fraction(-5, 1000), 2, Fraction(-1, 100)),
            (Fraction(4), 2, Fraction(4)),
            (Fraction(0), 2, Fraction(0)),
        ],
    )
    def test_half_away_from_zero(self, value, places, expected):
        assert round_half_away(value, places) == expected

    def test_zero_places(self):
        assert round_half_away(Fraction(5, 2), 0) == 3
        assert round_half_away(Fraction(-5, 2), 0) == -3

    def test_negative_places_rejected(self):
        with pytest.raises(ValueError):
            round_half_away(Fraction(1), -1)


class TestNormalizationConfig:
    def test_defaults(self):
        config = NormalizationConfig()
        assert config.decimal_places == 2
        assert config.strip_trailing_zeros is True

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError):
            NormalizationConfig(rounding_mode="banker")

    def test_bad_places_rejected(self):
        with pytest.raises(ValueError):
            NormalizationConfig(decimal_places=-2)


class TestNormalizeAnswer:
    @pytest.mark.parametrize(
        "value, canonical",
        [
            (Fraction(9, 10), "0.9"),
            (Fraction(9, 100), "0.09"),
            (Fraction(4), "4"),
            (Fraction(40, 10), "4"),
            (Fraction(1, 3), "0.33"),
            (Fraction(2675, 1000), "2.68"),
            (Fraction(-2675, 1000), "-2.68"),
            (Fraction(330), "330"),
            (Fraction(-1, 1000), "0"),
        ],
    )
    def test_canonical_text(self, value, canonical):
        assert normalize_answer(value).canonical == canonical

    def test_negative_epsilon_never_prints_minus_zero(self):
        result = normalize_answer(Fraction(-4, 1000))
        assert result.canonical == "0"
        assert result.rounded == 0

    def test_fixed_width_display(self):
        config = NormalizationConfig(decimal_places=1, strip_trailing_zeros=False)
        assert normalize_answer(Fraction(26), config).canonical == "26.0"
        assert normalize_answer(Fraction(241, 10), config).canonical == "24.1"

    def test_accepts_raw_floats(self):
        assert normalize_answer(0.9).canonical == "0.9"

    def test_rounded_value_returned(self):
        result = normalize_answer(Fraction(1, 3))
        assert result.rounded == Fraction(33, 100)


class TestParseAnswerLiteral:
    @pytest.mark.parametrize(
        "text, value",
        [
            ("330", Fraction(330)),
            ("0.9", Fraction(9, 10)),
            ("-5", Fraction(-5)),
            (" 42 ", Fraction(42)),
            ("3/4", Fraction(3, 4)),
            ("-3/4", Fraction(-3, 4)),
            ("(3/4)", Fraction(3, 4)),
            ("-(3/4)", Fraction(-3, 4)),
            ("1(1/2)", Fraction(3, 2)),
            ("-2(1/4)", Fraction(-9, 4)),
            ("20%", Fraction(1, 5)),
            ("2.5%", Fraction(1, 40)),
            ("-50%", Fraction(-1, 2)),
        ],
    )
    def test_literals(self, text, value):
        assert parse_answer_literal(text).value == value

    def test_canonical_attached(self):
        assert parse_answer_literal("20%").canonical == "0.2"

    @pytest.mark.parametrize("text", ["", "   ", "abc", "1/0", "1(1/0)", "1(0/2"])
    def test_rejects(self, text):
        with pytest.raises(AnswerParseError):
            parse_answer_literal(text)


class TestFormatExact:
    @pytest.mark.parametrize(
        "value, text",
        [
            (Fraction(4), "4"),
            (Fraction(-17), "-17"),
            (Fraction(9, 100), "0.09"),
            (Fraction(-7, 2), "-3.5"),
            (Fraction(1, 3), "1/3"),
            (Fraction(-22, 7), "-22/7"),
            (Fraction(0), "0"),
            (Fraction(1, 8), "0.125"),
            (Fraction(3, 200), "0.015"),
        ],
    )
    def test_round_trips_through_parse(self, value, text):
        assert format_exact(value) == text
        assert parse_answer_literal(text).value == value


class TestAnswersEqual:
    def test_exact_match(self):
        assert answers_equal(Fraction(9, 10), Fraction(9, 10))

    def test_relative_scale(self):
        # |a - r| <= tol * max(1, |r|): slack grows with the reference
        assert answers_equal(Fraction(200001, 20), Fraction(10000), Fraction(1, 10000))
        assert not answers_equal(
            Fraction(10002, 10000), Fraction(1), Fraction(1, 10000)
        )

    def test_boundary_is_inclusive(self):
        assert answers_equal(Fraction(10001, 10000), Fraction(1), Fraction(1, 10000))

    def test_accepts_answer_values(self):
        left = AnswerValue.from_value(Fraction(9, 10))
        assert answers_equal(left, Fraction(9, 10))

    def test_default_tolerance(self):
        assert DEFAULT_TOLERANCE == Fraction(1, 10000)

    def test_negative_tolerance_rejected(self):
        with pytest.raises(ValueError):
            answers_equal(Fraction(1), Fraction(1), Fraction(-1))


class TestAnswerValue:
    def test_from_value_fills_canonical(self):
        answer = AnswerValue.from_value(Fraction(9, 100))
        assert answer.canonical == "0.09"
        assert answer.exact is True

    def test_inexact_flag_preserved(self):
        answer = AnswerValue.from_value(Fraction(3, 2), exact=False)
        assert answer.exact is False

    def test_str_is_canonical(self):
        assert str(AnswerValue.from_value(Fraction(9, 10))) == "0.9"


_FRACTIONS = st.fractions(
    min_value=Fraction(-10**9), max_value=Fraction(10**9), max_denominator=10**6
)


@given(value=_FRACTIONS)
def test_canonical_reparses_to_rounded(value):
    result = normalize_answer(value)
    assert parse_answer_literal(result.canonical).value == result.rounded


@given(value=_FRACTIONS)
def test_normalization_is_idempotent(value):
    once = normalize_answer(value)
    again = normalize_answer(parse_answer_literal(once.canonical).value)
    assert again.canonical == once.canonical
    assert again.rounded == once.rounded


@given(value=_FRACTIONS, places=st.integers(min_value=0, max_value=6))
@settings(max_examples=300)
def test_round_half_away_error_bound(value, places):
    rounded = round_half_away(value, places)
    step = Fraction(1, 10**places)
    assert abs(rounded - value) <= step / 2
    assert (rounded * 10**places).denominator == 1


@given(value=_FRACTIONS)
def test_format_exact_round_trips(value):
    assert parse_answer_literal(format_exact(value)).value == value
