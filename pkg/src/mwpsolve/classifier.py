"""Rule-based routing between the equation-tree track and the LLM track.

A problem is checked against an ordered rule list; the first rule that
matches decides the track, and no rule matching falls through to the
default track.  Built-in rule kinds detect unit conversions (two
distinct units of one dimension), number-pattern puzzles, and
decimal-point transformations; custom keyword/regex rules can be added
in config.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

from mwpsolve.corpus import Problem, is_cjk_char
from mwpsolve.postproc import as_fraction

__all__ = [
    "RULE_KINDS",
    "TRACK_LLM",
    "TRACK_TREE",
    "Route",
    "Rule",
    "RuleConfigError",
    "RuleSet",
    "UnitEntry",
    "UnitTable",
    "classify",
    "default_ruleset",
    "load_rules",
    "match_decimal_transform",
    "match_law_finding",
    "match_unit_conversion",
    "ruleset_from_dict",
]

TRACK_TREE = "TREE"
TRACK_LLM = "LLM"
_TRACKS = (TRACK_TREE, TRACK_LLM)

RULE_KINDS = ("unit-conversion", "law-finding", "decimal-transform", "keyword")

_DEFAULT_RULES_RESOURCE = "default_rules.json"


class RuleConfigError(ValueError):
    """A rule set or unit table definition is invalid."""


@dataclass(frozen=True)
class Route:
    """Routing decision for one problem."""

    track: str
    matched_rule: Optional[str] = None
    evidence: Optional[str] = None

    def __post_init__(self) -> None:
        if self.track not in _TRACKS:
            raise ValueError(f"unknown track {self.track!r}")


@dataclass(frozen=True)
class UnitEntry:
    """One unit of measure: conversion factor to the dimension base."""

    name: str
    factor: Fraction
    surfaces: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.name:
            raise RuleConfigError("unit name must be non-empty")
        if self.factor <= 0:
            raise RuleConfigError(f"unit {self.name!r} needs a positive factor")
        if not self.surfaces:
            raise RuleConfigError(f"unit {self.name!r} has no surface forms")
        if any(not s for s in self.surfaces):
            raise RuleConfigError(f"unit {self.name!r} has an empty surface form")


def _is_ascii_word(surface: str) -> bool:
    return surface.isascii() and any(c.isalpha() for c in surface)


@dataclass(frozen=True)
class UnitTable:
    """Units grouped by dimension, plus stopwords that mask false hits.

    Within a dimension the factors must be strictly increasing, and a
    surface form may appear under exactly one unit across the whole
    table.  Stopwords are consumed before unit scanning so that, for
    example, the corner in a triangle word never reads as a coin unit.
    """

    dimensions: dict[str, tuple[UnitEntry, ...]]
    stopwords: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        seen: dict[str, str] = {}
        for dimension, entries in self.dimensions.items():
            if not entries:
                raise RuleConfigError(f"dimension {dimension!r} has no units")
            factors = [entry.factor for entry in entries]
            if any(b <= a for a, b in zip(factors, factors[1:])):
                raise RuleConfigError(
                    f"dimension {dimension!r}: factors must be strictly increasing"
                )
            for entry in entries:
                for surface in entry.surfaces:
                    key = surface.lower()
                    if key in seen:
                        raise RuleConfigError(
                            f"surface {surface!r} appears under both "
                            f"{seen[key]!r} and {entry.name!r}"
                        )
                    seen[key] = entry.name

    def surface_index(self) -> list[tuple[str, Optional[str], Optional[str]]]:
        """All scannable surfaces as (surface, dimension, unit name).

        Stopwords carry (surface, None, None).  Sorted longest first so
        the consumed-span scan prefers the most specific surface.
        """
        rows: list[tuple[str, Optional[str], Optional[str]]] = [
            (stop, None, None) for stop in self.stopwords
        ]
        for dimension, entries in self.dimensions.items():
            for entry in entries:
                rows.extend((s, dimension, entry.name) for s in entry.surfaces)
        rows.sort(key=lambda row: (-len(row[0]), row[0]))
        return rows


@dataclass(frozen=True)
class Rule:
    """One routing rule; ``route`` is the track taken when it matches."""

    name: str
    kind: str
    route: str = TRACK_LLM
    keywords: tuple[str, ...] = ()
    patterns: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.name:
            raise RuleConfigError("rule name must be non-empty")
        if self.kind not in RULE_KINDS:
            raise RuleConfigError(f"rule {self.name!r}: unknown kind {self.kind!r}")
        if self.route not in _TRACKS:
            raise RuleConfigError(f"rule {self.name!r}: unknown route {self.route!r}")
        if self.kind == "keyword" and not (self.keywords or self.patterns):
            raise RuleConfigError(
                f"rule {self.name!r}: keyword rules need keywords or patterns"
            )
        for pattern in self.patterns:
            try:
                re.compile(pattern)
            except re.error as exc:
                raise RuleConfigError(
                    f"rule {self.name!r}: bad pattern {pattern!r}: {exc}"
                ) from exc


@dataclass(frozen=True)
class RuleSet:
    """Ordered rules plus the unit table they share."""

    rules: tuple[Rule, ...]
    unit_table: UnitTable
    default_route: str = TRACK_TREE

    def __post_init__(self) -> None:
        if self.default_route not in _TRACKS:
            raise RuleConfigError(f"unknown default route {self.default_route!r}")
        names = [rule.name for rule in self.rules]
        if len(set(names)) != len(names):
            raise RuleConfigError("rule names must be unique")


def _smart_join(tokens: Sequence[str]) -> str:
    """Join with spaces only between two non-CJK neighbours."""
    parts: list[str] = []
    for token in tokens:
        if parts and not is_cjk_char(parts[-1][-1]) and not is_cjk_char(token[0]):
            parts.append(" ")
        parts.append(token)
    return "".join(parts)


def _surface_regex(surface: str) -> re.Pattern[str]:
    escaped = re.escape(surface)
    if _is_ascii_word(surface):
        # block hits inside longer words: "grams" must not fire in "kilograms"
        return re.compile(
            rf"(?<![A-Za-z]){escaped}(?![A-Za-z])", re.IGNORECASE
        )
    return re.compile(escaped)


@dataclass(frozen=True)
class _Occurrence:
    start: int
    dimension: str
    unit: str
    text: str


def _scan_units(text: str, table: UnitTable) -> list[_Occurrence]:
    """Find unit mentions, longest surface first, each span used once."""
    consumed = bytearray(len(text))
    occurrences: list[_Occurrence] = []
    for surface, dimension, unit in table.surface_index():
        for match in _surface_regex(surface).finditer(text):
            span = slice(match.start(), match.end())
            if any(consumed[span]):
                continue
            consumed[span] = b"\x01" * (match.end() - match.start())
            if dimension is not None and unit is not None:
                occurrences.append(
                    _Occurrence(match.start(), dimension, unit, match.group())
                )
    occurrences.sort(key=lambda occ: occ.start)
    return occurrences


def match_unit_conversion(text: str, table: UnitTable) -> Optional[str]:
    """Evidence when two distinct units of one dimension appear, else None.

    With several qualifying dimensions, the one whose second distinct
    unit shows up earliest in the text wins.
    """
    occurrences = _scan_units(text, table)
    seen: dict[str, set[str]] = {}
    decided: dict[str, int] = {}
    for occ in occurrences:
        units = seen.setdefault(occ.dimension, set())
        if occ.unit not in units:
            units.add(occ.unit)
            if len(units) == 2:
                decided.setdefault(occ.dimension, occ.start)
    if not decided:
        return None
    winner = min(decided.items(), key=lambda item: (item[1], item[0]))[0]
    taken: set[str] = set()
    mentions: list[str] = []
    for occ in occurrences:
        if occ.dimension == winner and occ.unit not in taken:
            taken.add(occ.unit)
            mentions.append(occ.text)
    return _smart_join(mentions)


def _find_keyword(text: str, keywords: Sequence[str]) -> Optional[str]:
    lowered = text.lower()
    for keyword in keywords:
        if not keyword:
            continue
        if keyword.isascii():
            pos = lowered.find(keyword.lower())
        else:
            pos = text.find(keyword)
        if pos >= 0:
            return text[pos : pos + len(keyword)]
    return None


_SEQ_ITEM = r"(?:\d+(?:\.\d+)?|_{2,}|\(\s*\)|（\s*）)"
_SEQ_RUN_RE = re.compile(_SEQ_ITEM + r"(?:\s*[,，]\s*" + _SEQ_ITEM + r"){2,}")
_SEQ_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?")
_SEQ_BLANK_RE = re.compile(r"_{2,}|\(\s*\)|（\s*）")

DEFAULT_LAW_KEYWORDS = (
    "find the pattern",
    "find the rule",
    "number pattern",
    "找规律",
    "按规律",
    "找出规律",
)

DEFAULT_DECIMAL_KEYWORDS = (
    "decimal point",
    "move the decimal",
    "小数点",
    "扩大到",
    "缩小到",
    "扩大",
    "缩小",
)


def match_law_finding(
    text: str, keywords: Sequence[str] = DEFAULT_LAW_KEYWORDS
) -> Optional[str]:
    """Evidence for a number-pattern puzzle, else None.

    Matches on a keyword, or on a comma-separated run holding at least
    three numbers and one blank marker (``__``, ``()``, or ``（ ）``).
    """
    keyword = _find_keyword(text, keywords)
    if keyword is not None:
        return keyword
    for run in _SEQ_RUN_RE.finditer(text):
        body = run.group()
        if (
            len(_SEQ_NUMBER_RE.findall(body)) >= 3
            and _SEQ_BLANK_RE.search(body) is not None
        ):
            return body
    return None


def match_decimal_transform(
    text: str, keywords: Sequence[str] = DEFAULT_DECIMAL_KEYWORDS
) -> Optional[str]:
    """Evidence for a decimal-point transformation problem, else None."""
    return _find_keyword(text, keywords)


def _match_rule(rule: Rule, text: str, table: UnitTable) -> Optional[str]:
    if rule.kind == "unit-conversion":
        return match_unit_conversion(text, table)
    if rule.kind == "law-finding":
        return match_law_finding(text, rule.keywords or DEFAULT_LAW_KEYWORDS)
    if rule.kind == "decimal-transform":
        return match_decimal_transform(text, rule.keywords or DEFAULT_DECIMAL_KEYWORDS)
    keyword = _find_keyword(text, rule.keywords)
    if keyword is not None:
        return keyword
    for pattern in rule.patterns:
        match = re.search(pattern, text)
        if match is not None:
            return match.group()
    return None


def classify(problem: Union[Problem, str], ruleset: RuleSet) -> Route:
    """Route one problem: first matching rule wins, else the default track."""
    text = problem.raw_text if isinstance(problem, Problem) else problem
    for rule in ruleset.rules:
        evidence = _match_rule(rule, text, ruleset.unit_table)
        if evidence is not None:
            return Route(rule.route, rule.name, evidence)
    return Route(ruleset.default_route)


def _unit_table_from_dict(payload: dict, where: str) -> UnitTable:
    dims_payload = payload.get("units", {})
    if not isinstance(dims_payload, dict):
        raise RuleConfigError(f"{where}: units must be an object")
    dimensions: dict[str, tuple[UnitEntry, ...]] = {}
    for dimension, entries in dims_payload.items():
        if not isinstance(entries, list):
            raise RuleConfigError(f"{where}: dimension {dimension!r} must be a list")
        built = []
        for entry in entries:
            if not isinstance(entry, dict):
                raise RuleConfigError(
                    f"{where}: units in {dimension!r} must be objects"
                )
            try:
                name = entry["name"]
                factor = entry["factor"]
                surfaces = entry["surfaces"]
            except KeyError as exc:
                raise RuleConfigError(
                    f"{where}: unit in {dimension!r} missing {exc.args[0]!r}"
                ) from None
            try:
                built.append(
                    UnitEntry(
                        name=str(name),
                        factor=as_fraction(factor),
                        surfaces=tuple(str(s) for s in surfaces),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise RuleConfigError(f"{where}: unit {name!r}: {exc}") from exc
        dimensions[str(dimension)] = tuple(built)
    stopwords = payload.get("stopwords", [])
    if not isinstance(stopwords, list):
        raise RuleConfigError(f"{where}: stopwords must be a list")
    return UnitTable(dimensions, tuple(str(s) for s in stopwords))


def ruleset_from_dict(payload: dict, where: str = "<rules>") -> RuleSet:
    """Build a RuleSet from parsed rule-config JSON."""
    if not isinstance(payload, dict):
        raise RuleConfigError(f"{where}: expected a JSON object")
    rules_payload = payload.get("rules", [])
    if not isinstance(rules_payload, list):
        raise RuleConfigError(f"{where}: rules must be a list")
    rules = []
    for record in rules_payload:
        if not isinstance(record, dict):
            raise RuleConfigError(f"{where}: each rule must be an object")
        try:
            name = record["name"]
            kind = record["kind"]
        except KeyError as exc:
            raise RuleConfigError(
                f"{where}: rule missing field {exc.args[0]!r}"
            ) from None
        rules.append(
            Rule(
                name=str(name),
                kind=str(kind),
                route=str(record.get("route", TRACK_LLM)),
                keywords=tuple(str(k) for k in record.get("keywords", [])),
                patterns=tuple(str(p) for p in record.get("patterns", [])),
            )
        )
    return RuleSet(
        rules=tuple(rules),
        unit_table=_unit_table_from_dict(payload, where),
        default_route=str(payload.get("default_route", TRACK_TREE)),
    )


def load_rules(path: Union[str, Path]) -> RuleSet:
    """Load a rule-config JSON file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"rules file not found: {path}") from None
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RuleConfigError(f"{path}: invalid JSON: {exc}") from exc
    return ruleset_from_dict(payload, str(path))


def default_ruleset() -> RuleSet:
    """The rule set shipped with the package."""
    text = (
        resources.files("mwpsolve")
        .joinpath("data")
        .joinpath(_DEFAULT_RULES_RESOURCE)
        .read_text(encoding="utf-8")
    )
    return ruleset_from_dict(json.loads(text), _DEFAULT_RULES_RESOURCE)
