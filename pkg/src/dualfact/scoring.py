"""Caption-level scoring: MultiFactScore, error decomposition, grounding.

MultiFactScore is the fraction of a caption's facts judged SUPPORTED, kept
as an exact rational and rendered to two decimals (x100) only at report
time. Refuted predicted facts decompose into hallucinations (not visually
grounded) and salience errors (grounded but contradicted); gold entities
that no predicted fact expresses are omissions. Which categories a
percentage row covers depends on the evaluation mode:

* ``cap_only``      -- no grounding available; every refuted fact counts as
                       hallucination; categories are omission+hallucination;
* ``text_grounded`` -- textual verdicts refined by the grounding predicate;
                       categories are omission+hallucination+salience;
* ``mm_grounded``   -- multimodal verdicts refined by grounding; categories
                       are hallucination+salience (omission is still counted
                       and reported, but rendered as a dash and kept out of
                       the percentage denominator).

Within one (fact type, mode) cell the percentages are category counts over
the cell's total error count, so they sum to exactly 100 before rounding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .backends import TransportError, VerdictRequest
from .facts import (
    ConceptualFact,
    Fact,
    FactBundle,
    canonical_key,
    normalize_entity,
)
from .verification import Evidence, Verdict, VerdictLabel


class ScoringError(Exception):
    """Base class for scoring errors."""


class UndefinedScoreError(ScoringError):
    """The score's denominator is empty (clause skipped and counted)."""


class EvalMode(str, Enum):
    CAP_ONLY = "cap_only"
    TEXT_GROUNDED = "text_grounded"
    MM_GROUNDED = "mm_grounded"


# Categories whose counts form the percentage denominator, per mode.
MODE_CATEGORIES: dict[EvalMode, tuple[str, ...]] = {
    EvalMode.CAP_ONLY: ("omission", "hallucination"),
    EvalMode.TEXT_GROUNDED: ("omission", "hallucination", "salience"),
    EvalMode.MM_GROUNDED: ("hallucination", "salience"),
}

CATEGORIES = ("omission", "hallucination", "salience")


def round_half_up(value: Union[float, Fraction], digits: int = 2) -> float:
    """Decimal round-half-up, the rounding used in every rendered table."""
    if isinstance(value, Fraction):
        dec = Decimal(value.numerator) / Decimal(value.denominator)
    else:
        dec = Decimal(str(value))
    quant = Decimal(1).scaleb(-digits)
    return float(dec.quantize(quant, rounding=ROUND_HALF_UP))


def render_percent(ratio: Union[float, Fraction, None]) -> str:
    """Render a ratio in [0, 1] as a 2-decimal percentage; None is a dash."""
    if ratio is None:
        return "--"
    return f"{round_half_up(100 * ratio):.2f}"


def render_points(value: Union[float, Fraction, None]) -> str:
    """Render an already-scaled percentage/points value to 2 decimals."""
    if value is None:
        return "--"
    return f"{round_half_up(value):.2f}"


def multifact_score(verdicts: Sequence[Union[Verdict, VerdictLabel]]) -> Fraction:
    """Proportion of facts judged SUPPORTED, as an exact rational.

    Raises ``UndefinedScoreError`` on an empty fact set (after exclusions);
    the caller skips the clause and counts it.
    """
    if not verdicts:
        raise UndefinedScoreError("no verdicts: score undefined for empty fact set")
    labels = [v.label if isinstance(v, Verdict) else v for v in verdicts]
    supported = sum(1 for label in labels if label is VerdictLabel.SUPPORTED)
    return Fraction(supported, len(labels))


# ---------------------------------------------------------------------------
# Grounding predicate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroundingResult:
    """Any-frame grounding decision for one entity or fact."""

    item: str  # canonical fact text or entity string
    grounded: bool
    backend: str
    per_frame: Optional[tuple[bool, ...]] = None

    def __post_init__(self) -> None:
        if self.per_frame is not None and self.grounded != any(self.per_frame):
            raise ScoringError(
                "grounded flag must be the disjunction over sampled frames"
            )


@dataclass(frozen=True)
class GroundingExclusion:
    item: str
    reason: str


class MockGroundingBackend:
    """Replays grounding decisions from ``{clause_id: {item: bool | [bool]}}``.

    A per-frame list is reduced with any-frame semantics and kept as detail.
    """

    kind = "mock"

    def __init__(self, lookup: Union[str, Path, Mapping], name: str = "mock-grounder"):
        if isinstance(lookup, (str, Path)):
            with open(lookup, "r", encoding="utf-8") as fh:
                lookup = json.load(fh)
        self._lookup = {k: dict(v) for k, v in dict(lookup).items()}
        self.name = name

    def supports(self, mode: str) -> bool:
        return mode == "grounding"

    def lookup(self, clause_id: str, item: str):
        by_item = self._lookup.get(clause_id, {})
        if item not in by_item:
            raise TransportError(
                f"mock grounder has no entry for {item!r} in clause {clause_id}"
            )
        return by_item[item]


_TRUE_TOKENS = {"grounded", "true", "yes", "1"}
_FALSE_TOKENS = {"not_grounded", "ungrounded", "false", "no", "0"}


def parse_grounding_label(raw: str) -> Optional[bool]:
    token = (raw or "").strip().lower().rstrip(".")
    if token in _TRUE_TOKENS:
        return True
    if token in _FALSE_TOKENS:
        return False
    return None


def ground(
    items: Sequence[Union[Fact, str]],
    evidence: Evidence,
    backend,
    clause_id: str = "",
) -> tuple[tuple[GroundingResult, ...], tuple[GroundingExclusion, ...]]:
    """Obtain a boolean grounding decision per entity or fact.

    For contextual facts the argument entity is what gets grounded; for
    conceptual facts, the value. Transport failures mark the item
    ungroundable and exclude it with a record.
    """
    results: list[GroundingResult] = []
    exclusions: list[GroundingExclusion] = []
    for item in items:
        text = grounding_item_text(item)
        try:
            if isinstance(backend, MockGroundingBackend):
                value = backend.lookup(clause_id, text)
                if isinstance(value, (list, tuple)):
                    frames = tuple(bool(v) for v in value)
                    results.append(
                        GroundingResult(text, any(frames), backend.name, frames)
                    )
                else:
                    results.append(GroundingResult(text, bool(value), backend.name))
            else:
                request = VerdictRequest(
                    mode="grounding",
                    evidence=evidence.wire(),
                    fact_text=text,
                    clause_id=clause_id,
                )
                raw = backend.judge(request)
                grounded = parse_grounding_label(raw)
                if grounded is None:
                    exclusions.append(GroundingExclusion(text, "unparseable"))
                else:
                    results.append(GroundingResult(text, grounded, backend.name))
        except TransportError as exc:
            exclusions.append(GroundingExclusion(text, f"transport: {exc}"))
    return tuple(results), tuple(exclusions)


def grounding_item_text(item: Union[Fact, str]) -> str:
    if isinstance(item, str):
        return item
    if isinstance(item, ConceptualFact):
        return item.value
    return item.argument


# ---------------------------------------------------------------------------
# Error decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecompositionCell:
    """Counts and exact percentages for one fact type under one mode."""

    counts: Mapping[str, int]
    percentages: Mapping[str, Optional[Fraction]]
    total_errors: int


@dataclass(frozen=True)
class ErrorDecomposition:
    eval_mode: EvalMode
    per_type: Mapping[str, DecompositionCell]
    overall: DecompositionCell


def _fact_type(fact: Fact) -> str:
    return fact.role.value if isinstance(fact, ConceptualFact) else fact.relation.value


def _entity_of(fact: Fact) -> str:
    return fact.value if isinstance(fact, ConceptualFact) else fact.argument


def _cell(counts: dict[str, int], mode: EvalMode) -> DecompositionCell:
    in_mode = MODE_CATEGORIES[mode]
    total = sum(counts[c] for c in in_mode)
    percentages: dict[str, Optional[Fraction]] = {}
    for category in CATEGORIES:
        if category not in in_mode:
            percentages[category] = None
        elif total == 0:
            percentages[category] = Fraction(0)
        else:
            percentages[category] = Fraction(100) * Fraction(counts[category], total)
    return DecompositionCell(counts=dict(counts), percentages=percentages, total_errors=total)


def decompose_errors(
    predicted: Sequence[Fact],
    gold_bundle: FactBundle,
    verdicts: Sequence[Union[Verdict, tuple[Fact, VerdictLabel]]],
    grounding: Optional[Mapping[str, bool]],
    eval_mode: EvalMode,
    strict_omission: bool = False,
) -> ErrorDecomposition:
    """Categorize factual errors per fact type under one evaluation mode.

    ``verdicts`` cover the predicted facts (facts excluded upstream simply
    carry no verdict and are not categorized). ``grounding`` maps grounded
    entity strings (see :func:`grounding_item_text`) to booleans and is
    required in the grounded modes. Omissions compare normalized entity
    values; by default an entity counts as expressed when it appears as the
    value/argument of any predicted fact of any type, while
    ``strict_omission`` requires the same role/relation.
    """
    if eval_mode is not EvalMode.CAP_ONLY and grounding is None:
        raise ScoringError(f"mode {eval_mode.value} requires grounding data")

    label_by_key: dict[str, VerdictLabel] = {}
    for item in verdicts:
        if isinstance(item, Verdict):
            label_by_key[canonical_key(item.fact)] = item.label
        else:
            fact, label = item
            label_by_key[canonical_key(fact)] = label

    counts: dict[str, dict[str, int]] = {}

    def bump(fact_type: str, category: str) -> None:
        cell = counts.setdefault(
            fact_type, {"omission": 0, "hallucination": 0, "salience": 0}
        )
        cell[category] += 1

    for fact in predicted:
        label = label_by_key.get(canonical_key(fact))
        if label is None or label is VerdictLabel.SUPPORTED:
            continue
        if eval_mode is EvalMode.CAP_ONLY:
            bump(_fact_type(fact), "hallucination")
            continue
        item = grounding_item_text(fact)
        if item not in grounding:  # type: ignore[operator]
            raise ScoringError(
                f"no grounding decision for refuted fact {canonical_key(fact)!r}"
            )
        bump(_fact_type(fact), "salience" if grounding[item] else "hallucination")

    expressed: set = set()
    for fact in predicted:
        value = normalize_entity(_entity_of(fact))
        expressed.add((_fact_type(fact), value) if strict_omission else value)
    for fact in gold_bundle.gold_positive:
        value = normalize_entity(_entity_of(fact))
        key = (_fact_type(fact), value) if strict_omission else value
        if key not in expressed:
            bump(_fact_type(fact), "omission")

    overall = {"omission": 0, "hallucination": 0, "salience": 0}
    for cell in counts.values():
        for category in CATEGORIES:
            overall[category] += cell[category]

    return ErrorDecomposition(
        eval_mode=eval_mode,
        per_type={name: _cell(cell, eval_mode) for name, cell in sorted(counts.items())},
        overall=_cell(overall, eval_mode),
    )


def aggregate_decompositions(
    decompositions: Sequence[ErrorDecomposition],
) -> Optional[ErrorDecomposition]:
    """Sum per-clause decompositions into dataset-level cells.

    Raw counts add up; percentages are recomputed over the summed counts,
    which is how the published dataset-level rows are built (never means of
    per-clause percentages).
    """
    if not decompositions:
        return None
    mode = decompositions[0].eval_mode
    if any(d.eval_mode is not mode for d in decompositions):
        raise ScoringError("cannot aggregate decompositions across eval modes")
    counts: dict[str, dict[str, int]] = {}
    for decomposition in decompositions:
        for fact_type, cell in decomposition.per_type.items():
            acc = counts.setdefault(
                fact_type, {"omission": 0, "hallucination": 0, "salience": 0}
            )
            for category in CATEGORIES:
                acc[category] += cell.counts[category]
    overall = {"omission": 0, "hallucination": 0, "salience": 0}
    for cell in counts.values():
        for category in CATEGORIES:
            overall[category] += cell[category]
    return ErrorDecomposition(
        eval_mode=mode,
        per_type={name: _cell(cell, mode) for name, cell in sorted(counts.items())},
        overall=_cell(overall, mode),
    )


# ---------------------------------------------------------------------------
# Grounding-quality evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VideoObjects:
    """One video's expected-visible and expected-absent object mentions."""

    positive: tuple[str, ...]
    negative: tuple[str, ...]
    predictions: Mapping[str, bool]

    def __post_init__(self) -> None:
        overlap = set(self.positive) & set(self.negative)
        if overlap:
            raise ScoringError(
                f"objects cannot be both positive and negative: {sorted(overlap)}"
            )
        missing = (set(self.positive) | set(self.negative)) - set(self.predictions)
        if missing:
            raise ScoringError(f"missing grounding predictions: {sorted(missing)}")


@dataclass(frozen=True)
class GroundingEvalSet:
    videos: Mapping[str, VideoObjects]


@dataclass(frozen=True)
class GroundingEvalResult:
    """Recall over positives, specificity over negatives, overall accuracy.

    Dataset-level values aggregate raw counts across videos, never per-video
    means. Undefined metrics (empty object set) are None.
    """

    grounded_pos: int
    total_pos: int
    ungrounded_neg: int
    total_neg: int

    @property
    def recall_pos(self) -> Optional[Fraction]:
        return Fraction(self.grounded_pos, self.total_pos) if self.total_pos else None

    @property
    def specificity_neg(self) -> Optional[Fraction]:
        return Fraction(self.ungrounded_neg, self.total_neg) if self.total_neg else None

    @property
    def overall_acc(self) -> Optional[Fraction]:
        total = self.total_pos + self.total_neg
        if not total:
            return None
        return Fraction(self.grounded_pos + self.ungrounded_neg, total)


def grounding_eval_from_counts(
    grounded_pos: int, total_pos: int, ungrounded_neg: int, total_neg: int
) -> GroundingEvalResult:
    if grounded_pos > total_pos or ungrounded_neg > total_neg:
        raise ScoringError("correct counts cannot exceed totals")
    return GroundingEvalResult(grounded_pos, total_pos, ungrounded_neg, total_neg)


def grounding_eval(eval_set: GroundingEvalSet) -> GroundingEvalResult:
    grounded_pos = total_pos = ungrounded_neg = total_neg = 0
    for video in eval_set.videos.values():
        total_pos += len(video.positive)
        total_neg += len(video.negative)
        grounded_pos += sum(1 for o in video.positive if video.predictions[o])
        ungrounded_neg += sum(1 for o in video.negative if not video.predictions[o])
    return GroundingEvalResult(grounded_pos, total_pos, ungrounded_neg, total_neg)
