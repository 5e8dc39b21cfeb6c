"""Predicted-fact extraction from generated captions, plus slot-level scoring.

Extraction renders a prompt template, calls a completion backend, and parses
the response into facts. Templates are data files with a small placeholder
grammar (see :class:`PromptTemplate`); the backends are pluggable so the
same pipeline runs against an HTTP endpoint, a canned lookup, or the
deterministic rule-based extractor used in tests and demos.

Extraction quality is scored at the slot level: every (role or relation,
value) prediction is a binary correctness decision against the gold facts
of the same clause, tallied into per-slot precision/recall/F1 with micro and
macro averages. A sensitivity analysis quantifies how much extraction noise
moves the final caption score by swapping predicted facts for gold ones.
"""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union

from .facts import (
    ConceptualFact,
    ContextualFact,
    ContextualRelation,
    Fact,
    FactLayer,
    FactParseError,
    canonical_key,
    normalize_entity,
    parse_fact_list,
    render_contextual,
)

logger = logging.getLogger(__name__)

_TEMPLATE_DIR = Path(__file__).parent / "templates"

# Labels used when render() appends inputs that the template body does not
# reference with a placeholder.
_INPUT_LABELS = {
    "caption": "Caption",
    "facts": "Positive facts",
    "negative_verb": "Negative action verb",
}


class ExtractionError(Exception):
    """Extraction failed for one clause (after the retry); pipeline continues."""


class TemplateError(Exception):
    """A template placeholder could not be bound at render time."""


@dataclass(frozen=True)
class PromptTemplate:
    """A versioned prompt body with ``{placeholder}`` substitution.

    Rendering binds every placeholder appearing in the body from the given
    inputs (missing ones raise ``TemplateError``). Inputs the body does not
    reference are appended as ``<Label>: <value>`` lines in sorted key order,
    so verbatim prompt texts without placeholders still receive their inputs
    deterministically.
    """

    template_id: str
    layer: FactLayer
    body: str
    few_shot: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.body.strip():
            raise TemplateError(f"template {self.template_id} has an empty body")

    def placeholders(self) -> set[str]:
        return {
            name
            for _, name, _, _ in string.Formatter().parse(self.body)
            if name
        }

    def render(self, **inputs: str) -> str:
        fields = self.placeholders()
        missing = fields - set(inputs)
        if missing:
            raise TemplateError(
                f"template {self.template_id} is missing inputs: "
                f"{', '.join(sorted(missing))}"
            )
        if fields:
            text = self.body.format(**{k: inputs[k] for k in fields})
        else:
            text = self.body
        parts = [text.rstrip("\n")]
        parts.extend(self.few_shot)
        for key in sorted(set(inputs) - fields):
            label = _INPUT_LABELS.get(key, key)
            parts.append(f"{label}: {inputs[key]}")
        return "\n\n".join(parts)


def load_template(path: Union[str, Path], layer: Optional[FactLayer] = None) -> PromptTemplate:
    """Load a template file; the layer is inferred from the filename unless given."""
    path = Path(path)
    body = path.read_text(encoding="utf-8")
    if layer is None:
        stem = path.stem.lower()
        if "conceptual" in stem:
            layer = FactLayer.CONCEPTUAL
        elif "contextual" in stem:
            layer = FactLayer.CONTEXTUAL
        else:
            raise TemplateError(f"cannot infer layer from template name {path.name}")
    return PromptTemplate(template_id=path.stem, layer=layer, body=body)


def packaged_template(name: str) -> PromptTemplate:
    """Load one of the templates shipped with the package by file stem."""
    return load_template(_TEMPLATE_DIR / f"{name}.txt")


# ---------------------------------------------------------------------------
# Rule-based mock extractor
# ---------------------------------------------------------------------------

_PRONOUNS = frozenset({"it", "them", "this", "that", "these", "those"})
_ARTICLES = frozenset({"a", "an", "the", "some"})
_PREP_SLOTS = {
    "with": ("tool", ContextualRelation.ACT_WITH),
    "in": ("location", ContextualRelation.ACT_IN),
    "into": ("location", ContextualRelation.ACT_IN),
    "inside": ("location", ContextualRelation.ACT_IN),
    "on": ("location", ContextualRelation.ACT_ON),
    "onto": ("location", ContextualRelation.ACT_ON),
    "to": ("location", ContextualRelation.ACT_TO),
}


def gerund(verb: str) -> str:
    """Present participle by rule: tie->tying, slice->slicing, stir->stirring."""
    if verb.endswith("ie"):
        return verb[:-2] + "ying"
    if verb.endswith("e") and not verb.endswith("ee"):
        return verb[:-1] + "ing"
    if (
        len(verb) >= 3
        and verb[-1] not in "aeiouwxy"
        and verb[-2] in "aeiou"
        and verb[-3] not in "aeiou"
    ):
        return verb + verb[-1] + "ing"
    return verb + "ing"


def _caption_chunks(caption: str) -> tuple[str, Optional[str], list[tuple[ContextualRelation, str]]]:
    """Split an imperative caption into verb, object chunk, and prepositional
    chunks. Articles and pronouns are dropped from chunk values."""
    words = [w.strip(".,!?;:").lower() for w in caption.split()]
    words = [w for w in words if w]
    if not words:
        return "", None, []
    verb, rest = words[0], words[1:]
    chunks: list[tuple[Optional[ContextualRelation], list[str]]] = [(None, [])]
    for word in rest:
        if word in _PREP_SLOTS:
            chunks.append((_PREP_SLOTS[word][1], []))
        elif word not in _ARTICLES and word not in _PRONOUNS and word != "and":
            chunks[-1][1].append(word)
    obj_words = chunks[0][1]
    obj = " ".join(obj_words) if obj_words else None
    prep_chunks = [
        (relation, " ".join(ws)) for relation, ws in chunks[1:] if relation and ws
    ]
    return verb, obj, prep_chunks


class RuleBasedExtractor:
    """Deterministic extractor that pattern-matches imperative captions.

    Handles the ``verb + object + with TOOL + in/on/to LOCATION`` shape,
    e.g. "Stir the soup with a spoon in the pot." yields the conceptual
    facts {stirring, soup, spoon, pot} over the four roles. Serves as an
    offline stand-in for an LLM extractor; it reads the caption from the
    request context, never from the rendered prompt.
    """

    kind = "mock"
    name = "rule"

    def complete(self, rendered_prompt: str, template_id: str, clause_id: str, **context) -> str:
        from .backends import TransportError

        caption = context.get("caption")
        layer = context.get("layer")
        if caption is None or layer is None:
            raise TransportError("rule extractor requires caption and layer context")
        verb, obj, preps = _caption_chunks(caption)
        if not verb:
            return ""
        items: list[str] = []
        if FactLayer(layer) is FactLayer.CONCEPTUAL:
            items.append(f"Action is {gerund(verb)}.")
            if obj:
                items.append(f"Ingredient/Object is {obj}.")
            for relation, value in preps:
                if relation is ContextualRelation.ACT_WITH:
                    items.append(f"Tool is {value}.")
                else:
                    items.append(f"Location is {value}.")
        else:
            if obj:
                items.append(render_contextual(ContextualFact(ContextualRelation.ACT_OBJ, verb, obj)))
            for relation, value in preps:
                items.append(render_contextual(ContextualFact(relation, verb, value)))
        return ", ".join(items)


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExtractionLog:
    """Raw responses and residual fragments for one extraction call."""

    clause_id: str
    raw_responses: tuple[str, ...]
    fragments: tuple[str, ...]
    retried: bool = False
    empty_response: bool = False


def extract_facts(
    caption: str,
    layer: FactLayer,
    backend,
    template: PromptTemplate,
    clause_id: str = "",
) -> tuple[tuple[Fact, ...], ExtractionLog]:
    """Extract the predicted fact set from one generated caption.

    Retries once with the identical prompt on a wholly unparseable response,
    then raises ``ExtractionError`` (the caller flags the clause and
    continues). Transport errors propagate as ``TransportError``. Duplicate
    facts in the response are collapsed, preserving first-seen order.
    """
    if not caption or not caption.strip():
        raise ExtractionError(f"caption for clause {clause_id!r} is empty")
    if template.layer is not layer:
        raise ExtractionError(
            f"template {template.template_id} is for layer "
            f"{template.layer.value}, not {layer.value}"
        )
    prompt = template.render(caption=caption)
    responses: list[str] = []
    retried = False
    for attempt in range(2):
        raw = backend.complete(
            prompt, template.template_id, clause_id, caption=caption, layer=layer.value
        )
        responses.append(raw)
        try:
            parsed = parse_fact_list(raw, layer)
        except FactParseError:
            if attempt == 0:
                retried = True
                logger.warning("clause %s: unparseable extraction, retrying", clause_id)
                continue
            raise ExtractionError(
                f"extraction failed for clause {clause_id!r}: response "
                f"unparseable after retry"
            ) from None
        seen: set[str] = set()
        facts: list[Fact] = []
        for fact in parsed.facts:
            key = canonical_key(fact)
            if key not in seen:
                seen.add(key)
                facts.append(fact)
        log = ExtractionLog(
            clause_id=clause_id,
            raw_responses=tuple(responses),
            fragments=parsed.fragments,
            retried=retried,
            empty_response=parsed.empty_input,
        )
        return tuple(facts), log
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# Slot-level evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlotScore:
    """Tally-backed precision/recall/F1 for one slot."""

    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "SlotScore") -> "SlotScore":
        return SlotScore(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class SlotMetrics:
    """Per-slot scores plus micro (pooled tallies) and macro (mean) averages."""

    per_slot: Mapping[str, SlotScore]
    micro: SlotScore
    macro_precision: float
    macro_recall: float
    macro_f1: float


def _slot_name(fact: Fact) -> str:
    if isinstance(fact, ConceptualFact):
        return fact.role.value
    return fact.relation.value


def _match_key(fact: Fact, synonyms: Optional[Mapping[str, str]]) -> tuple:
    def canon(value: str) -> str:
        return synonyms.get(value, value) if synonyms else value

    if isinstance(fact, ConceptualFact):
        return (fact.role.value, canon(fact.value))
    return (fact.relation.value, fact.predicate, canon(fact.argument))


def eval_extraction(
    predicted: Mapping[str, Sequence[Fact]],
    gold: Mapping[str, Sequence[Fact]],
    synonyms: Optional[Mapping[str, str]] = None,
) -> SlotMetrics:
    """Score predicted fact sets against gold at the slot level.

    Both mappings are keyed by clause_id and must cover the same clauses.
    Matching is exact after normalization; an optional synonym table (variant
    value -> canonical value) may merge values before comparison.
    """
    if set(predicted) != set(gold):
        raise ValueError("predicted and gold must cover the same clause set")
    if synonyms:
        synonyms = {normalize_entity(k): normalize_entity(v) for k, v in synonyms.items()}
    tallies: dict[str, SlotScore] = {}

    def bump(slot: str, tp: int = 0, fp: int = 0, fn: int = 0) -> None:
        tallies[slot] = tallies.get(slot, SlotScore()) + SlotScore(tp, fp, fn)

    for clause_id in sorted(gold):
        gold_keys = {_match_key(f, synonyms): f for f in gold[clause_id]}
        pred_keys = {_match_key(f, synonyms): f for f in predicted[clause_id]}
        for key, fact in pred_keys.items():
            if key in gold_keys:
                bump(_slot_name(fact), tp=1)
            else:
                bump(_slot_name(fact), fp=1)
        for key, fact in gold_keys.items():
            if key not in pred_keys:
                bump(_slot_name(fact), fn=1)

    micro = SlotScore()
    for score in tallies.values():
        micro = micro + score
    n = len(tallies)
    return SlotMetrics(
        per_slot=dict(sorted(tallies.items())),
        micro=micro,
        macro_precision=sum(s.precision for s in tallies.values()) / n if n else 0.0,
        macro_recall=sum(s.recall for s in tallies.values()) / n if n else 0.0,
        macro_f1=sum(s.f1 for s in tallies.values()) / n if n else 0.0,
    )


# ---------------------------------------------------------------------------
# Sensitivity of the final score to extraction noise
# ---------------------------------------------------------------------------


VerifierFn = Callable[[object, Sequence[Fact]], Sequence[str]]


@dataclass(frozen=True)
class SensitivityResult:
    """Per-layer |score(predicted) - score(gold)| in points (x100)."""

    delta_points: Mapping[FactLayer, float]
    videos: Mapping[FactLayer, int]
    excluded_clauses: Mapping[FactLayer, int]


def sensitivity_analysis(dataset, verifier_fn: VerifierFn) -> SensitivityResult:
    """Measure how much replacing predicted facts with gold moves the score.

    ``verifier_fn(record, facts)`` returns one SUPPORTED/REFUTED label per
    fact. Scores are pooled per video (supported facts over all facts of the
    video's clauses), the absolute per-video delta is averaged over videos,
    and reported in points. Clauses without predicted facts are excluded and
    counted.
    """
    deltas: dict[FactLayer, float] = {}
    videos: dict[FactLayer, int] = {}
    excluded: dict[FactLayer, int] = {}
    for layer in FactLayer:
        by_video: dict[str, dict[str, list[int]]] = {}
        skipped = 0
        for record in dataset:
            bundle = record.bundle(layer)
            if bundle is None or not bundle.gold_positive:
                continue
            if bundle.predicted is None:
                skipped += 1
                continue
            acc = by_video.setdefault(record.video_id, {"pred": [0, 0], "gold": [0, 0]})
            for kind, facts in (("pred", bundle.predicted), ("gold", bundle.gold_positive)):
                if not facts:
                    continue
                labels = verifier_fn(record, facts)
                acc[kind][0] += sum(
                    1 for label in labels if str(label).upper() == "SUPPORTED"
                )
                acc[kind][1] += len(facts)
        per_video_deltas = []
        for acc in by_video.values():
            if acc["pred"][1] == 0 or acc["gold"][1] == 0:
                continue
            pred_score = acc["pred"][0] / acc["pred"][1]
            gold_score = acc["gold"][0] / acc["gold"][1]
            per_video_deltas.append(abs(pred_score - gold_score))
        deltas[layer] = (
            100.0 * sum(per_video_deltas) / len(per_video_deltas)
            if per_video_deltas
            else 0.0
        )
        videos[layer] = len(per_video_deltas)
        excluded[layer] = skipped
    return SensitivityResult(delta_points=deltas, videos=videos, excluded_clauses=excluded)
