"""Contrastive negative-fact generation with mechanical rejection rules.

Each gold positive fact is paired with an incorrect but syntactically aligned
variant: same role/relation, same rendering pattern, different value. Three
rejection rules keep negatives non-trivial:

* ``ii-inflection``   -- candidate differs from a positive only in numerals
                         or surface inflection (checked first, most specific);
* ``i-overlap``       -- candidate reuses any normalized token or stem from
                         any positive value of the clause;
* ``iii-implausible`` -- candidate fails the plausibility check (by default,
                         membership in the domain confusion lexicon; a
                         backend-based judge can be plugged in instead).

Generation has two paths: an LLM backend driven by the shipped negative-fact
prompt templates, and a deterministic lexicon-substitution fallback that is a
pure function of (positives, lexicon, seed). Backend failures fall back with
a logged notice, so a pipeline run never stalls on negatives.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence, Union

from .facts import (
    ConceptualFact,
    ConceptualRole,
    ContextualFact,
    ContextualRelation,
    Fact,
    FactError,
    FactLayer,
    FactParseError,
    canonical_key,
    normalize_entity,
    parse_fact_list,
    relation_from_string,
    role_from_string,
    tokenize,
)

logger = logging.getLogger(__name__)

REJECT_INFLECTION = "ii-inflection"
REJECT_OVERLAP = "i-overlap"
REJECT_IMPLAUSIBLE = "iii-implausible"

_VOWELS = frozenset("aeiou")


class NegativesError(Exception):
    """Base class for negative-generation errors."""


class LexiconExhaustedError(NegativesError):
    """No lexicon entry survives filtering for a role/relation."""

    def __init__(self, slot: str):
        super().__init__(f"confusion lexicon exhausted for {slot}")
        self.slot = slot


def stem_token(token: str) -> str:
    """Conservative suffix stripping for overlap/inflection comparison.

    Strips -ies/-es/-s and -ing/-ed, collapses a resulting final double
    consonant (cutting -> cutt -> cut) and drops a final -e so that base and
    inflected forms map to the same stem (slice/slicing -> slic). Not a
    linguistic stemmer; both sides of every comparison get the same mapping.
    """
    t = token
    if t.endswith("ies") and len(t) > 4:
        t = t[:-3] + "y"
    elif t.endswith("es") and len(t) > 3:
        t = t[:-2]
    elif t.endswith("s") and len(t) > 3 and not t.endswith("ss"):
        t = t[:-1]
    if t.endswith("ing") and len(t) > 5:
        t = t[:-3]
    elif t.endswith("ed") and len(t) > 4:
        t = t[:-2]
    if len(t) > 2 and t[-1] == t[-2] and t[-1] not in _VOWELS:
        t = t[:-1]
    if t.endswith("e") and len(t) > 3:
        t = t[:-1]
    return t


def _stems(tokens) -> set[str]:
    return {stem_token(t) for t in tokens}


def _lexical_tokens(fact: Fact) -> list[str]:
    if isinstance(fact, ConceptualFact):
        return tokenize(fact.value)
    return tokenize(fact.predicate) + tokenize(fact.argument)


def _slot(fact: Fact):
    return fact.role if isinstance(fact, ConceptualFact) else fact.relation


@dataclass(frozen=True)
class NegativeCandidate:
    """One generated negative, linked to its source positive.

    ``rejection`` carries the rule id when the candidate was filtered out;
    accepted candidates have ``rejection=None``.
    """

    source_positive: Fact
    candidate: Fact
    origin: str = "backend"  # "backend" | "fallback"
    rejection: Optional[str] = None

    def __post_init__(self) -> None:
        if self.candidate.layer is not self.source_positive.layer:
            raise NegativesError("candidate layer must match its source positive")

    @property
    def accepted(self) -> bool:
        return self.rejection is None


@dataclass(frozen=True)
class ConfusionLexicon:
    """Domain-tagged substitute values per role/relation plus negative verbs.

    Entries are normalized and de-duplicated at construction.
    """

    domain: str
    conceptual: Mapping[ConceptualRole, tuple[str, ...]]
    contextual: Mapping[ContextualRelation, tuple[str, ...]]
    verbs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "conceptual", {k: _clean_entries(v) for k, v in self.conceptual.items()}
        )
        object.__setattr__(
            self, "contextual", {k: _clean_entries(v) for k, v in self.contextual.items()}
        )
        object.__setattr__(self, "verbs", _clean_entries(self.verbs))

    def entries_for(self, slot: Union[ConceptualRole, ContextualRelation]) -> tuple[str, ...]:
        if isinstance(slot, ConceptualRole):
            return self.conceptual.get(slot, ())
        return self.contextual.get(slot, ())

    def contains(self, fact: Fact) -> bool:
        """Default plausibility predicate: fact values appear in the lexicon."""
        if isinstance(fact, ConceptualFact):
            return fact.value in self.conceptual.get(fact.role, ())
        return fact.argument in self.contextual.get(fact.relation, ()) and (
            not self.verbs or fact.predicate in self.verbs
        )


def _clean_entries(values: Sequence[str]) -> tuple[str, ...]:
    out: list[str] = []
    seen: set[str] = set()
    for value in values:
        norm = normalize_entity(value)
        if norm not in seen:
            seen.add(norm)
            out.append(norm)
    return tuple(out)


def load_lexicon(source: Union[str, Mapping]) -> ConfusionLexicon:
    """Load a lexicon from a JSON file path or an already-parsed mapping."""
    import json
    from pathlib import Path

    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    else:
        obj = source
    return ConfusionLexicon(
        domain=obj.get("domain", "generic"),
        conceptual={
            role_from_string(k): tuple(v) for k, v in obj.get("conceptual", {}).items()
        },
        contextual={
            relation_from_string(k): tuple(v)
            for k, v in obj.get("contextual", {}).items()
        },
        verbs=tuple(obj.get("verbs", ())),
    )


PlausibilityCheck = Callable[[Fact], bool]


def _inflection_only(candidate: Fact, positive: Fact) -> bool:
    if _slot(candidate) != _slot(positive):
        return False
    cand = [t for t in _lexical_tokens(candidate) if not t.isdigit()]
    pos = [t for t in _lexical_tokens(positive) if not t.isdigit()]
    return sorted(_stems(cand)) == sorted(_stems(pos))


@dataclass(frozen=True)
class FilterResult:
    accepted: tuple[NegativeCandidate, ...]
    rejected: tuple[NegativeCandidate, ...]


def filter_negatives(
    positives: Sequence[Fact],
    candidates: Sequence[NegativeCandidate],
    lexicon: Optional[ConfusionLexicon] = None,
    plausibility: Optional[PlausibilityCheck] = None,
) -> FilterResult:
    """Partition candidates into accepted and rejected (with rule ids).

    Ordering of the accepted list is stable with respect to the input.
    When neither a lexicon nor an explicit plausibility check is supplied,
    rule iii passes everything.
    """
    if plausibility is None and lexicon is not None:
        plausibility = lexicon.contains
    positive_stems: set[str] = set()
    for p in positives:
        positive_stems |= _stems(_lexical_tokens(p))
    accepted: list[NegativeCandidate] = []
    rejected: list[NegativeCandidate] = []
    for cand in candidates:
        rule = None
        if any(_inflection_only(cand.candidate, p) for p in positives):
            rule = REJECT_INFLECTION
        elif _stems(_lexical_tokens(cand.candidate)) & positive_stems:
            rule = REJECT_OVERLAP
        elif plausibility is not None and not plausibility(cand.candidate):
            rule = REJECT_IMPLAUSIBLE
        if rule is None:
            accepted.append(replace(cand, rejection=None))
        else:
            rejected.append(replace(cand, rejection=rule))
    return FilterResult(accepted=tuple(accepted), rejected=tuple(rejected))


def _substitute_value(positive: Fact, value: str, predicate: Optional[str] = None) -> Fact:
    if isinstance(positive, ConceptualFact):
        return ConceptualFact(positive.role, value)
    return ContextualFact(
        positive.relation, predicate if predicate else positive.predicate, value
    )


def fallback_substitute(
    positives: Sequence[Fact],
    lexicon: ConfusionLexicon,
    seed: int,
) -> tuple[NegativeCandidate, ...]:
    """Deterministic lexicon substitution honoring the rejection rules.

    For each positive, lexicon entries for its role/relation are tried in a
    seeded pseudo-random order and the first candidate surviving
    :func:`filter_negatives` (against all clause positives) is kept. For
    contextual positives the predicate is replaced too, with a negative
    action verb drawn from the lexicon's verb list in the same seeded order.
    Pure in (positives, lexicon, seed). Raises ``LexiconExhaustedError``
    naming the role/relation when nothing survives.
    """
    if not positives:
        raise NegativesError("positives must be nonempty")
    rng = random.Random(seed)
    used: set[str] = set()
    picked: list[NegativeCandidate] = []
    for positive in positives:
        slot = _slot(positive)
        entries = lexicon.entries_for(slot)
        if not entries:
            raise LexiconExhaustedError(slot.value)
        ordered = rng.sample(list(entries), len(entries))
        if isinstance(positive, ContextualFact):
            verbs = list(lexicon.verbs)
            if not verbs:
                raise LexiconExhaustedError("verbs")
            verb_order = rng.sample(verbs, len(verbs))
            combos = [(v, a) for v in verb_order for a in ordered]
        else:
            combos = [(None, a) for a in ordered]
        chosen: Optional[NegativeCandidate] = None
        for predicate, value in combos:
            try:
                fact = _substitute_value(positive, value, predicate)
            except FactError:
                continue
            key = canonical_key(fact)
            if key in used:
                continue
            cand = NegativeCandidate(
                source_positive=positive, candidate=fact, origin="fallback"
            )
            result = filter_negatives(positives, [cand], lexicon=lexicon)
            if result.accepted:
                chosen = result.accepted[0]
                used.add(key)
                break
        if chosen is None:
            raise LexiconExhaustedError(slot.value)
        picked.append(chosen)
    return tuple(picked)


@dataclass(frozen=True)
class GenerationLog:
    """Audit trail of one negative-generation call."""

    raw_text: str = ""
    fragments: tuple[str, ...] = ()
    orphans: tuple[str, ...] = ()
    used_fallback: bool = False
    notices: tuple[str, ...] = ()


def _pick_negative_verb(
    positives: Sequence[Fact], lexicon: Optional[ConfusionLexicon], seed: int
) -> Optional[str]:
    if lexicon is None or not lexicon.verbs:
        return None
    rng = random.Random(seed)
    positive_stems: set[str] = set()
    for p in positives:
        positive_stems |= _stems(_lexical_tokens(p))
    for verb in rng.sample(list(lexicon.verbs), len(lexicon.verbs)):
        if not (_stems(tokenize(verb)) & positive_stems):
            return verb
    return None


def generate_negatives(
    positives: Sequence[Fact],
    layer: FactLayer,
    backend,
    template,
    lexicon: Optional[ConfusionLexicon] = None,
    clause_id: str = "",
    seed: int = 0,
    per_positive: int = 1,
    plausibility: Optional[PlausibilityCheck] = None,
) -> tuple[tuple[NegativeCandidate, ...], GenerationLog]:
    """Generate filtered negative candidates for one clause's positives.

    Returns all candidates (accepted first-N per positive, rejected marked
    with their rule id) plus a log. Backend transport failures and wholly
    unparseable responses fall back to :func:`fallback_substitute` when a
    lexicon is available; positives left without an accepted candidate are
    also topped up from the fallback.
    """
    from .backends import TransportError

    if not positives:
        raise NegativesError("positives must be nonempty")
    notices: list[str] = []
    raw_text = ""
    fragments: tuple[str, ...] = ()
    orphans: list[str] = []
    candidates: list[NegativeCandidate] = []
    used_fallback = False

    inputs = {"facts": ", ".join(canonical_key(f) for f in positives)}
    if layer is FactLayer.CONTEXTUAL:
        verb = _pick_negative_verb(positives, lexicon, seed)
        if verb is not None:
            inputs["negative_verb"] = verb

    parsed = None
    try:
        raw_text = backend.complete(template.render(**inputs), template.template_id, clause_id)
        parsed = parse_fact_list(raw_text, layer)
    except TransportError as exc:
        notices.append(f"backend transport failure, using fallback: {exc}")
    except FactParseError:
        notices.append("backend response unparseable, using fallback")

    if parsed is not None:
        fragments = parsed.fragments
        by_slot: dict[object, list[Fact]] = {}
        for p in positives:
            by_slot.setdefault(_slot(p), []).append(p)
        cursor: dict[object, int] = {}
        for fact in parsed.facts:
            slot = _slot(fact)
            pool = by_slot.get(slot)
            if not pool:
                orphans.append(canonical_key(fact))
                continue
            idx = cursor.get(slot, 0)
            source = pool[idx % len(pool)]
            cursor[slot] = idx + 1
            candidates.append(
                NegativeCandidate(source_positive=source, candidate=fact, origin="backend")
            )

    result = filter_negatives(positives, candidates, lexicon=lexicon, plausibility=plausibility)
    accepted_by_source: dict[str, list[NegativeCandidate]] = {}
    for cand in result.accepted:
        accepted_by_source.setdefault(canonical_key(cand.source_positive), []).append(cand)

    final: list[NegativeCandidate] = []
    for key, group in accepted_by_source.items():
        final.extend(group[:per_positive])

    missing = [
        p for p in positives if not accepted_by_source.get(canonical_key(p))
    ]
    if missing and lexicon is not None:
        try:
            fallback = fallback_substitute(list(positives), lexicon, seed)
            wanted = {canonical_key(p) for p in missing}
            existing = {canonical_key(c.candidate) for c in final}
            for cand in fallback:
                if (
                    canonical_key(cand.source_positive) in wanted
                    and canonical_key(cand.candidate) not in existing
                ):
                    final.append(cand)
                    used_fallback = True
        except NegativesError as exc:
            notices.append(f"fallback unavailable: {exc}")
    elif missing:
        notices.append(
            f"{len(missing)} positives have no accepted negative and no "
            f"lexicon is configured"
        )

    for notice in notices:
        logger.warning("%s: %s", clause_id or "<clause>", notice)

    log = GenerationLog(
        raw_text=raw_text,
        fragments=fragments,
        orphans=tuple(orphans),
        used_fallback=used_fallback,
        notices=tuple(notices),
    )
    return tuple(final) + result.rejected, log
