"""Dual-layer fact representation for procedural caption evaluation.

Two fact layers describe one instructional step:

* conceptual facts -- abstract role/value statements ("Tool is spoon."),
  with a closed role inventory of Action, Ingredient/Object, Tool, Location;
* contextual facts -- grounded predicate-argument relations realized in the
  video ("stir with spoon"), with a closed relation inventory of act/obj,
  act/in, act/on, act/to, act/with.

Facts are immutable value objects normalized at construction, so rendering
is deterministic, injective within a layer, and round-trips through
``parse_fact_list``. The rendered strings are part of the external contract:
they appear verbatim in prompts, reports, and the annotation protocol.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence, Union


class FactError(ValueError):
    """Base class for fact-model errors."""


class EmptyEntityError(FactError):
    """Raised when a value normalizes to the empty string (unusable entity)."""

    def __init__(self, raw: str):
        super().__init__(f"entity is empty after normalization: {raw!r}")
        self.raw = raw


class InvalidFactError(FactError):
    """Raised when a fact violates a structural invariant at construction."""


class FactParseError(FactError):
    """Raised when a backend response yields no parseable fact at all.

    Carries the raw response so callers can decide retry/exclusion policy.
    """

    def __init__(self, raw_text: str, layer: "FactLayer"):
        super().__init__(f"no {layer.value} fact could be parsed from response")
        self.raw_text = raw_text
        self.layer = layer


class FactLayer(str, Enum):
    CONCEPTUAL = "conceptual"
    CONTEXTUAL = "contextual"


class ConceptualRole(str, Enum):
    """Closed role inventory for conceptual facts."""

    ACTION = "Action"
    INGREDIENT_OBJECT = "IngredientObject"
    TOOL = "Tool"
    LOCATION = "Location"


class ContextualRelation(str, Enum):
    """Closed relation inventory for contextual predicate-argument facts."""

    ACT_OBJ = "act/obj"
    ACT_IN = "act/in"
    ACT_ON = "act/on"
    ACT_TO = "act/to"
    ACT_WITH = "act/with"


_ARTICLES = frozenset({"a", "an", "the"})
_TRAILING_PUNCT = ".,;:!?"

# Surface labels used when rendering conceptual facts. The combined
# ingredient/object role has a dataset-configurable display alias
# ("Ingredient", "Object"); the canonical label is "Ingredient/Object".
DEFAULT_IO_LABEL = "Ingredient/Object"
_ROLE_LABELS = {
    ConceptualRole.ACTION: "Action",
    ConceptualRole.INGREDIENT_OBJECT: DEFAULT_IO_LABEL,
    ConceptualRole.TOOL: "Tool",
    ConceptualRole.LOCATION: "Location",
}

# Accepted spellings when parsing role labels back from rendered text.
_ROLE_ALIASES = {
    "action": ConceptualRole.ACTION,
    "ingredient/object": ConceptualRole.INGREDIENT_OBJECT,
    "object/ingredient": ConceptualRole.INGREDIENT_OBJECT,
    "object/ingredient/material": ConceptualRole.INGREDIENT_OBJECT,
    "ingredientobject": ConceptualRole.INGREDIENT_OBJECT,
    "ingredient": ConceptualRole.INGREDIENT_OBJECT,
    "object": ConceptualRole.INGREDIENT_OBJECT,
    "material": ConceptualRole.INGREDIENT_OBJECT,
    "tool": ConceptualRole.TOOL,
    "location": ConceptualRole.LOCATION,
}

# "act/ing" appears as an alternate name for the verb-patient relation.
_RELATION_ALIASES = {
    "act/obj": ContextualRelation.ACT_OBJ,
    "act/ing": ContextualRelation.ACT_OBJ,
    "act/in": ContextualRelation.ACT_IN,
    "act/on": ContextualRelation.ACT_ON,
    "act/to": ContextualRelation.ACT_TO,
    "act/with": ContextualRelation.ACT_WITH,
}

_RELATION_PREPOSITION = {
    ContextualRelation.ACT_IN: "in",
    ContextualRelation.ACT_ON: "on",
    ContextualRelation.ACT_TO: "to",
    ContextualRelation.ACT_WITH: "with",
}
_PREPOSITION_RELATION = {v: k for k, v in _RELATION_PREPOSITION.items()}


def role_from_string(name: str) -> ConceptualRole:
    """Map a role spelling (canonical name or display alias) to its role."""
    key = name.strip().lower()
    try:
        return _ROLE_ALIASES[key]
    except KeyError:
        raise InvalidFactError(f"unknown conceptual role: {name!r}") from None


def relation_from_string(name: str) -> ContextualRelation:
    """Map a relation spelling (including the act/ing alias) to its relation."""
    key = name.strip().lower()
    try:
        return _RELATION_ALIASES[key]
    except KeyError:
        raise InvalidFactError(f"unknown contextual relation: {name!r}") from None


def normalize_entity(text: str) -> str:
    """Canonicalize an entity string for storage and set comparison.

    Lowercases, collapses whitespace, strips leading articles and trailing
    punctuation. Idempotent. Raises ``EmptyEntityError`` when nothing is left.
    """
    out = " ".join(text.lower().split())
    out = out.rstrip(_TRAILING_PUNCT).rstrip()
    words = out.split()
    while words and words[0] in _ARTICLES:
        words.pop(0)
    out = " ".join(words)
    if not out:
        raise EmptyEntityError(text)
    return out


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric word tokens of ``text``."""
    return re.findall(r"[a-z0-9]+", text.lower())


@dataclass(frozen=True, order=True)
class ConceptualFact:
    """Abstract role/value statement about a step, e.g. Tool = spoon."""

    role: ConceptualRole
    value: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", normalize_entity(self.value))

    @property
    def layer(self) -> FactLayer:
        return FactLayer.CONCEPTUAL

    def render(self, io_label: str = DEFAULT_IO_LABEL) -> str:
        return render_conceptual(self, io_label=io_label)


@dataclass(frozen=True, order=True)
class ContextualFact:
    """Grounded predicate-argument relation, e.g. stir(with spoon).

    The predicate is restricted to a single token and an act/obj argument
    may not start with one of the pattern prepositions (in/on/to/with):
    both restrictions are what make rendering injective and parseable
    without a grammar.
    """

    relation: ContextualRelation
    predicate: str
    argument: str

    def __post_init__(self) -> None:
        predicate = normalize_entity(self.predicate)
        argument = normalize_entity(self.argument)
        if " " in predicate:
            raise InvalidFactError(
                f"predicate must be a single verb token: {predicate!r}"
            )
        if "," in argument or "," in predicate:
            # Contextual rendering has no label anchor, so a comma inside a
            # value cannot be told apart from a list separator when parsing.
            raise InvalidFactError("contextual values may not contain commas")
        if (
            self.relation is ContextualRelation.ACT_OBJ
            and argument.split()[0] in _PREPOSITION_RELATION
        ):
            raise InvalidFactError(
                f"act/obj argument may not start with a pattern preposition: "
                f"{argument!r}"
            )
        object.__setattr__(self, "predicate", predicate)
        object.__setattr__(self, "argument", argument)

    @property
    def layer(self) -> FactLayer:
        return FactLayer.CONTEXTUAL

    def render(self) -> str:
        return render_contextual(self)


Fact = Union[ConceptualFact, ContextualFact]


def render_conceptual(fact: ConceptualFact, io_label: str = DEFAULT_IO_LABEL) -> str:
    """Render ``<RoleLabel> is <value>.`` with exactly one trailing period."""
    if fact.role is ConceptualRole.INGREDIENT_OBJECT:
        label = io_label
    else:
        label = _ROLE_LABELS[fact.role]
    return f"{label} is {fact.value}."


def render_contextual(fact: ContextualFact) -> str:
    """Render the relation pattern: ``verb arg`` / ``verb with|in|on|to arg``."""
    if fact.relation is ContextualRelation.ACT_OBJ:
        return f"{fact.predicate} {fact.argument}"
    prep = _RELATION_PREPOSITION[fact.relation]
    return f"{fact.predicate} {prep} {fact.argument}"


def render_fact(fact: Fact, io_label: str = DEFAULT_IO_LABEL) -> str:
    if isinstance(fact, ConceptualFact):
        return render_conceptual(fact, io_label=io_label)
    return render_contextual(fact)


def canonical_key(fact: Fact) -> str:
    """Canonical rendering used for set membership and duplicate detection."""
    return render_fact(fact)


def fact_value_tokens(fact: Fact) -> set[str]:
    """Lexical tokens of a fact's value material (role labels and pattern
    prepositions excluded). Used by negative-fact overlap filtering."""
    if isinstance(fact, ConceptualFact):
        return set(tokenize(fact.value))
    return set(tokenize(fact.predicate)) | set(tokenize(fact.argument))


@dataclass(frozen=True)
class ParsedFactList:
    """Outcome of parsing one backend response into facts.

    ``fragments`` holds the unparseable pieces verbatim; nothing is silently
    dropped. ``empty_input`` flags a blank response.
    """

    facts: tuple[Fact, ...]
    fragments: tuple[str, ...]
    empty_input: bool = False


_CONCEPTUAL_ITEM_RE = re.compile(
    r"^\s*(?P<label>[A-Za-z][A-Za-z /]*?)\s+is\s+(?P<value>.+?)\s*$",
    re.IGNORECASE,
)
# A comma only separates conceptual items when what follows looks like a new
# "<Label> is" pattern; commas inside multi-word values stay put. The split
# is on the generic shape (any label word), so an unknown label still becomes
# its own item and surfaces as a fragment instead of polluting a value.
_CONCEPTUAL_START_RE = re.compile(r"^\s*[A-Za-z][A-Za-z /]*\s+is\s", re.IGNORECASE)


def _split_outside_parens(text: str, pattern_start: Optional[re.Pattern] = None) -> list[str]:
    items: list[str] = []
    depth = 0
    start = 0
    for i, ch in enumerate(text):
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth = max(0, depth - 1)
        elif ch == "," and depth == 0:
            rest = text[i + 1 :]
            if pattern_start is not None and not pattern_start.match(rest):
                continue
            items.append(text[start:i])
            start = i + 1
    items.append(text[start:])
    return [item for item in (s.strip() for s in items) if item]


def _parse_conceptual_item(item: str) -> Optional[ConceptualFact]:
    text = item.strip().rstrip(".").strip()
    m = _CONCEPTUAL_ITEM_RE.match(text)
    if not m:
        return None
    try:
        role = role_from_string(m.group("label"))
        return ConceptualFact(role, m.group("value"))
    except FactError:
        return None


def _parse_contextual_item(item: str) -> Optional[ContextualFact]:
    text = item.strip().rstrip(".").strip()
    tokens = text.split()
    if len(tokens) < 2:
        return None
    try:
        if len(tokens) >= 3 and tokens[1].lower() in _PREPOSITION_RELATION:
            relation = _PREPOSITION_RELATION[tokens[1].lower()]
            return ContextualFact(relation, tokens[0], " ".join(tokens[2:]))
        return ContextualFact(ContextualRelation.ACT_OBJ, tokens[0], " ".join(tokens[1:]))
    except FactError:
        return None


def parse_fact_list(text: str, layer: FactLayer) -> ParsedFactList:
    """Parse a comma-separated fact list produced by an extraction backend.

    Splits on commas outside parentheses (for the conceptual layer, only on
    commas followed by a recognized ``<Label> is`` pattern start), then parses
    each item against the layer template. Unparseable items are returned as
    fragments. Raises ``FactParseError`` when a nonempty response yields no
    fact at all.
    """
    if not text or not text.strip():
        return ParsedFactList(facts=(), fragments=(), empty_input=True)
    if layer is FactLayer.CONCEPTUAL:
        items = _split_outside_parens(text, _CONCEPTUAL_START_RE)
        parse_item = _parse_conceptual_item
    else:
        items = _split_outside_parens(text)
        parse_item = _parse_contextual_item
    facts: list[Fact] = []
    fragments: list[str] = []
    for item in items:
        fact = parse_item(item)
        if fact is None:
            fragments.append(item)
        else:
            facts.append(fact)
    if not facts:
        raise FactParseError(text, layer)
    return ParsedFactList(facts=tuple(facts), fragments=tuple(fragments))


def _check_unique(facts: Sequence[Fact], set_name: str, clause_id: str) -> None:
    seen: set[str] = set()
    for fact in facts:
        key = canonical_key(fact)
        if key in seen:
            raise InvalidFactError(
                f"duplicate fact in {set_name} of clause {clause_id}: {key!r}"
            )
        seen.add(key)


@dataclass(frozen=True)
class FactBundle:
    """The three fact sets of one clause within one layer.

    ``gold_positive`` are the annotated facts, ``gold_negative`` their
    generated contradictions (expected to have passed rejection filtering),
    ``predicted`` the facts extracted from a model caption when available.
    """

    clause_id: str
    layer: FactLayer
    gold_positive: tuple[Fact, ...] = ()
    gold_negative: tuple[Fact, ...] = ()
    predicted: Optional[tuple[Fact, ...]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold_positive", tuple(self.gold_positive))
        object.__setattr__(self, "gold_negative", tuple(self.gold_negative))
        if self.predicted is not None:
            object.__setattr__(self, "predicted", tuple(self.predicted))
        for fact in self.all_facts():
            if fact.layer is not self.layer:
                raise InvalidFactError(
                    f"fact {canonical_key(fact)!r} does not belong to "
                    f"layer {self.layer.value}"
                )
        _check_unique(self.gold_positive, "gold_positive", self.clause_id)
        _check_unique(self.gold_negative, "gold_negative", self.clause_id)
        if self.predicted is not None:
            _check_unique(self.predicted, "predicted", self.clause_id)
        positive_keys = {canonical_key(f) for f in self.gold_positive}
        for fact in self.gold_negative:
            if canonical_key(fact) in positive_keys:
                raise InvalidFactError(
                    f"gold negative duplicates a gold positive in clause "
                    f"{self.clause_id}: {canonical_key(fact)!r}"
                )

    def all_facts(self) -> Iterable[Fact]:
        yield from self.gold_positive
        yield from self.gold_negative
        if self.predicted is not None:
            yield from self.predicted

    def with_predicted(self, predicted: Sequence[Fact]) -> "FactBundle":
        return FactBundle(
            clause_id=self.clause_id,
            layer=self.layer,
            gold_positive=self.gold_positive,
            gold_negative=self.gold_negative,
            predicted=tuple(predicted),
        )
