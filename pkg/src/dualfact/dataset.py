"""Loading, validation, and summary statistics for fact-annotated benchmarks.

Benchmark files are UTF-8 line-delimited JSON, one atomic clause per line,
with a versioned ``schema`` field and the fact bundles embedded per clause::

    {"schema": "dualfact/v1", "dataset": "youcook3", "split": "test",
     "video_id": "v01", "clause_id": "v01_c001", "start_s": 4.2, "end_s": 9.0,
     "caption": "stir it",
     "via_caption": "stir the soup with a spoon in the pot",
     "via_roles": ["IngredientObject", "Tool", "Location"],
     "facts": {"conceptual": {"positive": [{"role": "Action",
                                            "value": "stirring"}, ...],
                              "negative": [...], "predicted": [...]},
               "contextual": {"positive": [{"relation": "act/obj",
                                            "predicate": "stir",
                                            "argument": "soup"}, ...],
                              "negative": [...]}}}

Structural invariants (timestamps, duplicate ids, fact-set uniqueness) are
enforced while loading and raise ``DatasetLoadError`` naming the line.
Cross-object rules that a well-formed file can still break (negative/positive
lexical overlap, VIA coverage) are checked by :func:`validate`, which reports
rather than raises. Guidance that needs the video itself (visual grounding of
augmented arguments) is documented in the README and not validated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Union

from .facts import (
    ConceptualFact,
    ConceptualRole,
    ContextualFact,
    FactBundle,
    FactError,
    FactLayer,
    relation_from_string,
    role_from_string,
    tokenize,
)

SCHEMA_VERSION = "dualfact/v1"

_SPLITS = ("train", "test")
_VIA_ROLES_ALLOWED = (
    ConceptualRole.INGREDIENT_OBJECT,
    ConceptualRole.TOOL,
    ConceptualRole.LOCATION,
)
_PRONOUNS = frozenset(
    {"it", "them", "this", "that", "these", "those", "him", "her", "there"}
)
_ARTICLES = frozenset({"a", "an", "the"})


class DatasetError(Exception):
    """Base class for dataset errors."""


class DatasetLoadError(DatasetError):
    """Raised for a malformed record; carries the offending line number."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


@dataclass(frozen=True)
class ClauseRecord:
    """One atomic instructional step with its captions and fact bundles."""

    dataset_name: str
    split: str
    video_id: str
    clause_id: str
    start_s: float
    end_s: float
    caption: str
    via_caption: str
    via_roles: tuple[ConceptualRole, ...] = ()
    conceptual: Optional[FactBundle] = None
    contextual: Optional[FactBundle] = None

    def __post_init__(self) -> None:
        if self.split not in _SPLITS:
            raise DatasetError(f"split must be one of {_SPLITS}: {self.split!r}")
        if self.start_s < 0:
            raise DatasetError(f"start_s must be >= 0: {self.start_s}")
        if self.end_s <= self.start_s:
            raise DatasetError(
                f"end_s must be greater than start_s: "
                f"({self.start_s}, {self.end_s})"
            )
        for role in self.via_roles:
            if role not in _VIA_ROLES_ALLOWED:
                raise DatasetError(
                    f"via_roles may only list argument roles, got {role.value}"
                )
        if not self.caption.strip():
            raise DatasetError("caption must be nonempty")

    def bundle(self, layer: FactLayer) -> Optional[FactBundle]:
        if layer is FactLayer.CONCEPTUAL:
            return self.conceptual
        return self.contextual


@dataclass(frozen=True)
class Dataset:
    """An immutable, order-preserving collection of clause records."""

    records: tuple[ClauseRecord, ...]
    path: Optional[str] = None

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for record in self.records:
            if record.clause_id in seen:
                raise DatasetError(f"duplicate clause_id: {record.clause_id}")
            seen.add(record.clause_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_clause_id(self) -> dict[str, ClauseRecord]:
        return {r.clause_id: r for r in self.records}

    def split(self, name: str) -> tuple[ClauseRecord, ...]:
        return tuple(r for r in self.records if r.split == name)


@dataclass(frozen=True)
class SplitStats:
    videos: int = 0
    clips: int = 0
    via: int = 0
    conceptual_facts: int = 0
    contextual_facts: int = 0

    def __post_init__(self) -> None:
        for name in ("videos", "clips", "via", "conceptual_facts", "contextual_facts"):
            if getattr(self, name) < 0:
                raise DatasetError(f"{name} count must be >= 0")
        if self.videos and self.clips and self.clips < self.videos:
            raise DatasetError("clip count cannot be below video count")


@dataclass(frozen=True)
class DatasetStats:
    """Per-split tallies in the benchmark-statistics layout.

    The VIA column counts augmented role slots, i.e. (clause, added role)
    pairs, not augmented clauses.
    """

    per_split: Mapping[str, SplitStats]

    def row(self, split: str) -> SplitStats:
        return self.per_split.get(split, SplitStats())


Severity = str  # "error" | "warning"


@dataclass(frozen=True)
class ValidationEntry:
    clause_id: str
    rule_id: str
    severity: Severity
    message: str


@dataclass(frozen=True)
class ValidationReport:
    entries: tuple[ValidationEntry, ...]

    @property
    def errors(self) -> tuple[ValidationEntry, ...]:
        return tuple(e for e in self.entries if e.severity == "error")

    @property
    def warnings(self) -> tuple[ValidationEntry, ...]:
        return tuple(e for e in self.entries if e.severity == "warning")

    def __bool__(self) -> bool:
        return not self.errors


def _fact_from_json(obj: Mapping, layer: FactLayer):
    if layer is FactLayer.CONCEPTUAL:
        return ConceptualFact(role_from_string(obj["role"]), obj["value"])
    return ContextualFact(
        relation_from_string(obj["relation"]), obj["predicate"], obj["argument"]
    )


def _fact_to_json(fact) -> dict:
    if isinstance(fact, ConceptualFact):
        return {"role": fact.role.value, "value": fact.value}
    return {
        "relation": fact.relation.value,
        "predicate": fact.predicate,
        "argument": fact.argument,
    }


def _bundle_from_json(clause_id: str, layer: FactLayer, obj: Optional[Mapping]) -> FactBundle:
    obj = obj or {}
    predicted = obj.get("predicted")
    return FactBundle(
        clause_id=clause_id,
        layer=layer,
        gold_positive=tuple(_fact_from_json(f, layer) for f in obj.get("positive", [])),
        gold_negative=tuple(_fact_from_json(f, layer) for f in obj.get("negative", [])),
        predicted=None
        if predicted is None
        else tuple(_fact_from_json(f, layer) for f in predicted),
    )


def _bundle_to_json(bundle: Optional[FactBundle]) -> dict:
    if bundle is None:
        return {"positive": [], "negative": []}
    out = {
        "positive": [_fact_to_json(f) for f in bundle.gold_positive],
        "negative": [_fact_to_json(f) for f in bundle.gold_negative],
    }
    if bundle.predicted is not None:
        out["predicted"] = [_fact_to_json(f) for f in bundle.predicted]
    return out


_REQUIRED_FIELDS = (
    "schema",
    "dataset",
    "split",
    "video_id",
    "clause_id",
    "start_s",
    "end_s",
    "caption",
    "via_caption",
    "via_roles",
    "facts",
)


def record_from_json(obj: Mapping) -> ClauseRecord:
    missing = [k for k in _REQUIRED_FIELDS if k not in obj]
    if missing:
        raise DatasetError(f"missing fields: {', '.join(missing)}")
    if obj["schema"] != SCHEMA_VERSION:
        raise DatasetError(
            f"unsupported schema {obj['schema']!r}, expected {SCHEMA_VERSION!r}"
        )
    for key in ("start_s", "end_s"):
        if not isinstance(obj[key], (int, float)) or isinstance(obj[key], bool):
            raise DatasetError(f"{key} must be numeric")
    clause_id = str(obj["clause_id"])
    facts = obj["facts"] or {}
    return ClauseRecord(
        dataset_name=str(obj["dataset"]),
        split=str(obj["split"]),
        video_id=str(obj["video_id"]),
        clause_id=clause_id,
        start_s=round(float(obj["start_s"]), 3),
        end_s=round(float(obj["end_s"]), 3),
        caption=str(obj["caption"]),
        via_caption=str(obj["via_caption"]),
        via_roles=tuple(role_from_string(r) for r in obj["via_roles"]),
        conceptual=_bundle_from_json(clause_id, FactLayer.CONCEPTUAL, facts.get("conceptual")),
        contextual=_bundle_from_json(clause_id, FactLayer.CONTEXTUAL, facts.get("contextual")),
    )


def record_to_json(record: ClauseRecord) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "dataset": record.dataset_name,
        "split": record.split,
        "video_id": record.video_id,
        "clause_id": record.clause_id,
        "start_s": record.start_s,
        "end_s": record.end_s,
        "caption": record.caption,
        "via_caption": record.via_caption,
        "via_roles": [r.value for r in record.via_roles],
        "facts": {
            "conceptual": _bundle_to_json(record.conceptual),
            "contextual": _bundle_to_json(record.contextual),
        },
    }


def load_dataset(path: Union[str, Path]) -> Dataset:
    """Load a line-delimited benchmark file, preserving file order.

    Raises ``DatasetLoadError`` with the line number for any malformed line,
    including structural invariant violations (timestamps, duplicate facts)
    and duplicate clause ids.
    """
    path = Path(path)
    records: list[ClauseRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetLoadError(f"invalid JSON: {exc}", line_number) from exc
            try:
                record = record_from_json(obj)
            except (DatasetError, FactError, KeyError, TypeError, ValueError) as exc:
                raise DatasetLoadError(str(exc), line_number) from exc
            if record.clause_id in seen:
                raise DatasetLoadError(
                    f"duplicate clause_id: {record.clause_id}", line_number
                )
            seen.add(record.clause_id)
            records.append(record)
    return Dataset(records=tuple(records), path=str(path))


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> None:
    """Serialize in canonical field order, one clause per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in dataset.records:
            fh.write(json.dumps(record_to_json(record), ensure_ascii=False))
            fh.write("\n")


def _stem(token: str) -> str:
    # Conservative suffix stripping, shared with negative-fact filtering.
    from .negatives import stem_token

    return stem_token(token)


def _content_tokens(text: str) -> set[str]:
    return {t for t in tokenize(text) if t not in _ARTICLES}


def validate(dataset: Dataset) -> ValidationReport:
    """Check cross-object dataset rules, returning a deterministic report.

    Type-level invariants (timestamps, closed enumerations, fact-set
    uniqueness, negative/positive disjointness under canonical rendering) are
    already enforced at construction and cannot be violated by a loaded
    dataset; this pass covers the rules a structurally well-formed file can
    still break:

    * ``via_verb``      -- the VIA caption must contain the gold caption's
                           main verb (first token of the imperative caption).
    * ``via_tokens``    -- the VIA caption must preserve all gold caption
                           tokens modulo pronouns and articles.
    * ``via_role``      -- each listed augmented role must be backed by a
                           conceptual positive whose value appears in the VIA
                           caption but not in the gold caption.
    * ``neg_structure`` -- every negative fact must share its role/relation
                           with some positive of the same clause and layer.
    * ``neg_overlap``   -- negative values must share no normalized token
                           with any positive value of the same clause/layer.
    """
    entries: list[ValidationEntry] = []

    def report(clause_id: str, rule_id: str, message: str, severity: str = "error"):
        entries.append(ValidationEntry(clause_id, rule_id, severity, message))

    for record in dataset.records:
        gold_tokens = tokenize(record.caption)
        via_tokens = set(tokenize(record.via_caption))
        via_stems = {_stem(t) for t in via_tokens}

        if gold_tokens:
            verb = gold_tokens[0]
            if verb not in via_tokens and _stem(verb) not in via_stems:
                report(
                    record.clause_id,
                    "via_verb",
                    f"VIA caption lacks the caption's main verb {verb!r}",
                )

        # The main verb is via_verb's job; this rule covers the rest of the
        # caption tokens modulo pronoun replacement.
        kept = [
            t
            for t in gold_tokens[1:]
            if t not in _PRONOUNS and t not in _ARTICLES and t not in via_tokens
        ]
        if kept:
            report(
                record.clause_id,
                "via_tokens",
                f"VIA caption drops caption tokens: {', '.join(sorted(set(kept)))}",
            )

        gold_token_set = _content_tokens(record.caption)
        conceptual = record.conceptual
        for role in record.via_roles:
            values = (
                [f.value for f in conceptual.gold_positive if f.role is role]
                if conceptual
                else []
            )
            supported = False
            for value in values:
                value_tokens = _content_tokens(value)
                if value_tokens and value_tokens <= via_tokens and not (
                    value_tokens <= gold_token_set
                ):
                    supported = True
                    break
            if not supported:
                report(
                    record.clause_id,
                    "via_role",
                    f"via_roles lists {role.value} but no conceptual positive "
                    f"of that role is added by the VIA caption",
                )

        for bundle in (record.conceptual, record.contextual):
            if bundle is None:
                continue
            positive_slots = {
                f.role if isinstance(f, ConceptualFact) else f.relation
                for f in bundle.gold_positive
            }
            positive_tokens: set[str] = set()
            for f in bundle.gold_positive:
                if isinstance(f, ConceptualFact):
                    positive_tokens |= set(tokenize(f.value))
                else:
                    positive_tokens |= set(tokenize(f.predicate))
                    positive_tokens |= set(tokenize(f.argument))
            for f in bundle.gold_negative:
                slot = f.role if isinstance(f, ConceptualFact) else f.relation
                if slot not in positive_slots:
                    report(
                        record.clause_id,
                        "neg_structure",
                        f"negative {slot.value} fact has no positive of the "
                        f"same {'role' if isinstance(f, ConceptualFact) else 'relation'}",
                    )
                if isinstance(f, ConceptualFact):
                    neg_tokens = set(tokenize(f.value))
                else:
                    neg_tokens = set(tokenize(f.predicate)) | set(tokenize(f.argument))
                shared = neg_tokens & positive_tokens
                if shared:
                    report(
                        record.clause_id,
                        "neg_overlap",
                        f"negative fact reuses positive tokens: "
                        f"{', '.join(sorted(shared))}",
                    )

    entries.sort(key=lambda e: (e.clause_id, e.rule_id))
    return ValidationReport(entries=tuple(entries))


class _SplitAccumulator:
    def __init__(self) -> None:
        self.videos: set[str] = set()
        self.clips = 0
        self.via = 0
        self.conceptual = 0
        self.contextual = 0


def stats(dataset: Dataset) -> DatasetStats:
    """Exact per-split tallies; VIA counts (clause, added role) pairs."""
    acc: dict[str, _SplitAccumulator] = {}
    for record in dataset.records:
        row = acc.setdefault(record.split, _SplitAccumulator())
        row.videos.add(record.video_id)
        row.clips += 1
        row.via += len(record.via_roles)
        if record.conceptual:
            row.conceptual += len(record.conceptual.gold_positive)
        if record.contextual:
            row.contextual += len(record.contextual.gold_positive)
    per_split = {
        split: SplitStats(
            videos=len(row.videos),
            clips=row.clips,
            via=row.via,
            conceptual_facts=row.conceptual,
            contextual_facts=row.contextual,
        )
        for split, row in acc.items()
    }
    return DatasetStats(per_split=per_split)
