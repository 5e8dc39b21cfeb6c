"""Fact verification against caption or video evidence, and its metrics.

A verifier backend judges each fact SUPPORTED or REFUTED given the evidence
(the gold caption in the textual setting, a video segment reference in the
multimodal setting). Gold labels come from fact-set membership: positives
are SUPPORTED, generated negatives are REFUTED. Backend responses pass
through a strict label parser; anything else becomes an exclusion record and
the fact is left out of metric denominators rather than silently counted.

Metrics follow the benchmark-table layouts: per-role/per-relation accuracy,
precision, recall, and F1 with SUPPORTED as the positive class, an unweighted
average row, and the per-video accuracy Acc(v), the mean over the video's
present fact types of within-type accuracy.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .backends import TransportError, VerdictRequest
from .facts import (
    ConceptualFact,
    ConceptualRole,
    ContextualRelation,
    Fact,
    FactBundle,
    canonical_key,
)

DEFAULT_FRAME_COUNT = 8

_LABEL_RE = re.compile(r"^\s*(supported|refuted)\s*\.?\s*$", re.IGNORECASE)


class VerificationError(Exception):
    """Structural verification failure (bad mode, missing gold label)."""


class VerificationAborted(VerificationError):
    """Whole-batch transport failure; partial results are preserved."""

    def __init__(self, message: str, partial: "VerificationResult"):
        super().__init__(message)
        self.partial = partial


class EvidenceMode(str, Enum):
    TEXTUAL = "textual"
    MULTIMODAL = "multimodal"


class VerdictLabel(str, Enum):
    SUPPORTED = "SUPPORTED"
    REFUTED = "REFUTED"


@dataclass(frozen=True)
class Evidence:
    """What the verifier sees: a caption, or a video segment by reference.

    The engine never decodes video; multimodal evidence names the segment and
    a uniform frame-sampling spec and the backend does the rest.
    """

    mode: EvidenceMode
    caption: Optional[str] = None
    video_id: Optional[str] = None
    start_s: Optional[float] = None
    end_s: Optional[float] = None
    frame_count: int = DEFAULT_FRAME_COUNT

    def __post_init__(self) -> None:
        if self.mode is EvidenceMode.TEXTUAL:
            if not self.caption or not self.caption.strip():
                raise VerificationError("textual evidence requires a nonempty caption")
        else:
            if self.video_id is None or self.start_s is None or self.end_s is None:
                raise VerificationError(
                    "multimodal evidence requires video_id, start_s, end_s"
                )

    def wire(self) -> dict:
        if self.mode is EvidenceMode.TEXTUAL:
            return {"mode": self.mode.value, "caption": self.caption}
        return {
            "mode": self.mode.value,
            "video_id": self.video_id,
            "start_s": self.start_s,
            "end_s": self.end_s,
            "frame_count": self.frame_count,
        }


@dataclass(frozen=True)
class Verdict:
    clause_id: str
    fact: Fact
    label: VerdictLabel
    backend: str
    evidence_mode: EvidenceMode
    raw_response: str = ""


@dataclass(frozen=True)
class GoldLabel:
    clause_id: str
    fact: Fact
    label: VerdictLabel
    provenance: str  # "positive_set" | "negative_set"

    def __post_init__(self) -> None:
        expected = (
            VerdictLabel.SUPPORTED
            if self.provenance == "positive_set"
            else VerdictLabel.REFUTED
        )
        if self.label is not expected:
            raise VerificationError(
                f"gold label {self.label.value} contradicts provenance "
                f"{self.provenance}"
            )


@dataclass(frozen=True)
class ExclusionRecord:
    """A fact left out of scoring, with the reason and raw response."""

    clause_id: str
    fact: Fact
    reason: str  # "unparseable" | "transport"
    raw_response: str = ""


@dataclass(frozen=True)
class VerificationResult:
    verdicts: tuple[Verdict, ...]
    exclusions: tuple[ExclusionRecord, ...] = ()


def assign_gold_label(fact: Fact, bundle: FactBundle) -> GoldLabel:
    """SUPPORTED iff the fact is a gold positive of the bundle."""
    key = canonical_key(fact)
    if any(canonical_key(f) == key for f in bundle.gold_positive):
        return GoldLabel(bundle.clause_id, fact, VerdictLabel.SUPPORTED, "positive_set")
    if any(canonical_key(f) == key for f in bundle.gold_negative):
        return GoldLabel(bundle.clause_id, fact, VerdictLabel.REFUTED, "negative_set")
    raise VerificationError(
        f"no gold label exists for fact {key!r} in clause {bundle.clause_id}"
    )


def parse_label(raw: str) -> Optional[VerdictLabel]:
    """Strict parser: only SUPPORTED/REFUTED tokens, case-insensitive."""
    m = _LABEL_RE.match(raw or "")
    if not m:
        return None
    return VerdictLabel[m.group(1).upper()]


def verify(
    facts: Sequence[Fact],
    evidence: Evidence,
    backend,
    clause_id: str = "",
    parallelism: int = 1,
) -> VerificationResult:
    """Obtain one verdict per fact, recording exclusions instead of guessing.

    Per-fact transport failures become exclusion records; if every fact in
    the batch fails transport, the batch aborts with ``VerificationAborted``
    carrying the partial result. Results join deterministically in fact
    order regardless of the parallelism bound.
    """
    if not backend.supports(evidence.mode.value):
        raise VerificationError(
            f"backend {backend.name} does not serve mode {evidence.mode.value}"
        )

    def call(fact: Fact):
        request = VerdictRequest(
            mode=evidence.mode.value,
            evidence=evidence.wire(),
            fact_text=canonical_key(fact),
            clause_id=clause_id,
        )
        try:
            return backend.judge(request), None
        except TransportError as exc:
            return None, str(exc)

    if parallelism > 1 and facts:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(call, facts))
    else:
        outcomes = [call(fact) for fact in facts]

    verdicts: list[Verdict] = []
    exclusions: list[ExclusionRecord] = []
    transport_failures = 0
    for fact, (raw, error) in zip(facts, outcomes):
        if error is not None:
            transport_failures += 1
            exclusions.append(
                ExclusionRecord(clause_id, fact, "transport", raw_response=error)
            )
            continue
        label = parse_label(raw)
        if label is None:
            exclusions.append(
                ExclusionRecord(clause_id, fact, "unparseable", raw_response=raw)
            )
        else:
            verdicts.append(
                Verdict(
                    clause_id=clause_id,
                    fact=fact,
                    label=label,
                    backend=backend.name,
                    evidence_mode=evidence.mode,
                    raw_response=raw,
                )
            )
    result = VerificationResult(tuple(verdicts), tuple(exclusions))
    if facts and transport_failures == len(facts):
        raise VerificationAborted(
            f"all {len(facts)} verification calls failed transport", result
        )
    return result


class GoldEchoVerifier:
    """Mock verifier that echoes membership-derived gold labels.

    The end-to-end identity check: run the pipeline with this backend and
    every metric must be exactly 1.0. Facts outside both gold sets are
    answered with ``unknown_response``.
    """

    kind = "mock"

    def __init__(
        self,
        labels: Mapping[tuple[str, str], VerdictLabel],
        name: str = "gold-echo",
        modes: tuple[str, ...] = ("textual", "multimodal"),
        unknown_response: str = VerdictLabel.REFUTED.value,
    ):
        self.name = name
        self.modes = modes
        self._labels = dict(labels)
        self.unknown_response = unknown_response

    @classmethod
    def from_bundles(cls, bundles: Iterable[FactBundle], **kwargs) -> "GoldEchoVerifier":
        labels: dict[tuple[str, str], VerdictLabel] = {}
        for bundle in bundles:
            for fact in bundle.gold_positive:
                labels[(bundle.clause_id, canonical_key(fact))] = VerdictLabel.SUPPORTED
            for fact in bundle.gold_negative:
                labels[(bundle.clause_id, canonical_key(fact))] = VerdictLabel.REFUTED
        return cls(labels, **kwargs)

    def supports(self, mode: str) -> bool:
        return mode in self.modes

    def judge(self, request: VerdictRequest) -> str:
        label = self._labels.get((request.clause_id, request.fact_text))
        return label.value if label is not None else self.unknown_response


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupMetrics:
    """Binary-classification tallies for one role/relation group."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

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


@dataclass(frozen=True)
class AverageMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ClassifierReport:
    """Per-group rows plus the unweighted average row of the result tables."""

    group_by: str  # "role" | "relation"
    groups: Mapping[str, GroupMetrics]
    average: AverageMetrics
    omitted_groups: tuple[str, ...] = ()


def _group_name(fact: Fact, group_by: str) -> str:
    if group_by == "role":
        if not isinstance(fact, ConceptualFact):
            raise VerificationError("role grouping requires conceptual facts")
        return fact.role.value
    if group_by == "relation":
        if isinstance(fact, ConceptualFact):
            raise VerificationError("relation grouping requires contextual facts")
        return fact.relation.value
    raise VerificationError(f"unknown grouping {group_by!r}")


def _pair_gold(
    verdicts: Sequence[Verdict], gold_labels: Sequence[GoldLabel]
) -> list[tuple[Verdict, GoldLabel]]:
    gold = {(g.clause_id, canonical_key(g.fact)): g for g in gold_labels}
    pairs = []
    for verdict in verdicts:
        key = (verdict.clause_id, canonical_key(verdict.fact))
        if key not in gold:
            raise VerificationError(f"verdict without gold label: {key}")
        pairs.append((verdict, gold[key]))
    return pairs


def classifier_metrics(
    verdicts: Sequence[Verdict],
    gold_labels: Sequence[GoldLabel],
    group_by: str,
) -> ClassifierReport:
    """Per-group accuracy/precision/recall/F1 with SUPPORTED as positive."""
    tallies: dict[str, dict[str, int]] = {}
    for verdict, gold in _pair_gold(verdicts, gold_labels):
        name = _group_name(verdict.fact, group_by)
        cell = tallies.setdefault(name, {"tp": 0, "fp": 0, "fn": 0, "tn": 0})
        predicted_pos = verdict.label is VerdictLabel.SUPPORTED
        actual_pos = gold.label is VerdictLabel.SUPPORTED
        if predicted_pos and actual_pos:
            cell["tp"] += 1
        elif predicted_pos and not actual_pos:
            cell["fp"] += 1
        elif not predicted_pos and actual_pos:
            cell["fn"] += 1
        else:
            cell["tn"] += 1
    groups = {
        name: GroupMetrics(**cell) for name, cell in sorted(tallies.items())
    }
    universe = [
        member.value
        for member in (ConceptualRole if group_by == "role" else ContextualRelation)
    ]
    omitted = tuple(name for name in universe if name not in groups)
    n = len(groups)
    average = AverageMetrics(
        accuracy=sum(g.accuracy for g in groups.values()) / n if n else 0.0,
        precision=sum(g.precision for g in groups.values()) / n if n else 0.0,
        recall=sum(g.recall for g in groups.values()) / n if n else 0.0,
        f1=sum(g.f1 for g in groups.values()) / n if n else 0.0,
    )
    return ClassifierReport(
        group_by=group_by, groups=groups, average=average, omitted_groups=omitted
    )


@dataclass(frozen=True)
class PerVideoAccuracy:
    """Acc(v) per video: unweighted mean over present fact types of
    within-type verification accuracy."""

    per_video: Mapping[str, float]
    mean: float
    excluded_videos: int = 0


def per_video_accuracy(
    verdicts: Sequence[Verdict],
    gold_labels: Sequence[GoldLabel],
    video_of: Mapping[str, str],
) -> PerVideoAccuracy:
    """Compute Acc(v) per video and its mean across videos.

    ``video_of`` maps clause_id to video_id for the whole dataset; videos
    with no labeled facts are excluded from the mean and counted.
    """
    per_type: dict[str, dict[str, list[bool]]] = {}
    for verdict, gold in _pair_gold(verdicts, gold_labels):
        video = video_of.get(verdict.clause_id)
        if video is None:
            raise VerificationError(
                f"clause {verdict.clause_id} has no video mapping"
            )
        fact = verdict.fact
        type_tag = (
            fact.role.value if isinstance(fact, ConceptualFact) else fact.relation.value
        )
        per_type.setdefault(video, {}).setdefault(type_tag, []).append(
            verdict.label is gold.label
        )
    per_video: dict[str, float] = {}
    for video, types in sorted(per_type.items()):
        type_accuracies = [
            sum(outcomes) / len(outcomes) for _, outcomes in sorted(types.items())
        ]
        per_video[video] = sum(type_accuracies) / len(type_accuracies)
    all_videos = set(video_of.values())
    excluded = len(all_videos - set(per_video))
    mean = sum(per_video.values()) / len(per_video) if per_video else 0.0
    return PerVideoAccuracy(per_video=per_video, mean=mean, excluded_videos=excluded)


# ---------------------------------------------------------------------------
# Verifier training-file export
# ---------------------------------------------------------------------------


def export_training_records(
    records: Iterable,
    layer,
    path: Union[str, Path],
    mode: EvidenceMode = EvidenceMode.MULTIMODAL,
) -> int:
    """Write (evidence_ref, fact_text, label) lines for verifier training.

    Positives are labeled SUPPORTED and generated negatives REFUTED; the
    fine-tuning itself happens outside this package.
    """
    count = 0
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            bundle = record.bundle(layer)
            if bundle is None:
                continue
            if mode is EvidenceMode.TEXTUAL:
                evidence_ref: dict = {"caption": record.caption}
            else:
                evidence_ref = {
                    "video_id": record.video_id,
                    "start_s": record.start_s,
                    "end_s": record.end_s,
                }
            for fact, label in [
                *[(f, VerdictLabel.SUPPORTED) for f in bundle.gold_positive],
                *[(f, VerdictLabel.REFUTED) for f in bundle.gold_negative],
            ]:
                fh.write(
                    json.dumps(
                        {
                            "evidence_ref": evidence_ref,
                            "fact_text": canonical_key(fact),
                            "label": label.value,
                        },
                        ensure_ascii=False,
                    )
                )
                fh.write("\n")
                count += 1
    return count
