"""End-to-end pipeline composition and the structured run report.

``run_pipeline`` executes validate -> extract (optional) -> generate/filter
negatives (optional) -> verify -> ground (optional) -> score -> decompose ->
correlate/agreement (when human data is present), collecting every table the
report emits. Per-clause failures (unparseable extraction, empty fact sets,
excluded verdicts) are recorded and skipped; structural problems (missing
files, a verifier that cannot serve the requested mode) abort before any
stage runs.

Under mock backends and a fixed seed the whole run is a pure function of its
inputs: report files are byte-identical across runs. The report carries the
config hash and package version; wall-clock timestamps are kept out of the
emitted files on purpose and logged instead.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Optional, Union

from . import __version__
from .backends import (
    HTTPCompletionBackend,
    HTTPVerdictBackend,
    MockCompletionBackend,
    MockVerdictBackend,
    TransportError,
)
from .dataset import ClauseRecord, Dataset, load_dataset, stats, validate
from .extraction import (
    ExtractionError,
    RuleBasedExtractor,
    eval_extraction,
    extract_facts,
    packaged_template,
)
from .facts import FactLayer, canonical_key
from .negatives import (
    ConfusionLexicon,
    NegativesError,
    fallback_substitute,
    generate_negatives,
    load_lexicon,
)
from .scoring import (
    EvalMode,
    ErrorDecomposition,
    MockGroundingBackend,
    UndefinedScoreError,
    aggregate_decompositions,
    decompose_errors,
    ground,
    grounding_item_text,
    multifact_score,
    render_percent,
)
from .stats import (
    PairedScores,
    StatsError,
    UndefinedCoefficientError,
    cohen_kappa,
    correlate,
    LabelPairs,
)
from .verification import (
    Evidence,
    EvidenceMode,
    GoldEchoVerifier,
    Verdict,
    assign_gold_label,
    classifier_metrics,
    per_video_accuracy,
    verify,
)

logger = logging.getLogger(__name__)

_LEXICON_DIR = Path(__file__).parent / "data" / "lexicons"

EXIT_OK = 0
EXIT_STRUCTURAL = 1
EXIT_PARTIAL = 2


class PipelineError(Exception):
    """Structural pipeline failure; nothing was executed."""


@dataclass(frozen=True)
class BackendSpec:
    """Where a pipeline stage gets its model answers from.

    kind: "endpoint" (HTTP), "mock" (lookup file), "rule" (deterministic
    extractor), or "gold-echo" (membership-echoing verifier).
    """

    kind: str
    name: str = ""
    url: str = ""
    lookup: str = ""
    modes: tuple[str, ...] = ("textual", "multimodal")
    timeout: float = 30.0

    @classmethod
    def from_json(cls, obj: Optional[Mapping]) -> Optional["BackendSpec"]:
        if obj is None:
            return None
        return cls(
            kind=obj["kind"],
            name=obj.get("name", obj["kind"]),
            url=obj.get("url", ""),
            lookup=obj.get("lookup", ""),
            modes=tuple(obj.get("modes", ("textual", "multimodal"))),
            timeout=float(obj.get("timeout", 30.0)),
        )

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "name": self.name,
            "url": self.url,
            "lookup": self.lookup,
            "modes": list(self.modes),
            "timeout": self.timeout,
        }


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs; loadable from JSON, overridable by flags.

    Secrets never live here: endpoint credentials come from the environment
    (see ``backends.TOKEN_ENV_VAR``).
    """

    dataset: str
    output_dir: str = "out"
    layers: tuple[str, ...] = ("conceptual", "contextual")
    mode: str = EvidenceMode.TEXTUAL.value
    eval_mode: str = EvalMode.CAP_ONLY.value
    seed: int = 0
    parallelism: int = 1
    caption_source: str = "caption"  # extraction input field
    evidence_caption: str = "caption"  # textual-verification evidence field
    extractor: Optional[BackendSpec] = None
    verifier: Optional[BackendSpec] = None
    grounder: Optional[BackendSpec] = None
    negatives_backend: Optional[BackendSpec] = None
    generate_missing_negatives: bool = False
    lexicon: str = ""  # packaged name or path
    human_scores: str = ""  # keyed score file for correlations
    label_pairs: str = ""  # two-column label file for agreement
    figures: bool = True
    formats: tuple[str, ...] = ("records", "csv", "text")

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls.from_json(obj)

    @classmethod
    def from_json(cls, obj: Mapping) -> "PipelineConfig":
        return cls(
            dataset=obj["dataset"],
            output_dir=obj.get("output_dir", "out"),
            layers=tuple(obj.get("layers", ("conceptual", "contextual"))),
            mode=obj.get("mode", EvidenceMode.TEXTUAL.value),
            eval_mode=obj.get("eval_mode", EvalMode.CAP_ONLY.value),
            seed=int(obj.get("seed", 0)),
            parallelism=int(obj.get("parallelism", 1)),
            caption_source=obj.get("caption_source", "caption"),
            evidence_caption=obj.get("evidence_caption", "caption"),
            extractor=BackendSpec.from_json(obj.get("extractor")),
            verifier=BackendSpec.from_json(obj.get("verifier")),
            grounder=BackendSpec.from_json(obj.get("grounder")),
            negatives_backend=BackendSpec.from_json(obj.get("negatives_backend")),
            generate_missing_negatives=bool(obj.get("generate_missing_negatives", False)),
            lexicon=obj.get("lexicon", ""),
            human_scores=obj.get("human_scores", ""),
            label_pairs=obj.get("label_pairs", ""),
            figures=bool(obj.get("figures", True)),
            formats=tuple(obj.get("formats", ("records", "csv", "text"))),
        )

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "output_dir": self.output_dir,
            "layers": list(self.layers),
            "mode": self.mode,
            "eval_mode": self.eval_mode,
            "seed": self.seed,
            "parallelism": self.parallelism,
            "caption_source": self.caption_source,
            "evidence_caption": self.evidence_caption,
            "extractor": self.extractor.to_json() if self.extractor else None,
            "verifier": self.verifier.to_json() if self.verifier else None,
            "grounder": self.grounder.to_json() if self.grounder else None,
            "negatives_backend": (
                self.negatives_backend.to_json() if self.negatives_backend else None
            ),
            "generate_missing_negatives": self.generate_missing_negatives,
            "lexicon": self.lexicon,
            "human_scores": self.human_scores,
            "label_pairs": self.label_pairs,
            "figures": self.figures,
            "formats": list(self.formats),
        }

    def semantic_json(self) -> dict:
        """Config fields that affect computed results; where files land
        (output_dir) and which formats get written do not belong here, so
        reports stay byte-identical across output locations."""
        out = self.to_json()
        for key in ("output_dir", "formats", "figures"):
            out.pop(key, None)
        return out

    def config_hash(self) -> str:
        canonical = json.dumps(self.semantic_json(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass
class Report:
    """Structured run output: metadata, named tables, error tallies.

    Every table row carries raw counts next to any percentage, and every
    number in the rendered text tables is recoverable from this structure.
    """

    metadata: dict
    tables: dict[str, list[dict]] = field(default_factory=dict)
    clause_errors: list[dict] = field(default_factory=list)
    exclusions: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "metadata": self.metadata,
            "tables": {k: self.tables[k] for k in sorted(self.tables)},
            "clause_errors": self.clause_errors,
            "exclusions": self.exclusions,
        }


def resolve_lexicon(name_or_path: str) -> Optional[ConfusionLexicon]:
    if not name_or_path:
        return None
    packaged = _LEXICON_DIR / f"{name_or_path}.json"
    if packaged.is_file():
        return load_lexicon(packaged)
    if Path(name_or_path).is_file():
        return load_lexicon(name_or_path)
    raise PipelineError(f"lexicon not found: {name_or_path}")


def _build_completion_backend(spec: BackendSpec, dataset: Dataset, layer: FactLayer):
    if spec.kind == "endpoint":
        if not spec.url:
            raise PipelineError(f"backend {spec.name} needs a url")
        return HTTPCompletionBackend(spec.name, spec.url, timeout=spec.timeout)
    if spec.kind == "mock":
        if not Path(spec.lookup).is_file():
            raise PipelineError(f"mock lookup file not found: {spec.lookup}")
        return MockCompletionBackend(spec.name, spec.lookup)
    if spec.kind == "rule":
        return RuleBasedExtractor()
    if spec.kind == "gold-echo":
        lookup = {}
        for record in dataset:
            bundle = record.bundle(layer)
            if bundle is not None:
                lookup[record.clause_id] = ", ".join(
                    canonical_key(f) for f in bundle.gold_positive
                )
        return MockCompletionBackend(spec.name or "gold-echo", lookup)
    raise PipelineError(f"unknown extractor backend kind {spec.kind!r}")


def _build_verifier(spec: BackendSpec, dataset: Dataset):
    if spec.kind == "endpoint":
        if not spec.url:
            raise PipelineError(f"backend {spec.name} needs a url")
        return HTTPVerdictBackend(spec.name, spec.url, modes=spec.modes, timeout=spec.timeout)
    if spec.kind == "mock":
        if not Path(spec.lookup).is_file():
            raise PipelineError(f"mock lookup file not found: {spec.lookup}")
        return MockVerdictBackend(spec.name, spec.lookup, modes=spec.modes)
    if spec.kind == "gold-echo":
        bundles = []
        for record in dataset:
            for layer in FactLayer:
                bundle = record.bundle(layer)
                if bundle is not None:
                    bundles.append(bundle)
        return GoldEchoVerifier.from_bundles(bundles, name=spec.name or "gold-echo")
    raise PipelineError(f"unknown verifier backend kind {spec.kind!r}")


def _build_grounder(spec: BackendSpec):
    if spec.kind == "mock":
        if not Path(spec.lookup).is_file():
            raise PipelineError(f"mock lookup file not found: {spec.lookup}")
        return MockGroundingBackend(spec.lookup, name=spec.name or "mock-grounder")
    if spec.kind == "endpoint":
        if not spec.url:
            raise PipelineError(f"backend {spec.name} needs a url")
        return HTTPVerdictBackend(
            spec.name, spec.url, modes=("grounding",), timeout=spec.timeout
        )
    raise PipelineError(f"unknown grounder backend kind {spec.kind!r}")


def _evidence_for(record: ClauseRecord, mode: EvidenceMode, caption_field: str) -> Evidence:
    if mode is EvidenceMode.TEXTUAL:
        return Evidence(mode=mode, caption=getattr(record, caption_field))
    return Evidence(
        mode=mode,
        video_id=record.video_id,
        start_s=record.start_s,
        end_s=record.end_s,
    )


def validate_config(config: PipelineConfig) -> None:
    """Structural checks that must pass before any stage executes."""
    if not Path(config.dataset).is_file():
        raise PipelineError(f"dataset file not found: {config.dataset}")
    for layer in config.layers:
        try:
            FactLayer(layer)
        except ValueError:
            raise PipelineError(f"unknown layer {layer!r}") from None
    try:
        mode = EvidenceMode(config.mode)
    except ValueError:
        raise PipelineError(f"unknown evidence mode {config.mode!r}") from None
    try:
        EvalMode(config.eval_mode)
    except ValueError:
        raise PipelineError(f"unknown eval mode {config.eval_mode!r}") from None
    if config.verifier is None:
        raise PipelineError("pipeline requires a verifier backend")
    if config.verifier.kind == "endpoint" and mode.value not in config.verifier.modes:
        raise PipelineError(
            f"verifier {config.verifier.name} does not serve mode {mode.value}"
        )
    if config.verifier.kind == "mock" and mode.value not in config.verifier.modes:
        raise PipelineError(
            f"verifier {config.verifier.name} does not serve mode {mode.value}"
        )
    if EvalMode(config.eval_mode) is not EvalMode.CAP_ONLY and config.grounder is None:
        raise PipelineError(
            f"eval mode {config.eval_mode} requires a grounder backend"
        )
    for spec in (config.extractor, config.verifier, config.grounder, config.negatives_backend):
        if spec is not None and spec.kind == "mock" and not Path(spec.lookup).is_file():
            raise PipelineError(f"mock lookup file not found: {spec.lookup}")
    if config.caption_source not in ("caption", "via_caption"):
        raise PipelineError(f"unknown caption source {config.caption_source!r}")
    if config.evidence_caption not in ("caption", "via_caption"):
        raise PipelineError(f"unknown evidence caption {config.evidence_caption!r}")
    if config.human_scores and not Path(config.human_scores).is_file():
        raise PipelineError(f"human scores file not found: {config.human_scores}")
    if config.label_pairs and not Path(config.label_pairs).is_file():
        raise PipelineError(f"label pairs file not found: {config.label_pairs}")


def read_keyed_scores(path: Union[str, Path]) -> dict[str, float]:
    """Read a delimited key,score file (comma or tab; # comments skipped)."""
    scores: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t") if "\t" in line else line.split(",")
            if len(parts) != 2:
                raise PipelineError(f"expected two columns in {path}: {line!r}")
            scores[parts[0].strip()] = float(parts[1])
    return scores


def read_label_pairs(path: Union[str, Path]) -> LabelPairs:
    """Read a two-column delimited label file into LabelPairs."""
    a: list[str] = []
    b: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t") if "\t" in line else line.split(",")
            if len(parts) != 2:
                raise PipelineError(f"expected two columns in {path}: {line!r}")
            a.append(parts[0].strip())
            b.append(parts[1].strip())
    return LabelPairs(a=tuple(a), b=tuple(b))


def run_pipeline(config: PipelineConfig) -> tuple[Report, int]:
    """Execute the configured pipeline; returns (report, exit_code)."""
    validate_config(config)
    dataset = load_dataset(config.dataset)
    mode = EvidenceMode(config.mode)
    eval_mode = EvalMode(config.eval_mode)
    layers = tuple(FactLayer(l) for l in config.layers)
    lexicon = resolve_lexicon(config.lexicon)

    report = Report(
        metadata={
            "config_hash": config.config_hash(),
            "version": __version__,
            "dataset": config.dataset,
            "seed": config.seed,
            "mode": mode.value,
            "eval_mode": eval_mode.value,
            "layers": [l.value for l in layers],
            "config": config.semantic_json(),
        }
    )

    # Stage: validate + stats
    validation = validate(dataset)
    report.tables["validation"] = [
        {
            "clause_id": e.clause_id,
            "rule_id": e.rule_id,
            "severity": e.severity,
            "message": e.message,
        }
        for e in validation.entries
    ]
    dataset_stats = stats(dataset)
    report.tables["dataset_stats"] = [
        {
            "split": split,
            "videos": row.videos,
            "clips": row.clips,
            "via": row.via,
            "conceptual_facts": row.conceptual_facts,
            "contextual_facts": row.contextual_facts,
        }
        for split, row in sorted(dataset_stats.per_split.items())
    ]

    records = list(dataset.records)
    video_of = {r.clause_id: r.video_id for r in records}

    # Stage: extraction (optional)
    if config.extractor is not None:
        records = _run_extraction_stage(config, dataset, records, layers, report)

    # Stage: negatives (optional)
    if config.generate_missing_negatives:
        records = _run_negatives_stage(config, records, layers, lexicon, report)

    verifier = _build_verifier(config.verifier, dataset)
    grounder = _build_grounder(config.grounder) if config.grounder else None

    multifact_rows: list[dict] = []
    summary_rows: list[dict] = []
    verifier_rows: list[dict] = []
    video_rows: list[dict] = []
    slot_rows: list[dict] = []
    decomposition_rows: list[dict] = []
    per_video_pred_scores: dict[str, dict[str, list]] = {}

    for layer in layers:
        group_by = "role" if layer is FactLayer.CONCEPTUAL else "relation"

        # Stage: verify gold sets -> classifier metrics + Acc(v)
        gold_verdicts: list[Verdict] = []
        gold_labels = []
        for record in records:
            bundle = record.bundle(layer)
            if bundle is None or not (bundle.gold_positive or bundle.gold_negative):
                continue
            facts = list(bundle.gold_positive) + list(bundle.gold_negative)
            evidence = _evidence_for(record, mode, config.evidence_caption)
            result = verify(
                facts, evidence, verifier, record.clause_id, config.parallelism
            )
            gold_verdicts.extend(result.verdicts)
            for exclusion in result.exclusions:
                report.exclusions.append(
                    {
                        "stage": "verify_gold",
                        "layer": layer.value,
                        "clause_id": exclusion.clause_id,
                        "item": canonical_key(exclusion.fact),
                        "reason": exclusion.reason,
                    }
                )
            for fact in facts:
                gold_labels.append(assign_gold_label(fact, bundle))
        if gold_verdicts:
            classifier = classifier_metrics(gold_verdicts, gold_labels, group_by)
            for name, group in classifier.groups.items():
                verifier_rows.append(
                    {
                        "layer": layer.value,
                        "group": name,
                        "accuracy": group.accuracy,
                        "precision": group.precision,
                        "recall": group.recall,
                        "f1": group.f1,
                        "tp": group.tp,
                        "fp": group.fp,
                        "fn": group.fn,
                        "tn": group.tn,
                        "n": group.total,
                    }
                )
            verifier_rows.append(
                {
                    "layer": layer.value,
                    "group": "Avg.",
                    "accuracy": classifier.average.accuracy,
                    "precision": classifier.average.precision,
                    "recall": classifier.average.recall,
                    "f1": classifier.average.f1,
                    "tp": sum(g.tp for g in classifier.groups.values()),
                    "fp": sum(g.fp for g in classifier.groups.values()),
                    "fn": sum(g.fn for g in classifier.groups.values()),
                    "tn": sum(g.tn for g in classifier.groups.values()),
                    "n": sum(g.total for g in classifier.groups.values()),
                }
            )
            acc = per_video_accuracy(gold_verdicts, gold_labels, video_of)
            for video_id, value in acc.per_video.items():
                video_rows.append(
                    {"layer": layer.value, "video_id": video_id, "accuracy": value}
                )
            video_rows.append(
                {"layer": layer.value, "video_id": "Mean", "accuracy": acc.mean}
            )

        # Stage: verify predicted -> MultiFactScore (+ grounding, decomposition)
        predicted_exists = any(
            record.bundle(layer) is not None
            and record.bundle(layer).predicted is not None
            for record in records
        )
        if not predicted_exists:
            continue

        decompositions: list[ErrorDecomposition] = []
        pooled_supported = 0
        pooled_total = 0
        clause_scores: list[Fraction] = []
        skipped = 0
        for record in records:
            bundle = record.bundle(layer)
            if bundle is None or bundle.predicted is None:
                continue
            evidence = _evidence_for(record, mode, config.evidence_caption)
            result = verify(
                list(bundle.predicted),
                evidence,
                verifier,
                record.clause_id,
                config.parallelism,
            )
            for exclusion in result.exclusions:
                report.exclusions.append(
                    {
                        "stage": "verify_predicted",
                        "layer": layer.value,
                        "clause_id": exclusion.clause_id,
                        "item": canonical_key(exclusion.fact),
                        "reason": exclusion.reason,
                    }
                )
            try:
                score = multifact_score(result.verdicts)
            except UndefinedScoreError:
                skipped += 1
                report.clause_errors.append(
                    {
                        "stage": "score",
                        "layer": layer.value,
                        "clause_id": record.clause_id,
                        "error": "empty fact set after exclusions",
                    }
                )
                continue
            supported = sum(
                1 for v in result.verdicts if v.label.value == "SUPPORTED"
            )
            clause_scores.append(score)
            pooled_supported += supported
            pooled_total += len(result.verdicts)
            video_acc = per_video_pred_scores.setdefault(layer.value, {})
            cell = video_acc.setdefault(record.video_id, [0, 0])
            cell[0] += supported
            cell[1] += len(result.verdicts)
            multifact_rows.append(
                {
                    "layer": layer.value,
                    "clause_id": record.clause_id,
                    "video_id": record.video_id,
                    "supported": supported,
                    "total": len(result.verdicts),
                    "score": render_percent(score),
                }
            )

            # Grounding + decomposition for this clause
            grounding_map: Optional[dict[str, bool]] = None
            if grounder is not None and eval_mode is not EvalMode.CAP_ONLY:
                results, gexclusions = ground(
                    list(bundle.predicted), evidence, grounder, record.clause_id
                )
                for exclusion in gexclusions:
                    report.exclusions.append(
                        {
                            "stage": "ground",
                            "layer": layer.value,
                            "clause_id": record.clause_id,
                            "item": exclusion.item,
                            "reason": exclusion.reason,
                        }
                    )
                grounding_map = {g.item: g.grounded for g in results}
            if eval_mode is EvalMode.CAP_ONLY or grounding_map is not None:
                verdict_facts = {canonical_key(v.fact) for v in result.verdicts}
                usable_predicted = [
                    f
                    for f in bundle.predicted
                    if canonical_key(f) in verdict_facts
                    and (
                        eval_mode is EvalMode.CAP_ONLY
                        or grounding_item_text(f) in grounding_map
                    )
                ]
                decompositions.append(
                    decompose_errors(
                        usable_predicted,
                        bundle,
                        result.verdicts,
                        grounding_map,
                        eval_mode,
                    )
                )

        if clause_scores:
            mean_score = sum(clause_scores, Fraction(0)) / len(clause_scores)
            summary_rows.append(
                {
                    "layer": layer.value,
                    "fact_set": "predicted",
                    "clauses": len(clause_scores),
                    "skipped": skipped,
                    "supported": pooled_supported,
                    "facts": pooled_total,
                    "pooled_score": render_percent(
                        Fraction(pooled_supported, pooled_total) if pooled_total else None
                    ),
                    "mean_clause_score": render_percent(mean_score),
                }
            )

        aggregated = aggregate_decompositions(decompositions)
        if aggregated is not None:
            for fact_type, cell in aggregated.per_type.items():
                decomposition_rows.append(
                    _decomposition_row(layer.value, fact_type, eval_mode, cell)
                )
            decomposition_rows.append(
                _decomposition_row(layer.value, "Overall", eval_mode, aggregated.overall)
            )

        # Stage: slot metrics (predicted vs gold positives)
        predicted_map = {}
        gold_map = {}
        for record in records:
            bundle = record.bundle(layer)
            if bundle is None or bundle.predicted is None:
                continue
            predicted_map[record.clause_id] = list(bundle.predicted)
            gold_map[record.clause_id] = list(bundle.gold_positive)
        if predicted_map:
            slots = eval_extraction(predicted_map, gold_map)
            for slot, score in slots.per_slot.items():
                slot_rows.append(
                    {
                        "layer": layer.value,
                        "slot": slot,
                        "precision": score.precision,
                        "recall": score.recall,
                        "f1": score.f1,
                        "tp": score.tp,
                        "fp": score.fp,
                        "fn": score.fn,
                    }
                )
            slot_rows.append(
                {
                    "layer": layer.value,
                    "slot": "micro",
                    "precision": slots.micro.precision,
                    "recall": slots.micro.recall,
                    "f1": slots.micro.f1,
                    "tp": slots.micro.tp,
                    "fp": slots.micro.fp,
                    "fn": slots.micro.fn,
                }
            )
            slot_rows.append(
                {
                    "layer": layer.value,
                    "slot": "macro",
                    "precision": slots.macro_precision,
                    "recall": slots.macro_recall,
                    "f1": slots.macro_f1,
                    "tp": slots.micro.tp,
                    "fp": slots.micro.fp,
                    "fn": slots.micro.fn,
                }
            )

    if verifier_rows:
        report.tables["verifier_metrics"] = verifier_rows
    if video_rows:
        report.tables["per_video_accuracy"] = video_rows
    if multifact_rows:
        report.tables["multifact_scores"] = multifact_rows
    if summary_rows:
        report.tables["multifact_summary"] = summary_rows
    if slot_rows:
        report.tables["slot_metrics"] = slot_rows
    if decomposition_rows:
        report.tables["decomposition"] = decomposition_rows

    # Stage: correlations against human scores (per-video by default)
    if config.human_scores:
        human = read_keyed_scores(config.human_scores)
        correlation_rows = []
        for layer_name, per_video in sorted(per_video_pred_scores.items()):
            metric_scores = {
                video: cell[0] / cell[1]
                for video, cell in per_video.items()
                if cell[1]
            }
            pairs = PairedScores.from_records(metric_scores, human)
            for method in ("pearson", "spearman", "kendall"):
                row = {
                    "layer": layer_name,
                    "method": method,
                    "n": len(pairs),
                    "dropped": pairs.dropped,
                }
                try:
                    row["coefficient"] = correlate(pairs, method)
                except (StatsError, UndefinedCoefficientError) as exc:
                    row["coefficient"] = None
                    row["error"] = str(exc)
                correlation_rows.append(row)
        report.tables["correlations"] = correlation_rows

    # Stage: agreement
    if config.label_pairs:
        pairs = read_label_pairs(config.label_pairs)
        row = {"items": len(pairs.a)}
        try:
            row["kappa"] = cohen_kappa(pairs)
        except UndefinedCoefficientError as exc:
            row["kappa"] = None
            row["error"] = str(exc)
        report.tables["agreement"] = [row]

    exit_code = EXIT_PARTIAL if (report.clause_errors or report.exclusions) else EXIT_OK
    return report, exit_code


def _decomposition_row(layer: str, fact_type: str, eval_mode: EvalMode, cell) -> dict:
    from .scoring import render_points

    return {
        "layer": layer,
        "fact_type": fact_type,
        "eval_mode": eval_mode.value,
        "omission_count": cell.counts["omission"],
        "hallucination_count": cell.counts["hallucination"],
        "salience_count": cell.counts["salience"],
        "total_errors": cell.total_errors,
        "omission_pct": render_points(cell.percentages["omission"]),
        "hallucination_pct": render_points(cell.percentages["hallucination"]),
        "salience_pct": render_points(cell.percentages["salience"]),
    }


def _run_extraction_stage(
    config: PipelineConfig,
    dataset: Dataset,
    records: list[ClauseRecord],
    layers: tuple[FactLayer, ...],
    report: Report,
) -> list[ClauseRecord]:
    out: list[ClauseRecord] = []
    templates = {
        FactLayer.CONCEPTUAL: packaged_template("extract_conceptual_v1"),
        FactLayer.CONTEXTUAL: packaged_template("extract_contextual_v1"),
    }
    backends = {
        layer: _build_completion_backend(config.extractor, dataset, layer)
        for layer in layers
    }
    for record in records:
        updated = record
        for layer in layers:
            bundle = record.bundle(layer)
            if bundle is None:
                continue
            caption = getattr(record, config.caption_source)
            try:
                facts, _log = extract_facts(
                    caption, layer, backends[layer], templates[layer], record.clause_id
                )
            except (ExtractionError, TransportError) as exc:
                report.clause_errors.append(
                    {
                        "stage": "extract",
                        "layer": layer.value,
                        "clause_id": record.clause_id,
                        "error": str(exc),
                    }
                )
                continue
            new_bundle = bundle.with_predicted(facts)
            if layer is FactLayer.CONCEPTUAL:
                updated = replace(updated, conceptual=new_bundle)
            else:
                updated = replace(updated, contextual=new_bundle)
        out.append(updated)
    return out


def _run_negatives_stage(
    config: PipelineConfig,
    records: list[ClauseRecord],
    layers: tuple[FactLayer, ...],
    lexicon: Optional[ConfusionLexicon],
    report: Report,
) -> list[ClauseRecord]:
    if lexicon is None and config.negatives_backend is None:
        raise PipelineError(
            "generate_missing_negatives requires a lexicon or a negatives backend"
        )
    backend = None
    if config.negatives_backend is not None:
        backend = _build_completion_backend(
            config.negatives_backend, Dataset(records=tuple(records)), layers[0]
        )
    templates = {
        FactLayer.CONCEPTUAL: packaged_template("negative_conceptual_prompt"),
        FactLayer.CONTEXTUAL: packaged_template("negative_contextual_prompt"),
    }
    out: list[ClauseRecord] = []
    for record in records:
        updated = record
        for layer in layers:
            bundle = record.bundle(layer)
            if bundle is None or bundle.gold_negative or not bundle.gold_positive:
                continue
            try:
                if backend is not None:
                    template = templates[layer]
                    candidates, _log = generate_negatives(
                        list(bundle.gold_positive),
                        layer,
                        backend,
                        template,
                        lexicon=lexicon,
                        clause_id=record.clause_id,
                        seed=config.seed,
                    )
                    negatives = [c.candidate for c in candidates if c.accepted]
                else:
                    picked = fallback_substitute(
                        list(bundle.gold_positive), lexicon, config.seed
                    )
                    negatives = [c.candidate for c in picked]
            except NegativesError as exc:
                report.clause_errors.append(
                    {
                        "stage": "negatives",
                        "layer": layer.value,
                        "clause_id": record.clause_id,
                        "error": str(exc),
                    }
                )
                continue
            new_bundle = replace(bundle, gold_negative=tuple(negatives))
            if layer is FactLayer.CONCEPTUAL:
                updated = replace(updated, conceptual=new_bundle)
            else:
                updated = replace(updated, contextual=new_bundle)
        out.append(updated)
    return out
