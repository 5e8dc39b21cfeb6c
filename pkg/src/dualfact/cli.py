"""Command-line entry points for the evaluation pipeline and its stages.

Every pipeline stage is independently invocable for debugging; ``run``
composes them end to end from a config file and emits the report (records,
CSV, text, figures) into the output directory.

Exit codes: 0 success, 1 structural error, 2 partial (per-clause errors
present). Endpoint credentials are read from the ``DUALFACT_API_TOKEN``
environment variable, never from flags or config files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dataset import DatasetLoadError, load_dataset, save_dataset, stats, validate
from .pipeline import (
    EXIT_OK,
    EXIT_PARTIAL,
    EXIT_STRUCTURAL,
    BackendSpec,
    PipelineConfig,
    PipelineError,
    read_keyed_scores,
    read_label_pairs,
    run_pipeline,
)
from .report import emit_tables, render_text_table
from .scoring import (
    GroundingEvalSet,
    ScoringError,
    VideoObjects,
    grounding_eval,
    grounding_eval_from_counts,
    render_percent,
)
from .stats import (
    PairedScores,
    StatsError,
    UndefinedCoefficientError,
    cohen_kappa,
    correlate,
)


def _fail(message: str, code: int = EXIT_STRUCTURAL) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _add_backend_flags(parser: argparse.ArgumentParser, prefix: str) -> None:
    parser.add_argument(
        f"--{prefix}",
        dest=f"{prefix}_kind",
        default=None,
        help="backend name: endpoint|mock|rule|gold-echo",
    )
    parser.add_argument(f"--{prefix}-url", default="")
    parser.add_argument(f"--{prefix}-lookup", default="")
    parser.add_argument(
        f"--{prefix}-modes", default="textual,multimodal", help="comma-separated modes"
    )


def _backend_from_flags(args, prefix: str):
    kind = getattr(args, f"{prefix}_kind")
    if kind is None:
        return None
    return BackendSpec(
        kind=kind,
        name=kind,
        url=getattr(args, f"{prefix}_url"),
        lookup=getattr(args, f"{prefix}_lookup"),
        modes=tuple(getattr(args, f"{prefix}_modes").split(",")),
    )


def _config_from_flags(args, **overrides) -> PipelineConfig:
    return PipelineConfig(
        dataset=args.dataset,
        output_dir=getattr(args, "output_dir", "out"),
        layers=tuple(args.layers.split(",")),
        mode=getattr(args, "mode", "textual"),
        eval_mode=getattr(args, "eval_mode", "cap_only"),
        seed=getattr(args, "seed", 0),
        parallelism=getattr(args, "parallelism", 1),
        caption_source=getattr(args, "caption_source", "caption"),
        evidence_caption=getattr(args, "evidence_caption", "caption"),
        lexicon=getattr(args, "lexicon", ""),
        figures=False,
        **overrides,
    )


def _print_tables(report, names) -> None:
    for name in names:
        if name in report.tables:
            print(render_text_table(name, report.tables[name]), end="")
            print()


def cmd_validate(args) -> int:
    try:
        dataset = load_dataset(args.dataset)
    except (DatasetLoadError, OSError) as exc:
        return _fail(str(exc))
    report = validate(dataset)
    for entry in report.entries:
        print(f"{entry.clause_id}  {entry.rule_id}  {entry.severity}  {entry.message}")
    errors = len(report.errors)
    print(f"{len(dataset)} clauses checked: {errors} errors, {len(report.warnings)} warnings")
    return EXIT_OK if errors == 0 else EXIT_PARTIAL


def cmd_stats(args) -> int:
    try:
        dataset = load_dataset(args.dataset)
    except (DatasetLoadError, OSError) as exc:
        return _fail(str(exc))
    result = stats(dataset)
    rows = [
        {
            "split": split,
            "videos": row.videos,
            "clips": row.clips,
            "via": row.via,
            "conceptual_facts": row.conceptual_facts,
            "contextual_facts": row.contextual_facts,
        }
        for split, row in sorted(result.per_split.items())
    ]
    print(render_text_table("dataset_stats", rows), end="")
    return EXIT_OK


def cmd_extract(args) -> int:
    from .dataset import Dataset
    from .extraction import eval_extraction
    from .facts import FactLayer
    from .pipeline import Report, _run_extraction_stage  # noqa: SLF001

    extractor = _backend_from_flags(args, "extractor") or BackendSpec(kind="rule", name="rule")
    config = _config_from_flags(args, extractor=extractor)
    try:
        dataset = load_dataset(args.dataset)
        report = Report(metadata={})
        layers = tuple(FactLayer(l) for l in config.layers)
        records = _run_extraction_stage(config, dataset, list(dataset.records), layers, report)
    except (PipelineError, DatasetLoadError, OSError) as exc:
        return _fail(str(exc))
    rows = []
    for layer in layers:
        predicted = {
            r.clause_id: list(r.bundle(layer).predicted)
            for r in records
            if r.bundle(layer) is not None and r.bundle(layer).predicted is not None
        }
        gold = {
            r.clause_id: list(r.bundle(layer).gold_positive)
            for r in records
            if r.clause_id in predicted
        }
        if not predicted:
            continue
        metrics = eval_extraction(predicted, gold)
        for slot, score in metrics.per_slot.items():
            rows.append(
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
    if rows:
        print(render_text_table("slot_metrics", rows), end="")
    if args.out:
        save_dataset(Dataset(records=tuple(records)), args.out)
        print(f"wrote {args.out}")
    for error in report.clause_errors:
        print(f"clause error: {error}")
    return EXIT_PARTIAL if report.clause_errors else EXIT_OK


def cmd_negatives(args) -> int:
    from .dataset import Dataset
    from .facts import FactLayer
    from .pipeline import _run_negatives_stage, resolve_lexicon  # noqa: SLF001
    from .pipeline import Report

    try:
        dataset = load_dataset(args.dataset)
        lexicon = resolve_lexicon(args.lexicon)
        config = _config_from_flags(
            args,
            negatives_backend=_backend_from_flags(args, "negatives"),
            generate_missing_negatives=True,
        )
        report = Report(metadata={})
        records = _run_negatives_stage(
            config,
            list(dataset.records),
            tuple(FactLayer(l) for l in config.layers),
            lexicon,
            report,
        )
    except (PipelineError, DatasetLoadError, OSError) as exc:
        return _fail(str(exc))
    filled = sum(
        1
        for before, after in zip(dataset.records, records)
        for layer in ("conceptual", "contextual")
        if getattr(before, layer) is not None
        and not getattr(before, layer).gold_negative
        and getattr(after, layer).gold_negative
    )
    save_dataset(Dataset(records=tuple(records)), args.out)
    print(f"filled negatives for {filled} bundles; wrote {args.out}")
    for error in report.clause_errors:
        print(f"clause error: {error}")
    return EXIT_PARTIAL if report.clause_errors else EXIT_OK


def cmd_verify(args) -> int:
    verifier = _backend_from_flags(args, "backend")
    if verifier is None:
        return _fail("verify requires --backend")
    config = _config_from_flags(args, verifier=verifier)
    try:
        report, code = run_pipeline(config)
    except (PipelineError, DatasetLoadError, OSError) as exc:
        return _fail(str(exc))
    _print_tables(report, ["verifier_metrics", "per_video_accuracy"])
    if args.export_training:
        from .facts import FactLayer
        from .verification import EvidenceMode, export_training_records

        dataset = load_dataset(args.dataset)
        total = 0
        path = Path(args.export_training)
        for layer_name in config.layers:
            layer_path = path.with_name(f"{path.stem}_{layer_name}{path.suffix or '.jsonl'}")
            n = export_training_records(
                dataset.records,
                FactLayer(layer_name),
                layer_path,
                EvidenceMode(config.mode),
            )
            print(f"wrote {n} training records to {layer_path}")
            total += n
    return code


def cmd_score(args) -> int:
    verifier = _backend_from_flags(args, "backend")
    if verifier is None:
        return _fail("score requires --backend")
    config = _config_from_flags(args, verifier=verifier)
    try:
        report, code = run_pipeline(config)
    except (PipelineError, DatasetLoadError, OSError) as exc:
        return _fail(str(exc))
    _print_tables(report, ["multifact_summary", "multifact_scores"])
    return code


def cmd_decompose(args) -> int:
    verifier = _backend_from_flags(args, "backend")
    if verifier is None:
        return _fail("decompose requires --backend")
    config = _config_from_flags(
        args, verifier=verifier, grounder=_backend_from_flags(args, "grounder")
    )
    try:
        report, code = run_pipeline(config)
    except (PipelineError, DatasetLoadError, OSError) as exc:
        return _fail(str(exc))
    _print_tables(report, ["decomposition"])
    return code


def cmd_ground_eval(args) -> int:
    try:
        if args.counts:
            parts = [int(p) for p in args.counts.split(",")]
            if len(parts) != 4:
                return _fail("--counts expects grounded_pos,total_pos,ungrounded_neg,total_neg")
            result = grounding_eval_from_counts(*parts)
        elif args.set:
            with open(args.set, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
            eval_set = GroundingEvalSet(
                videos={
                    vid: VideoObjects(
                        positive=tuple(v["positive"]),
                        negative=tuple(v["negative"]),
                        predictions=dict(v["predictions"]),
                    )
                    for vid, v in obj.items()
                }
            )
            result = grounding_eval(eval_set)
        else:
            return _fail("ground-eval requires --counts or --set")
    except (ScoringError, OSError, KeyError, ValueError) as exc:
        return _fail(str(exc))
    rows = [
        {
            "metric": "Positive recall",
            "correct": result.grounded_pos,
            "total": result.total_pos,
            "value_pct": render_percent(result.recall_pos),
        },
        {
            "metric": "Negative specificity",
            "correct": result.ungrounded_neg,
            "total": result.total_neg,
            "value_pct": render_percent(result.specificity_neg),
        },
        {
            "metric": "Overall accuracy",
            "correct": result.grounded_pos + result.ungrounded_neg,
            "total": result.total_pos + result.total_neg,
            "value_pct": render_percent(result.overall_acc),
        },
    ]
    print(render_text_table("grounding_eval", rows), end="")
    return EXIT_OK


def cmd_correlate(args) -> int:
    try:
        if args.pairs:
            x: list[float] = []
            y: list[float] = []
            with open(args.pairs, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line or line.startswith("#"):
                        continue
                    parts = line.split("\t") if "\t" in line else line.split(",")
                    x.append(float(parts[0]))
                    y.append(float(parts[1]))
            pairs = PairedScores(x=tuple(x), y=tuple(y))
        elif args.x and args.y:
            pairs = PairedScores.from_records(
                read_keyed_scores(args.x), read_keyed_scores(args.y)
            )
        else:
            return _fail("correlate requires --pairs or both --x and --y")
    except (OSError, ValueError, PipelineError, StatsError) as exc:
        return _fail(str(exc))
    methods = ("pearson", "spearman", "kendall") if args.method == "all" else (args.method,)
    rows = []
    for method in methods:
        row = {"method": method, "n": len(pairs), "dropped": pairs.dropped}
        try:
            row["coefficient"] = correlate(pairs, method)
        except (StatsError, UndefinedCoefficientError) as exc:
            row["coefficient"] = None
            row["error"] = str(exc)
        rows.append(row)
    print(render_text_table("correlations", rows), end="")
    return EXIT_OK


def cmd_agreement(args) -> int:
    try:
        pairs = read_label_pairs(args.pairs)
        kappa = cohen_kappa(pairs)
    except (OSError, PipelineError, StatsError) as exc:
        return _fail(str(exc))
    print(render_text_table("agreement", [{"items": len(pairs.a), "kappa": kappa}]), end="")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import (
        AnnotationSession,
        JudgmentStore,
        SamplingSpec,
        Stratum,
        TaskBuildError,
        build_tasks,
        create_app,
    )

    try:
        dataset = load_dataset(args.dataset)
    except (DatasetLoadError, OSError) as exc:
        return _fail(str(exc))
    strata = tuple(
        Stratum(mode=mode, layer=layer, count=args.per_stratum)
        for mode in args.modes.split(",")
        for layer in args.layers.split(",")
    )
    spec = SamplingSpec(strata=strata, frame_count=args.frame_count)
    try:
        tasks = build_tasks(dataset, spec, args.seed)
    except TaskBuildError as exc:
        return _fail(f"{exc} (achievable: {exc.achievable})")
    store = JudgmentStore(args.journal)
    session = AnnotationSession(tasks, store)
    app = create_app(session, frames_dir=args.frames_dir, static_dir=args.static)
    print(f"serving {len(tasks)} tasks on {args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        config = PipelineConfig.from_file(args.config)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        return _fail(f"cannot read config {args.config}: {exc}")
    overrides = {}
    for flag in (
        "dataset",
        "output_dir",
        "seed",
        "mode",
        "eval_mode",
        "parallelism",
        "caption_source",
        "evidence_caption",
        "lexicon",
        "human_scores",
        "label_pairs",
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    for prefix, key in (
        ("extractor", "extractor"),
        ("verifier", "verifier"),
        ("grounder", "grounder"),
    ):
        spec = _backend_from_flags(args, prefix)
        if spec is not None:
            overrides[key] = spec
    if args.layers:
        overrides["layers"] = tuple(args.layers.split(","))
    if args.formats:
        overrides["formats"] = tuple(args.formats.split(","))
    if args.no_figures:
        overrides["figures"] = False
    if overrides:
        from dataclasses import replace as dc_replace

        config = dc_replace(config, **overrides)
    try:
        report, code = run_pipeline(config)
    except (PipelineError, DatasetLoadError, OSError) as exc:
        return _fail(str(exc))
    written = emit_tables(
        report, config.output_dir, formats=config.formats, figures=config.figures
    )
    for path in written:
        print(path)
    print(f"exit: {code}")
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualfact",
        description="Dual-layer factuality evaluation for procedural video captions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def dataset_arg(p):
        p.add_argument("dataset", help="line-delimited benchmark file")

    def common_flags(p):
        p.add_argument("--layers", default="conceptual,contextual")
        p.add_argument("--mode", default="textual", choices=["textual", "multimodal"])
        p.add_argument("--eval-mode", dest="eval_mode", default="cap_only",
                       choices=["cap_only", "text_grounded", "mm_grounded"])
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--parallelism", type=int, default=1)
        p.add_argument("--caption-source", dest="caption_source", default="caption",
                       choices=["caption", "via_caption"])
        p.add_argument("--evidence-caption", dest="evidence_caption", default="caption",
                       choices=["caption", "via_caption"])
        p.add_argument("--lexicon", default="")

    p = sub.add_parser("validate", help="check dataset rules, report violations")
    dataset_arg(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="per-split dataset statistics")
    dataset_arg(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("extract", help="extract predicted facts from captions")
    dataset_arg(p)
    common_flags(p)
    _add_backend_flags(p, "extractor")
    p.add_argument("--out", default="", help="write dataset with predicted facts")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("negatives", help="generate missing negative facts")
    dataset_arg(p)
    common_flags(p)
    _add_backend_flags(p, "negatives")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_negatives)

    p = sub.add_parser("verify", help="verify gold fact sets, report classifier metrics")
    dataset_arg(p)
    common_flags(p)
    _add_backend_flags(p, "backend")
    p.add_argument("--export-training", dest="export_training", default="",
                   help="also write verifier training records to this path")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("score", help="MultiFactScore over predicted facts")
    dataset_arg(p)
    common_flags(p)
    _add_backend_flags(p, "backend")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("decompose", help="hallucination/salience/omission decomposition")
    dataset_arg(p)
    common_flags(p)
    _add_backend_flags(p, "backend")
    _add_backend_flags(p, "grounder")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("ground-eval", help="grounding recall/specificity/accuracy")
    p.add_argument("--counts", default="",
                   help="grounded_pos,total_pos,ungrounded_neg,total_neg")
    p.add_argument("--set", default="", help="grounding eval-set JSON file")
    p.set_defaults(func=cmd_ground_eval)

    p = sub.add_parser("correlate", help="pearson/spearman/kendall correlation")
    p.add_argument("--pairs", default="", help="two-column x,y file")
    p.add_argument("--x", default="", help="keyed metric-score file")
    p.add_argument("--y", default="", help="keyed human-score file")
    p.add_argument("--method", default="all",
                   choices=["all", "pearson", "spearman", "kendall"])
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("agreement", help="Cohen's kappa for two label columns")
    p.add_argument("--pairs", required=True, help="two-column label file")
    p.set_defaults(func=cmd_agreement)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--dataset", required=True)
    p.add_argument("--journal", default="judgments.jsonl")
    p.add_argument("--frames-dir", dest="frames_dir", default=None)
    p.add_argument("--static", default=None, help="directory with the built UI")
    p.add_argument("--modes", default="caption,video")
    p.add_argument("--layers", default="conceptual,contextual")
    p.add_argument("--per-stratum", dest="per_stratum", type=int, default=10)
    p.add_argument("--frame-count", dest="frame_count", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--output-dir", dest="output_dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", default=None, choices=["textual", "multimodal"])
    p.add_argument("--eval-mode", dest="eval_mode", default=None,
                   choices=["cap_only", "text_grounded", "mm_grounded"])
    p.add_argument("--layers", default=None)
    p.add_argument("--parallelism", type=int, default=None)
    p.add_argument("--caption-source", dest="caption_source", default=None,
                   choices=["caption", "via_caption"])
    p.add_argument("--evidence-caption", dest="evidence_caption", default=None,
                   choices=["caption", "via_caption"])
    p.add_argument("--lexicon", default=None)
    p.add_argument("--human-scores", dest="human_scores", default=None)
    p.add_argument("--label-pairs", dest="label_pairs", default=None)
    p.add_argument("--formats", default=None, help="comma-separated: records,csv,text")
    _add_backend_flags(p, "extractor")
    _add_backend_flags(p, "verifier")
    _add_backend_flags(p, "grounder")
    p.add_argument("--no-figures", dest="no_figures", action="store_true")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
