"""End-to-end pipeline runs, report emission, determinism."""

import json

import pytest

from dualfact.dataset import load_dataset
from dualfact.facts import FactLayer, canonical_key
from dualfact.pipeline import (
    EXIT_OK,
    BackendSpec,
    PipelineConfig,
    PipelineError,
    run_pipeline,
    validate_config,
)
from dualfact.report import emit_tables, render_text_table


def gold_echo_config(dataset_path, out_dir, **overrides):
    base = dict(
        dataset=str(dataset_path),
        output_dir=str(out_dir),
        extractor=BackendSpec(kind="gold-echo", name="gold-echo"),
        verifier=BackendSpec(kind="gold-echo", name="gold-echo"),
        seed=7,
    )
    base.update(overrides)
    return PipelineConfig(**base)


class TestGoldEchoIdentity:
    @pytest.mark.parametrize("fixture", ["youcook3_mini.jsonl", "craftbench_mini.jsonl"])
    def test_identity_on_fixture(self, fixtures_dir, tmp_path, fixture):
        config = gold_echo_config(fixtures_dir / fixture, tmp_path / "out")
        report, code = run_pipeline(config)
        assert code == EXIT_OK
        for row in report.tables["verifier_metrics"]:
            assert row["accuracy"] == 1.0
            assert row["f1"] == 1.0
        for row in report.tables["per_video_accuracy"]:
            assert row["accuracy"] == 1.0
        for row in report.tables["multifact_scores"]:
            assert row["score"] == "100.00"
        for row in report.tables["multifact_summary"]:
            assert row["pooled_score"] == "100.00"
            assert row["skipped"] == 0
        for row in report.tables["slot_metrics"]:
            assert row["f1"] == 1.0
        assert not report.clause_errors
        assert not report.exclusions

    def test_decomposition_zero_errors(self, fixtures_dir, tmp_path):
        config = gold_echo_config(fixtures_dir / "youcook3_mini.jsonl", tmp_path / "out")
        report, _ = run_pipeline(config)
        for row in report.tables.get("decomposition", []):
            assert row["total_errors"] == 0


class TestDeterminism:
    def test_two_runs_byte_identical(self, fixtures_dir, tmp_path):
        digests = []
        for run in ("a", "b"):
            out = tmp_path / run
            config = gold_echo_config(
                fixtures_dir / "youcook3_mini.jsonl", out, figures=True
            )
            report, _ = run_pipeline(config)
            written = emit_tables(report, out, formats=config.formats, figures=True)
            assert written
            digest = {
                p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(written)
            }
            digests.append(digest)
        assert set(digests[0]) == set(digests[1])
        for name in digests[0]:
            assert digests[0][name] == digests[1][name], name

    def test_figures_rendered(self, fixtures_dir, tmp_path):
        config = gold_echo_config(fixtures_dir / "youcook3_mini.jsonl", tmp_path)
        report, _ = run_pipeline(config)
        written = emit_tables(report, tmp_path, formats=("records",), figures=True)
        pngs = [p for p in written if p.suffix == ".png"]
        assert pngs
        for png in pngs:
            assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


class TestStructuralErrors:
    def test_multimodal_mode_without_capable_verifier(self, fixtures_dir, tmp_path):
        config = gold_echo_config(
            fixtures_dir / "youcook3_mini.jsonl",
            tmp_path,
            mode="multimodal",
            verifier=BackendSpec(kind="mock", lookup="nope.json", modes=("textual",)),
        )
        with pytest.raises(PipelineError):
            validate_config(config)

    def test_missing_dataset_file(self, tmp_path):
        config = gold_echo_config(tmp_path / "missing.jsonl", tmp_path)
        with pytest.raises(PipelineError):
            run_pipeline(config)

    def test_grounded_mode_requires_grounder(self, fixtures_dir, tmp_path):
        config = gold_echo_config(
            fixtures_dir / "youcook3_mini.jsonl", tmp_path, eval_mode="text_grounded"
        )
        with pytest.raises(PipelineError):
            validate_config(config)

    def test_missing_mock_lookup_structural(self, fixtures_dir, tmp_path):
        config = gold_echo_config(
            fixtures_dir / "youcook3_mini.jsonl",
            tmp_path,
            verifier=BackendSpec(kind="mock", lookup=str(tmp_path / "none.json")),
        )
        with pytest.raises(PipelineError):
            run_pipeline(config)


class TestMockedDecomposition:
    @pytest.fixture()
    def mock_files(self, fixtures_dir, tmp_path):
        """Scripted verifier refutes two predicted conceptual facts of
        v01_c01; grounding says one is visible (salience) and one not."""
        dataset = load_dataset(fixtures_dir / "youcook3_mini.jsonl")
        verifier_lookup = {}
        grounder_lookup = {}
        for record in dataset:
            facts = {}
            grounding = {}
            for layer in FactLayer:
                bundle = record.bundle(layer)
                for fact in bundle.gold_positive:
                    key = canonical_key(fact)
                    refute = record.clause_id == "v01_c01" and key in (
                        "Tool is spoon.",
                        "Location is pot.",
                    )
                    facts[key] = "REFUTED" if refute else "SUPPORTED"
                for fact in bundle.gold_negative:
                    facts[canonical_key(fact)] = "REFUTED"
                from dualfact.scoring import grounding_item_text

                for fact in bundle.gold_positive:
                    grounding[grounding_item_text(fact)] = not (
                        record.clause_id == "v01_c01"
                        and grounding_item_text(fact) == "pot"
                    )
            verifier_lookup[record.clause_id] = facts
            grounder_lookup[record.clause_id] = grounding
        vfile = tmp_path / "verifier.json"
        gfile = tmp_path / "grounder.json"
        vfile.write_text(json.dumps(verifier_lookup))
        gfile.write_text(json.dumps(grounder_lookup))
        return vfile, gfile

    def test_text_grounded_decomposition(self, fixtures_dir, tmp_path, mock_files):
        vfile, gfile = mock_files
        config = gold_echo_config(
            fixtures_dir / "youcook3_mini.jsonl",
            tmp_path,
            eval_mode="text_grounded",
            verifier=BackendSpec(kind="mock", name="scripted", lookup=str(vfile)),
            grounder=BackendSpec(kind="mock", name="grounded", lookup=str(gfile)),
        )
        report, code = run_pipeline(config)
        assert code == EXIT_OK
        rows = {
            (r["layer"], r["fact_type"]): r for r in report.tables["decomposition"]
        }
        tool = rows[("conceptual", "Tool")]
        # spoon: refuted + grounded -> salience
        assert tool["salience_count"] == 1 and tool["hallucination_count"] == 0
        location = rows[("conceptual", "Location")]
        # pot: refuted + not grounded -> hallucination
        assert location["hallucination_count"] == 1 and location["salience_count"] == 0
        # verifier metrics now below 1.0 for affected groups
        metrics = {
            (r["layer"], r["group"]): r for r in report.tables["verifier_metrics"]
        }
        assert metrics[("conceptual", "Tool")]["accuracy"] < 1.0

    def test_row_percentages_consistent(self, fixtures_dir, tmp_path, mock_files):
        vfile, gfile = mock_files
        config = gold_echo_config(
            fixtures_dir / "youcook3_mini.jsonl",
            tmp_path,
            eval_mode="text_grounded",
            verifier=BackendSpec(kind="mock", name="scripted", lookup=str(vfile)),
            grounder=BackendSpec(kind="mock", name="grounded", lookup=str(gfile)),
        )
        report, _ = run_pipeline(config)
        for row in report.tables["decomposition"]:
            if row["total_errors"] == 0:
                continue
            total = sum(
                float(row[f"{c}_pct"])
                for c in ("omission", "hallucination", "salience")
                if row[f"{c}_pct"] != "--"
            )
            assert abs(total - 100.0) <= 0.02


class TestNegativesStage:
    def test_missing_negatives_filled_from_lexicon(self, fixtures_dir, tmp_path):
        # strip negatives from the fixture, then let the pipeline fill them
        dataset = load_dataset(fixtures_dir / "youcook3_mini.jsonl")
        from dataclasses import replace

        from dualfact.dataset import Dataset, save_dataset

        records = []
        for record in dataset:
            records.append(
                replace(
                    record,
                    conceptual=replace(record.conceptual, gold_negative=()),
                    contextual=replace(record.contextual, gold_negative=()),
                )
            )
        stripped = tmp_path / "stripped.jsonl"
        save_dataset(Dataset(records=tuple(records)), stripped)
        config = gold_echo_config(
            stripped,
            tmp_path,
            generate_missing_negatives=True,
            lexicon="cooking",
        )
        report, code = run_pipeline(config)
        assert code == EXIT_OK
        # negatives exist again: verifier metrics include refuted gold facts
        metrics = {
            (r["layer"], r["group"]): r for r in report.tables["verifier_metrics"]
        }
        assert metrics[("conceptual", "Avg.")]["tn"] > 0


class TestHumanDataStages:
    def test_correlations_and_agreement_tables(self, fixtures_dir, tmp_path):
        # scripted verifier gives each video a different pooled score so the
        # correlation against the human file is well defined
        dataset = load_dataset(fixtures_dir / "youcook3_mini.jsonl")
        verifier_lookup = {}
        refusals = {"v01": 0, "v02": 1, "v03": 2}
        for record in dataset:
            facts = {}
            budget = refusals[record.video_id]
            for layer in FactLayer:
                bundle = record.bundle(layer)
                for fact in bundle.gold_positive:
                    key = canonical_key(fact)
                    if layer is FactLayer.CONCEPTUAL and budget > 0:
                        facts[key] = "REFUTED"
                        budget -= 1
                    else:
                        facts[key] = "SUPPORTED"
                for fact in bundle.gold_negative:
                    facts[canonical_key(fact)] = "REFUTED"
            refusals[record.video_id] = budget
            verifier_lookup[record.clause_id] = facts
        vfile = tmp_path / "verifier.json"
        vfile.write_text(json.dumps(verifier_lookup))

        human = tmp_path / "human.csv"
        human.write_text("v01,0.95\nv02,0.60\nv03,0.30\n")
        labels = tmp_path / "labels.csv"
        labels.write_text(
            "\n".join(["a,a"] * 20 + ["a,b"] * 5 + ["b,a"] * 10 + ["b,b"] * 15) + "\n"
        )

        config = gold_echo_config(
            fixtures_dir / "youcook3_mini.jsonl",
            tmp_path,
            verifier=BackendSpec(kind="mock", name="scripted", lookup=str(vfile)),
            human_scores=str(human),
            label_pairs=str(labels),
        )
        report, _ = run_pipeline(config)

        correlations = report.tables["correlations"]
        conceptual = {
            r["method"]: r for r in correlations if r["layer"] == "conceptual"
        }
        assert set(conceptual) == {"pearson", "spearman", "kendall"}
        assert conceptual["spearman"]["n"] == 3
        assert conceptual["spearman"]["coefficient"] == pytest.approx(1.0)
        assert conceptual["spearman"]["dropped"] == 0

        agreement = report.tables["agreement"][0]
        assert agreement["items"] == 50
        assert agreement["kappa"] == pytest.approx(0.4, abs=1e-12)

    def test_human_keys_dropped_pairwise(self, fixtures_dir, tmp_path):
        human = tmp_path / "human.csv"
        human.write_text("v01,0.9\nv02,0.5\nv99,0.1\n")  # v99 unknown, v03 missing
        config = gold_echo_config(
            fixtures_dir / "youcook3_mini.jsonl",
            tmp_path,
            human_scores=str(human),
        )
        report, _ = run_pipeline(config)
        row = report.tables["correlations"][0]
        assert row["n"] == 2 and row["dropped"] == 2


class TestReportEmission:
    def test_percent_rendering_half_up(self):
        rows = [{"k": "5/6", "pct": "83.33"}]
        text = render_text_table("demo", rows)
        assert "83.33" in text

    def test_every_text_number_recoverable_from_records(self, fixtures_dir, tmp_path):
        config = gold_echo_config(fixtures_dir / "youcook3_mini.jsonl", tmp_path)
        report, _ = run_pipeline(config)
        out = tmp_path / "emit"
        emit_tables(report, out, formats=("records", "text"))
        records = json.loads((out / "report.json").read_text())
        text = (out / "report.txt").read_text()
        # spot-check: every rendered multifact score string appears in records
        for row in records["tables"]["multifact_scores"]:
            assert row["score"] in text

    def test_empty_report_metadata_only(self, tmp_path):
        from dualfact.pipeline import Report

        report = Report(metadata={"config_hash": "x", "version": "0"})
        written = emit_tables(report, tmp_path, formats=("records", "csv", "text"))
        names = {p.name for p in written}
        assert "report.json" in names and "report.txt" in names

    def test_unknown_format_rejected(self, tmp_path):
        from dualfact.pipeline import Report

        with pytest.raises(ValueError):
            emit_tables(Report(metadata={}), tmp_path, formats=("yaml",))


class TestGoldenReport:
    @staticmethod
    def _tables_only(text: str) -> str:
        # Drop the run-metadata header (config hash and dataset path vary
        # with where the repo is checked out); the reviewed tables must not.
        return text[text.index("== ") :]

    def test_text_report_matches_golden(self, fixtures_dir, tmp_path):
        golden_path = fixtures_dir / "golden" / "report.txt"
        config = gold_echo_config(fixtures_dir / "youcook3_mini.jsonl", tmp_path)
        report, _ = run_pipeline(config)
        emit_tables(report, tmp_path, formats=("text",))
        produced = (tmp_path / "report.txt").read_text()
        assert self._tables_only(produced) == self._tables_only(
            golden_path.read_text()
        )
