"""CLI subcommands: exit codes, flag plumbing, end-to-end `run`."""

import json

from dualfact.cli import main


class TestValidateCommand:
    def test_clean_exits_zero(self, youcook_path, capsys):
        assert main(["validate", str(youcook_path)]) == 0
        out = capsys.readouterr().out
        assert "0 errors" in out

    def test_violations_exit_partial(self, fixtures_dir, capsys):
        code = main(["validate", str(fixtures_dir / "violations.jsonl")])
        assert code == 2
        out = capsys.readouterr().out
        assert "via_verb" in out and "neg_overlap" in out

    def test_missing_file_structural(self, tmp_path):
        assert main(["validate", str(tmp_path / "nope.jsonl")]) == 1


class TestStatsCommand:
    def test_stats_table(self, youcook_path, capsys):
        assert main(["stats", str(youcook_path)]) == 0
        out = capsys.readouterr().out
        assert "test" in out and "10" in out and "11" in out


class TestGroundEvalCommand:
    def test_published_counts(self, capsys):
        assert main(["ground-eval", "--counts", "4329,7221,6524,7878"]) == 0
        out = capsys.readouterr().out
        assert "59.95" in out and "82.81" in out and "71.88" in out

    def test_eval_set_file(self, tmp_path, capsys):
        payload = {
            "v1": {
                "positive": ["onion"],
                "negative": ["hammer"],
                "predictions": {"onion": True, "hammer": False},
            }
        }
        path = tmp_path / "set.json"
        path.write_text(json.dumps(payload))
        assert main(["ground-eval", "--set", str(path)]) == 0
        out = capsys.readouterr().out
        assert "100.00" in out

    def test_requires_input(self):
        assert main(["ground-eval"]) == 1


class TestCorrelateCommand:
    def test_two_column_pairs(self, tmp_path, capsys):
        path = tmp_path / "pairs.csv"
        path.write_text("1,2\n2,4\n3,6\n4,8\n")
        assert main(["correlate", "--pairs", str(path)]) == 0
        out = capsys.readouterr().out
        assert "pearson" in out and "1.0000" in out

    def test_keyed_files(self, tmp_path, capsys):
        x = tmp_path / "x.csv"
        y = tmp_path / "y.csv"
        x.write_text("a,1\nb,2\nc,3\n")
        y.write_text("b,5\nc,6\nd,9\n")
        assert main(["correlate", "--x", str(x), "--y", str(y), "--method", "spearman"]) == 0
        out = capsys.readouterr().out
        assert "spearman" in out


class TestAgreementCommand:
    def test_kappa_from_file(self, tmp_path, capsys):
        path = tmp_path / "labels.csv"
        rows = ["a,a"] * 20 + ["a,b"] * 5 + ["b,a"] * 10 + ["b,b"] * 15
        path.write_text("\n".join(rows) + "\n")
        assert main(["agreement", "--pairs", str(path)]) == 0
        out = capsys.readouterr().out
        assert "0.4000" in out


class TestVerifyCommand:
    def test_gold_echo_verify(self, youcook_path, capsys):
        code = main(
            ["verify", str(youcook_path), "--backend", "gold-echo"]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "verifier_metrics" in out and "Avg." in out

    def test_export_training_records(self, youcook_path, tmp_path, capsys):
        export = tmp_path / "train.jsonl"
        code = main(
            [
                "verify",
                str(youcook_path),
                "--backend",
                "gold-echo",
                "--layers",
                "conceptual",
                "--export-training",
                str(export),
            ]
        )
        assert code == 0
        written = tmp_path / "train_conceptual.jsonl"
        lines = [json.loads(l) for l in written.read_text().splitlines()]
        assert all({"evidence_ref", "fact_text", "label"} <= set(l) for l in lines)
        labels = {l["label"] for l in lines}
        assert labels == {"SUPPORTED", "REFUTED"}


class TestExtractCommand:
    def test_rule_extractor_writes_predicted(self, youcook_path, tmp_path, capsys):
        out_file = tmp_path / "with_predicted.jsonl"
        code = main(
            [
                "extract",
                str(youcook_path),
                "--caption-source",
                "via_caption",
                "--out",
                str(out_file),
            ]
        )
        assert code == 0
        from dualfact.dataset import load_dataset

        dataset = load_dataset(out_file)
        assert all(r.conceptual.predicted is not None for r in dataset)


class TestRunCommand:
    def _config(self, tmp_path, youcook_path, out_name="out"):
        config = {
            "dataset": str(youcook_path),
            "output_dir": str(tmp_path / out_name),
            "extractor": {"kind": "gold-echo"},
            "verifier": {"kind": "gold-echo"},
            "seed": 3,
            "figures": False,
        }
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config))
        return path

    def test_run_emits_reports(self, tmp_path, youcook_path, capsys):
        config = self._config(tmp_path, youcook_path)
        assert main(["run", "--config", str(config)]) == 0
        out_dir = tmp_path / "out"
        assert (out_dir / "report.json").is_file()
        assert (out_dir / "report.txt").is_file()
        assert (out_dir / "tables" / "multifact_scores.csv").is_file()

    def test_run_override_flags(self, tmp_path, youcook_path, capsys):
        config = self._config(tmp_path, youcook_path)
        code = main(
            [
                "run",
                "--config",
                str(config),
                "--output-dir",
                str(tmp_path / "other"),
                "--layers",
                "conceptual",
            ]
        )
        assert code == 0
        report = json.loads((tmp_path / "other" / "report.json").read_text())
        layers = {r["layer"] for r in report["tables"]["multifact_scores"]}
        assert layers == {"conceptual"}

    def test_run_structural_error_exit_one(self, tmp_path, youcook_path):
        config = {
            "dataset": str(youcook_path),
            "output_dir": str(tmp_path / "out"),
            "verifier": {"kind": "mock", "lookup": str(tmp_path / "absent.json")},
        }
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config))
        assert main(["run", "--config", str(path)]) == 1
