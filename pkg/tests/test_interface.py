"""Tests for the command-line interface."""

import json
from pathlib import Path

import pytest

import interface


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for key in ("GGLAB_SEED", "GGLAB_WORKERS", "GGLAB_N_OUTER", "GGLAB_N_BATCHES", "GGLAB_Z_MAX", "GGLAB_TRUNCATION"):
        monkeypatch.delenv(key, raising=False)


class TestCommands:
    def test_pd_sample(self, capsys):
        code = interface.main(["pd-sample", "--zeta", "0.5", "--truncation", "64", "--seed", "3", "--quiet"])
        payload = json.loads(capsys.readouterr().out)
        assert code == 0
        assert payload["truncation"] == 64
        assert len(payload["leading_weights"]) == 10

    def test_cascade_info(self, capsys):
        code = interface.main(
            ["cascade-info", "--zetas", "0.3,0.5", "--branching", "4,8", "--qs", "0,0.5,1", "--quiet"]
        )
        payload = json.loads(capsys.readouterr().out)
        assert code == 0
        assert payload["n_leaves"] == 32
        assert payload["mu_closed_form"] == pytest.approx([0.3, 0.2, 0.5])

    def test_ultrametric_check_counts_samples(self, tmp_path):
        out = tmp_path / "ultra.json"
        code = interface.main(
            ["struct", "ultra", "--zeta", "0.5", "--truncation", "128", "--n", "320", "--quiet", "--out", str(out)]
        )
        record = json.loads(out.read_text(encoding="utf-8"))
        assert code == 0
        assert record["n_outer"] == 320
        assert record["violations"] == 0

    def test_csv_output(self, capsys):
        code = interface.main(
            ["struct", "positivity", "--zeta", "0.5", "--truncation", "64", "--n", "64", "--format", "csv", "--quiet"]
        )
        lines = capsys.readouterr().out.splitlines()
        assert code == 0
        assert lines[0].startswith("name,")
        assert len(lines) == 2

    def test_reports_are_reproducible(self, capsys):
        argv = ["check", "pd-identity", "--zeta", "0.5", "--truncation", "128", "--n-outer", "64", "--quiet"]
        interface.main(argv)
        first = capsys.readouterr().out
        interface.main(argv + ["--workers", "3"])
        assert capsys.readouterr().out == first


class TestErrors:
    def test_invalid_zeta_exits_with_2(self, capsys):
        assert interface.main(["pd-sample", "--zeta", "1.5", "--quiet"]) == 2
        assert "Error" in capsys.readouterr().err

    def test_unknown_argument_exits_with_2(self):
        assert interface.main(["check", "gg", "--no-such-flag"]) == 2

    def test_unsupported_group_count(self):
        argv = ["check", "pd-identity", "--groups", "1,1,1,1", "--t", "0.1", "--n-outer", "64", "--quiet"]
        assert interface.main(argv) == 2

    def test_missing_config_file(self, tmp_path):
        assert interface.main(["check", "zeta", "--config", str(tmp_path / "absent.cfg"), "--quiet"]) == 2


class TestShippedConfig:
    def test_example_config_is_deterministic(self, tmp_path):
        config = Path(__file__).resolve().parents[1] / "ex" / "main_n2.cfg"
        outputs = []
        for run in ("first", "second"):
            out = tmp_path / f"{run}.json"
            assert interface.main(["check", "main", "--config", str(config), "--seed", "7", "--quiet", "--out", str(out)]) in (0, 1)
            record = json.loads(out.read_text())
            record.pop("wall_time_s", None)
            outputs.append(record)
        assert outputs[0] == outputs[1]
        record = outputs[0]
        assert record["n_outer"] == 640
        assert record["seed"] == 7

    def test_pd_threshold_help_names_the_suite_value(self, monkeypatch, capsys):
        monkeypatch.setenv("COLUMNS", "400")
        with pytest.raises(SystemExit):
            interface.build_parser().parse_args(["check", "pd-identity", "--help"])
        assert "the suite uses 1e-8" in capsys.readouterr().out
