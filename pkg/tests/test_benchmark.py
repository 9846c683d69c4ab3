"""Tests for the acceptance battery plumbing."""

import numpy as np
import pytest

import benchmark
from gglab.services.schemas import EstimatorConfig, UltrametricReport


class TestHelpers:
    def test_negative_control_flips_the_verdict(self):
        report = UltrametricReport(
            name="ultra-control", n_outer=32, seed=0, passed=False, q=0.5, violations=3, rate=0.1, triangle_violations=3
        )
        record = benchmark.negative(report)
        assert record["pass"] is True
        assert record["negative_control"] is True

    def test_corpus_measures_are_valid(self):
        measures = benchmark.psd_corpus(4, 5, seed=1)
        assert len(measures) == 4
        for measure in measures:
            assert measure.size == 5
            assert np.all(np.linalg.eigvalsh(measure.gram_matrix) >= -1e-12)

    def test_configuration_from_environment(self, monkeypatch):
        monkeypatch.setenv("GGLAB_N_OUTER", "640")
        monkeypatch.setenv("GGLAB_SEED", "3")
        config = benchmark.load_configuration()
        assert config.n_outer == 640
        assert config.seed == 3


class TestSuite:
    def test_selected_sections_only(self):
        config = EstimatorConfig(n_outer=64, n_batches=32, seed=2, truncation=256)
        suite = benchmark.run_suite(config, sections=["second-moment"])
        assert set(suite) == {"configuration", "results", "summary"}
        assert [record["section"] for record in suite["results"]] == ["second-moment"] * 3
        assert suite["summary"]["total"] == 3
        assert suite["configuration"]["seed"] == 2

    def test_save_results(self, tmp_path):
        path = tmp_path / "suite" / "results.json"
        benchmark.save_results({"configuration": {}, "results": [], "summary": {}}, str(path))
        assert path.read_text(encoding="utf-8").startswith("{")
