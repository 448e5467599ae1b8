"""
Tests for the command-line application.
"""

import json
import logging

import numpy as np
import pytest

from app import build_config, build_parser, main
from config.scenarios import load_scenario
from core.exceptions import ConfigError
from core.models.results import IntervalMethod
from core.models.run_config import Command
from core.parsers import write_dataset_csv
from core.simulation import generate_dataset


@pytest.fixture(autouse=True)
def _reset_logging():
    yield
    logging.getLogger().handlers.clear()


@pytest.fixture(scope="module")
def three_rater_csv(tmp_path_factory):
    scenario = load_scenario("gaussian_three_rater")
    data = generate_dataset(scenario, 30, np.random.default_rng(21))
    return write_dataset_csv(data, tmp_path_factory.mktemp("data") / "three.csv")


@pytest.fixture(scope="module")
def two_rater_csv(tmp_path_factory, two_rater):
    data = generate_dataset(two_rater, 30, np.random.default_rng(22))
    return write_dataset_csv(data, tmp_path_factory.mktemp("data") / "two.csv")


def _run(capsys, argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, out


class TestConfigMerge:
    """Tests for merging the config file and flags."""

    def test_flags_win(self, tmp_path, two_rater_csv):
        """Test a flag overrides the same key from the file."""
        cfg = tmp_path / "run.cfg"
        cfg.write_text("alpha = 0.1\nmethods = fisher_z\nseed = 4\n", encoding="utf-8")
        args = build_parser().parse_args(["interval", str(two_rater_csv), "--config", str(cfg), "--alpha", "0.2"])
        config = build_config(args)
        assert config.command == Command.INTERVAL
        assert config.alpha == 0.2
        assert config.methods == [IntervalMethod.FISHER_Z]
        assert config.seed == 4

    def test_generated_seed(self, two_rater_csv):
        """Test a seed is drawn when none is given."""
        config = build_config(build_parser().parse_args(["bounds", str(two_rater_csv)]))
        assert config.seed is not None and config.seed >= 0

    def test_unknown_key(self, tmp_path, two_rater_csv):
        """Test unknown config keys are usage errors."""
        cfg = tmp_path / "run.cfg"
        cfg.write_text("colour = blue\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            build_config(build_parser().parse_args(["fit", str(two_rater_csv), "--config", str(cfg)]))


class TestCommands:
    """Tests for the four subcommands."""

    def test_interval_three_raters(self, capsys, three_rater_csv):
        """Test three pairs plus the all-rater subset."""
        code, out = _run(capsys, ["interval", three_rater_csv, "--methods", "fisher_z", "--seed", 5])
        assert code == 0
        payload = json.loads(out)
        records = payload["records"]
        assert len(records) == 4
        assert [r["subset"] for r in records] == [["1", "2"], ["1", "3"], ["2", "3"], ["1", "2", "3"]]
        for r in records:
            assert r["method"] == "fisher_z"
            assert r["lower"] <= r["point"] <= r["upper"]
            assert r["bounds"]["lower"] == pytest.approx(-r["bounds"]["upper"])
            assert r["seed"] == 5

    def test_rerun_is_byte_identical(self, capsys, two_rater_csv):
        """Test the same seed reproduces the output exactly."""
        argv = ["interval", two_rater_csv, "--methods", "fisher_z", "--seed", 9]
        _, first = _run(capsys, argv)
        _, again = _run(capsys, argv)
        assert first == again

    def test_fit(self, capsys, two_rater_csv):
        """Test the fit command reports estimates and dimensions."""
        code, out = _run(capsys, ["fit", two_rater_csv, "--seed", 1])
        assert code == 0
        result = json.loads(out)["result"]
        assert result["dims"] == {"N": 30, "T": 10, "K": 1, "L": 2}
        assert len(result["estimates"]["sigma_alpha"]) == 2
        assert result["dispersion_estimate"] > 0

    def test_bounds(self, capsys, two_rater_csv, tmp_path):
        """Test bounds records and the copy written with --output."""
        target = tmp_path / "bounds.json"
        code, out = _run(capsys, ["bounds", two_rater_csv, "--seed", 2, "--output", target])
        assert code == 0
        records = json.loads(out)["records"]
        assert len(records) == 1
        assert 0 < records[0]["bounds"]["upper"] <= 1
        assert abs(records[0]["point"]) <= records[0]["bounds"]["upper"]
        assert target.read_text(encoding="utf-8") == out

    def test_simulate(self, capsys, tmp_path):
        """Test a tiny coverage study with its text table."""
        table = tmp_path / "table.txt"
        code, out = _run(capsys, ["simulate", "gaussian_two_rater", "--n-subjects", "15", "--replications", 2,
                                  "--allow-few-replications", "--methods", "fisher_z", "--seed", 3, "--table", table])
        assert code == 0
        report = json.loads(out)["report"]
        assert report["scenario"] == "gaussian_two_rater"
        assert [r["n_subjects"] for r in report["rows"]] == [15]
        assert "Coverage CI" in table.read_text(encoding="utf-8")


class TestExitCodes:
    """Tests for error reporting."""

    def test_unknown_scenario(self, capsys):
        """Test an unknown scenario is a usage error with a JSON payload."""
        code, out = _run(capsys, ["simulate", "no_such_scenario", "--seed", 1])
        assert code == 1
        assert json.loads(out)["error"] == "UnknownScenario"

    def test_missing_subcommand(self, capsys):
        """Test argparse usage errors exit with 1."""
        code, out = _run(capsys, [])
        assert code == 1
        assert json.loads(out)["error"] == "ConfigError"

    def test_missing_dataset(self, capsys):
        """Test interval without a dataset."""
        code, _ = _run(capsys, ["interval", "--seed", 1])
        assert code == 1

    def test_unbalanced_dataset(self, capsys, tmp_path):
        """Test parse problems map to exit code 1."""
        path = tmp_path / "bad.csv"
        path.write_text("subject,time,replicate,rater,value\ns1,1,1,A,1.0\ns1,1,1,B,1.2\ns2,1,1,A,0.7\n", encoding="utf-8")
        code, out = _run(capsys, ["fit", path])
        assert code == 1
        assert json.loads(out)["error"] == "UnbalancedDesign"

    def test_single_rater(self, capsys, tmp_path):
        """Test one rater is not enough for agreement."""
        path = tmp_path / "one.csv"
        rows = "".join(f"s{i},{t},1,A,{i + t}.0\n" for i in range(1, 4) for t in (1, 2))
        path.write_text("subject,time,replicate,rater,value\n" + rows, encoding="utf-8")
        code, out = _run(capsys, ["interval", path, "--methods", "fisher_z", "--seed", 1])
        assert code == 1
        assert json.loads(out)["error"] == "InsufficientRaters"

    def test_too_few_replications(self, capsys):
        """Test a study below 100 replications needs the explicit flag."""
        code, out = _run(capsys, ["simulate", "gaussian_two_rater", "--n-subjects", "15", "--replications", 2,
                                  "--methods", "fisher_z", "--seed", 3])
        assert code == 1
        assert json.loads(out)["error"] == "ConfigError"

    def test_small_monte_carlo_size(self, capsys, two_rater_csv):
        """Test an n_mc below the minimum is a usage error."""
        code, out = _run(capsys, ["bounds", two_rater_csv, "--n-mc", 100, "--seed", 1])
        assert code == 1
        assert json.loads(out)["error"] == "ConfigError"

    def test_spline_order_too_high(self, capsys, two_rater_csv):
        """Test a model the dataset cannot support is a usage error."""
        code, out = _run(capsys, ["fit", two_rater_csv, "--spline-order", 12, "--seed", 1])
        assert code == 1
        assert json.loads(out)["error"] == "ConfigError"

    def test_numerical_failure_is_runtime(self, capsys, two_rater_csv, monkeypatch):
        """Test a ValueError raised mid-run exits with 2, not as a usage error."""
        def broken(config):
            raise ValueError("array must not contain infs or NaNs")
        monkeypatch.setattr("app.run_fit", broken)
        code, out = _run(capsys, ["fit", two_rater_csv, "--seed", 1])
        assert code == 2
        assert json.loads(out)["error"] == "ValueError"
