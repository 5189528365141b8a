import csv
import io
import json

import numpy as np
import pytest

from stablemarket import cli_io
from stablemarket.cli import main
from stablemarket.cli_io import (
    CSV_COLUMNS,
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    EXIT_VIOLATION,
    ConfigError,
    apply_overrides,
    canonical_text,
    config_hash,
    load_realization,
    matching_from_json,
    matching_to_json,
    parse_config_text,
    run,
    save_realization,
)
from stablemarket.experiments import ExperimentReport
from stablemarket.market import Matching
from stablemarket.model import ModelConfig, sample_market

MINIMAL = "model:\n  n: 40\n  m: 3\nreplications: 5\n"


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestConfig:
    def test_minimal_gets_defaults(self):
        cfg = parse_config_text(MINIMAL)
        assert (cfg.model.n, cfg.model.m, cfg.replications) == (40, 3, 5)
        assert cfg.model.sigma is None and cfg.model.eta_dist == "normal"
        assert cfg.kind == "simulate" and cfg.output_format == "both"

    def test_negative_sigma_rejected(self):
        with pytest.raises(ConfigError, match="sigma"):
            parse_config_text("model: {n: 5, m: 2, sigma: -0.5}\n")

    def test_unknown_keys_enumerated(self):
        with pytest.raises(ConfigError) as err:
            parse_config_text("model: {n: 5, m: 2, colour: red}\nbogus: 1\noutput: {where: x}\n")
        assert len(err.value.errors) == 3

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="model.m"):
            parse_config_text("model: {n: 5}\n")
        with pytest.raises(ConfigError):
            parse_config_text("replications: 5\n")

    def test_parse_error_reports_line(self):
        with pytest.raises(ConfigError, match=r"line \d+, column \d+"):
            parse_config_text("model:\n  n: 5\n  m: [1, 2\nkind: simulate\n")

    def test_wrong_type(self):
        with pytest.raises(ConfigError, match="replications"):
            parse_config_text("model: {n: 5, m: 2}\nreplications: lots\n")

    def test_canonical_round_trip(self):
        cfg = parse_config_text(
            "model: {n: 30, m: 2, sigma: 0.0, outside_utility: -.inf, quotas: [10, 20]}\n"
            "kind: audit-bdc\nn_grid: [10, 30]\nsigma_grid: [0.0, null]\nreplications: 7\n"
        )
        again = parse_config_text(canonical_text(cfg))
        assert again == cfg
        assert canonical_text(again) == canonical_text(cfg)
        assert config_hash(again) == config_hash(cfg)

    def test_hash_ignores_key_order(self):
        a = parse_config_text("replications: 5\nmodel: {m: 3, n: 40}\n")
        assert config_hash(a) == config_hash(parse_config_text(MINIMAL))

    def test_overrides_env_then_flags(self):
        cfg = parse_config_text(MINIMAL)
        env = {"STABLEMARKET_SEED": "9", "STABLEMARKET_REPLICATIONS": "11", "STABLEMARKET_FORMAT": "csv"}
        out = apply_overrides(cfg, env=env, replications=12)
        assert out.model.seed == 9 and out.replications == 12 and out.output_format == "csv"
        with pytest.raises(ConfigError):
            apply_overrides(cfg, env={"STABLEMARKET_THREADS": "many"})
        assert apply_overrides(cfg, env={}) is cfg


def _bdc_config(tmp_path, trials=1000):
    return write(tmp_path, f"kind: audit-bdc\nreplications: {trials}\nmodel: {{n: 50, m: 3, sigma: 0.0, seed: 3}}\n")


class TestRun:
    def test_homogeneous_bdc_exit_zero(self, tmp_path):
        out = tmp_path / "bdc"
        assert main(["audit-bdc", "--config", str(_bdc_config(tmp_path)), "--out", str(out)]) == EXIT_OK
        rows = list(csv.DictReader(io.StringIO((out / "audit_bdc_summary.csv").read_text())))
        assert rows and all(row["violations"] == "0" for row in rows)
        assert tuple(rows[0]) == tuple(CSV_COLUMNS["audit-bdc"])
        lines = (out / "audit_bdc_records.jsonl").read_text().splitlines()
        assert len(lines) == 1000
        first = json.loads(lines[0])
        assert {"replication_index", "seed", "violations", "sosm_max_per_college"} <= set(first)

    def test_outputs_byte_identical(self, tmp_path, monkeypatch):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("kind: audit-equilibration\nreplications: 40\nmodel: {n: 30, m: 3, seed: 8}\n")
        for d in ("a", "b"):
            (tmp_path / d).mkdir()
            monkeypatch.chdir(tmp_path / d)
            assert main(["audit-equilibration", "--config", str(cfg), "--out", "run"]) == EXIT_OK
        a, b = tmp_path / "a" / "run", tmp_path / "b" / "run"
        names = sorted(p.name for p in a.iterdir())
        assert "manifest.json" in names and len(names) == 5
        for name in names:
            if name != "manifest.json":
                assert (a / name).read_bytes() == (b / name).read_bytes()
        man = json.loads((a / "manifest.json").read_text())
        assert man["seed"] == 8 and len(man["config_hash"]) == 64

    def test_lf_line_endings(self, tmp_path):
        main(["example-fixtures", "--out", str(tmp_path / "fx")])
        assert b"\r\n" not in (tmp_path / "fx" / "example_fixtures_summary.csv").read_bytes()

    def test_format_selection(self, tmp_path):
        out = tmp_path / "csv"
        assert main(["example-fixtures", "--out", str(out), "--format", "csv"]) == EXIT_OK
        assert (out / "example_fixtures_summary.csv").exists()
        assert not (out / "example_fixtures_records.jsonl").exists()

    def test_fixtures_prints_table(self, tmp_path, capsys):
        assert main(["example-fixtures", "--out", str(tmp_path / "fx")]) == EXIT_OK
        text = capsys.readouterr().out
        assert "j1 j2 j2 j3 j3" in text and "j2 j3 j3 j1 j2" in text

    def test_config_error_exit(self, tmp_path):
        bad = write(tmp_path, "model: {n: 5, m: 2, sigma: -1}\n")
        assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
        assert main(["simulate", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
        assert main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG

    def test_io_error_exit_and_no_overwrite(self, tmp_path):
        out = tmp_path / "fx"
        assert main(["example-fixtures", "--out", str(out)]) == EXIT_OK
        before = (out / "example_fixtures_summary.csv").read_bytes()
        assert main(["example-fixtures", "--out", str(out)]) == EXIT_IO
        assert (out / "example_fixtures_summary.csv").read_bytes() == before
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["example-fixtures", "--out", str(blocker)]) == EXIT_IO

    def test_violation_exit(self, tmp_path, monkeypatch):
        fake = ExperimentReport("simulate", [{"replication_index": 0, "seed": 0}], [{"n": 1}], violations=2)
        monkeypatch.setattr(cli_io, "run_experiment", lambda config: fake)
        cfg = write(tmp_path, MINIMAL)
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_VIOLATION

    def test_env_config_and_seed(self, tmp_path, monkeypatch):
        cfg = write(tmp_path, MINIMAL)
        monkeypatch.setenv("STABLEMARKET_CONFIG", str(cfg))
        monkeypatch.setenv("STABLEMARKET_SEED", "5")
        out = tmp_path / "env"
        assert main(["simulate", "--out", str(out), "--seed", "6"]) == EXIT_OK
        assert parse_config_text((out / "config.yaml").read_text()).model.seed == 6

    def test_run_returns_manifest(self, tmp_path):
        cfg = parse_config_text(MINIMAL).with_(output_dir=str(tmp_path / "r"))
        manifest, report = run(cfg)
        assert manifest.violations == 0 and len(report.records) == 5
        assert {f["name"] for f in manifest.files} >= {"config.yaml", "simulate_summary.csv"}


def test_non_finite_floats_serialised():
    rep = ExperimentReport("simulate", [{"replication_index": 0, "seed": 0, "x": float("inf")}], [], info={"y": float("nan")})
    assert json.loads(cli_io.records_jsonl(rep).splitlines()[0])["x"] == "inf"
    assert json.loads(cli_io.info_json(rep))["info"]["y"] == "nan"


def test_realization_round_trip(tmp_path):
    real = sample_market(ModelConfig(n=20, m=3, threshold="quantile", threshold_p=0.2, seed=4))
    path = tmp_path / "real.npz"
    save_realization(path, real)
    back = load_realization(path)
    for name in ("X", "eps", "eta", "Z", "xi", "omega", "c", "quotas", "lam", "utility"):
        assert np.array_equal(getattr(back, name), getattr(real, name))
    assert back.sigma == real.sigma


def test_matching_round_trip():
    mu = Matching(np.array([0, 2, 1, 2]), 3)
    assert matching_from_json(matching_to_json(mu)) == mu
