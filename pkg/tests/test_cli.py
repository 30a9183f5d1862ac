import json
import hashlib

import pytest

from landscape_lab.cli import run, validate_config, write_csv
from landscape_lab.errors import ConfigurationError

LAW = {"kind": "bernoulli", "q": 0.5}


def write_cfg(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def green_cfg(**kw):
    cfg = {"d": 1, "L": 32, "m": 20, "law": LAW, "lambda": 1.0, "eta": 1e-4,
           "p": 1.0, "n_samples": 4, "master_seed": 3,
           "r_min": 1.0, "r_max": 10.0}
    cfg.update(kw)
    return cfg


class TestValidateConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown key"):
            validate_config("green-decay", green_cfg(bogus=1))

    def test_missing_required_key_rejected(self):
        cfg = green_cfg()
        del cfg["n_samples"]
        with pytest.raises(ConfigurationError, match="missing required"):
            validate_config("green-decay", cfg)

    def test_type_mismatch_rejected(self):
        with pytest.raises(ConfigurationError, match="must be"):
            validate_config("green-decay", green_cfg(L="32"))

    def test_nonpositive_samples_rejected(self):
        with pytest.raises(ConfigurationError, match="n_samples"):
            validate_config("green-decay", green_cfg(n_samples=0))

    def test_defaults_filled(self):
        out = validate_config("green-decay", green_cfg())
        assert out["workers"] == 1 and out["tol"] == 1e-9
        assert out["master_seed"] == 3   # explicit value kept

    def test_unknown_subcommand(self):
        with pytest.raises(ConfigurationError):
            validate_config("frobnicate", {})


class TestExitCodes:
    def test_selftest_passes(self, tmp_path):
        cfg = write_cfg(tmp_path, "c.json", {})
        assert run("selftest", cfg, output_dir=tmp_path / "out") == 0

    def test_missing_config_file_is_validation_error(self, tmp_path):
        assert run("selftest", tmp_path / "nope.json",
                   output_dir=tmp_path / "out") == 2

    def test_malformed_json_is_validation_error(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert run("selftest", p, output_dir=tmp_path / "out") == 2

    def test_unknown_key_exits_2(self, tmp_path):
        cfg = write_cfg(tmp_path, "c.json", green_cfg(bogus=1))
        assert run("green-decay", cfg, output_dir=tmp_path / "out") == 2

    def test_zero_samples_exits_2(self, tmp_path):
        cfg = write_cfg(tmp_path, "c.json", green_cfg(n_samples=0))
        assert run("green-decay", cfg, output_dir=tmp_path / "out") == 2

    def test_bad_law_exits_2(self, tmp_path):
        cfg = write_cfg(tmp_path, "c.json",
                        green_cfg(law={"kind": "bernoulli", "q": 1.0}))
        assert run("green-decay", cfg, output_dir=tmp_path / "out") == 2

    def test_empty_fit_window_exits_4(self, tmp_path):
        cfg = write_cfg(tmp_path, "c.json", green_cfg(r_min=9.0, r_max=10.0))
        assert run("green-decay", cfg, output_dir=tmp_path / "out") == 4

    def test_small_anchor_run_is_inconclusive(self, tmp_path):
        cfg = write_cfg(tmp_path, "c.json",
                        {"L": 64, "law": LAW, "gamma": 0.5, "n_samples": 10})
        assert run("anchor-1d", cfg, output_dir=tmp_path / "out") == 5

    def test_green_decay_passes(self, tmp_path):
        cfg = write_cfg(tmp_path, "c.json", green_cfg(n_samples=8))
        assert run("green-decay", cfg, output_dir=tmp_path / "out") == 0


class TestManifest:
    def test_manifest_checksums_match_files(self, tmp_path):
        cfg = write_cfg(tmp_path, "c.json", green_cfg())
        out = tmp_path / "out"
        assert run("green-decay", cfg, output_dir=out) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["verdict"] == "PASS"
        assert manifest["subcommand"] == "green-decay"
        assert manifest["config"]["master_seed"] == 3
        assert set(manifest["files"]) >= {"curve.csv", "fit.csv", "summary.txt"}
        for name, digest in manifest["files"].items():
            assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest

    def test_summary_single_line(self, tmp_path):
        cfg = write_cfg(tmp_path, "c.json", {})
        out = tmp_path / "out"
        run("selftest", cfg, output_dir=out)
        text = (out / "summary.txt").read_text()
        assert text == "selftest PASS\n"

    def test_seed_override_lands_in_manifest(self, tmp_path):
        cfg = write_cfg(tmp_path, "c.json", green_cfg())
        out = tmp_path / "out"
        run("green-decay", cfg, output_dir=out, seed=99)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["master_seed"] == 99


class TestDeterminism:
    def test_rerun_byte_identical_csvs(self, tmp_path):
        cfg = write_cfg(tmp_path, "c.json", green_cfg())
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("green-decay", cfg, output_dir=a) == 0
        assert run("green-decay", cfg, output_dir=b) == 0
        for name in ("curve.csv", "fit.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_worker_count_does_not_change_output(self, tmp_path):
        cfg = write_cfg(tmp_path, "c.json", green_cfg())
        a, b = tmp_path / "w1", tmp_path / "w2"
        assert run("green-decay", cfg, output_dir=a, workers=1) == 0
        assert run("green-decay", cfg, output_dir=b, workers=2) == 0
        assert (a / "curve.csv").read_bytes() == (b / "curve.csv").read_bytes()
        assert (a / "fit.csv").read_bytes() == (b / "fit.csv").read_bytes()

    def test_different_seed_changes_output(self, tmp_path):
        cfg = write_cfg(tmp_path, "c.json", green_cfg())
        a, b = tmp_path / "s1", tmp_path / "s2"
        run("green-decay", cfg, output_dir=a, seed=1)
        run("green-decay", cfg, output_dir=b, seed=2)
        assert (a / "curve.csv").read_bytes() != (b / "curve.csv").read_bytes()


class TestWriteCsv:
    def test_full_precision_roundtrip(self, tmp_path):
        p = tmp_path / "x.csv"
        write_csv(p, ["a", "b"], [[0.1 + 0.2, True], [1, -1.5e-300]])
        lines = p.read_text().splitlines()
        assert lines[0] == "a,b"
        assert float(lines[1].split(",")[0]) == 0.1 + 0.2
        assert lines[1].split(",")[1] == "1"
        assert float(lines[2].split(",")[1]) == -1.5e-300
