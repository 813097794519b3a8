"""Command-line interface: argument handling, exit codes, artifacts."""

import json
import os

import pytest

from degenlab.cli import build_parser, main


class TestParsing:
    def test_help_lists_config_keys(self, capsys):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for key in ("alpha", "mesh_levels", "k_levels", "seed", "out_dir"):
            assert key in out

    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["frobnicate"])
        assert exc.value.code == 2

    def test_bad_override_format_is_config_error(self, capsys):
        rc = main(["converge", "--set", "alpha"])
        assert rc == 2
        assert "config error" in capsys.readouterr().err

    def test_invalid_config_value_is_config_error(self, capsys):
        rc = main(["converge", "--set", "alpha=2.5"])
        assert rc == 2
        assert "alpha" in capsys.readouterr().err

    def test_unknown_config_key_is_config_error(self, capsys):
        rc = main(["converge", "--set", "warp_factor=9"])
        assert rc == 2
        assert "warp_factor" in capsys.readouterr().err

    def test_config_file_missing(self, capsys):
        rc = main(["converge", "--config", "/no/such/file.json"])
        assert rc == 2

    def test_config_file_must_be_object(self, tmp_path, capsys):
        p = tmp_path / "cfg.json"
        p.write_text("[1, 2]\n")
        rc = main(["converge", "--config", str(p)])
        assert rc == 2


class TestVerifyWeights:
    def test_runs_clean_and_persists(self, tmp_path):
        out = str(tmp_path / "res")
        rc = main(["verify-weights", "--seed", "3", "--out", out])
        assert rc == 0
        files = sorted(os.listdir(out))
        assert files == ["verify_weights.json", "verify_weights_residuals.csv"]
        rep = json.load(open(os.path.join(out, "verify_weights.json")))
        assert rep["passed"] is True
        assert rep["summary"]["all_below_1e-12"] is True

    def test_cli_seed_overrides_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 1}))
        out = str(tmp_path / "res")
        rc = main(["verify-weights", "--config", str(cfg), "--seed", "42",
                   "--out", out])
        assert rc == 0
        rep = json.load(open(os.path.join(out, "verify_weights.json")))
        assert rep["config"]["seed"] == 42
