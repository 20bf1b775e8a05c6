import json
import subprocess
import sys

import pytest

from fcir import cli
from fcir import sde as sde_mod
from fcir.cli import main, run, sha256, verify_manifest
from fcir.config import COMMANDS, ConfigError, load_preset, parse_config, preset_names
from fcir.csvio import read_rows

SMALL_ENSEMBLE = """
command = "ensemble"
hurst = 0.6
sigma = 0.4
z0 = 1.0
horizon = 1.0
dt = 0.01
n_paths = 20
seed = 5

[drift]
name = "illustration1"
theta = 1.0
c = 2.0
"""

SMALL = {
    "fbm": 'command = "fbm"\nhurst = 0.3\nhorizon = 1.0\ndt = 0.125\nseed = 2\n',
    "simulate": (
        'command = "simulate"\nhurst = 0.7\nsigma = 0.4\nhorizon = 1.0\ndt = 0.01\n'
        'solver = "picard"\n[drift]\nname = "mishura"\nmu = 2.0\ntheta = 1.0\n'
    ),
    "ensemble": SMALL_ENSEMBLE,
    "hitprob": (
        'command = "hitprob"\nhurst = [0.3, 0.7]\nsigma = 2.0\nz0 = 0.5\nhorizon = 1.0\n'
        'dt = 0.01\nn_paths = 30\n[drift]\nname = "mishura"\nmu = 1.0\ntheta = 1.0\n'
    ),
    "sweep": (
        'command = "sweep"\nhurst = 0.3\nsigma = 2.0\nhorizon = 1.0\ndt = 0.01\n'
        "n_paths = 50\nks = [1.0, 2.0, 5.0]\n"
    ),
    "verify": (
        'command = "verify"\nhurst = [0.3, 0.7]\nsigma = 0.4\nhorizon = 1.0\n'
        'dt = [0.01, 0.005]\nn_paths = 4\n[drift]\nname = "mishura"\nmu = 2.0\ntheta = 1.0\n'
    ),
    "conditions": (
        'command = "conditions"\nhorizon = 10.0\nsigma = 0.4\nt_res = 32\nx_res = 32\n'
        '[drift]\nname = "illustration2"\ntheta = 1.0\nc = 0.02\n'
    ),
}

OUTPUTS = {
    "fbm": ["fbm.csv"],
    "simulate": ["fbm.csv", "path.csv"],
    "ensemble": ["stats.csv", "hitprob.csv"],
    "hitprob": ["hitprob.csv"],
    "sweep": ["hitprob.csv"],
    "verify": ["residuals.csv", "study.csv"],
    "conditions": ["conditions.json"],
}


class TestParse:
    def test_figure_4_1_preset(self):
        cfg = load_preset("figure-4.1")
        assert cfg.command == "ensemble"
        assert (cfg["hurst"], cfg["sigma"], cfg["z0"], cfg["horizon"], cfg["dt"]) == (
            0.6,
            0.4,
            1.0,
            10.0,
            0.001,
        )
        assert cfg["n_paths"] == 1000
        assert cfg.drift == {"name": "illustration1", "theta": 1.0, "c": 2.0, "sigma": 0.4}
        spec = cfg.drift_spec()
        assert spec.name == "illustration1" and spec(0.0, 1.0) == pytest.approx(1.0)

    def test_presets_shipped(self):
        names = preset_names()
        for name in (
            "figure-4.1",
            "figure-4.2",
            "figure-4.6",
            "figure-4.7",
            "figure-4.8",
            "figure-4.9",
            "level-sequence-sweep",
            "stratonovich-study",
        ):
            assert name in names
        for name in names:
            assert load_preset(name).command in COMMANDS

    @pytest.mark.parametrize(
        "name,h,c",
        [("figure-4.2", 0.8, 2.0), ("figure-4.6", 0.6, 0.02), ("figure-4.7", 0.8, 0.02)],
    )
    def test_illustration_presets(self, name, h, c):
        cfg = load_preset(name)
        assert cfg["hurst"] == h and cfg.drift["c"] == c and cfg["sigma"] == 0.4

    def test_hurst_out_of_range(self):
        with pytest.raises(ConfigError) as info:
            parse_config(SMALL_ENSEMBLE.replace("hurst = 0.6", "hurst = 1.2"))
        assert info.value.key == "hurst"
        assert "hurst" in str(info.value) and "(0, 1)" in str(info.value)

    def test_missing_drift_name(self):
        with pytest.raises(ConfigError) as info:
            parse_config(SMALL_ENSEMBLE.replace('name = "illustration1"\n', ""))
        assert info.value.key == "drift.name"

    def test_syntax_error_line(self):
        text = SMALL_ENSEMBLE.replace("n_paths = 20", "n_paths = = 20")
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        assert info.value.line == 8  # the document opens with a blank line
        assert "line 8" in str(info.value)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key") as info:
            parse_config(SMALL_ENSEMBLE + "\n[extra]\nfoo = 1\n")
        assert info.value.key == "extra.foo"

    def test_key_not_valid_for_command(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config(SMALL["fbm"] + "sigma = 0.4\n")

    @pytest.mark.parametrize(
        "old,new,key",
        [
            ("n_paths = 20", "n_paths = 0", "n_paths"),
            ("n_paths = 20", "n_paths = 2.5", "n_paths"),
            ("dt = 0.01", 'dt = "fast"', "dt"),
            ("sigma = 0.4", "sigma = -0.4", "sigma"),
            ("seed = 5", "seed = -5", "seed"),
            ('command = "ensemble"', 'command = "plot"', "command"),
            ("c = 2.0", "c = -2.0", "drift"),
            ('name = "illustration1"', 'name = "heston"', "drift.name"),
        ],
    )
    def test_schema_violations(self, old, new, key):
        with pytest.raises(ConfigError) as info:
            parse_config(SMALL_ENSEMBLE.replace(old, new))
        assert info.value.key == key

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="sigma is required"):
            parse_config(SMALL_ENSEMBLE.replace("sigma = 0.4\n", ""))

    def test_defaults(self):
        cfg = parse_config(SMALL["fbm"])
        assert cfg["fbm_method"] == "circulant" and cfg["output"] is None

    def test_drift_sigma_must_match(self):
        with pytest.raises(ConfigError, match="drift.sigma"):
            parse_config(SMALL_ENSEMBLE + "sigma = 0.5\n")

    def test_verify_dts_decreasing(self):
        with pytest.raises(ConfigError, match="decreasing"):
            parse_config(SMALL["verify"].replace("[0.01, 0.005]", "[0.005, 0.01]"))

    def test_sweep_ks_increasing(self):
        with pytest.raises(ConfigError, match="increasing"):
            parse_config(SMALL["sweep"].replace("[1.0, 2.0, 5.0]", "[2.0, 1.0]"))

    def test_sweep_takes_no_drift(self):
        with pytest.raises(ConfigError, match="no drift"):
            parse_config(SMALL["sweep"] + '[drift]\nname = "mishura"\n')

    def test_picard_level_below_z0(self):
        with pytest.raises(ConfigError, match="level"):
            parse_config(SMALL["simulate"].replace('solver = "picard"', "level = 1.5"))

    def test_nested_sections_rejected(self):
        with pytest.raises(ConfigError, match="one level"):
            parse_config(SMALL_ENSEMBLE + "[drift.inner]\nx = 1\n")

    def test_seed_override(self):
        cfg = parse_config(SMALL_ENSEMBLE).with_seed(99)
        assert cfg["seed"] == 99
        with pytest.raises(ConfigError):
            cfg.with_seed(-1)


@pytest.mark.parametrize("command", sorted(SMALL))
def test_every_command_runs(command, tmp_path):
    manifest = run(parse_config(SMALL[command]), tmp_path, workers=1)
    assert sorted(manifest.outputs) == sorted(OUTPUTS[command])
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["command"] == command and doc["version"] == "0.1.0"
    assert doc["duration_s"] >= 0
    for name, digest in doc["outputs"].items():
        assert sha256(tmp_path / name) == digest
    assert sorted(p.name for p in tmp_path.iterdir()) == sorted(
        OUTPUTS[command] + ["manifest.json"]
    )
    assert verify_manifest(tmp_path / "manifest.json") == []


class TestOutputs:
    def test_ensemble_no_hits(self, tmp_path):
        run(parse_config(SMALL_ENSEMBLE), tmp_path, workers=1)
        header, rows = read_rows(tmp_path / "hitprob.csv")
        assert header == ["param", "n_paths", "hits", "p_hat", "ci_low", "ci_high"]
        assert rows[0][1:4] == ["20", "0", "0"]
        header, rows = read_rows(tmp_path / "stats.csv")
        assert header[0] == "t" and len(rows) == 101

    def test_sweep_non_increasing(self, tmp_path):
        run(parse_config(SMALL["sweep"]), tmp_path, workers=1)
        _, rows = read_rows(tmp_path / "hitprob.csv")
        assert [float(r[0]) for r in rows] == [1.0, 2.0, 5.0]
        p = [float(r[3]) for r in rows]
        assert p[0] > 0 and all(b <= a for a, b in zip(p, p[1:]))

    def test_verify_tables(self, tmp_path):
        run(parse_config(SMALL["verify"]), tmp_path, workers=1)
        _, rows = read_rows(tmp_path / "residuals.csv")
        assert len(rows) == 2 * 2 * 4
        _, study = read_rows(tmp_path / "study.csv")
        assert [(r[0], r[1], r[3]) for r in study] == [
            ("0.29999999999999999", "0.01", "true"),
            ("0.29999999999999999", "0.0050000000000000001", "true"),
            ("0.69999999999999996", "0.01", "false"),
            ("0.69999999999999996", "0.0050000000000000001", "false"),
        ]

    def test_conditions_json(self, tmp_path):
        run(parse_config(SMALL["conditions"]), tmp_path, workers=1)
        doc = json.loads((tmp_path / "conditions.json").read_text())
        assert doc["d1_ok"] and doc["d2_ok"] and doc["d1_violations"] == []
        assert doc["audited_region"] == {"horizon": 10.0, "t_res": 32, "x_res": 32}

    def test_same_config_twice_identical(self, tmp_path):
        cfg = parse_config(SMALL["hitprob"])
        a = run(cfg, tmp_path / "a", workers=1)
        b = run(cfg, tmp_path / "b", workers=2)
        assert a.outputs == b.outputs
        for name in a.outputs:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_partial_outputs_removed(self, tmp_path, monkeypatch):
        def broken(path, dest):
            raise OSError("disk full")

        monkeypatch.setattr(sde_mod, "write_path_csv", broken)
        out = tmp_path / "out"
        with pytest.raises(OSError, match="disk full"):
            run(parse_config(SMALL["simulate"]), out, workers=1)
        assert list(out.iterdir()) == []

    def test_failure_keeps_previous_outputs(self, tmp_path, monkeypatch):
        out = tmp_path / "out"
        run(parse_config(SMALL["fbm"]), out)
        before = {p.name: p.read_bytes() for p in out.iterdir()}

        def invalid(path, header):
            raise RuntimeError("validation failed")

        monkeypatch.setattr(cli, "_validate_output", invalid)
        with pytest.raises(RuntimeError):
            run(parse_config(SMALL["fbm"]).with_seed(77), out)
        assert {p.name: p.read_bytes() for p in out.iterdir()} == before

    def test_tampering_detected(self, tmp_path):
        run(parse_config(SMALL["fbm"]), tmp_path)
        with open(tmp_path / "fbm.csv", "a") as fh:
            fh.write("9,9\n")
        assert verify_manifest(tmp_path / "manifest.json") == ["fbm.csv"]
        (tmp_path / "fbm.csv").unlink()
        assert verify_manifest(tmp_path / "manifest.json") == ["fbm.csv"]


class TestMain:
    def test_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "exp.toml"
        cfg.write_text(SMALL_ENSEMBLE)
        before = cfg.read_bytes()
        assert main(["--config", str(cfg), "--out", str(tmp_path / "o"), "--workers", "1"]) == 0
        assert cfg.read_bytes() == before
        assert "sha256=" in capsys.readouterr().out
        assert main(["--verify-manifest", str(tmp_path / "o" / "manifest.json")]) == 0

    def test_seed_flag(self, tmp_path):
        cfg = tmp_path / "exp.toml"
        cfg.write_text(SMALL["fbm"])
        assert main(["--config", str(cfg), "--out", str(tmp_path), "--seed", "123"]) == 0
        assert json.loads((tmp_path / "manifest.json").read_text())["config"]["seed"] == 123

    def test_default_output_directory(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cfg = tmp_path / "mine.toml"
        cfg.write_text(SMALL["fbm"])
        assert main(["--config", str(cfg)]) == 0
        assert (tmp_path / "out" / "mine" / "fbm.csv").is_file()

    def test_config_error_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text(SMALL_ENSEMBLE.replace("hurst = 0.6", "hurst = 1.2"))
        assert main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "hurst" in capsys.readouterr().err
        assert not (tmp_path / "o").exists()

    def test_missing_file_exit_2(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.toml")]) == 2

    def test_unknown_preset_exit_2(self, capsys):
        assert main(["--preset", "figure-9.9"]) == 2
        assert "available" in capsys.readouterr().err

    def test_run_failure_exit_1(self, tmp_path, capsys):
        cfg = tmp_path / "p.toml"
        cfg.write_text(SMALL["simulate"].replace("[drift]", "tol = 1e-15\nmax_iter = 1\n[drift]"))
        assert main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
        assert "PicardConvergenceError" in capsys.readouterr().err
        assert list((tmp_path / "o").iterdir()) == []

    def test_verify_manifest_mismatch_exit_1(self, tmp_path):
        run(parse_config(SMALL["fbm"]), tmp_path)
        (tmp_path / "fbm.csv").write_text("t,w\n")
        assert main(["--verify-manifest", str(tmp_path / "manifest.json")]) == 1

    def test_list_presets(self, capsys):
        assert main(["--list-presets"]) == 0
        assert "figure-4.1" in capsys.readouterr().out.split()

    def test_source_required(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2

    def test_console_module(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "fcir", "--list-presets"], capture_output=True, text=True
        )
        assert proc.returncode == 0 and "level-sequence-sweep" in proc.stdout
