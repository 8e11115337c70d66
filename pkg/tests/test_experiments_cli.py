from __future__ import annotations

import numpy as np
import pytest

from fracquery.cli import EXIT_CONFIG, EXIT_PASS, main
from fracquery.experiments import (
    EXPERIMENTS,
    ConfigError,
    config_from_mapping,
    fit_slope,
    load_config,
    render_csv,
    run_experiment,
)


class TestFitSlope:
    def test_identity(self):
        slope, intercept, r2 = fit_slope([1, 2, 4, 8], [1, 2, 4, 8])
        assert abs(slope - 1) <= 1e-9 and abs(intercept) <= 1e-9 and abs(r2 - 1) <= 1e-9

    def test_square(self):
        xs = [1.0, 3.0, 9.0, 27.0]
        assert abs(fit_slope(xs, [x * x for x in xs])[0] - 2) <= 1e-9

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(1)
        xs = np.cumsum(rng.uniform(0.5, 2.0, 5))
        ys = rng.uniform(0.1, 3.0, 5)
        lx, ly = np.log(xs), np.log(ys)
        design = np.column_stack([lx, np.ones_like(lx)])
        slope, intercept = np.linalg.solve(design.T @ design, design.T @ ly)
        got = fit_slope(xs, ys)
        assert abs(got[0] - slope) <= 1e-9 and abs(got[1] - intercept) <= 1e-9

    @pytest.mark.parametrize("xs, ys", [([1, 2], [1, 2]), ([1, 2, 3], [1, 0, 2]), ([0, 1, 2], [1, 1, 1]),
                                        ([1, 3, 2], [1, 2, 3])])
    def test_rejects(self, xs, ys):
        with pytest.raises(ValueError):
            fit_slope(xs, ys)


class TestConfig:
    def test_defaults(self):
        cfg = config_from_mapping({"experiment": "encoding"})
        assert cfg.seed == 0 and cfg.trial_count() == EXPERIMENTS["encoding"].trials

    @pytest.mark.parametrize("data", [
        {"experiment": "encoding", "colour": 1},
        {"seed": 3},
        {"experiment": "nope"},
        {"experiment": "encoding", "params": {"z": 1}},
        {"experiment": "encoding", "options": {"z": 1}},
        {"experiment": "encoding", "trials": 0},
        {"experiment": "encoding", "params": 3},
    ])
    def test_rejects(self, data):
        with pytest.raises(ConfigError):
            config_from_mapping(data)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.toml")

    def test_bad_toml(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("experiment = ")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_shipped_configs_load(self):
        from pathlib import Path

        root = Path(__file__).resolve().parent.parent / "configs"
        names = {load_config(p).experiment for p in root.glob("*.toml")}
        assert names == set(EXPERIMENTS)


class TestCsv:
    @pytest.mark.parametrize("name", ["encoding", "b-encoding"])
    def test_same_seed_same_bytes(self, name):
        cfg = config_from_mapping({"experiment": name, "seed": 7})
        first = render_csv(cfg, run_experiment(cfg))
        second = render_csv(cfg, run_experiment(cfg))
        assert first == second
        assert first.startswith("# fracquery")

    def test_timing_only_on_request(self):
        cfg = config_from_mapping({"experiment": "encoding"})
        res = run_experiment(cfg)
        assert "runtime" not in render_csv(cfg, res)
        assert "runtime" in render_csv(cfg, res, include_timing=True)


class TestCli:
    def test_list(self, capsys):
        assert main(["list-experiments"]) == EXIT_PASS
        out = capsys.readouterr().out
        assert all(name in out for name in EXPERIMENTS)

    def test_schema(self, capsys):
        assert main(["print-schema"]) == EXIT_PASS
        assert "[params] keys" in capsys.readouterr().out

    def test_bad_config_exit_code(self, tmp_path, capsys):
        p = tmp_path / "c.toml"
        p.write_text('experiment = "nope"\n')
        assert main(["run", str(p)]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_bad_trials_exit_code(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('experiment = "encoding"\n')
        assert main(["run", str(p), "--trials", "0"]) == EXIT_CONFIG

    def test_run_writes_csv(self, tmp_path, capsys):
        p = tmp_path / "c.toml"
        p.write_text('experiment = "encoding"\nseed = 3\n')
        out = tmp_path / "nested" / "out.csv"
        assert main(["run", str(p), "--out", str(out), "--seed", "5"]) == EXIT_PASS
        text = out.read_text()
        assert text.startswith("#") and "seed 5" in text
        assert "PASS encoding" in capsys.readouterr().err

    def test_run_to_stdout(self, tmp_path, capsys):
        p = tmp_path / "c.toml"
        p.write_text('experiment = "b-encoding"\n')
        assert main(["run", str(p), "--out", "-"]) == EXIT_PASS
        assert "# experiment b-encoding" in capsys.readouterr().out
