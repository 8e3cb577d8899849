import json
from pathlib import Path

import pytest

from corrmap.cli import main
from corrmap.experiment import ConfigError, load_config, run_experiment

TINY_CFG = """\
[experiment]
name = tiny
seed = 11

[models]
full = mm-full
reduced = mm-reduced

[design]
theta_m = E0
theta_m_lower = 0
theta_m_upper = 100
n_theta_m = 8
mode = grid

[statistic]
kind = mean_at
observable = P
t = 1.5

[fit]
schemes = pooled

[report]
grid_points = 50
epsilon_points = 20
"""


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CFG)
    return path


class TestConfigParsing:
    def test_loads(self, tiny_config):
        cfg = load_config(tiny_config)
        assert cfg.name == "tiny"
        assert cfg.design.n_theta_m == 8
        assert cfg.scheme_names == ("pooled",)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.cfg")

    def test_malformed_ini(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("not an ini file at all\n")
        with pytest.raises(ConfigError, match="parse error"):
            load_config(path)

    def test_missing_required_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[experiment]\nname = x\n")
        with pytest.raises(ConfigError, match="models"):
            load_config(path)

    def test_bad_number(self, tiny_config, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text(TINY_CFG.replace("n_theta_m = 8", "n_theta_m = lots"))
        with pytest.raises(ConfigError, match="invalid"):
            load_config(path)

    def test_unknown_scheme(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text(TINY_CFG.replace("schemes = pooled",
                                         "schemes = magic"))
        with pytest.raises(ConfigError, match="magic"):
            load_config(path)

    def test_seed_override(self, tiny_config):
        assert load_config(tiny_config, seed_override=99).seed == 99

    def test_shipped_configs_parse(self):
        for name in ("mm-fig3", "ptn-fig5", "ptn-fig5-desk", "ptn-fig6",
                     "ptn-fig6-desk"):
            cfg = load_config(Path("configs") / f"{name}.cfg")
            assert cfg.name == name


class TestRunExperiment:
    def test_outputs_written(self, tiny_config, tmp_path):
        out = run_experiment(tiny_config, out_dir=str(tmp_path / "out"))
        names = {p.name for p in out.iterdir()}
        assert names == {"training.csv", "map-pooled.csv",
                         "figure-pooled.svg", "epsilon.json", "stats.json"}
        training = (out / "training.csv").read_text().splitlines()
        assert training[0].startswith("# corrmap experiment=tiny")
        assert "seed=11" in training[0]
        assert training[1] == "E0,correction"
        assert len(training) == 2 + 8
        map_lines = (out / "map-pooled.csv").read_text().splitlines()
        assert map_lines[1] == "E0,mean,sd,lower,upper"
        assert len(map_lines) == 2 + 50
        report = json.loads((out / "epsilon.json").read_text())
        assert report["schemes"]["pooled"]["epsilon"] >= 0
        stats = json.loads((out / "stats.json").read_text())
        assert len(stats["reduced_model"]) == 8

    def test_rerun_is_byte_identical(self, tiny_config, tmp_path):
        a = run_experiment(tiny_config, out_dir=str(tmp_path / "a"))
        b = run_experiment(tiny_config, out_dir=str(tmp_path / "b"))
        for name in ("training.csv", "map-pooled.csv", "epsilon.json",
                     "stats.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_seed_changes_outputs(self, tiny_config, tmp_path):
        # deterministic design grid, but epsilon sampling moves with the seed
        a = run_experiment(tiny_config, out_dir=str(tmp_path / "a"))
        b = run_experiment(tiny_config, seed=12, out_dir=str(tmp_path / "b"))
        ja = json.loads((a / "epsilon.json").read_text())
        jb = json.loads((b / "epsilon.json").read_text())
        assert ja["seed"] != jb["seed"]


class TestCli:
    def test_run_exit_zero(self, tiny_config, tmp_path, capsys):
        code = main(["run", str(tiny_config),
                     "--out-dir", str(tmp_path / "out")])
        assert code == 0
        assert "wrote" in capsys.readouterr().out

    def test_missing_config_exit_two_nothing_written(self, tmp_path, capsys):
        out_dir = tmp_path / "out"
        code = main(["run", str(tmp_path / "missing.cfg"),
                     "--out-dir", str(out_dir)])
        assert code == 2
        assert "config error" in capsys.readouterr().err
        assert not out_dir.exists()

    def test_malformed_config_exit_two(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("garbage without a section\n")
        assert main(["run", str(path)]) == 2

    def test_list_builtins(self, capsys):
        assert main(["list-builtins"]) == 0
        out = capsys.readouterr().out
        assert "mm-full" in out
        assert "ptn-reduced" in out
        # documentation contract: every entry cites its reproduction figure
        for line in out.splitlines():
            if line.startswith("  "):
                assert "fig" in line

    def test_threads_flag_matches_serial(self, tmp_path):
        cfg = tmp_path / "ssa.cfg"
        cfg.write_text("""\
[experiment]
name = ssa-tiny
seed = 5

[models]
full = ptn-full
reduced = ptn-reduced
initial = G_in:1 G_act:0

[design]
theta_m = beta
theta_m_lower = 10
theta_m_upper = 100
n_theta_m = 3
theta_f = alpha
theta_f_lower = 1
theta_f_upper = 10
k = 2

[statistic]
kind = eventually_above
observable = P
threshold = 50
window = 0 30
n_runs = 20

[fit]
schemes = pointwise

[report]
grid_points = 20
epsilon_points = 20
""")
        a = run_experiment(cfg, out_dir=str(tmp_path / "a"), threads=1)
        b = run_experiment(cfg, out_dir=str(tmp_path / "b"), threads=2)
        assert (a / "training.csv").read_bytes() == \
            (b / "training.csv").read_bytes()
