import subprocess
import sys

import numpy as np
import pytest

from diffusion_ts import cli
from diffusion_ts.cli import main
from diffusion_ts.envs import write_samples
from diffusion_ts.model import linear_prior, load_prior, save_prior

CONFIG = """
[env]
kind = "linear"
d = 2
L = 1
K = 3

[agent]
names = ["dts", "lints"]

[run]
n = 15
runs = 2
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(CONFIG)
    return path


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert main(["bounds", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_help_exits_zero():
    assert main(["--help"]) == 0


def test_run_writes_csvs(tmp_path, config, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(config), "--out", str(out), "--jobs", "1"]) == 0
    assert {p.name for p in out.iterdir()} >= {"dts.csv", "dts_aggregate.csv", "lints.csv",
                                                "lints_aggregate.csv", "config.json"}
    assert "dts: final cumulative regret" in capsys.readouterr().out


def test_run_is_byte_identical(tmp_path, config):
    for name in ("a", "b"):
        assert main(["run", "--config", str(config), "--out", str(tmp_path / name), "--seed", "3",
                     "--jobs", "1"]) == 0
    for f in ("dts.csv", "lints.csv", "dts_aggregate.csv", "lints_aggregate.csv", "config.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_run_seed_changes_output(tmp_path, config):
    main(["run", "--config", str(config), "--out", str(tmp_path / "a"), "--seed", "1", "--jobs", "1"])
    main(["run", "--config", str(config), "--out", str(tmp_path / "b"), "--seed", "2", "--jobs", "1"])
    assert (tmp_path / "a" / "dts.csv").read_bytes() != (tmp_path / "b" / "dts.csv").read_bytes()


def test_run_set_override(tmp_path, config):
    out = tmp_path / "o"
    assert main(["run", "--config", str(config), "--out", str(out), "--set", "run.n=4", "--jobs", "1"]) == 0
    assert len((out / "dts.csv").read_text().splitlines()) == 1 + 4 * 2


def test_missing_config_exits_one(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 1
    assert "not found" in capsys.readouterr().err


def test_invalid_config_value_exits_one(tmp_path, config):
    assert main(["run", "--config", str(config), "--out", str(tmp_path), "--set", "run.n=0"]) == 1
    assert main(["run", "--config", str(config), "--out", str(tmp_path), "--jobs", "0"]) == 1


def test_sweep_output(tmp_path, config, capsys):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--config", str(config), "--var", "K", "--values", "2,4", "--out", str(out),
                 "--jobs", "1"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "value,regret_lints,regret_dts,ratio" and len(lines) == 3
    assert capsys.readouterr().out.splitlines()[0] == "K,regret_lints,regret_dts,ratio"


def test_bounds_command(capsys):
    assert main(["bounds", "--n", "100", "--d", "1", "--K", "1", "--L", "1", "--sigmas", "1,1",
                 "--delta", "0.01"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("dts: 90.30009785")
    assert "R_act = 6.658211483" in out


def test_bounds_all_variants(capsys):
    assert main(["bounds", "--n", "5000", "--d", "5", "--K", "100", "--L", "2", "--sigmas", "1,1,1",
                 "--variant", "all", "--active", "5,2"]) == 0
    out = capsys.readouterr().out
    for v in ("dts:", "dts_sparse:", "lints:", "hierts1:", "hierts2:"):
        assert v in out


def test_bounds_invalid_params_exit_one():
    assert main(["bounds", "--n", "100", "--d", "1", "--K", "1", "--L", "2", "--sigmas", "1,1"]) == 1
    assert main(["bounds", "--n", "100", "--d", "1", "--K", "1", "--L", "1", "--sigmas", "a,b"]) == 1


def test_pretrain_and_inspect(tmp_path, capsys):
    samples = tmp_path / "s.csv"
    write_samples(0.1 * np.random.default_rng(0).normal(size=(64, 2)), samples)
    prior_path = tmp_path / "prior.txt"
    args = ["pretrain", "--samples", str(samples), "--out", str(prior_path), "--L", "5", "--epochs", "20",
            "--hidden", "8"]
    assert main(args) == 0
    first = prior_path.read_bytes()
    assert (tmp_path / "prior.txt.loss.csv").read_text().startswith("epoch,loss\n")
    assert main(args) == 0
    assert prior_path.read_bytes() == first
    assert load_prior(prior_path).L == 5
    capsys.readouterr()
    draws = tmp_path / "draws.csv"
    assert main(["inspect-prior", "--prior", str(prior_path), "--samples", "10", "--out", str(draws)]) == 0
    assert "levels L = 5, dimension d = 2" in capsys.readouterr().out
    assert len(draws.read_text().splitlines()) == 11


def test_pretrain_bad_inputs(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    assert main(["pretrain", "--samples", str(empty), "--out", str(tmp_path / "p")]) == 1
    assert main(["pretrain", "--samples", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "p")]) == 1
    good = tmp_path / "g.csv"
    write_samples(np.zeros((3, 2)), good)
    assert main(["pretrain", "--samples", str(good), "--out", str(tmp_path / "p"), "--lr", "0"]) == 1


def test_quality_with_prior_file(tmp_path, capsys):
    path = tmp_path / "gauss.txt"
    save_prior(linear_prior([np.eye(2)], [0.5], 0.5), path)
    assert main(["quality", "--prior", str(path), "--n", "50"]) == 0
    out = capsys.readouterr().out
    assert "moments = analytic" in out
    value = float(out.splitlines()[0].split("=")[1])
    assert value <= 1e-6
    assert main(["quality", "--prior", str(path), "--d", "3"]) == 1


@pytest.mark.parametrize("exc, code", [(np.linalg.LinAlgError("not PD"), 2), (RuntimeError("boom"), 2),
                                       (ValueError("bad"), 1)])
def test_error_exit_codes(monkeypatch, capsys, exc, code):
    def fail(args):
        raise exc

    monkeypatch.setitem(cli.COMMANDS, "bounds", fail)
    assert main(["bounds", "--n", "1", "--d", "1", "--K", "1", "--L", "1", "--sigmas", "1,1"]) == code
    assert capsys.readouterr().err.startswith("error:")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "diffusion_ts.cli", "bounds", "--n", "10", "--d", "1",
                           "--K", "1", "--L", "1", "--sigmas", "1,1"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("dts:")
