import os

import numpy as np
import pytest

from swe_ocp import cli
from swe_ocp.config import parse_config
from swe_ocp.geometry import ConfigurationError

TINY_CONFIG = """\
[mesh]
nx = 5
ny = 5

[time]
t_final = 0.4
nt = 4

[pod]
n_max = 4
n = 2
seed = 7
"""


def _write(tmp_path, text, name="config.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_parse_config_defaults(tmp_path):
    cfg = parse_config(None)
    assert cfg.mesh.nx == cfg.mesh.ny == 15
    assert (cfg.t_final, cfg.nt, cfg.alpha) == (0.8, 8, 0.1)
    assert cfg.box == ((1e-5, 1.0), (0.01, 0.5), (0.1, 1.0))
    assert (cfg.n_max, cfg.n) == (100, 30)
    # an empty file is the same as no file
    empty = parse_config(_write(tmp_path, ""))
    assert empty.box == cfg.box and empty.nt == cfg.nt


def test_parse_config_overrides(tmp_path):
    cfg = parse_config(_write(tmp_path, TINY_CONFIG))
    assert cfg.mesh.nx == 5 and cfg.nt == 4
    assert abs(cfg.t_final / cfg.nt - 0.1) < 1e-15
    assert (cfg.n_max, cfg.n, cfg.seed) == (4, 2, 7)


def test_parse_config_rejections(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config(_write(tmp_path, "[nosuch]\nx = 1\n"))
    with pytest.raises(ConfigurationError):
        parse_config(_write(tmp_path, "[mesh]\nspacing = 2\n"))
    with pytest.raises(ConfigurationError):
        parse_config(_write(tmp_path, "[time]\nnt = four\n"))
    with pytest.raises(ConfigurationError):
        parse_config(_write(tmp_path, "[physics]\nalpha = 0.0\n"))
    with pytest.raises(ConfigurationError):
        parse_config(_write(tmp_path, "[pod]\nn = 40\nn_max = 10\n"))
    with pytest.raises(ConfigurationError):
        parse_config(str(tmp_path / "missing.ini"))


def test_workdir_resolution(tmp_path, monkeypatch):
    cfg = parse_config(None)
    monkeypatch.delenv("SWE_OCP_WORKDIR", raising=False)
    assert cfg.resolve_workdir() == "."
    monkeypatch.setenv("SWE_OCP_WORKDIR", str(tmp_path))
    assert cfg.resolve_workdir() == str(tmp_path)
    cfg2 = parse_config(_write(tmp_path, f"[paths]\nworkdir = {tmp_path}/wd\n"))
    assert cfg2.resolve_workdir() == f"{tmp_path}/wd"  # config beats env


def test_online_before_offline_fails(tmp_path):
    config = _write(tmp_path, TINY_CONFIG
                    + f"\n[paths]\nworkdir = {tmp_path}/wd\n")
    rc = cli.main(["--config", config, "online", "--mu", "0.1,0.4,0.5"])
    assert rc != 0


def test_bad_mu_fails(tmp_path):
    config = _write(tmp_path, TINY_CONFIG
                    + f"\n[paths]\nworkdir = {tmp_path}/wd\n")
    assert cli.main(["--config", config, "truth", "--mu", "0.1,0.4"]) != 0
    assert cli.main(["--config", config, "truth", "--mu", "0.1,0.4,abc"]) != 0
    # outside the parameter box
    assert cli.main(["--config", config, "truth", "--mu", "2.0,0.4,0.5"]) != 0


def test_validate_exits_zero(tmp_path, capsys):
    assert cli.main(["validate"]) == 0
    out = capsys.readouterr().out
    assert "all checks passed" in out


@pytest.mark.slow
def test_pipeline_round_trip_and_determinism(tmp_path, capsys):
    """offline -> online -> bench on a tiny config, run twice: identical CSVs."""
    reports = []
    for run in ("wd1", "wd2"):
        wd = tmp_path / run
        config = _write(tmp_path, TINY_CONFIG + f"\n[paths]\nworkdir = {wd}\n",
                        name=f"{run}.ini")
        assert cli.main(["--config", config, "offline"]) == 0
        manifest = (wd / "rom" / "manifest.txt").read_text()
        assert "n = 2" in manifest and "desired = fixed-base" in manifest
        assert "failures = 0" in manifest
        for artifact in ("snapshots/snapshots.bin", "basis/basis.bin",
                         "rom/rom.bin", "reports/eigs.csv"):
            assert (wd / artifact).exists(), artifact

        assert cli.main(["--config", config, "online", "--mu", "0.2,0.3,0.5",
                         "--N", "2"]) == 0
        out = capsys.readouterr().out
        assert "online solve (n = 2) converged" in out
        assert (wd / "reports" / "online_t1.csv").exists()

        assert cli.main(["--config", config, "bench", "--N", "1,2",
                         "--test-size", "2"]) == 0
        capsys.readouterr()
        reports.append((wd / "reports" / "errors.csv").read_bytes())
    assert reports[0] == reports[1]  # bit-identical across reruns


@pytest.mark.slow
def test_truth_subcommand_dump(tmp_path, capsys):
    wd = tmp_path / "wd"
    config = _write(tmp_path, TINY_CONFIG + f"\n[paths]\nworkdir = {wd}\n")
    out_prefix = str(tmp_path / "sol")
    assert cli.main(["--config", config, "truth", "--mu", "0.1,0.4,0.8",
                     "--out", out_prefix]) == 0
    out = capsys.readouterr().out
    assert "truth solve converged" in out
    files = sorted(p for p in os.listdir(tmp_path) if p.startswith("sol_t"))
    assert len(files) == 4
    header = open(tmp_path / files[0]).readline().strip()
    assert header == "x,y,vx,vy,h,ux,uy,chix,chiy,lambda"
    # regenerate mode solves a different tracking problem
    assert cli.main(["--config", config, "truth", "--mu", "0.1,0.4,0.8",
                     "--out", str(tmp_path / "re"), "--desired",
                     "regenerate"]) == 0
    capsys.readouterr()
    a = np.loadtxt(tmp_path / "sol_t4.csv", delimiter=",", skiprows=1)
    b = np.loadtxt(tmp_path / "re_t4.csv", delimiter=",", skiprows=1)
    assert np.max(np.abs(a - b)) > 1e-8
