import subprocess
import sys

import pytest

from ebosal import cli
from ebosal.cli import main

from test_config import TINY


def sets(*extra):
    args = []
    for o in TINY + list(extra):
        args += ["--set", o]
    return args


def test_run_writes_expected_files(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--out", str(out), "--method", "ebosal", "--method", "random"] + sets()) == 0
    files = sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file())
    assert files == sorted([
        "runs/ebosal_seed0.csv", "runs/ebosal_seed1.csv", "runs/random_seed0.csv", "runs/random_seed1.csv",
        "aggregate.csv", "accuracy.dat", "precision.dat", "auroc.dat", "config.yaml", "manifest.txt",
    ])
    assert (out / "manifest.txt").read_text().splitlines() == sorted(files)
    lines = capsys.readouterr().out.splitlines()
    assert [l.split()[0] for l in lines] == ["ebosal", "random"]
    assert "accuracy" in lines[0] and "(n=2)" in lines[0]


def test_refuses_non_empty_output_without_force(tmp_path, capsys):
    out = tmp_path / "run"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert main(["run", "--out", str(out)] + sets()) == 2
    assert "not empty" in capsys.readouterr().err
    assert main(["run", "--out", str(out), "--force", "--method", "random"] + sets()) == 0
    assert (out / "keep.txt").exists() and not (out / ".partial").exists()


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["run", "--out", str(tmp_path / "o"), "--set", "al.bugdet=3"]) == 2
    assert "al.bugdet" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "none.yaml")]) == 2


def test_failure_leaves_partial_marker(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise RuntimeError("diverged")

    monkeypatch.setattr(cli, "run_experiment", boom)
    out = tmp_path / "run"
    assert main(["run", "--out", str(out)] + sets()) == 1
    assert (out / ".partial").exists()
    assert "diverged" in capsys.readouterr().err


def test_ablate_table(tmp_path, capsys):
    out = tmp_path / "abl"
    assert main(["ablate", "--out", str(out)] + sets("seeds=[0]")) == 0
    table = (out / "ablation.txt").read_text().splitlines()
    assert table[0].split()[:3] == ["method", "cycle", "accuracy_mean"]
    assert [l.split()[0] for l in table[1:]] == sorted(cli.ABLATION_METHODS)
    assert capsys.readouterr().out.splitlines() == table


def test_sweep_outputs(tmp_path):
    out = tmp_path / "sw"
    extra = ["seeds=[0]", "sweep.delta_k=[-4, -1]", "sweep.delta_u=[-2, 0]"]
    assert main(["sweep", "--out", str(out)] + sets(*extra)) == 0
    lines = (out / "sweep_auroc.dat").read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1].split() == ["delta_k\\delta_u", "-2", "0"]
    assert lines[2].split()[0] == "-4" and lines[3].split()[:2] == ["-1", "nan"]
    assert (out / "points/dk-4_du-2/aggregate.csv").exists()


def test_sweep_needs_a_sweep_section(tmp_path, capsys):
    assert main(["sweep", "--out", str(tmp_path / "s")] + sets()) == 2
    assert "sweep" in capsys.readouterr().err


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "ebosal.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "ablate" in res.stdout


def test_unknown_method_is_rejected_by_argparse():
    with pytest.raises(SystemExit) as exc:
        main(["run", "--method", "bald"])
    assert exc.value.code == 2
