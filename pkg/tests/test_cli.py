"""The ``cmn`` command: subcommands and exit codes."""

import json

import pytest

from cmn.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_OK, main

CONFIG = """\
name = "cli"
method = "{method}"
seeds = [0, 1]
eval_scope = "task"

[backbone]
width = 8

[short]
lr = {lr}
epochs = 3
patience = 0

[long]
lr = 0.01
epochs = 3

[consolidation]
temperature = {temperature}

[[tasks]]
source = "synthetic"
n_tasks = 2
dims = [6]
samples_per_class = 10
test_per_class = 5
separation = {separation}
"""


def _write(tmp_path, method="cmn", lr=0.01, temperature=2.0, separation=6.0, name="c.toml"):
    p = tmp_path / name
    p.write_text(CONFIG.format(method=method, lr=lr, temperature=temperature, separation=separation))
    return p


def test_run_writes_results(tmp_path, capsys):
    cfg = _write(tmp_path)
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("seed ") == 2 and '"ACC"' in out
    assert (tmp_path / "out" / "seed_1.metrics.json").exists()


def test_metrics_and_curves_on_results_dir(tmp_path, capsys):
    cfg = _write(tmp_path)
    main(["run", str(cfg), "--out", str(tmp_path / "out"), "--seed", "3"])
    capsys.readouterr()
    assert main(["metrics", str(tmp_path / "out")]) == EXIT_OK
    assert "seed_3" in json.loads(capsys.readouterr().out)
    assert main(["curves", str(tmp_path / "out")]) == EXIT_OK
    assert "summary.csv" in capsys.readouterr().out


def test_bad_temperature_exits_2(tmp_path, capsys):
    assert main(["run", str(_write(tmp_path, temperature=-1.0))]) == EXIT_CONFIG
    assert "consolidation.temperature" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path, capsys):
    p = _write(tmp_path)
    p.write_text(p.read_text().replace("temperature = 2.0", "temperature = 2.0\nfoo = 1"))
    assert main(["run", str(p)]) == EXIT_CONFIG
    assert "consolidation.foo: unknown key" in capsys.readouterr().err


def test_missing_config_exits_4(tmp_path):
    assert main(["run", str(tmp_path / "nope.toml")]) == EXIT_IO


def test_divergence_exits_3(tmp_path, capsys):
    p = _write(tmp_path, lr=1e8, separation=50.0)
    assert main(["run", str(p), "--out", str(tmp_path / "d")]) == EXIT_DIVERGED
    assert "diverged" in capsys.readouterr().err


def test_metrics_require_without_baselines_exits_2(tmp_path, capsys):
    (tmp_path / "R.csv").write_text("0.9,\n0.8,0.85\n")
    assert main(["metrics", str(tmp_path / "R.csv"), "--require", "ACC,AF"]) == EXIT_CONFIG
    assert "AF needs" in capsys.readouterr().err
    (tmp_path / "b.csv").write_text("m,n\n0.9,0.9\n0.9,0.8\n")
    assert main(["metrics", str(tmp_path / "R.csv"), "--baselines", str(tmp_path / "b.csv")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["AF"] == pytest.approx(-0.025)


def test_checkpoint_save_and_load(tmp_path, capsys):
    cfg = _write(tmp_path)
    ck = tmp_path / "s.ckpt"
    assert main(["checkpoint", "save", str(cfg), str(ck), "--seed", "0"]) == EXIT_OK
    capsys.readouterr()
    assert main(["checkpoint", "load", str(ck), "--config", str(cfg), "--seed", "0"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "tasks learned: 2" in out and "task 1: test accuracy" in out

    main(["run", str(cfg), "--out", str(tmp_path / "r"), "--seed", "0"])
    capsys.readouterr()
    R = json.loads((tmp_path / "r" / "seed_0.metrics.json").read_text())["R"]
    lines = [l for l in out.splitlines() if l.startswith("task ")]
    assert [float(l.split()[-1]) for l in lines] == pytest.approx(R[1], abs=5e-5)


def test_checkpoint_errors(tmp_path, capsys):
    ck = tmp_path / "bad.ckpt"
    ck.write_bytes(b"CMNCKPT\0" + (10**6).to_bytes(8, "little"))
    assert main(["checkpoint", "load", str(ck)]) == EXIT_IO
    assert "truncated" in capsys.readouterr().err
    assert main(["checkpoint", "save", str(_write(tmp_path, method="one")), str(ck)]) == EXIT_CONFIG


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
