import json

import numpy as np
import pytest

from klbias.cli import main
from klbias.config import OUTPUT_ENV
from klbias.io import FreeEnergyGrid, read_table
from klbias.kernels import FreeEnergyModel
from klbias.systems import write_snapshot

TINY = ["-s", "smc.n=40", "-s", "smc.n_equil=10", "-s", "descent.max_iter=30", "-s", "greedy.k_max=2",
        "-s", "output.grid_points=21", "-s", "workers=1", "-s", "greedy.vocab.polish=false"]
ARTIFACTS = ["free_energy.txt", "trace.txt", "smc.txt", "kernels.txt", "model.json", "summary.json"]


def run(out, *extra, command="run", preset="toy"):
    return main([command, "--preset", preset, "-s", f"output.dir={out}", *TINY, *extra])


def test_single_run_writes_everything(tmp_path):
    code = run(tmp_path)
    assert code == 2  # 30 iterations cannot converge
    for name in ARTIFACTS + ["checkpoint.json", "checkpoint.npz", "config.yaml"]:
        assert (tmp_path / name).exists(), name
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == "budget" and summary["exit_code"] == 2
    grid = FreeEnergyGrid.read(tmp_path / "free_energy.txt")
    assert grid.values.shape == (21,) and grid.names == ["z"]
    assert grid.config_hash == summary["config_hash"]
    assert abs(grid.values[grid.anchor_index()]) <= 1e-12
    for name in ("trace.txt", "smc.txt", "kernels.txt"):
        text = (tmp_path / name).read_text()
        assert f"# config_hash: {summary['config_hash']}" in text and "# seed: 0" in text
    cols, rows = read_table(tmp_path / "trace.txt")
    assert cols[:4] == ["row", "value", "k", "iteration"] and rows.shape[0] == 30


def test_infinite_tolerance_gives_flat_grid(tmp_path):
    assert run(tmp_path, "-s", "greedy.tol_delta=.inf") == 0
    grid = FreeEnergyGrid.read(tmp_path / "free_energy.txt")
    np.testing.assert_array_equal(grid.values, 0.0)
    assert json.loads((tmp_path / "summary.json").read_text())["n_kernels"] == 0


def test_default_grid_resolution(tmp_path):
    assert run(tmp_path, "-s", "greedy.tol_delta=.inf", "-s", "output.grid_points=null") == 0
    assert FreeEnergyGrid.read(tmp_path / "free_energy.txt").values.shape == (201,)


def test_config_error_names_the_key(tmp_path, capsys):
    assert run(tmp_path, "-s", "descent.p=0.4") == 4
    assert "descent.p" in capsys.readouterr().err
    assert run(tmp_path, "-s", "descent.nope=1") == 4
    assert "descent.nope" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path):
    with np.errstate(over="ignore", invalid="ignore"):
        code = run(tmp_path, "-s", "descent.lam0=1e308")
    assert code == 3
    assert json.loads((tmp_path / "summary.json").read_text())["status"] == "numerical_failure"


def test_same_seed_same_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(a)
    run(b)
    for name in ARTIFACTS:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    c = tmp_path / "c"
    run(c, "-s", "seed=1")
    assert (a / "free_energy.txt").read_bytes() != (c / "free_energy.txt").read_bytes()


def test_interrupt_and_resume_match(tmp_path):
    full, part = tmp_path / "full", tmp_path / "part"
    run(full)
    assert run(part, "--stop-after", "10") == 5
    assert json.loads((part / "checkpoint.json").read_text())
    assert run(part, "--resume") == 2
    for name in ARTIFACTS:
        assert (full / name).read_bytes() == (part / name).read_bytes(), name


def test_environment_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    main(["run", "--preset", "toy", *TINY, "-s", "greedy.tol_delta=.inf"])
    assert (tmp_path / "env" / "free_energy.txt").exists()


def test_print_config(tmp_path, capsys):
    assert run(tmp_path, "--print-config") == 0
    assert "tol_delta" in capsys.readouterr().out
    assert not (tmp_path / "trace.txt").exists()


def test_sweep(tmp_path):
    out = tmp_path / "s"
    code = main(["sweep", "--preset", "toy-sweep", "-s", f"output.dir={out}", *TINY, "-s", "temper.end=6.0",
                 "-s", "temper.budget=20"])
    assert code in (0, 2)
    seq = np.loadtxt(out / "sequence.txt", comments="#", skiprows=4)
    betas = np.atleast_2d(seq)[:, 1]
    assert betas[0] == 5.0 and betas[-1] == 6.0 and np.all(np.diff(betas) > 0)
    assert len(list((out / "grids").iterdir())) == len(betas) == len(list((out / "models").iterdir()))
    grid0 = FreeEnergyGrid.read(out / "grids" / "grid_000.txt")
    assert grid0.beta == 5.0


def test_sweep_without_schedule(tmp_path, capsys):
    assert run(tmp_path, command="sweep") == 4
    assert "temper" in capsys.readouterr().err


def test_sweep_to_same_beta(tmp_path):
    out = tmp_path / "s"
    main(["sweep", "--preset", "toy-sweep", "-s", f"output.dir={out}", *TINY, "-s", "temper.end=5.0"])
    assert len(list((out / "models").iterdir())) == 1


def test_grid_and_marginalize(tmp_path):
    m = FreeEnergyModel([[0.1, -160.0]], [[100.0, 0.01]], [1.5], [0.0, -175.0], 4.0)
    from klbias.kernels import Domain

    m.save(tmp_path / "m.json", Domain([0.0, -175.0], [0.2, -145.0]), {"cv_names": ["Q4", "E"]})
    assert main(["grid", str(tmp_path / "m.json"), "--points", "31", "-o", str(tmp_path / "g.txt")]) == 0
    g = FreeEnergyGrid.read(tmp_path / "g.txt")
    assert g.values.shape == (31, 31) and g.names == ["Q4", "E"]
    np.testing.assert_allclose(g.values, m.evaluate(g.points()).reshape(31, 31))
    assert main(["marginalize", str(tmp_path / "g.txt"), "-o", str(tmp_path / "q.txt")]) == 0
    q = FreeEnergyGrid.read(tmp_path / "q.txt")
    assert q.names == ["Q4"] and q.values.shape == (31,) and q.values[0] == 0.0
    assert main(["marginalize", str(tmp_path / "g.txt"), "--axis", "3", "-o", str(tmp_path / "x.txt")]) == 4


def test_q4_subcommand(tmp_path, capsys):
    write_snapshot(tmp_path / "pair.txt", np.array([[0.0, 0.0, 0.0], [0.0, 0.6, 0.8]]))
    assert main(["q4", str(tmp_path / "pair.txt")]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(1.0, abs=1e-10)
    write_snapshot(tmp_path / "far.txt", np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 3.0]]))
    assert main(["q4", str(tmp_path / "far.txt")]) != 0
