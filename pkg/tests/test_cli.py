import json
import shutil
from pathlib import Path

import numpy as np
import pytest
import yaml

from caloron import cli, hymflow

CONFIGS = Path(__file__).parents[1] / "configs"


@pytest.fixture
def config(tmp_path):
    d = yaml.safe_load((CONFIGS / "small.yaml").read_text())
    d["output"] = "out"
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(d))
    return path


@pytest.fixture
def finished(config):
    assert cli.cmd_run(config) == cli.EXIT_OK
    return config.parent / "out"


def test_config_hash_ignores_output_only(config):
    a = cli.RunConfig.load(config)
    b = cli.RunConfig.load(config, ["output=elsewhere"])
    c = cli.RunConfig.load(config, ["grid.nu=11"])
    assert a.hash() == b.hash() != c.hash()
    assert Path(a.output).is_absolute() or Path(a.output).parent == config.parent


def test_bad_configs_exit_invalid(tmp_path, config):
    bad = tmp_path / "bad.yaml"
    bad.write_text("map: {type: blip, dim: 2, v: ['1', 'W'], xi0: [0, 0]}\ncolour: red\n")
    assert cli.cmd_run(bad) == cli.EXIT_INVALID
    assert cli.cmd_run(tmp_path / "missing.yaml") == cli.EXIT_INVALID
    assert cli.cmd_run(config, ["flow.dt=-1"]) == cli.EXIT_INVALID
    assert cli.cmd_run(config, ["grid.delta=1.5"]) == cli.EXIT_INVALID
    with pytest.raises(cli.ConfigError):
        cli.apply_override({}, "flow.t_max")


def test_run_outputs(finished):
    lines = (finished / "diagnostics.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == ",".join(hymflow.FlowDiagnostics.COLUMNS)
    rep = json.loads((finished / "observables.json").read_text())
    assert rep["flow"]["converged"]
    assert abs(rep["observables"]["charge"]["value"] - 1) < 1e-2
    assert "config_hash" in rep and "grid" in rep
    H, meta = hymflow.load_checkpoint(finished / "checkpoint.npz")
    assert meta["config_hash"] == rep["config_hash"]


def test_not_converged_is_exit_code(config):
    assert cli.cmd_run(config, ["flow.t_max=0.01"]) == cli.EXIT_NOT_CONVERGED
    assert (config.parent / "out" / "checkpoint.npz").exists()


def test_verify(finished, config, capsys):
    code = cli.cmd_verify(config, checkpoint=str(finished / "checkpoint.npz"), run=False)
    out = capsys.readouterr().out
    assert code == cli.EXIT_OK
    assert "PASS charge_equals_degree" in out and "FAIL" not in out


def test_corrupted_checkpoint(finished, config):
    bad = finished / "bad.npz"
    bad.write_bytes(b"not a checkpoint")
    assert cli.cmd_verify(config, checkpoint=str(bad), run=False) == cli.EXIT_INVALID
    assert cli.cmd_export(bad, "csv") == cli.EXIT_INVALID
    assert cli.cmd_run(config, resume=str(bad)) == cli.EXIT_INVALID


def test_export_import_roundtrip_resumes_identically(config):
    assert cli.cmd_run(config, ["flow.t_max=0.2"]) == cli.EXIT_NOT_CONVERGED
    out = config.parent / "out"
    ck = out / "checkpoint.npz"
    assert cli.cmd_export(ck, "csv", out / "field") == cli.EXIT_OK
    assert cli.cmd_import(out / "field.csv", out / "back.npz") == cli.EXIT_OK
    H0, _ = hymflow.load_checkpoint(ck)
    H1, _ = hymflow.load_checkpoint(out / "back.npz")
    assert np.array_equal(H0.values, H1.values) and H0.t == H1.t
    shutil.copy(ck, config.parent / "start.npz")
    diags = []
    for src in (config.parent / "start.npz", out / "back.npz"):
        assert cli.cmd_run(config, ["flow.t_max=0.4"], resume=str(src)) == cli.EXIT_NOT_CONVERGED
        diags.append((out / "diagnostics.csv").read_text())
    assert diags[0] == diags[1]


def test_export_formats(finished):
    ck = finished / "checkpoint.npz"
    for fmt, suffix in (("json", ".json"), ("vtk", ".vtk"), ("caloron", ".caloron.csv")):
        assert cli.cmd_export(ck, fmt, finished / "f") == cli.EXIT_OK
        assert (finished / ("f" + suffix)).stat().st_size > 0
    assert cli.cmd_export(ck, "hdf5") == cli.EXIT_INVALID
    g = hymflow.load_checkpoint(ck)[0].grid
    rows = np.genfromtxt(finished / "f.caloron.csv", delimiter=",", names=True)
    ring = rows[rows["iu"] == g.nu - 1]
    assert np.allclose(ring["r"], -np.log(g.delta))


def test_zero_map_export_is_identity(tmp_path):
    cfg = tmp_path / "zero.yaml"
    cfg.write_text(yaml.safe_dump({"map": {"type": "eta", "dim": 2, "xi0": [0.0, 0.0],
                                           "coeffs": [[["0", "0"], ["0", "0"]]]},
                                   "grid": {"nx": 5, "ny": 5, "nu": 5, "nphi": 4},
                                   "output": "out"}))
    assert cli.cmd_run(cfg) == cli.EXIT_OK
    H, _ = hymflow.load_checkpoint(tmp_path / "out" / "checkpoint.npz")
    assert np.array_equal(H.values, np.broadcast_to(np.eye(2)[:, :, None, None, None, None],
                                                    H.values.shape))


def test_sweep_continues_past_non_convergence(config):
    code = cli.cmd_sweep(config, "flow.t_max", ["0.01", "20.0"], workers=1)
    assert code == cli.EXIT_NOT_CONVERGED
    text = (config.parent / "out" / "sweep.csv").read_text().splitlines()
    assert text[1:] == ["0,0.01,2", "1,20.0,0"]


def test_main_entry(config):
    assert cli.main(["run", str(config), "--set", "flow.t_max=0.01"]) == cli.EXIT_NOT_CONVERGED
    with pytest.raises(SystemExit):
        cli.main(["nonsense"])
