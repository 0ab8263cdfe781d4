import json
import os
import subprocess
import sys

import pytest

from quenched_asip import cli
from quenched_asip import config as cf

SMALL = {
    "grid_k": 512,
    "sigma": {"N_max": 32, "window": 64},
    "decay": {"N": 12, "trials": 8},
    "blocks": {"beta": 0.625, "eps": 0.05, "N": 8},
    "simulation": {"n_steps": 512, "n_paths": 200, "seed": 1},
}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _files(out):
    return {n: open(os.path.join(out, n), "rb").read() for n in sorted(os.listdir(out))}


# -- configuration ------------------------------------------------------------------

def test_template_roundtrip():
    cfg = cf.loads(cf.template_text())
    assert cfg["grid_k"] == 4096 and cfg["observable"] == [{"type": "cos", "freq": 1}]


@pytest.mark.parametrize("patch, field", [
    ({"blocks": {"beta": 1.2}}, "blocks.beta"),
    ({"blocks": {"beta": 0.6, "eps": 0.5}}, "blocks.eps"),
    ({"grid_k": 1}, "grid_k"),
    ({"grid_k": 64.5}, "grid_k"),
    ({"bogus": 1}, "bogus"),
    ({"driving": {"kind": "markov"}}, "driving.kind"),
    ({"driving": {"alphabet": ["nope"]}}, "driving.alphabet"),
    ({"observable": [{"type": "tan"}]}, "observable[0].type"),
    ({"observable": [{"type": "indicator", "a": 0.7, "b": 0.2}]}, "observable[0]"),
    ({"rates": {"p": 4}}, "rates.p"),
    ({"simulation": {"n_paths": True}}, "simulation.n_paths"),
    ({"simulation": {"n_steps": 100}}, "blocks.N"),
    ({"maps": {"doubling": {"preset": "nonexistent"}}}, "maps.doubling"),
    ({"driving": {"kind": "irrational-rotation"}}, "driving.rotation_angle"),
])
def test_validation_names_field(patch, field):
    with pytest.raises(cf.ConfigError) as err:
        cf.validate(patch)
    assert err.value.field == field
    assert str(err.value).startswith(field)


def test_json_error_line():
    with pytest.raises(cf.ConfigError) as err:
        cf.loads('{\n  "grid_k": 64,\n  oops\n}')
    assert err.value.line == 3 and "line 3" in str(err.value)


def test_hash_ignores_output_dir():
    a = cf.validate({"output_dir": "x"})
    b = cf.validate({"output_dir": "y"})
    c = cf.validate({"grid_k": 1024})
    assert cf.config_hash(a) == cf.config_hash(b) != cf.config_hash(c)
    assert len(cf.config_hash(a)) == 16


def test_build_observables():
    cfg = cf.validate({"observable": [{"type": "cos"}, {"type": "x"}, {"type": "table", "values": [1, 2]}]})
    exp = cf.build(cfg)
    assert exp.observable.d == 3


def test_dumps_non_finite():
    text = cli.dumps({"a": float("inf"), "b": [float("nan")]})
    assert json.loads(text) == {"a": "inf", "b": ["nan"]}


# -- commands ---------------------------------------------------------------------------

def test_init_writes_template(tmp_path):
    path = tmp_path / "t.json"
    assert cli.main(["init", str(path)]) == cli.EXIT_OK
    assert json.loads(path.read_text()) == cf.TEMPLATE
    other = tmp_path / "u.json"
    assert cli.main(["--init", str(other)]) == cli.EXIT_OK
    assert other.read_text() == path.read_text()


def test_init_stdout(capsys):
    assert cli.main(["init"]) == cli.EXIT_OK
    assert json.loads(capsys.readouterr().out)["grid_k"] == 4096


def test_run_outputs(tmp_path):
    out = str(tmp_path / "out")
    code = cli.main(["run", "--config", _write(tmp_path, SMALL), "--out", out])
    assert code == cli.EXIT_OK
    files = _files(out)
    assert set(files) == {"density.csv", "decay.json", "sigma.json", "blocks.csv", "paths.csv",
                          "diagnostics.json", "metadata.json"}
    sigma = json.loads(files["sigma.json"])
    assert sigma["sigma2"][0] == pytest.approx(0.5, abs=1e-9)
    meta = json.loads(files["metadata.json"])
    assert meta["files"][-1] == "metadata.json" and meta["config_hash"] == sigma["config_hash"]
    diag = json.loads(files["diagnostics.json"])
    assert diag["mixing_fit"]["dominated"] is True


def test_run_threads_identical(tmp_path):
    cfg = _write(tmp_path, SMALL)
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert cli.main(["run", "--config", cfg, "--out", a, "--threads", "1"]) == 0
    assert cli.main(["run", "--config", cfg, "--out", b, "--threads", "4"]) == 0
    fa, fb = _files(a), _files(b)
    assert fa.keys() == fb.keys()
    assert all(fa[n] == fb[n] for n in fa if n != "metadata.json")


def test_seed_override_changes_paths(tmp_path):
    cfg = _write(tmp_path, SMALL)
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    cli.main(["simulate", "--config", cfg, "--out", a])
    cli.main(["simulate", "--config", cfg, "--out", b, "--seed", "2"])
    assert _files(a)["paths.csv"] != _files(b)["paths.csv"]


def test_coboundary_exit(tmp_path, capsys):
    # grid bias of the coboundary variance is O(k^-2); k = 4096 puts it below the threshold
    cfg = dict(SMALL, grid_k=4096, observable=[{"type": "coboundary", "q": {"type": "cos"}}])
    out = str(tmp_path / "out")
    assert cli.main(["sigma", "--config", _write(tmp_path, cfg), "--out", out]) == cli.EXIT_HYPOTHESIS
    failure = json.loads(_files(out)["failure.json"])
    assert failure["hypothesis"] == "nondegenerate covariance"
    assert failure["details"]["degenerate_direction"] == [1.0]
    assert "coboundary" in capsys.readouterr().err


def test_contracting_exit(tmp_path):
    cfg = dict(SMALL, maps={"doubling": {"preset": "contracting", "slope": 0.5}})
    out = str(tmp_path / "out")
    assert cli.main(["decay", "--config", _write(tmp_path, cfg), "--out", out]) == cli.EXIT_HYPOTHESIS
    assert json.loads(_files(out)["failure.json"])["hypothesis"] == "uniform expansion"


@pytest.mark.parametrize("argv", [["run"], ["run", "--config", "/nonexistent.json"], ["frobnicate"],
                                  ["run", "--config", "CFG", "--threads", "0"]])
def test_usage_errors(tmp_path, argv, capsys):
    argv = [a.replace("CFG", _write(tmp_path, SMALL)) for a in argv]
    with pytest.raises(SystemExit) as ex:
        code = cli.main(argv)
        raise SystemExit(code)
    assert ex.value.code == cli.EXIT_CONFIG


def test_bad_config_exit(tmp_path, capsys):
    code = cli.main(["run", "--config", _write(tmp_path, {"blocks": {"beta": 1.2}})])
    assert code == cli.EXIT_CONFIG
    assert "blocks.beta" in capsys.readouterr().err


def test_blocks_single_level(tmp_path):
    cfg = dict(SMALL, blocks={"beta": 0.5, "eps": 0.2, "N": 8})
    out = str(tmp_path / "out")
    assert cli.main(["blocks", "--config", _write(tmp_path, cfg), "--out", out, "--level", "4"]) == 0
    rows = _files(out)["blocks.csv"].decode().splitlines()[2:]
    assert len(rows) == 8 and rows[0] == "4,J,0,16,4"


def test_blocks_invalid_level(tmp_path):
    out = str(tmp_path / "out")
    assert cli.main(["blocks", "--config", _write(tmp_path, SMALL), "--out", out, "--level", "2"]) == 1


def test_density_command(tmp_path):
    out = str(tmp_path / "out")
    assert cli.main(["density", "--config", _write(tmp_path, SMALL), "--out", out, "--k", "8"]) == 0
    lines = _files(out)["density.csv"].decode().splitlines()
    assert len(lines) == 2 + 8 and lines[2].endswith(",1.0")


def test_verify_command(tmp_path, capsys):
    out = str(tmp_path / "out")
    assert cli.main(["verify", "--config", _write(tmp_path, SMALL), "--out", out]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert len(printed) == 4 and all(line.startswith("PASS") for line in printed)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "quenched_asip", "init"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout) == cf.TEMPLATE
