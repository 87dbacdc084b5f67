import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ffconverge import cli, plotting
from ffconverge.eqmeasure import minimize_energy_plus
from ffconverge.formfactor import bound_report, MonteCarloSpec

BOUNDS_CONFIG = """\
[model]
b = 0.3
kappa = 1

[run]
n_list = 2, 3
suites = bounds
seed = {seed}

[montecarlo]
samples = 20000
"""


def _run(argv, tmp_path, name="out"):
    out = tmp_path / name
    return cli.main([*argv, "--output-dir", str(out)]), out


def test_identities_subcommand(tmp_path, capsys):
    status, out = _run(["identities"], tmp_path)
    assert status == 0
    report = json.loads((out / "report.json").read_text())
    suite = report["suites"]["identities"]
    assert suite["passed"] and suite["n_passed"] >= 12
    assert "identities:" in capsys.readouterr().out


@pytest.mark.parametrize("text, line", [
    ("[model]\nb = 0.3\nkappa = one\n", 3),
    ("[model]\nb = 0.3\n\n[run]\nflavour = 2\n", 5),
    ("b = 0.3\n", 1),
    ("[model]\nb = 0.3\n[colours]\nred = 1\n", 3),
    ("[run]\nn_list = 2, 3\nsuites = identities, teleport\n", 3),
])
def test_malformed_config_exit_two(tmp_path, capsys, text, line):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    status, _ = _run(["all", "--config", str(path)], tmp_path)
    assert status == 2
    assert f"line {line}" in capsys.readouterr().err


def test_parse_config_values():
    cfg = cli.parse_config(BOUNDS_CONFIG.format(seed=7) + "[quadrature]\noscillatory_cutoff = 50\n")
    assert cfg.n_list == [2, 3]
    assert cfg.suites == ["bounds"]
    assert cfg.mc.seed == 7 and cfg.mc.samples == 20000
    assert cfg.params.b == 0.3
    assert cfg.tolerances.oscillatory_cutoff == 50.0


def test_parse_config_rejects_unsorted_n():
    with pytest.raises(cli.ConfigError):
        cli.parse_config("[run]\nn_list = 4, 2\n")


def test_same_seed_same_bytes(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(BOUNDS_CONFIG.format(seed=11))
    s1, out1 = _run(["all", "--config", str(cfg)], tmp_path, "a")
    s2, out2 = _run(["all", "--config", str(cfg)], tmp_path, "b")
    assert s1 == s2 == 0
    assert (out1 / "bounds.csv").read_bytes() == (out2 / "bounds.csv").read_bytes()
    assert (out1 / "bounds.png").exists()


def test_seed_changes_monte_carlo_rows(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(BOUNDS_CONFIG.format(seed=11))
    _, out1 = _run(["all", "--config", str(cfg)], tmp_path, "a")
    _, out2 = _run(["all", "--config", str(cfg), "--seed", "12"], tmp_path, "b")
    rows1 = (out1 / "bounds.csv").read_text().splitlines()
    rows2 = (out2 / "bounds.csv").read_text().splitlines()
    # N=2 uses tensor quadrature, N=3 is sampled
    assert rows1[1] == rows2[1]
    assert rows1[2] != rows2[2]


def test_environment_overrides(tmp_path):
    cfg = cli.parse_config(BOUNDS_CONFIG.format(seed=11))
    env = {"FFCONVERGE_OUTPUT_DIR": str(tmp_path / "env"), "FFCONVERGE_SEED": "99"}
    cfg = cli.apply_environment(cfg, env)
    assert cfg.output_dir == tmp_path / "env"
    assert cfg.mc.seed == 99
    with pytest.raises(cli.ConfigError):
        cli.apply_environment(cfg, {"FFCONVERGE_SEED": "abc"})


def test_environment_seed_through_main(tmp_path, monkeypatch):
    monkeypatch.setenv("FFCONVERGE_SEED", "5")
    monkeypatch.setenv("FFCONVERGE_OUTPUT_DIR", str(tmp_path / "from_env"))
    assert cli.main(["identities"]) == 0
    report = json.loads((tmp_path / "from_env" / "report.json").read_text())
    assert report["config"]["mc"]["seed"] == 5


def _check_schema(report):
    assert set(report) == {"config", "passed", "suites", "figures"}
    assert isinstance(report["passed"], bool)
    assert set(report["config"]) == {"params", "n_list", "suites", "mc", "output_dir", "tolerances"}
    assert all(isinstance(f, str) and f.endswith(".png") for f in report["figures"])
    for suite in report["suites"].values():
        assert set(suite) == {"passed", "n_passed", "checks", "records"}
        assert suite["n_passed"] == sum(c["passed"] for c in suite["checks"])
        for c in suite["checks"]:
            assert set(c) == {"name", "residual", "tolerance", "passed"}
            assert isinstance(c["name"], str)
            assert c["residual"] is None or isinstance(c["residual"], float)


def test_report_schema_closed_form_and_energy(tmp_path):
    status, out = _run(["closedform", "--n", "100000000"], tmp_path)
    assert status == 0
    report = json.loads((out / "report.json").read_text())
    _check_schema(report)
    rec = report["suites"]["closedform"]["records"][0]
    assert rec["N"] == 10 ** 8 and rec["error_budget"] > 0
    header, *rows = (out / "density_100000000.csv").read_text().splitlines()
    assert header == "xi,rho" and len(rows) == cli.PROFILE_POINTS
    status, out = _run(["energy", "--n", "100000000"], tmp_path, "energy")
    assert status == 0
    _check_schema(json.loads((out / "report.json").read_text()))
    assert (out / "energy.png").exists()


def test_bad_n_is_config_error(tmp_path, capsys):
    status, _ = _run(["bound", "--n", "2.5"], tmp_path)
    assert status == 2
    assert "config error" in capsys.readouterr().err


def test_density_export_columns(tmp_path, params):
    sol = minimize_energy_plus(100, params)
    path = plotting.emit_plotdata(sol, tmp_path / "d.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "xi,rho"
    first = lines[1].split(",")
    assert len(first) == 2 and "e" in first[0]
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.all(data[:, 0] >= sol.a_N) and np.all(data[:, 0] <= sol.b_N)


def test_bound_export_columns(tmp_path, params):
    rep = bound_report(2, params, mc=MonteCarloSpec(samples=1000))
    path = plotting.emit_plotdata(rep, tmp_path / "b.csv")
    header, row = path.read_text().splitlines()
    assert header == plotting.BOUNDS_HEADER and len(row.split(",")) == 5
    assert float(row.split(",")[0]) == 2.0


@pytest.mark.parametrize("empty", [None, []])
def test_empty_export_is_header_only(tmp_path, empty):
    path = plotting.emit_plotdata(empty, tmp_path / "e.csv")
    assert len(path.read_text().splitlines()) == 1


def test_full_precision_round_trip(tmp_path):
    x = np.array([0.1, 1 / 3, -2.0 ** -40])
    path = plotting.emit_density(x, x * np.pi, tmp_path / "r.csv")
    back = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(back[:, 0], x) and np.array_equal(back[:, 1], x * np.pi)


def test_console_script_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ffconverge.cli", "identities", "--output-dir", str(tmp_path)],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0
    assert Path(tmp_path, "report.json").exists()
