import json
import subprocess
import sys

import pytest

from ctgames import __version__
from ctgames.cli import EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_DATA, EXIT_IDENTIFICATION, EXIT_OK, main

SMALL = "model: {family: renewal, K: 10}\ntheta: {lambda_L: 0.5, lambda_H: 1.0}\n"


def run(tmp_path, text, *extra, name="run.yaml"):
    cfg = tmp_path / name
    cfg.write_text(text)
    out = tmp_path / "out"
    code = main(["--config", str(cfg), "--out", str(out), "--quiet", *extra])
    return code, out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_solve(tmp_path):
    code, out = run(tmp_path, "command: solve\n" + SMALL)
    assert code == EXIT_OK
    m = manifest(out)
    assert m["status"] == "ok" and m["command"] == "solve"
    assert set(m["artifacts"]) == {"solution.csv", "Q.csv", "summary.json"}
    assert m["versions"]["ctgames"] == __version__
    assert len(m["config_sha256"]) == 64
    summary = json.loads((out / "summary.json").read_text())
    assert summary["Q_nonzero_offdiag"] == 18


def test_simulate_is_reproducible(tmp_path):
    text = "command: simulate\n" + SMALL + "simulate: {markets: 3, horizon: 50, sampling: 2}\n"
    code, out = run(tmp_path, text, "--seed", "4")
    assert code == EXIT_OK
    first = (out / "events.csv").read_text()
    assert (out / "panel.csv").exists()
    run(tmp_path, text, "--seed", "4")
    assert (out / "events.csv").read_text() == first
    run(tmp_path, text, "--seed", "5")
    assert (out / "events.csv").read_text() != first
    assert manifest(out)["root_seed"] == 5


def test_estimate_and_compare(tmp_path):
    code, sim = run(tmp_path, "command: simulate\n" + SMALL + "simulate: {markets: 40, horizon: 60}\n")
    assert code == EXIT_OK
    data = sim / "events.csv"
    (tmp_path / "tied.yaml").write_text(
        f"command: estimate\nmodel: {{family: renewal, K: 10, homogeneous: true}}\ntheta: {{lambda: 0.7}}\n"
        f"data: {{path: {data}}}\nestimate: {{n_starts: 1}}\n")
    text = (f"command: estimate\n{SMALL}data: {{path: {data}}}\n"
            f"estimate: {{n_starts: 1, compare: tied.yaml, df: 1}}\n")
    cfg = tmp_path / "free.yaml"
    cfg.write_text(text)
    out = tmp_path / "est"
    assert main(["--config", str(cfg), "--out", str(out), "--quiet"]) == EXIT_OK
    fit = json.loads((out / "fit.json").read_text())
    assert set(fit["theta_hat"]) == {"lambda_L", "lambda_H", "gamma", "beta", "mu"}
    assert 0 <= fit["lr_test"]["p_value"] <= 1
    assert (out / "starts.csv").exists()


def test_identify(tmp_path):
    text = ("command: identify\nmodel: {family: entry}\n"
            "identify:\n  hazards: equilibrium\n  value_pins:\n"
            + "".join(f"    - {{state: {s}, value: 0.0}}\n" for s in (1, 3, 5, 7)))
    code, out = run(tmp_path, text)
    # zero pins are not the true values, but the system is just identified
    assert code == EXIT_OK
    rep = json.loads((out / "identification.json").read_text())
    assert rep["rank"] == rep["unknowns"] == 25


def test_identify_underidentified(tmp_path):
    text = "command: identify\n" + SMALL + "identify:\n  value_pins: [{state: 1, value: 0.0}]\n"
    code, out = run(tmp_path, text)
    assert code == EXIT_IDENTIFICATION
    assert manifest(out)["rank_ok"] is False


def test_config_error(tmp_path, capsys):
    code, _ = run(tmp_path, "command: solve\nmodel: {family: renewal}\ntheta:\n  lambda_L: -1\n")
    assert code == EXIT_CONFIG
    assert "run.yaml:4: theta.lambda_L" in capsys.readouterr().err


def test_data_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("market_id,t,player,action,state_from,state_to\n1,1.0,0,0,1,99\n")
    code, out = run(tmp_path, f"command: estimate\n{SMALL}data: {{path: {bad}}}\n")
    assert code == EXIT_DATA
    assert manifest(out)["status"] == "data error"


def test_convergence_error(tmp_path):
    code, out = run(tmp_path, "command: solve\n" + SMALL + "solver: {max_iter: 1, method: vfi}\n")
    assert code == EXIT_CONVERGENCE
    m = manifest(out)
    assert m["iterations"] == 1 and m["residual"] > 0


def test_mc(tmp_path):
    text = ("command: mc\nmodel: {family: renewal, K: 10, homogeneous: true}\ntheta: {lambda: 0.7}\n"
            "mc: {markets: 20, horizon: 40, schemes: [continuous, 4], replications: 2}\n")
    code, out = run(tmp_path, text)
    assert code == EXIT_OK
    table = (out / "mc_summary.txt").read_text()
    assert "mu/beta" in table and "dt4" in table
    assert manifest(out)["settings"]["mc"]["replications"] == 2


@pytest.mark.slow
def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ctgames.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and __version__ in r.stdout
