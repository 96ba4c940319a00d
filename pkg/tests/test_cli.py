import json
import subprocess
import sys

import pytest

from cyforms.cli import main
from cyforms.selftest import run_selftest

SMALL = """
n = 2
sizes = 8
seed = 3

[[density.terms]]
amplitude = 0.1
wavevector = [1, 0, 0, 1]

[pipeline]
moser_steps = 16
outer_tol = {tol}
outer_max = {outer_max}
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.fixture
def small(tmp_path):
    return write(tmp_path, "small.toml", SMALL.format(tol=1e-6, outer_max=12))


def load(path):
    with open(path) as fh:
        return json.load(fh)


def test_solve_new_then_verify(tmp_path, small):
    out = str(tmp_path / "cert.json")
    psi, om = str(tmp_path / "psi.cyff"), str(tmp_path / "om.cyff")
    assert main(["solve-new", "--config", small, "--out", out, "--dump", psi, om]) == 0
    cert = load(out)
    assert cert["failed_bounds"] == [] and cert["config"]["seed"] == 3
    vout = str(tmp_path / "verify.json")
    assert main(["verify", "--config", small, "--out", vout, "--dump", psi, om]) == 0
    v = load(vout)
    assert v["certificate_drift"] <= 1e-12
    assert v["dump_mismatch"]["psi"] <= 1e-6
    # a corrupted dump is an invariant failure
    with open(om, "r+b") as fh:
        fh.seek(40)
        fh.write(b"\x00\x00\x80\x7f" * 4)
    assert main(["verify", "--config", small, "--out", vout, "--dump", psi, om]) == 4
    assert "dump:omega_tilde" in load(vout)["failed_bounds"]


def test_solve_new_is_deterministic(tmp_path, small):
    a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
    assert main(["solve-new", "--config", small, "--out", a]) == 0
    assert main(["solve-new", "--config", small, "--out", b, "--threads", "1"]) == 0
    assert load(a)["certificate"] == load(b)["certificate"]


def test_divergence_exit_code(tmp_path):
    cfg = write(tmp_path, "tight.toml", SMALL.format(tol=1e-9, outer_max=2))
    assert main(["solve-new", "--config", cfg]) == 3


@pytest.mark.parametrize("text", ["n = 4\n", "sizes = 7\n", "[pipeline]\nmoser_steps = 4\n", "n = = 1"])
def test_config_error_exit_code(tmp_path, text):
    assert main(["solve-ma", "--config", write(tmp_path, "bad.toml", text)]) == 2


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["moser", "--steps", "8"], ["solve-new", "--dump", "one"],
                                  ["selftest", "--seed", "-1"], ["selftest", "--threads", "0"]])
def test_bad_arguments_exit_code(argv, tmp_path):
    assert main(argv) == 2


def test_solve_ma(tmp_path, small):
    out, phi = str(tmp_path / "ma.json"), str(tmp_path / "phi.cyff")
    assert main(["solve-ma", "--config", small, "--out", out, "--dump-phi", phi]) == 0
    rep = load(out)
    assert rep["report"]["residual"] <= 1e-10 and rep["kahler_margin"] > 0.5
    assert abs(rep["normalization_ratio"] - 1) < 1e-12


def test_moser_subcommand(tmp_path, small, capsys):
    dump = tmp_path / "flow.bin"
    assert main(["moser", "--config", small, "--out", str(dump), "--steps", "16"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == 16 and summary["symplectomorphism_residual"] < 1e-4
    assert dump.stat().st_size == 8 ** 4 * (4 + 16) * 8


def test_selftest_quick(tmp_path):
    out = str(tmp_path / "self.json")
    assert main(["selftest", "--level", "quick", "--out", out]) == 0
    s = load(out)
    assert s["passed"] and s["failed"] == [] and s["level"] == "quick"


def test_selftest_detects_flipped_star():
    code, summary = run_selftest("quick", mutate_star=True)
    assert code == 4
    assert "primitive_star_sign" in summary["failed"]


def test_python_dash_m():
    r = subprocess.run([sys.executable, "-m", "cyforms", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("cyforms ")
