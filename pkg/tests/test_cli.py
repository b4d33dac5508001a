import json
import time

import numpy as np
import pytest

from ricci_s2 import cli, io, lab
from ricci_s2 import geometry as geo
from ricci_s2.errors import ConfigurationError


def write_config(tmp_path, body, name="run.toml"):
    path = tmp_path / name
    path.write_text('schema = "ricci_s2.run/1"\n' + body)
    return path


P2 = """
n = {n}
[[perturbation]]
kind = "conformal-mode"
k = 2
amplitude = {amp}
"""


def test_zero_amplitude_converges_immediately(tmp_path, capsys):
    cfg = write_config(tmp_path, P2.format(n=32, amp=0.0))
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == cli.EXIT_OK
    cols = io.read_trajectory_csv(out / "conformal-mode-k2-eps0.csv")
    assert cols["t"].tolist() == [0.0]
    report = json.loads((out / "report.json").read_text())
    assert report["schema"] == io.REPORT_SCHEMA
    assert report["cells"][0]["termination"] == "converged"
    assert "converged" in capsys.readouterr().out


@pytest.fixture(scope="module")
def p2_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("p2")
    cfg = write_config(tmp, P2.format(n=64, amp=0.1))
    code = cli.main(["simulate", "--config", str(cfg), "--out", str(tmp / "out")])
    return code, tmp / "out", cfg


def test_p2_run_outputs(p2_run):
    code, out, _ = p2_run
    assert code == cli.EXIT_OK
    stem = "conformal-mode-k2-eps0.1"
    names = sorted(p.name for p in out.iterdir())
    assert names == sorted([f"{stem}.csv", f"{stem}_final.json", f"{stem}_trail.json",
                            "report.json"])
    mu = io.read_trajectory_csv(out / f"{stem}.csv")["mu"]
    assert np.min(np.diff(mu)) > -1e-10
    t, g = io.read_snapshot(out / f"{stem}_final.json")
    assert np.max(np.abs(geo.scalar_curvature(g) - 2)) < 1e-6
    report = json.loads((out / "report.json").read_text())
    assert all(c["pass"] for c in report["checks"])


def test_simulate_is_bitwise_deterministic(p2_run, tmp_path):
    _, out, cfg = p2_run
    again = tmp_path / "again"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(again)]) == cli.EXIT_OK
    for p in out.iterdir():
        assert (again / p.name).read_bytes() == p.read_bytes(), p.name


def test_probe_on_run(p2_run, tmp_path, capsys):
    _, out, _ = p2_run
    csv = out / "conformal-mode-k2-eps0.1.csv"
    assert cli.main(["probe", str(csv), "--out", str(tmp_path)]) == cli.EXIT_OK
    fits = json.loads((tmp_path / "fits.json").read_text())
    assert fits["schema"] == io.FIT_SCHEMA
    (loj,) = [f for f in fits["fits"] if f["type"] == "lojasiewicz"]
    assert 0.45 <= loj["alpha"] <= 0.6
    assert "alpha" in capsys.readouterr().out


def test_report_rebuild(p2_run, tmp_path, capsys):
    _, out, _ = p2_run
    assert cli.main(["report", str(out), "--out", str(tmp_path)]) == cli.EXIT_OK
    rebuilt = json.loads((tmp_path / "report_rebuilt.json").read_text())
    names = [c["name"] for c in rebuilt["checks"]]
    assert any("Gauss-Bonnet" in n for n in names)
    assert all(c["pass"] for c in rebuilt["checks"])


def test_report_on_empty_dir(tmp_path):
    assert cli.main(["report", str(tmp_path)]) == cli.EXIT_VALIDATION


def test_probe_planted_alpha(tmp_path):
    t = np.linspace(0, 4, 81)
    gap = 1e-3 * np.exp(-4 * t)
    rows = ["t,mu,grad_mu_norm,area,sup_R_dev,dt"]
    for ti, gi in zip(t, gap):
        rows.append(",".join(repr(float(v)) for v in
                             (ti, lab.MU_ROUND - gi, np.sqrt(4 * gi), 4 * np.pi, np.sqrt(gi), 0.0)))
    path = tmp_path / "planted.csv"
    path.write_text("\n".join(rows) + "\n")
    out = tmp_path / "fits.json"
    assert cli.main(["probe", str(path), "--out", str(out)]) == cli.EXIT_OK
    (loj,) = [f for f in json.loads(out.read_text())["fits"] if f["type"] == "lojasiewicz"]
    assert abs(loj["alpha"] - 0.5) < 1e-3


def test_probe_rejects_empty_and_short(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert cli.main(["probe", str(empty)]) == cli.EXIT_VALIDATION
    short = tmp_path / "short.csv"
    short.write_text("t,mu,grad_mu_norm,area,sup_R_dev,dt\n0,3.4,0.1,12.5,0.1,0\n")
    assert cli.main(["probe", str(short)]) == cli.EXIT_VALIDATION


@pytest.mark.parametrize("body", [
    "n = 32\nbogus = 1\n",
    "n = 4\n",
    "n = 32\nflow = 'sideways'\n",
    "n = 32\n[stepper]\ntol = 'small'\n",
    "n = 32\n[stepper]\nwobble = 1.0\n",
    "n = 32\n[[perturbation]]\nkind = 'conformal-mode'\namplitude = 0.9\n",
    "n = 32\n[[perturbation]]\nshape = 'round'\n",
    "n = = 3\n",
])
def test_malformed_config_writes_nothing(tmp_path, body, capsys):
    cfg = write_config(tmp_path, body)
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == cli.EXIT_VALIDATION
    assert not out.exists()
    assert "error" in capsys.readouterr().err


def test_wrong_schema_rejected(tmp_path):
    path = tmp_path / "x.toml"
    path.write_text('schema = "ricci_s2.run/0"\n')
    with pytest.raises(ConfigurationError):
        cli.load_config(path)


def test_missing_output_directory(tmp_path):
    cfg = write_config(tmp_path, "n = 16\n")
    assert cli.main(["simulate", "--config", str(cfg)]) == cli.EXIT_VALIDATION


def test_horizon_exit_code(tmp_path):
    cfg = write_config(tmp_path, P2.format(n=24, amp=0.1) + "[stepper]\nhorizon = 0.1\n")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) \
        == cli.EXIT_HORIZON


def test_overrides(tmp_path):
    cfg = cli.load_config(write_config(tmp_path, P2.format(n=32, amp=0.1)))
    args = cli.build_parser().parse_args(["simulate", "--config", "x", "--grid", "48",
                                          "--seed", "7", "--out", str(tmp_path)])
    new = cli._apply_overrides(cfg, args)
    assert new.experiment.n == 48
    assert new.experiment.perturbations[0].seed == 7
    assert new.out == tmp_path


def test_spectrum_round(tmp_path, capsys):
    cfg = write_config(tmp_path, "n = 64\nout = 'sp'\n[spectrum]\nk = 4\n")
    assert cli.main(["spectrum", "--config", str(cfg)]) == cli.EXIT_OK
    doc = json.loads((tmp_path / "sp" / "spectrum.json").read_text())
    assert np.allclose(doc["eigenvalues"], [0, 2, 6, 12], atol=1e-6)
    assert doc["lambda1_gt_1"] is True
    assert "lambda_1 > 1: True" in capsys.readouterr().out


def test_spectrum_from_snapshot(p2_run, tmp_path):
    _, out, _ = p2_run
    snap = out / "conformal-mode-k2-eps0.1_final.json"
    cfg = write_config(tmp_path, f"n = 64\nout = 's'\n[spectrum]\nk = 3\nsnapshot = '{snap}'\n")
    assert cli.main(["spectrum", "--config", str(cfg)]) == cli.EXIT_OK
    doc = json.loads((tmp_path / "s" / "spectrum.json").read_text())
    assert abs(doc["lambda1"] - 2.0) < 1e-5
    assert doc["lambda1_gt_1"]


def test_spectrum_k_too_large(tmp_path):
    cfg = write_config(tmp_path, "n = 16\n[spectrum]\nk = 40\n")
    assert cli.main(["spectrum", "--config", str(cfg)]) == cli.EXIT_VALIDATION


def test_verify_fast_passes_quickly(capsys):
    start = time.perf_counter()
    assert cli.main(["verify", "--fast"]) == cli.EXIT_OK
    assert time.perf_counter() - start < 10.0
    text = capsys.readouterr().out
    assert "FAIL" not in text and "Gauss-Bonnet" in text


def test_verify_catches_curvature_sign_error(monkeypatch, capsys):
    real = geo.scalar_curvature
    monkeypatch.setattr(geo, "scalar_curvature", lambda g: -real(g))
    assert cli.main(["verify", "--fast"]) == cli.EXIT_CHECKS_FAILED
    rows = [line for line in capsys.readouterr().out.splitlines() if "Gauss-Bonnet" in line]
    assert rows and rows[0].startswith("FAIL")


def test_unknown_subcommand():
    assert cli.main(["frobnicate"]) == cli.EXIT_VALIDATION


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "ricci_s2", "--help"], capture_output=True,
                         text=True, timeout=60)
    assert res.returncode == 0
    assert "simulate" in res.stdout


def test_verify_full_suite_passes(capsys):
    assert cli.main(["verify"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "gauge transfer" in out and "FAIL" not in out
