import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from qgtrabi.cli import main
from qgtrabi.results import result_body

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(cmd, config, out, *extra):
    return main([cmd, "--config", str(CONFIGS / config), "--out", str(out), *extra])


def load(path):
    return json.loads(Path(path).read_text())


def test_qgt_spin_half(tmp_path, capsys):
    assert run("qgt", "qgt_spin_half.toml", tmp_path) == 0
    doc = load(tmp_path / "qgt.json")
    th = 1.1
    minus = doc["bands"]["minus"]["tensors"]
    by_index = {(e["j"], e["k"]): e for e in minus}
    assert by_index[(0, 0)]["Q"][0][0][0] == pytest.approx(0.25, abs=1e-12)
    assert by_index[(1, 1)]["Q"][0][0][0] == pytest.approx(math.sin(th) ** 2 / 4, abs=1e-12)
    assert by_index[(0, 1)]["curvature"][0][0][0] == pytest.approx(math.sin(th) / 2, abs=1e-12)
    assert max(e["oracle_relative_deviation"] for e in minus) < 1e-5
    assert doc["config_hash"] and doc["schema"] == "qgtrabi.result/1"


def test_unknown_key_exit_2_no_output(tmp_path, capsys):
    assert run("qgt", "bad_key.toml", tmp_path / "out") == 2
    assert "unknown" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_dirac_point_exit_3(tmp_path, capsys):
    assert run("qgt", "dirac_point.toml", tmp_path / "out") == 3
    assert "GapCollapse" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_index_out_of_range_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('lambda = [1.0, 0.2]\n[model]\nname = "spin_half"\n[drive]\nj = 5\n')
    assert main(["rabi", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    cfg.write_text('lambda = [1.0]\n[model]\nname = "spin_half"\n')
    assert main(["qgt", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_force_flag(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('lambda = [1.0, 0.2]\n[model]\nname = "spin_half"\n[drive]\nratio = 0.08\n')
    assert main(["rabi", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert main(["rabi", "--config", str(cfg), "--out", str(tmp_path / "o"), "--force"]) == 0


def test_missing_config_exit_2(capsys):
    assert main(["qgt"]) == 2


def test_rabi_matches_qgt(tmp_path, capsys):
    assert run("rabi", "rabi_dirac4_generic.toml", tmp_path) == 0
    assert run("qgt", "rabi_dirac4_generic.toml", tmp_path) == 0
    rabi = load(tmp_path / "rabi.json")
    qgt = load(tmp_path / "qgt.json")
    eig = sorted(qgt["bands"]["minus"]["eigenvalues_jj"]["2"], reverse=True)
    assert len(rabi["inferred_q"]) == 2
    for q, t in zip(rabi["inferred_q"], eig):
        assert abs(q - t) / t < 0.01
    header = (tmp_path / "rabi_trace.csv").read_text().splitlines()[0]
    assert header.startswith("t,pop_minus,pop_plus")


def test_prep_prints_plan(tmp_path, capsys):
    assert run("prep", "prep_ratio_pi.toml", tmp_path) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("plan: T = ")
    doc = load(tmp_path / "prep.json")
    om1 = min(doc["omegas"])
    assert doc["plan"]["T"] == pytest.approx(3 * math.pi / om1)
    assert doc["plan"]["predicted_fidelity"] == pytest.approx(0.973, abs=1e-3)
    assert doc["fidelity"] == pytest.approx(0.973, abs=5e-3)


def test_lz_reports_fit(tmp_path, capsys):
    assert run("lz", "lz_dirac4_generic.toml", tmp_path) == 0
    fit = load(tmp_path / "lz.json")["fit"]
    assert fit["residual"] < 0.01
    assert fit["reference_deviation"] < 0.01
    assert len(fit["alphas"]) == 3


def test_tomo_and_extract(tmp_path, capsys):
    assert run("tomo", "extract_dirac4_generic.toml", tmp_path) == 0
    assert load(tmp_path / "tomo.json")["minus"]["magnitude_deviation"] < 1e-9
    assert run("extract", "extract_dirac4_generic.toml", tmp_path) == 0
    rep = load(tmp_path / "extract.json")["report"]
    assert rep["curvature"]["relative_error"] < 0.02
    assert rep["metric"]["relative_error"] < 0.02


def test_check_rwa_parallel_matches_serial(tmp_path, capsys):
    assert run("check-rwa", "check_rwa_weyl4.toml", tmp_path / "a") == 0
    assert run("check-rwa", "check_rwa_weyl4.toml", tmp_path / "b", "--jobs", "3") == 0
    a = result_body((tmp_path / "a" / "check_rwa.json").read_text())
    b = result_body((tmp_path / "b" / "check_rwa.json").read_text())
    assert a == b
    pts = load(tmp_path / "a" / "check_rwa.json")["points"]
    assert pts[0]["visibility"] > 3 and pts[-1]["visibility"] < 3


def test_deterministic_bodies(tmp_path, capsys):
    for d in ("a", "b"):
        assert run("rabi", "rabi_dirac4_generic.toml", tmp_path / d) == 0
    for name in ("rabi.json", "rabi_trace.csv"):
        a = (tmp_path / "a" / name).read_text()
        b = (tmp_path / "b" / name).read_text()
        assert result_body(a) == result_body(b)


def test_seed_override_recorded(tmp_path, capsys):
    assert run("qgt", "qgt_spin_half.toml", tmp_path, "--seed", "123") == 0
    assert load(tmp_path / "qgt.json")["seed"] == 123


def test_selftest_pass_and_hash(capsys):
    assert main(["selftest"]) == 0
    first = capsys.readouterr().out
    assert main(["selftest"]) == 0
    second = capsys.readouterr().out
    assert "selftest passed" in first
    assert first == second


def test_selftest_injected_fault(capsys):
    assert main(["selftest", "--inject-fault", "morris_shore_decoupling"]) == 1
    out = capsys.readouterr().out
    assert "morris_shore_decoupling  FAIL" in out
    assert "FAILED: morris_shore_decoupling" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "qgtrabi", "--version"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
