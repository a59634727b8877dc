import subprocess
import sys

import numpy as np
import pytest

from contrakt.cli import main
from contrakt.measures import write_matrix


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_measure(capsys, fixtures_dir, tmp_path):
    code, out, _ = run(capsys, "measure", fixtures_dir / "A1.mat", "--measure", "1")
    # 17 significant digits of the float result of -1 + 0.8
    assert code == 0 and out.strip() == "-0.19999999999999996"
    assert abs(float(out) + 0.2) <= 1e-12
    code, out, _ = run(capsys, "measure", fixtures_dir / "identity.mat", "--measure", "inf")
    assert code == 0 and out.strip() == "1"
    singular = tmp_path / "sing.mat"
    singular.write_text(write_matrix(np.array([[1.0, 2.0], [2.0, 4.0]])))
    code, _, err = run(capsys, "measure", fixtures_dir / "A1.mat", "--measure", "1", "--theta", singular)
    assert code == 2 and "error" in err
    code, out, _ = run(capsys, "measure", fixtures_dir / "A1.mat", "--measure", "1", "--weight", "1 100")
    assert code == 0


def test_certify_exit_codes(capsys, fixtures_dir, tmp_path):
    out_dir = tmp_path / "out"
    code, out, _ = run(capsys, "--out", out_dir, "certify", fixtures_dir / "transcriptional.sys",
                       "--measure", "inf", "--weight", "1 1.045", "--grid", "17", "--t-samples", "33")
    assert code == 0 and out.startswith("verdict: VALID")
    text = (out_dir / "certificate.txt").read_text()
    assert "# seed = 42" in text and "verdict: VALID" in text
    kv = (out_dir / "certificate.kv").read_text()
    assert "valid = true" in kv and "# command = certify" in kv
    code, out, _ = run(capsys, "--out", out_dir, "certify", fixtures_dir / "expanding.sys")
    assert code == 1 and "INVALID" in out
    bad = tmp_path / "bad.sys"
    bad.write_text("[system]\nstates = x\n[mode.a]\ndx = \"-x +\"\n")
    code, _, err = run(capsys, "--out", out_dir, "certify", bad)
    assert code == 2 and "error" in err
    code, _, _ = run(capsys, "--out", out_dir, "certify", tmp_path / "missing.sys")
    assert code == 2


def test_certify_weight_search(capsys, fixtures_dir, tmp_path):
    code, out, _ = run(capsys, "--out", tmp_path, "certify", fixtures_dir / "transcriptional.sys",
                       "--measure", "inf", "--weight-search", "--theta-range", "0.5", "2", "31",
                       "--grid", "17", "--t-samples", "33")
    assert code == 0 and "diagonal search" in out


def test_simulate_outputs(capsys, fixtures_dir, tmp_path):
    code, out, _ = run(capsys, "--out", tmp_path, "simulate", fixtures_dir / "single_guard.sys",
                       "--x0", "0", "--t1", "1", "--dt", "0.01")
    assert code == 0 and "1 switching events" in out
    lines = [l for l in (tmp_path / "trajectory.csv").read_text().splitlines() if not l.startswith("#")]
    assert lines[0] == "t,x,mode" and len(lines) > 100
    assert "slow,fast" in (tmp_path / "events.csv").read_text()
    svg = (tmp_path / "trajectory.svg").read_text()
    assert svg.startswith("<svg") and "seed=42" in svg and "<polyline" in svg


def test_simulate_escape_is_input_error(capsys, fixtures_dir, tmp_path):
    code, _, err = run(capsys, "--out", tmp_path, "simulate", fixtures_dir / "expanding.sys", "--x0", "0.5")
    assert code == 2 and "domain" in err


def test_divergence(capsys, fixtures_dir, tmp_path):
    code, out, _ = run(capsys, "--out", tmp_path, "divergence", fixtures_dir / "pwl.sys", "--x0", "1,-1",
                       "--y0=-0.5,0.5", "--measure", "1", "--t1", "6")
    assert code == 0 and "envelope violations: 0" in out
    rows = [l for l in (tmp_path / "divergence.csv").read_text().splitlines() if not l.startswith("#")]
    assert rows[0] == "t,distance,envelope"
    t, d, env = (float(v) for v in rows[-1].split(","))
    assert d <= env


def test_network_and_threshold(capsys, fixtures_dir, tmp_path):
    code, out, _ = run(capsys, "--out", tmp_path, "network", fixtures_dir / "network.net", "--t1", "5")
    assert code == 0 and "verdict: VALID" in out
    for name in ("node0.csv", "node2.csv", "coordination.csv", "sync_certificate.txt", "states.svg"):
        assert (tmp_path / name).exists()
    code, out, _ = run(capsys, "--out", tmp_path, "network", fixtures_dir / "network.net", "--gain", "0.2",
                       "--t1", "1")
    assert code == 1
    code, out, _ = run(capsys, "threshold", fixtures_dir / "network.net", "--k-range", "0", "2")
    assert code == 0 and float(out) == pytest.approx(1 / 3, abs=1e-6)
    code, _, err = run(capsys, "threshold", fixtures_dir / "network.net", "--k-range", "0", "0.3")
    assert code == 2


def test_usage_errors(capsys, fixtures_dir):
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["certify", str(fixtures_dir / "pwl.sys"), "--grid", "0"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["measure", "x.mat", "--measure", "3"])
    assert info.value.code == 2
    code, _, err = run(capsys, "repro", "nonsense")
    assert code == 2 and "choose from" in err


def test_repro_virtual_and_seed(capsys, tmp_path):
    code, out, _ = run(capsys, "--out", tmp_path, "--seed", "7", "repro", "virtual")
    assert code == 0 and "PASS" in out
    summary = (tmp_path / "virtual" / "summary.txt").read_text()
    assert "seed = 7" in summary


def test_module_entry_point(fixtures_dir):
    proc = subprocess.run([sys.executable, "-m", "contrakt", "measure", str(fixtures_dir / "A2.mat"),
                           "--measure", "1"], capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and float(proc.stdout) == -0.5
