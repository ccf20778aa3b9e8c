import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from subspace_scout.cli import dispatch
from subspace_scout.fixtures import consensus8_kernel
from subspace_scout.sampling import read_stream


def run(argv):
    return dispatch([str(a) for a in argv])


def load(path):
    return json.loads(path.read_text())


def test_sample_then_solve(tmp_path):
    samples, rep = tmp_path / "s.bin", tmp_path / "r.json"
    assert run(["sample", "--fixture", "consensus8", "--n", 8, "--num-samples", 500, "--seed", 3,
                "--out", samples, "--report", rep]) == 0
    r = load(rep)
    assert r["complete"] and r["N"] == 500 and r["format"] == "binary"
    assert read_stream(samples).N == 500

    out = tmp_path / "solve.json"
    assert run(["solve", "--samples", samples, "--gamma", "0.9", "--report", out, "--figures", tmp_path]) == 0
    s = load(out)
    assert s["complete"] and s["solution"]["max_violation"] <= 1e-8
    P = np.array(s["solution"]["P"])
    assert np.trace(P) == pytest.approx(1.0, abs=1e-9)
    assert (tmp_path / "spectrum.png").stat().st_size > 0


def test_solve_fixed_projector(tmp_path):
    samples, basis, out = tmp_path / "s.csv", tmp_path / "k.csv", tmp_path / "r.json"
    assert run(["sample", "--fixture", "consensus8", "--num-samples", 300, "--out", samples]) == 0
    np.savetxt(basis, consensus8_kernel(), delimiter=",")
    assert run(["solve", "--samples", samples, "--gamma", "min", "--fix-P", basis, "--report", out]) == 0
    s = load(out)
    assert s["structure"] == "fixed projector"
    assert 0 < s["solution"]["gamma"] < 1
    # the maximising sample sits exactly on the constraint
    assert s["solution"]["max_violation"] <= 1e-12


def test_solve_from_stdin(tmp_path, monkeypatch, capsys):
    samples = tmp_path / "s.csv"
    assert run(["sample", "--fixture", "opinion4", "--num-samples", 100, "--out", samples]) == 0
    capsys.readouterr()
    monkeypatch.setattr(sys, "stdin", io.StringIO(samples.read_text()))
    assert run(["solve", "--samples", "-", "--gamma", "0.99"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["provenance"] == {"samples": "stdin"} and rep["N"] == 100


def test_usage_errors(tmp_path):
    assert run(["sample", "--fixture", "nope", "--num-samples", 5, "--out", tmp_path / "x.bin"]) == 2
    assert run(["solve", "--samples", tmp_path / "missing.bin", "--gamma", "0.5"]) == 2
    assert run(["sample", "--fixture", "consensus8", "--n", 4, "--num-samples", 5, "--out", tmp_path / "x.bin"]) == 2
    assert run(["sample", "--fixture", "consensus8", "--num-samples", 5,
                "--out", tmp_path / "no" / "dir" / "x.bin"]) == 2
    with pytest.raises(SystemExit) as info:
        dispatch(["sample", "--num-samples", "-3"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        dispatch(["frobnicate"])
    assert info.value.code == 2


def test_refusal_exit_code(tmp_path):
    rep = tmp_path / "r.json"
    code = run(["demo-consensus", "--n-small", 2000, "--n-large", 20, "--epsbar-mode", "exact-eq7", "--report", rep])
    assert code == 3
    r = load(rep)
    assert r["complete"] is False
    assert r["status"] == "EtaTooLarge"
    assert r["refusal"]["suggested_n"] > 20 and r["refusal"]["eta"] >= 0.5


def test_runtime_error_exit_code(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,3\n4,5,6\n")
    rep = tmp_path / "r.json"
    assert run(["sample", "--matrices", bad, "--num-samples", 5, "--no-persist", "--report", rep]) == 1
    assert "error" in load(rep) and load(rep)["complete"] is False


def test_reports_are_deterministic(tmp_path):
    rep = tmp_path / "r.json"
    argv = ["demo-opinion", "--n-large", 50_000, "--threads", 2, "--report", rep]
    assert run(argv) == 0
    first = rep.read_bytes()
    assert run(argv) == 0
    assert rep.read_bytes() == first
    r = json.loads(first)
    assert r["status"] == "certified" and r["complete"]


def test_certify_with_figures(tmp_path):
    rep = tmp_path / "r.json"
    figs = tmp_path / "figs"
    figs.mkdir()
    assert run(["certify", "--fixture", "consensus8", "--n-large", 20_000, "--epsbar-mode", "exact-eq7",
                "--figures", figs, "--report", rep]) == 0
    r = load(rep)
    assert r["hypothesis"] == [[1, 2, 3, 4, 5], [6, 7, 8]]
    assert (figs / "spectrum.png").exists() and (figs / "block_norms.png").exists()


def test_plot_bounds(tmp_path):
    out, fig, rep = tmp_path / "b.csv", tmp_path / "b.png", tmp_path / "r.json"
    assert run(["plot-bounds", "--beta", 0.01, "--n", 4, "--points", 12, "--out", out, "--figure", fig,
                "--report", rep]) == 0
    rows = list(csv.DictReader(out.open()))
    assert {r["mode"] for r in rows} == {"exact-eq7", "fixed-solution"}
    for mode in ("exact-eq7", "fixed-solution"):
        eps = np.array([float(r["epsbar"]) for r in rows if r["mode"] == mode])
        Ns = np.array([int(r["N"]) for r in rows if r["mode"] == mode])
        assert np.all(np.diff(Ns) > 0)
        assert np.all(np.diff(1 / eps) > 0)
    assert fig.stat().st_size > 0
    assert len(load(rep)["rows"]) == len(rows)


def test_plot_bounds_k_needs_single_n():
    assert run(["plot-bounds", "--n", 2, 4, "--k", 3]) == 2


def test_module_entry_point():
    argv = ["plot-bounds", "--n", "2", "--beta", "0.1", "--points", "3", "--mode", "fixed-solution"]
    proc = subprocess.run([sys.executable, "-m", "subspace_scout", *argv],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "n,k,beta,mode,N,epsbar"
    assert len(proc.stdout.splitlines()) == 4
