"""End-to-end command-line behavior: exit codes, artifacts, determinism."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from gridforge.cli import main
from gridforge.grids import GridFamily, load_grid_file
from gridforge.quant import pool_losses
from gridforge.reports import read_csv
from gridforge.sfp4 import read_sfp4, sfp4_decode_tensor


@pytest.fixture
def runner():
    return CliRunner()


def _invoke(runner, args):
    return runner.invoke(main, args, catch_exceptions=False)


# ── bench-mse ──


def test_bench_csv_and_determinism(runner, tmp_path):
    args = ["bench-mse", "--families", "INT4,FP4", "--dists", "normal",
            "--g", "16", "--samples", "64000", "--seed", "3"]
    r1 = _invoke(runner, args + ["--out", str(tmp_path / "a.csv")])
    r2 = _invoke(runner, args + ["--out", str(tmp_path / "b.csv")])
    assert r1.exit_code == 0 and r2.exit_code == 0
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()

    rows = read_csv(tmp_path / "a.csv")
    assert [r.family for r in rows] == ["INT4", "FP4"]
    assert all(r.n == 4000 and r.g == 16 for r in rows)
    assert rows[0].mse == pytest.approx(7.6e-3, abs=0.8e-3)


def test_bench_thread_count_does_not_change_bytes(runner, tmp_path):
    base = ["bench-mse", "--families", "NF4", "--dists", "t5",
            "--samples", "160000", "--seed", "5"]
    _invoke(runner, base + ["--threads", "1", "--out", str(tmp_path / "t1.csv")])
    _invoke(runner, base + ["--threads", "4", "--out", str(tmp_path / "t4.csv")])
    assert (tmp_path / "t1.csv").read_bytes() == (tmp_path / "t4.csv").read_bytes()


def test_bench_usage_errors(runner):
    r = runner.invoke(main, ["bench-mse", "--families", "NO_SUCH_GRID",
                             "--dists", "normal", "--samples", "16000"])
    assert r.exit_code == 2
    r = runner.invoke(main, ["bench-mse", "--samples", "0"])
    assert r.exit_code == 2
    r = runner.invoke(main, ["bench-mse", "--dists", "cauchy", "--samples", "16000"])
    assert r.exit_code == 2
    r = runner.invoke(main, ["bench-mse", "--samples", "16000", "--threads", "0"])
    assert r.exit_code == 2


def test_bench_accepts_grid_json_family(runner, tmp_path):
    out = tmp_path / "snapped.json"
    r = _invoke(runner, ["grids", "snap", "NF4", "--fmt", "E4M3", "--out", str(out)])
    assert r.exit_code == 0
    r = _invoke(runner, ["bench-mse", "--families", str(out), "--dists", "normal",
                         "--samples", "32000", "--out", str(tmp_path / "c.csv")])
    assert r.exit_code == 0
    rows = read_csv(tmp_path / "c.csv")
    assert rows[0].family == str(out)


# ── learn ──


def test_learn_lloyd_writes_grid(runner, tmp_path):
    out = tmp_path / "g.json"
    rep = tmp_path / "rep.json"
    r = _invoke(runner, ["learn", "--mode", "lloyd", "--pool", "normal:g16:64000",
                         "--k", "16", "--out", str(out), "--report", str(rep)])
    assert r.exit_code == 0
    grid = load_grid_file(out)
    assert len(grid) == 16
    doc = json.loads(rep.read_text())
    assert doc["converged"] is True
    assert doc["iterations"] >= 1


def test_learn_po2_pair(runner, tmp_path):
    out = tmp_path / "pair.json"
    r = _invoke(runner, ["learn", "--mode", "po2", "--primary", "split87",
                         "--pool", "normal:g16:64000", "--snap", "E4M3",
                         "--out", str(out)])
    assert r.exit_code == 0
    fam = load_grid_file(out)
    assert isinstance(fam, GridFamily) and len(fam.grids) == 2
    assert fam.grids[0].name == "split87"


def test_learn_nonconvergence_exit_3_still_writes(runner, tmp_path):
    out = tmp_path / "g.json"
    r = runner.invoke(main, ["learn", "--mode", "lloyd", "--pool", "normal:g16:64000",
                             "--max-iters", "2", "--rel-tol", "1e-15",
                             "--out", str(out)])
    assert r.exit_code == 3
    assert len(load_grid_file(out)) == 16  # artifact written before exiting


def test_learn_usage_errors(runner, tmp_path):
    r = runner.invoke(main, ["learn", "--mode", "lloyd"])
    assert r.exit_code == 2  # neither --pool nor --manifest
    r = runner.invoke(main, ["learn", "--mode", "lloyd", "--pool", "normal:g16:64000",
                             "--manifest", "x.json"])
    assert r.exit_code == 2  # both
    r = runner.invoke(main, ["learn", "--mode", "lloyd",
                             "--manifest", str(tmp_path / "missing.json")])
    assert r.exit_code == 2  # missing manifest file
    r = runner.invoke(main, ["learn", "--mode", "po2", "--pool", "normal:g16:64000"])
    assert r.exit_code == 2  # po2 without --primary
    r = runner.invoke(main, ["learn", "--mode", "lloyd", "--pool", "normal:16:64000"])
    assert r.exit_code == 2  # malformed pool spec


# ── quantize ──


def test_quantize_roundtrip_and_stats(runner, tmp_path):
    rng = np.random.default_rng(9)
    vals = rng.standard_normal(64 * 16).astype("<f4")
    src = tmp_path / "w.bin"
    vals.tofile(src)
    out = tmp_path / "recon.bin"
    stats = tmp_path / "stats.json"
    r = _invoke(runner, ["quantize", "--input", str(src), "--family", "NVFP4",
                         "--out", str(out), "--stats", str(stats)])
    assert r.exit_code == 0
    doc = json.loads(stats.read_text())
    blocks = vals.astype(np.float64).reshape(64, 16)
    from gridforge.grids import builtin_grid
    expected = pool_losses(blocks, builtin_grid("NVFP4")).mean()
    assert doc["mse_mean"] == pytest.approx(expected, rel=1e-12)
    recon = np.fromfile(out, dtype="<f4").reshape(64, 16)
    assert np.mean((blocks - recon) ** 2) == pytest.approx(expected, rel=1e-5)


# ── experiments ──


def test_competitive_line_and_json(runner, tmp_path):
    out = tmp_path / "comp.json"
    r = _invoke(runner, ["competitive", "--family", "IF4", "--dist", "normal",
                         "--train-blocks", "2000", "--val-blocks", "2000",
                         "--tau-points", "3", "--seed", "2", "--out", str(out)])
    assert r.exit_code == 0
    assert "beta = " in r.output
    doc = json.loads(out.read_text())
    assert doc["beta"] == max(doc["alpha_S"], doc["alpha_F"])
    assert len(doc["sweep"]) >= 1


def test_asymptotic_unbounded_dist_is_usage_error(runner):
    r = runner.invoke(main, ["asymptotic", "--dist", "normal", "--g", "4"])
    assert r.exit_code == 2


def test_asymptotic_g1_zero_gap(runner, tmp_path):
    out = tmp_path / "gap.csv"
    r = _invoke(runner, ["asymptotic", "--dist", "uniform", "--g", "1",
                         "--budget", "1024", "--out", str(out)])
    assert r.exit_code == 0
    rows = read_csv(out)
    assert rows[0].mse == 0.0 and rows[0].g == 1


def test_concavity_pass_line(runner, tmp_path):
    out = tmp_path / "conc.csv"
    r = _invoke(runner, ["concavity", "--dist-s", "t5", "--dist-f", "normal",
                         "--blocks", "600", "--seed", "4", "--out", str(out)])
    assert r.exit_code == 0
    assert "midpoint concavity: PASS" in r.output
    rows = read_csv(out)
    assert len(rows) == 5
    assert rows[0].experiment == "concavity"


def test_tfit_synthetic_and_usage(runner, tmp_path):
    out = tmp_path / "fit.json"
    r = _invoke(runner, ["tfit", "--dist", "t5", "--samples", "40000",
                         "--seed", "6", "--out", str(out)])
    assert r.exit_code == 0
    assert "nu_hat" in r.output
    doc = json.loads(out.read_text())
    assert doc["nu"] == pytest.approx(5.0, abs=1.0)

    r = runner.invoke(main, ["tfit"])
    assert r.exit_code == 2
    r = runner.invoke(main, ["tfit", "--dist", "t5", "--input", "x.bin"])
    assert r.exit_code == 2


# ── sfp4 ──


def test_sfp4_encode_decode_files(runner, tmp_path):
    rng = np.random.default_rng(12)
    vals = rng.standard_normal(32 * 16).astype("<f4")
    src = tmp_path / "w.bin"
    vals.tofile(src)
    packed = tmp_path / "w.sfp4"
    r = _invoke(runner, ["sfp4", "encode", "--input", str(src),
                         "--out", str(packed)])
    assert r.exit_code == 0
    assert "encoded 32 blocks" in r.output

    recon = tmp_path / "recon.bin"
    r = _invoke(runner, ["sfp4", "decode", "--input", str(packed), "--dtype",
                         "f64le", "--out", str(recon)])
    assert r.exit_code == 0
    got = np.fromfile(recon, dtype="<f8").reshape(32, 16)
    np.testing.assert_array_equal(got, sfp4_decode_tensor(read_sfp4(packed)))


def test_sfp4_matmul_check_pass(runner):
    r = _invoke(runner, ["sfp4", "matmul-check", "--m", "16", "--n", "24",
                         "--k", "32", "--seed", "1"])
    assert r.exit_code == 0
    assert "PASS" in r.output

    r = runner.invoke(main, ["sfp4", "matmul-check", "--k", "30"])
    assert r.exit_code == 2  # k not a multiple of g


# ── grids ──


def test_grids_list_show_snap(runner, tmp_path):
    r = _invoke(runner, ["grids", "list"])
    assert r.exit_code == 0
    names = r.output.split()
    assert "INT4" in names and "SFP4" in names and "PO2_NF4" in names

    r = _invoke(runner, ["grids", "show", "NVFP4"])
    assert r.exit_code == 0
    doc = json.loads(r.output)
    assert doc["points"][-1] == 1.0 and len(doc["points"]) == 15

    r = _invoke(runner, ["grids", "show", "MPO2"])
    assert len(json.loads(r.output)["grids"]) == 2

    # the published Split87 table is already on the E4M3 lattice
    r = _invoke(runner, ["grids", "snap", "Split87", "--fmt", "E4M3"])
    snapped = json.loads(r.output)
    assert snapped["points"] == json.loads(
        _invoke(runner, ["grids", "show", "Split87"]).output
    )["points"]

    r = runner.invoke(main, ["grids", "snap", "MPO2"])
    assert r.exit_code == 2  # families cannot be snapped wholesale
    r = runner.invoke(main, ["grids", "show", "NOPE"])
    assert r.exit_code == 2
