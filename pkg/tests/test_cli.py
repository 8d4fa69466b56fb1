import csv
import subprocess
import sys

import pytest

from v2xtwin.cli import build_parser, config_from_args, main


def test_defaults_map_to_config():
    args = build_parser().parse_args(["run", "--scenario", "empty", "--bs-array", "8x2", "--nr-k", "4"])
    cfg = config_from_args(args)
    assert cfg.bs_array == (8, 2) and cfg.nr_k == 4 and cfg.carrier == 28e9
    assert cfg.link_budget.tx_dbm == -10 and cfg.link_budget.snr_thr_db == 10


def test_bad_size_rejected():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "--bs-array", "16by4"])


def test_run_and_export(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--scenario", "single_wall", "--out", str(out)]) == 0
    assert (out / "policy.csv").exists()
    assert main(["export-fig2", "--run", str(out), "--frames", "0,1", "--top", "1"]) == 0
    with open(out / "fig2_paths.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["frame"] for r in rows] == ["0", "1"]
    assert "wrote 2 rows" in capsys.readouterr().out


def test_sweep_k_prints_table(tmp_path, capsys):
    assert main(["sweep-k", "--scenario", "empty", "--out", str(tmp_path), "--k-values", "2,4"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("K\t") and len(lines) == 3


def test_sweep_arrays(tmp_path, capsys):
    assert main(["sweep-arrays", "--scenario", "empty", "--out", str(tmp_path), "--sizes", "4x1,8x2"]) == 0
    assert (tmp_path / "sweep_arrays.csv").exists()


@pytest.mark.parametrize("argv, message", [
    (["run", "--scenario", "nowhere"], "not found"),
    (["run", "--scenario", "empty", "--nr-k", "3"], "K must be even"),
    (["export-fig2", "--run", ".", "--frames", "0"], "finished run"),
])
def test_errors_exit_2(argv, message, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2
    err = capsys.readouterr().err
    assert err.startswith("v2xtwin: error:") and message in err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "v2xtwin.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "sweep-arrays" in proc.stdout
