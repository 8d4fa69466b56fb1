import csv
import json
import math

import pytest

from v2xtwin.harness import (
    FRAME_COLUMNS, POLICY_COLUMNS, ExperimentConfig, export_paths_figure_data, fmt, frame_seed, load,
    nominal_nr_pairs, run_scenario, simulate, sweep_array_sizes, sweep_K, trace_scenario, verify_manifest,
)

from oracles import fspl_db


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def empty_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("empty")
    return run_scenario(ExperimentConfig("empty", out_dir=str(out)))


class TestConfig:
    def test_echo_excludes_execution_knobs(self):
        echo = ExperimentConfig("empty", workers=4, out_dir="/x").echo()
        assert "workers" not in echo and "out_dir" not in echo
        assert echo["bs_array"] == (16, 4)

    def test_sizes_parsed(self):
        cfg = ExperimentConfig("empty", bs_array="8x2", array_sizes=("8x2", (16, 4)))
        assert cfg.bs_array == (8, 2) and cfg.array_sizes == ((8, 2), (16, 4))

    def test_carrier_propagates_to_tracer(self):
        assert ExperimentConfig("empty", carrier=60e9).trace.carrier == 60e9

    @pytest.mark.parametrize("kwargs", [{"nr_k": 3}, {"policies": ("bogus",)}, {"workers": 0},
                                        {"k_values": ()}, {"dt_paths": 0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ExperimentConfig("empty", **kwargs)


def test_fmt():
    assert fmt(0.1) == "0.1"
    assert fmt(True) == "1" and fmt(False) == "0"
    assert fmt(None) == ""
    assert fmt(-math.inf) == "-inf"
    assert fmt(-0.0) == "0.0"
    assert fmt(3) == "3"


def test_frame_seed():
    assert frame_seed(7, 3, 1) == [7, 3, 1]


class TestEmptyScene:
    def test_los_only_and_consistent(self):
        cfg = ExperimentConfig("empty")
        scene, _ = load(cfg)
        traces, records = simulate(scene, cfg)
        assert len(traces) == scene.n_frames == 10
        for lt in (t[0] for t in traces):
            assert len(lt.paths) == 1 and lt.paths.has_los
            d = math.dist(lt.paths.tx.position, lt.paths.rx.position)
            assert -lt.paths.paths[0].power_db == pytest.approx(fspl_db(d, 28e9), abs=1e-9)
        by_frame = {}
        for r in records:
            by_frame.setdefault(r.frame, []).append(r)
        for frame, recs in by_frame.items():
            assert [r.policy for r in recs] == ["exhaustive", "nr", "dt_aided"]
            assert len({r.result.pair for r in recs}) == 1
            assert all(r.success and not r.blocked for r in recs)
            assert all(r.gain_ratio_db_vs_nr == 0.0 for r in recs)
            if frame == 0:
                assert {r.mode for r in recs} == {"initial"}
            else:
                assert [r.result.pairs_tested for r in recs] == [512, 72, 72]

    def test_outputs(self, empty_run):
        assert verify_manifest(empty_run)
        manifest = json.loads((empty_run / "manifest.json").read_text())
        assert manifest["kind"] == "run"
        assert set(manifest["outputs"]) == {"paths.csv", "policy.csv", "frames.csv"}
        policy = read_csv(empty_run / "policy.csv")
        assert tuple(policy[0]) == POLICY_COLUMNS
        assert len(policy) == 30
        frames = read_csv(empty_run / "frames.csv")
        assert tuple(frames[0]) == FRAME_COLUMNS
        assert frames[0]["min_nu"] == "" and frames[0]["los"] == "1"

    def test_tamper_detected(self, empty_run, tmp_path):
        import shutil
        copy = tmp_path / "r"
        shutil.copytree(empty_run, copy)
        with open(copy / "policy.csv", "a") as fh:
            fh.write("x\n")
        assert not verify_manifest(copy)

    def test_sweeps_without_blockage(self, tmp_path):
        cfg = ExperimentConfig("empty", out_dir=str(tmp_path))
        rows = sweep_array_sizes(cfg)
        assert [r["frames_kind"] for r in rows] == ["all"] * 3
        assert all(r["median_gain_ratio_db"] == 0.0 for r in rows)
        krows = sweep_K(cfg)
        assert [r["nominal_nr_t_train_ms"] for r in krows] == [4.5, 10.0, 18.0, 32.0]
        assert (tmp_path / "sweep_k.csv").exists() and (tmp_path / "sweep_arrays_frames.csv").exists()
        assert verify_manifest(tmp_path)


def test_nominal_pairs():
    assert nominal_nr_pairs(2, (16, 4), 8) == 72
    assert nominal_nr_pairs(16, (16, 4), 8) == 512


class TestFigureExport:
    def test_rows(self, tmp_path):
        run = run_scenario(ExperimentConfig("single_wall", out_dir=str(tmp_path)))
        rows = export_paths_figure_data(run, [0, 2], top_n=5, out_file=tmp_path / "fig.csv")
        assert [r["frame"] for r in rows] == [0, 0, 2, 2]
        assert rows[0]["interaction_codes"] == "L" and rows[0]["delay_ns"] == pytest.approx(33.356, abs=1e-3)
        assert rows[1]["interaction_codes"] == "R:wall.0"
        assert rows[1]["doa_az_deg"] == pytest.approx(135.0)
        assert len(read_csv(tmp_path / "fig.csv")) == 4

    def test_unknown_frame(self, empty_run):
        with pytest.raises(ValueError, match="unknown frame"):
            export_paths_figure_data(empty_run, [99])

    def test_not_a_run(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            export_paths_figure_data(tmp_path, [0])


def test_parallel_tracing_matches_serial():
    cfg = ExperimentConfig("single_wall")
    scene, _ = load(cfg)
    a = trace_scenario(scene, cfg.trace, 1)
    b = trace_scenario(scene, cfg.trace, 2)
    for fa, fb in zip(a, b):
        for la, lb in zip(fa, fb):
            assert [p.complex_gain for p in la.paths] == [p.complex_gain for p in lb.paths]
