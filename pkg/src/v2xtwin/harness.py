"""Frame-by-frame co-simulation: mobility, ray tracing, channel synthesis, beam policies.

Tracing is a pure function of (scene, frame) and may be fanned out over a
process pool; results are merged in frame order so that outputs do not depend
on the worker count. Beam states persist across frames and are updated in a
single-threaded loop.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .beams import (
    CONNECTED, BeamState, DTAided, GradientNR, SearchResult,
    detect_blockage, dt_aided_search, exhaustive_search, gain_ratio_db, next_state,
    nr_gradient_search, state_from, training_time,
)
from .mimo import (
    Codebook, LinkBudget, beamforming_gain, dft_codebook,
    frequency_response, snr_db, synthesize,
)
from .raytrace import PATH_COLUMNS, PathSet, TraceConfig, path_rows, trace_all
from .scenario import load_scenario, resolve_scenario
from .scene import Scene, antenna_pose, snapshot

logger = logging.getLogger(__name__)

POLICY_NAMES = ("exhaustive", "nr", "dt_aided")

POLICY_COLUMNS = (
    "frame", "time", "link", "policy", "mode", "n_paths", "los", "held_snr_db", "blocked_flag",
    "pairs_tested", "t_train_ms", "chosen_f", "chosen_w", "gain_db", "snr_db", "success",
    "gain_ratio_db_vs_nr",
)
FRAME_COLUMNS = (
    "frame", "time", "link", "n_paths", "los", "strongest_power_dBm", "min_nu",
    "tx_x", "tx_y", "tx_z", "rx_x", "rx_y", "rx_z",
)


def _parse_size(s) -> tuple[int, int]:
    if isinstance(s, str):
        a, _, b = s.lower().partition("x")
        return int(a), int(b)
    a, b = s
    return int(a), int(b)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines the outputs of a run (plus two execution knobs).

    ``workers`` and ``out_dir`` do not change any result and are left out of
    the manifest echo.
    """

    scenario: str
    carrier: float = 28e9
    link_budget: LinkBudget = field(default_factory=LinkBudget)
    trace: TraceConfig = field(default_factory=TraceConfig)
    bs_array: tuple[int, int] = (16, 4)
    ve_array: tuple[int, int] = (4, 2)
    array_sizes: tuple[tuple[int, int], ...] = ((8, 2), (16, 4), (32, 8))
    k_values: tuple[int, ...] = (2, 4, 8, 16)
    policies: tuple[str, ...] = POLICY_NAMES
    nr_k: int = 2
    track_k: int = 2
    dt_paths: int = 3           # P strongest twin paths
    dt_radius: int = 1          # r, beam-index neighbourhood
    dt_noise_deg: float = 0.0   # angular error of the twin
    dt_lag_frames: int = 0      # twin staleness
    wideband: bool = False
    n_subcarriers: int = 64
    seed: int = 0
    out_dir: str = "v2xtwin-out"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scenario", str(self.scenario))
        object.__setattr__(self, "bs_array", _parse_size(self.bs_array))
        object.__setattr__(self, "ve_array", _parse_size(self.ve_array))
        object.__setattr__(self, "array_sizes", tuple(_parse_size(s) for s in self.array_sizes))
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        object.__setattr__(self, "policies", tuple(self.policies))
        object.__setattr__(self, "trace", replace(self.trace, carrier=float(self.carrier)))
        if not self.array_sizes or not self.k_values:
            raise ValueError("sweeps need at least one value")
        for k in self.k_values + (self.nr_k, self.track_k):
            GradientNR(k)  # validates
        unknown = set(self.policies) - set(POLICY_NAMES)
        if unknown or not self.policies:
            raise ValueError(f"unknown policies {sorted(unknown)}; choose from {POLICY_NAMES}")
        if self.dt_lag_frames < 0 or self.workers < 1 or self.n_subcarriers < 1:
            raise ValueError("dt_lag_frames >= 0, workers >= 1 and n_subcarriers >= 1 required")
        DTAided(self.dt_paths, self.dt_radius, self.dt_noise_deg)

    @property
    def dt_policy(self) -> DTAided:
        return DTAided(self.dt_paths, self.dt_radius, math.radians(self.dt_noise_deg))

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("workers")
        d.pop("out_dir")
        return d


@dataclass(frozen=True)
class LinkTrace:
    frame: int
    time: float
    link: str
    paths: PathSet
    tx_yaw: float
    tx_pitch: float
    rx_yaw: float
    rx_pitch: float

    @property
    def min_nu(self) -> float | None:
        nus = [p.nu for p in self.paths if p.nu is not None]
        return min(nus) if nus else None


@dataclass(frozen=True)
class FrameRecord:
    frame: int
    time: float
    link: str
    policy: str
    mode: str                 # initial | track | recovery
    n_paths: int
    los: bool
    strongest_power_dbm: float
    held_snr_db: float | None
    blocked: bool
    result: SearchResult
    success: bool
    gain_ratio_db_vs_nr: float | None = None


# -- tracing ---------------------------------------------------------------

def trace_frame(scene: Scene, trace_cfg: TraceConfig, frame: int) -> list[LinkTrace]:
    t = scene.frame_time(frame)
    snap = snapshot(scene, t, frame)
    out = []
    for link in scene.links:
        tx, tx_owner = antenna_pose(scene, snap, link.tx)
        rx, rx_owner = antenna_pose(scene, snap, link.rx)
        paths = trace_all(tx, rx, snap, trace_cfg, tx_owner=tx_owner, rx_owner=rx_owner)
        out.append(LinkTrace(frame, t, link.name, paths, tx.yaw, tx.pitch, rx.yaw, rx.pitch))
    return out


_WORKER_STATE: dict = {}


def _worker_init(scene: Scene, trace_cfg: TraceConfig):
    _WORKER_STATE["scene"] = scene
    _WORKER_STATE["trace"] = trace_cfg


def _worker_trace(frame: int) -> list[LinkTrace]:
    return trace_frame(_WORKER_STATE["scene"], _WORKER_STATE["trace"], frame)


def trace_scenario(scene: Scene, trace_cfg: TraceConfig, workers: int = 1) -> list[list[LinkTrace]]:
    """Traced paths for every frame (outer list) and link (inner list), in frame order."""
    frames = range(scene.n_frames)
    if workers <= 1 or scene.n_frames < 2:
        return [trace_frame(scene, trace_cfg, f) for f in frames]
    with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                             initargs=(scene, trace_cfg)) as pool:
        return list(pool.map(_worker_trace, frames, chunksize=max(1, scene.n_frames // (4 * workers))))


# -- channels and codebooks -------------------------------------------------

class _Codebooks:
    """DFT codebooks whose beams are fixed while the array orientation follows the antenna."""

    def __init__(self, bs: tuple[int, int], ve: tuple[int, int]):
        self.bs = dft_codebook(*bs)
        self.ve = dft_codebook(*ve)

    def at(self, lt: LinkTrace) -> tuple[Codebook, Codebook]:
        return self.bs.reoriented(lt.tx_yaw, lt.tx_pitch), self.ve.reoriented(lt.rx_yaw, lt.rx_pitch)


def channel_for(lt: LinkTrace, F: Codebook, W: Codebook, cfg: ExperimentConfig):
    if cfg.wideband:
        return frequency_response(lt.paths, F.geometry, W.geometry, cfg.carrier,
                                  cfg.link_budget.numerology, cfg.n_subcarriers)
    return synthesize(lt.paths, F.geometry, W.geometry, cfg.carrier)


def pair_snr(h, F: Codebook, W: Codebook, state: BeamState, cfg: ExperimentConfig) -> float:
    g = beamforming_gain(h, F.beam(state.f_index), W.beam(state.w_index), cfg.wideband)
    return snr_db(g, cfg.link_budget)


def frame_seed(seed: int, frame: int, link_index: int) -> list[int]:
    return [int(seed), int(frame), int(link_index)]


def _twin_paths(traces: list[list[LinkTrace]], frame: int, li: int, lag: int) -> PathSet:
    return traces[max(0, frame - lag)][li].paths


# -- run -------------------------------------------------------------------

def simulate(scene: Scene, cfg: ExperimentConfig,
             traces: list[list[LinkTrace]] | None = None) -> tuple[list[list[LinkTrace]], list[FrameRecord]]:
    """Run the stateful policy loop; returns the traces and one record per frame, link and policy.

    Frame 0 is an exhaustive initial access for every policy. Afterwards the
    held pair is checked; while connected, the NR and twin-aided policies
    track with a gradient search, and on blockage they run their handover
    search (NR gradient with ``nr_k``, or twin-aided). A failed search keeps
    the previous pair. The exhaustive policy searches the full codebooks in
    every frame and serves as the reference.
    """
    if traces is None:
        traces = trace_scenario(scene, cfg.trace, cfg.workers)
    books = _Codebooks(cfg.bs_array, cfg.ve_array)
    lb = cfg.link_budget
    records: list[FrameRecord] = []
    states: dict[tuple[int, str], BeamState | None] = {}
    for frame, link_traces in enumerate(traces):
        for li, lt in enumerate(link_traces):
            F, W = books.at(lt)
            h = channel_for(lt, F, W, cfg)
            exhaustive = exhaustive_search(h, F, W, lb, cfg.wideband)
            los = lt.paths.has_los
            strongest = lb.tx_dbm + lt.paths.paths[0].power_db if len(lt.paths) else -math.inf
            frame_recs = []
            for name in cfg.policies:
                state = states.get((li, name))
                held = None if state is None else pair_snr(h, F, W, state, cfg)
                blocked = held is not None and detect_blockage(held, lb)
                if name == "exhaustive" or state is None:
                    res = replace(exhaustive, policy=name)
                    mode = "initial" if state is None else ("recovery" if blocked else "track")
                elif name == "nr":
                    res = nr_gradient_search(h, F, W, state, cfg.nr_k, lb, cfg.wideband)
                    mode = "recovery" if blocked else "track"
                elif not blocked:
                    res = nr_gradient_search(h, F, W, state, cfg.track_k, lb, cfg.wideband)
                    mode = "track"
                else:
                    twin = _twin_paths(traces, frame, li, cfg.dt_lag_frames)
                    res = dt_aided_search(h, twin, F, W, cfg.dt_policy, lb,
                                          frame_seed(cfg.seed, frame, li), cfg.wideband)
                    mode = "recovery"
                new_state = state_from(res) if state is None else next_state(state, res, lb)
                success = new_state.status == CONNECTED
                if not success:
                    logger.info("frame %d link %s: %s search failed (%.1f dB); keeping pair",
                                frame, lt.link, name, res.snr_db)
                states[(li, name)] = new_state
                frame_recs.append(FrameRecord(frame, lt.time, lt.link, name, mode, len(lt.paths), los,
                                              strongest, held, blocked, res, success))
            ref = next((r for r in frame_recs if r.policy == "nr"), None)
            for r in frame_recs:
                ratio = gain_ratio_db(r.result, ref.result) if ref is not None else None
                records.append(replace(r, gain_ratio_db_vs_nr=ratio))
    return traces, records


# -- output ----------------------------------------------------------------

def fmt(v) -> str:
    """Stable text form of a CSV cell."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v + 0.0)
    return str(v)


def _csv_text(columns: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row[c]) for c in columns])
    return buf.getvalue()


def _gain_db(g: float) -> float:
    return 10.0 * math.log10(g) if g > 0 else -math.inf


def policy_rows(records: Sequence[FrameRecord]) -> list[dict]:
    rows = []
    for r in records:
        res = r.result
        rows.append({
            "frame": r.frame, "time": r.time, "link": r.link, "policy": r.policy, "mode": r.mode,
            "n_paths": r.n_paths, "los": r.los, "held_snr_db": r.held_snr_db, "blocked_flag": r.blocked,
            "pairs_tested": res.pairs_tested, "t_train_ms": res.t_train * 1e3,
            "chosen_f": res.f_index, "chosen_w": res.w_index, "gain_db": _gain_db(res.gain),
            "snr_db": res.snr_db, "success": r.success, "gain_ratio_db_vs_nr": r.gain_ratio_db_vs_nr,
        })
    return rows


def frame_rows(traces: list[list[LinkTrace]], tx_dbm: float) -> list[dict]:
    rows = []
    for link_traces in traces:
        for lt in link_traces:
            ps = lt.paths
            rows.append({
                "frame": lt.frame, "time": lt.time, "link": lt.link, "n_paths": len(ps),
                "los": ps.has_los,
                "strongest_power_dBm": tx_dbm + ps.paths[0].power_db if len(ps) else -math.inf,
                "min_nu": lt.min_nu,
                "tx_x": float(ps.tx.pos[0]), "tx_y": float(ps.tx.pos[1]), "tx_z": float(ps.tx.pos[2]),
                "rx_x": float(ps.rx.pos[0]), "rx_y": float(ps.rx.pos[1]), "rx_z": float(ps.rx.pos[2]),
            })
    return rows


def all_path_rows(traces: list[list[LinkTrace]], tx_dbm: float) -> list[dict]:
    rows = []
    for link_traces in traces:
        for lt in link_traces:
            rows.extend(path_rows(lt.paths, lt.frame, tx_dbm, lt.link))
    return rows


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_outputs(out_dir: str | Path, tables: dict[str, tuple[Sequence[str], list[dict]]],
                  cfg: ExperimentConfig, scenario_path: Path, kind: str,
                  extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, (cols, rows) in tables.items():
        p = out / name
        p.write_text(_csv_text(cols, rows))
        hashes[name] = sha256_file(p)
    manifest = {
        "kind": kind,
        "config": cfg.echo(),
        "scenario_sha256": sha256_file(scenario_path),
        "statistics": "sweep tables report both median and mean over the evaluated frames",
        "outputs": hashes,
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return out


def verify_manifest(run_dir: str | Path) -> bool:
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    return all(sha256_file(run_dir / name) == h for name, h in manifest["outputs"].items())


def load(cfg: ExperimentConfig) -> tuple[Scene, Path]:
    path = resolve_scenario(cfg.scenario)
    return load_scenario(path), path


def run_scenario(cfg: ExperimentConfig) -> Path:
    """Simulate the scenario and write ``paths.csv``, ``policy.csv``, ``frames.csv`` and ``manifest.json``."""
    scene, path = load(cfg)
    traces, records = simulate(scene, cfg)
    tx = cfg.link_budget.tx_dbm
    tables = {
        "paths.csv": (("frame", "time", "link", *PATH_COLUMNS[3:]), all_path_rows(traces, tx)),
        "policy.csv": (POLICY_COLUMNS, policy_rows(records)),
        "frames.csv": (FRAME_COLUMNS, frame_rows(traces, tx)),
    }
    extra = {"scenario": scene.name, "n_frames": scene.n_frames}
    return write_outputs(cfg.out_dir, tables, cfg, path, "run", extra)


# -- sweeps ----------------------------------------------------------------

@dataclass(frozen=True)
class RecoveryEval:
    frame: int
    link: str
    ratio_db: float
    nr: SearchResult
    dt: SearchResult
    exhaustive: SearchResult


def anchored_evaluations(traces: list[list[LinkTrace]], cfg: ExperimentConfig,
                         bs_array: tuple[int, int], K: int) -> tuple[list[RecoveryEval], str]:
    """Twin-aided vs NR(K) handover on every blocked-recovery frame.

    The anchor is the exhaustive optimum of the most recent frame in which the
    anchor pair itself was still connected. A frame is a recovery frame when the
    anchor pair falls below the SNR threshold; both searches then start from
    the anchor. Scenes without any blockage fall back to evaluating every
    frame after the first from the previous frame's optimum (kind ``"all"``).
    """
    books = _Codebooks(bs_array, cfg.ve_array)
    lb = cfg.link_budget
    dt_cfg = cfg.dt_policy

    def evaluate(only_blocked: bool) -> list[RecoveryEval]:
        out = []
        for li in range(len(traces[0]) if traces else 0):
            anchor: BeamState | None = None
            for frame, link_traces in enumerate(traces):
                lt = link_traces[li]
                F, W = books.at(lt)
                h = channel_for(lt, F, W, cfg)
                ex = exhaustive_search(h, F, W, lb, cfg.wideband)
                if anchor is None:
                    anchor = state_from(ex)
                    continue
                blocked = detect_blockage(pair_snr(h, F, W, anchor, cfg), lb)
                if blocked or not only_blocked:
                    nr = nr_gradient_search(h, F, W, anchor, K, lb, cfg.wideband)
                    twin = _twin_paths(traces, frame, li, cfg.dt_lag_frames)
                    dt = dt_aided_search(h, twin, F, W, dt_cfg, lb, frame_seed(cfg.seed, frame, li),
                                         cfg.wideband)
                    out.append(RecoveryEval(frame, lt.link, gain_ratio_db(dt, nr), nr, dt, ex))
                if not blocked:
                    anchor = state_from(ex)
        return out

    evals = evaluate(True)
    if evals:
        return evals, "blocked"
    return evaluate(False), "all"


def _stats(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    return statistics.median(values), statistics.fmean(values)


def _size_label(size: tuple[int, int]) -> str:
    return f"{size[0]}x{size[1]}"


SWEEP_ARRAY_COLUMNS = ("bs_array", "n_bs_beams", "K", "frames_kind", "n_frames",
                       "median_gain_ratio_db", "mean_gain_ratio_db", "median_nr_t_train_ms",
                       "median_dt_t_train_ms", "median_nr_pairs", "median_dt_pairs")
SWEEP_K_COLUMNS = ("K", "bs_array", "frames_kind", "n_frames", "median_gain_ratio_db",
                   "mean_gain_ratio_db", "median_nr_t_train_ms", "median_nr_pairs",
                   "nominal_nr_t_train_ms", "full_coverage_frames", "median_dt_t_train_ms")
DETAIL_COLUMNS = ("bs_array", "K", "frame", "link", "gain_ratio_db", "nr_f", "nr_w", "nr_snr_db",
                  "nr_pairs", "dt_f", "dt_w", "dt_snr_db", "dt_pairs", "opt_f", "opt_w", "opt_snr_db")


def _detail_rows(size, K, evals: Sequence[RecoveryEval]) -> list[dict]:
    return [{
        "bs_array": _size_label(size), "K": K, "frame": e.frame, "link": e.link,
        "gain_ratio_db": e.ratio_db, "nr_f": e.nr.f_index, "nr_w": e.nr.w_index,
        "nr_snr_db": e.nr.snr_db, "nr_pairs": e.nr.pairs_tested, "dt_f": e.dt.f_index,
        "dt_w": e.dt.w_index, "dt_snr_db": e.dt.snr_db, "dt_pairs": e.dt.pairs_tested,
        "opt_f": e.exhaustive.f_index, "opt_w": e.exhaustive.w_index, "opt_snr_db": e.exhaustive.snr_db,
    } for e in evals]


def _median_or_nan(xs):
    return statistics.median(xs) if xs else math.nan


def sweep_array_sizes(cfg: ExperimentConfig, traces=None, write: bool = True) -> list[dict]:
    """Gain ratio (twin-aided over NR with ``nr_k``) for each BS array size."""
    if len(cfg.array_sizes) < 2:
        raise ValueError("need at least two array sizes")
    scene, path = load(cfg)
    traces = traces if traces is not None else trace_scenario(scene, cfg.trace, cfg.workers)
    rows, detail = [], []
    for size in cfg.array_sizes:
        evals, kind = anchored_evaluations(traces, cfg, size, cfg.nr_k)
        med, mean = _stats([e.ratio_db for e in evals])
        rows.append({
            "bs_array": _size_label(size), "n_bs_beams": size[0] * size[1], "K": cfg.nr_k,
            "frames_kind": kind, "n_frames": len(evals),
            "median_gain_ratio_db": med, "mean_gain_ratio_db": mean,
            "median_nr_t_train_ms": _median_or_nan([e.nr.t_train * 1e3 for e in evals]),
            "median_dt_t_train_ms": _median_or_nan([e.dt.t_train * 1e3 for e in evals]),
            "median_nr_pairs": _median_or_nan([e.nr.pairs_tested for e in evals]),
            "median_dt_pairs": _median_or_nan([e.dt.pairs_tested for e in evals]),
        })
        detail += _detail_rows(size, cfg.nr_k, evals)
    if write:
        write_outputs(cfg.out_dir, {"sweep_arrays.csv": (SWEEP_ARRAY_COLUMNS, rows),
                                    "sweep_arrays_frames.csv": (DETAIL_COLUMNS, detail)},
                      cfg, path, "sweep-arrays", {"scenario": scene.name})
    return rows


def nominal_nr_pairs(K: int, bs_array: tuple[int, int], n_ve: int) -> int:
    """Pairs tested by an NR search far from the codebook edges (clipped to the axis sizes)."""
    return min(K + 1, bs_array[0]) * min(K + 1, bs_array[1]) * n_ve


def sweep_K(cfg: ExperimentConfig, traces=None, write: bool = True) -> list[dict]:
    """Gain ratio and NR training time as the gradient-search neighbourhood ``K`` grows."""
    if len(cfg.k_values) < 2:
        raise ValueError("need at least two K values")
    scene, path = load(cfg)
    traces = traces if traces is not None else trace_scenario(scene, cfg.trace, cfg.workers)
    n_bs = cfg.bs_array[0] * cfg.bs_array[1]
    n_ve = cfg.ve_array[0] * cfg.ve_array[1]
    rows, detail = [], []
    for K in cfg.k_values:
        evals, kind = anchored_evaluations(traces, cfg, cfg.bs_array, K)
        med, mean = _stats([e.ratio_db for e in evals])
        nominal = nominal_nr_pairs(K, cfg.bs_array, n_ve)
        rows.append({
            "K": K, "bs_array": _size_label(cfg.bs_array), "frames_kind": kind, "n_frames": len(evals),
            "median_gain_ratio_db": med, "mean_gain_ratio_db": mean,
            "median_nr_t_train_ms": _median_or_nan([e.nr.t_train * 1e3 for e in evals]),
            "median_nr_pairs": _median_or_nan([e.nr.pairs_tested for e in evals]),
            "nominal_nr_t_train_ms": training_time(nominal // n_ve, n_ve, cfg.link_budget.pair_time) * 1e3,
            "full_coverage_frames": sum(len(e.nr.f_subset) == n_bs for e in evals),
            "median_dt_t_train_ms": _median_or_nan([e.dt.t_train * 1e3 for e in evals]),
        })
        detail += _detail_rows(cfg.bs_array, K, evals)
    if write:
        write_outputs(cfg.out_dir, {"sweep_k.csv": (SWEEP_K_COLUMNS, rows),
                                    "sweep_k_frames.csv": (DETAIL_COLUMNS, detail)},
                      cfg, path, "sweep-k", {"scenario": scene.name})
    return rows


# -- figure data -------------------------------------------------------------

FIG_COLUMNS = ("frame", "link", "los", "rank", "doa_az_deg", "doa_el_deg", "delay_ns", "power_dBm",
               "interaction_codes")


def export_paths_figure_data(run_dir: str | Path, frames: Sequence[int], top_n: int = 10,
                             out_file: str | Path | None = None) -> list[dict]:
    """DoA/delay/power of the ``top_n`` strongest paths of selected frames of a finished run."""
    run_dir = Path(run_dir)
    paths_csv = run_dir / "paths.csv"
    frames_csv = run_dir / "frames.csv"
    if not paths_csv.exists() or not frames_csv.exists():
        raise FileNotFoundError(f"{run_dir} does not contain a finished run")
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    with open(frames_csv, newline="") as fh:
        frame_info = {(int(r["frame"]), r["link"]): r["los"] == "1" for r in csv.DictReader(fh)}
    known = {f for f, _ in frame_info}
    missing = [f for f in frames if f not in known]
    if missing:
        raise ValueError(f"unknown frame(s) {missing}; run has frames 0..{max(known)}")
    with open(paths_csv, newline="") as fh:
        path_rows_ = list(csv.DictReader(fh))
    rows = []
    for f in frames:
        for (frame, link), los in sorted(frame_info.items()):
            if frame != f:
                continue
            sel = [r for r in path_rows_ if int(r["frame"]) == f and r["link"] == link]
            sel.sort(key=lambda r: int(r["path_id"]))  # already in decreasing power
            for rank, r in enumerate(sel[:top_n]):
                rows.append({
                    "frame": f, "link": link, "los": los, "rank": rank,
                    "doa_az_deg": float(r["doa_az_deg"]), "doa_el_deg": float(r["doa_el_deg"]),
                    "delay_ns": float(r["delay_ns"]), "power_dBm": float(r["power_dBm"]),
                    "interaction_codes": r["interaction_codes"],
                })
    if out_file is not None:
        Path(out_file).write_text(_csv_text(FIG_COLUMNS, rows))
    return rows
