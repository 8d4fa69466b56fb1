"""Command-line entry point: ``v2xtwin {run,sweep-arrays,sweep-k,export-fig2}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import (
    ExperimentConfig, export_paths_figure_data, run_scenario, sweep_array_sizes, sweep_K,
)
from .mimo import LinkBudget
from .raytrace import TraceConfig
from .scenario import ScenarioError
from .scene import TrajectoryRangeError

log = logging.getLogger("v2xtwin")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _size(text: str) -> tuple[int, int]:
    a, sep, b = text.lower().partition("x")
    if not sep or not a.isdigit() or not b.isdigit():
        raise argparse.ArgumentTypeError(f"expected an array size like 16x4, got {text!r}")
    return int(a), int(b)


def _size_list(text: str) -> list[tuple[int, int]]:
    return [_size(s) for s in text.split(",") if s.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", default="truck_blockage",
                   help="scenario file or bundled name (empty, single_wall, truck_blockage)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="v2xtwin-out", help="output directory")
    p.add_argument("--workers", type=int, default=1, help="processes used for ray tracing")
    lb = LinkBudget()
    g = p.add_argument_group("link parameters")
    g.add_argument("--carrier-ghz", type=float, default=28.0)
    g.add_argument("--tx-dbm", type=float, default=lb.tx_dbm)
    g.add_argument("--noise-dbm", type=float, default=lb.noise_dbm)
    g.add_argument("--snr-thr-db", type=float, default=lb.snr_thr_db)
    g.add_argument("--pair-time-us", type=float, default=lb.pair_time_us)
    g.add_argument("--numerology", type=int, default=lb.numerology)
    g = p.add_argument_group("arrays and policies")
    g.add_argument("--bs-array", type=_size, default=(16, 4))
    g.add_argument("--ve-array", type=_size, default=(4, 2))
    g.add_argument("--nr-k", type=int, default=2)
    g.add_argument("--dt-paths", type=int, default=3, help="strongest twin paths used (P)")
    g.add_argument("--dt-radius", type=int, default=1, help="beam-index neighbourhood (r)")
    g.add_argument("--dt-noise-deg", type=float, default=0.0)
    g.add_argument("--dt-lag-frames", type=int, default=0)
    g.add_argument("--max-reflections", type=int, default=2)
    g.add_argument("--no-diffraction", action="store_true")
    g.add_argument("--wideband", action="store_true", help="mean gain over OFDM subcarriers")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="v2xtwin", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="simulate a scenario frame by frame"))
    p = sub.add_parser("sweep-arrays", help="gain ratio versus BS array size")
    _common(p)
    p.add_argument("--sizes", type=_size_list, default=[(8, 2), (16, 4), (32, 8)])
    p = sub.add_parser("sweep-k", help="gain ratio and NR training time versus K")
    _common(p)
    p.add_argument("--k-values", type=_int_list, default=[2, 4, 8, 16])
    p = sub.add_parser("export-fig2", help="DoA/delay table of selected frames of a run")
    p.add_argument("--run", required=True, help="run directory produced by 'run'")
    p.add_argument("--frames", type=_int_list, required=True)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out", default=None, help="CSV file (default: <run>/fig2_paths.csv)")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    lb = LinkBudget(args.tx_dbm, args.noise_dbm, args.snr_thr_db, args.pair_time_us, args.numerology)
    trace = TraceConfig(max_reflections=args.max_reflections, enable_diffraction=not args.no_diffraction)
    extra = {}
    if getattr(args, "sizes", None):
        extra["array_sizes"] = tuple(args.sizes)
    if getattr(args, "k_values", None):
        extra["k_values"] = tuple(args.k_values)
    return ExperimentConfig(
        scenario=args.scenario, carrier=args.carrier_ghz * 1e9, link_budget=lb, trace=trace,
        bs_array=args.bs_array, ve_array=args.ve_array, nr_k=args.nr_k, dt_paths=args.dt_paths,
        dt_radius=args.dt_radius, dt_noise_deg=args.dt_noise_deg, dt_lag_frames=args.dt_lag_frames,
        wideband=args.wideband, seed=args.seed, out_dir=args.out, workers=args.workers, **extra,
    )


def _print_table(rows: list[dict]) -> None:
    if not rows:
        return
    cols = list(rows[0])
    print("\t".join(cols))
    for r in rows:
        print("\t".join(f"{v:.3f}" if isinstance(v, float) else str(v) for v in r.values()))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "export-fig2":
            out = args.out or f"{args.run}/fig2_paths.csv"
            rows = export_paths_figure_data(args.run, args.frames, args.top, out)
            print(f"wrote {len(rows)} rows to {out}")
            return 0
        cfg = config_from_args(args)
        if args.command == "run":
            out = run_scenario(cfg)
            print(f"run written to {out}")
        elif args.command == "sweep-arrays":
            _print_table(sweep_array_sizes(cfg))
        else:
            _print_table(sweep_K(cfg))
        return 0
    except (ScenarioError, TrajectoryRangeError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"v2xtwin: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
