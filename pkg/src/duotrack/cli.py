"""Command-line entry point: simulate / track / benchmark / navigate.

Exit codes: 0 success, 2 configuration error, 3 IO or dataset error,
4 ground truth required but absent.  Every run prints the resolved
configuration (and seed, where one applies) for reproducibility; all
outputs are byte-identical across reruns with identical inputs.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import __version__
from .errors import (ConfigError, DimensionMismatch, DuoTrackError, IOFailure,
                     ManifestParse, MissingAsset, MissingPose)
from .eval import (METHODS, aggregate, evaluate_sequence, format_text_table,
                   load_dataset, navigate, report_doc, write_frames_csv,
                   write_navigation_csv)
from .scene import FORMAT_VERSION, ObjectLabel, frame_pairs
from .simulator import generate_sequence, load_scenario
from .solver import TrackerConfig, track

_EXIT_CONFIG = 2
_EXIT_IO = 3
_EXIT_NO_GROUND_TRUTH = 4

_thread_limiter = None  # keeps a threadpoolctl limiter alive for the process


def _apply_thread_cap(threads):
    global _thread_limiter
    if threads is None:
        return
    try:
        from threadpoolctl import threadpool_limits
        _thread_limiter = threadpool_limits(limits=int(threads))
    except ImportError:
        print("note: threadpoolctl unavailable, --threads ignored")


def _load_config(path, threads) -> TrackerConfig:
    config = TrackerConfig() if path is None else TrackerConfig.from_json_file(path)
    if threads is not None:
        config = TrackerConfig.from_dict({**config.to_dict(), "threads": int(threads)})
    return config


def _print_config(config: TrackerConfig):
    print("resolved config: " + json.dumps(config.to_dict(), sort_keys=True))


def _dump_json(path, doc):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def _cmd_simulate(args) -> int:
    try:
        scene, trajectory, noise = load_scenario(args.scenario, args.seed)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return _EXIT_IO
    except json.JSONDecodeError as e:
        print(f"error: scenario {args.scenario}: {e}", file=sys.stderr)
        return _EXIT_CONFIG
    except (KeyError, TypeError, ValueError) as e:
        print(f"error: scenario {args.scenario}: {e}", file=sys.stderr)
        return _EXIT_CONFIG
    print(f"resolved seed: {trajectory.seed}")
    print(f"scenario: {args.scenario} frames={trajectory.frame_count} "
          f"noise={noise}")
    manifest_path = generate_sequence(scene, trajectory, noise, args.out)
    manifest, frames = load_dataset(manifest_path)
    first = frames[0]
    n_patient = int((first.seg == int(ObjectLabel.PATIENT)).sum())
    n_drill = int((first.seg == int(ObjectLabel.DRILL)).sum())
    print(f"wrote {len(frames)} frames to {args.out} "
          f"(frame 0: {n_patient} patient px, {n_drill} drill px)")
    return 0


def _cmd_track(args) -> int:
    config = _load_config(args.config, args.threads)
    _apply_thread_cap(config.threads)
    _print_config(config)
    manifest, frames = load_dataset(args.data)
    pairs = frame_pairs(manifest, frames)
    records = []
    for t, pair in enumerate(pairs):
        est = track(pair, config)
        rec = {"pair": t}
        for label, obj in (("patient", est.patient), ("drill", est.drill)):
            rec[label] = {
                "motion": obj.motion.to_json(),
                "ok": obj.ok,
                "reason": obj.reason,
                "final_energy": None if math.isnan(obj.final_energy)
                else obj.final_energy,
                "weight_sum": obj.weight_sum,
            }
        records.append(rec)
    _dump_json(args.out, {"format_version": FORMAT_VERSION, "pairs": records})
    n_fail = sum(1 for r in records if not (r["patient"]["ok"] and r["drill"]["ok"]))
    print(f"tracked {len(records)} pairs ({n_fail} with a failed object) "
          f"-> {args.out}")
    return 0


def _cmd_benchmark(args) -> int:
    config = _load_config(args.config, args.threads)
    _apply_thread_cap(config.threads)
    _print_config(config)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
    dataset = load_dataset(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_by_method = {}
    reports = {}
    for m in methods:
        results = evaluate_sequence(dataset, m, config)
        results_by_method[m] = results
        reports[m] = aggregate(results)
    _dump_json(out_dir / "report.json", report_doc(reports, str(args.data)))
    table = format_text_table(reports)
    with open(out_dir / "report.txt", "w", encoding="utf-8") as f:
        f.write(table)
    write_frames_csv(out_dir / "frames.csv", results_by_method)
    print(table, end="")
    print(f"wrote report.json, report.txt, frames.csv -> {out_dir}")
    return 0


def _cmd_navigate(args) -> int:
    config = _load_config(args.config, args.threads)
    _apply_thread_cap(config.threads)
    _print_config(config)
    dataset = load_dataset(args.data)
    method = "oracle" if args.oracle else args.method
    result = navigate(dataset, method, config)
    write_navigation_csv(args.out, result)
    if result.mean_trans_mm is None:
        print("no frames could be scored (chaining truncated immediately)")
    else:
        print(f"drill-to-skull mean error: {result.mean_trans_mm:.4f} mm, "
              f"{result.mean_rot_deg:.4f} deg over "
              f"{sum(1 for r in result.records[1:] if r.error is not None)} frames")
    if result.truncated_at is not None:
        print(f"chaining truncated at frame {result.truncated_at}")
    print(f"wrote trajectory -> {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duotrack",
        description="Joint rigid motion tracking of patient anatomy and tool "
                    "from RGB-D frame pairs")
    parser.add_argument("--version", action="version",
                        version=f"duotrack {__version__} (dataset format "
                                f"v{FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None, help="override scenario seed")
    p.set_defaults(func=_cmd_simulate)

    for name, func, extra in (
        ("track", _cmd_track, ()),
        ("benchmark", _cmd_benchmark, ("methods",)),
        ("navigate", _cmd_navigate, ("method", "oracle")),
    ):
        p = sub.add_parser(name, help=f"{name} over a dataset")
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--config", default=None, help="tracker config JSON")
        p.add_argument("--out", required=True,
                       help="output file" if name != "benchmark" else "output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="cap numerical worker threads")
        if "methods" in extra:
            p.add_argument("--methods", default=",".join(METHODS),
                           help="comma-separated methods to benchmark")
        if "method" in extra:
            p.add_argument("--method", default="tatoo", choices=METHODS)
        if "oracle" in extra:
            p.add_argument("--oracle", action="store_true",
                           help="inject ground-truth motions instead of tracking")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return _EXIT_CONFIG
    except MissingPose as e:
        print(f"error: {e}", file=sys.stderr)
        return _EXIT_NO_GROUND_TRUTH
    except (ManifestParse, MissingAsset, DimensionMismatch, IOFailure, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return _EXIT_IO
    except DuoTrackError as e:
        print(f"error: {e}", file=sys.stderr)
        return _EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
