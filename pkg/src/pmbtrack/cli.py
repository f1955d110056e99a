"""Command line interface: track / eval / simulate / plot / adapt-nuscenes.

Exit code 0 on success; on failure a machine-readable error JSON is
printed to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io as io_mod
from .metrics import MatchConfig
from .plots import emit_plots
from .sim import SimConfig, simulate, write_scenario
from .state import canonical_dumps


def _add_track(sub):
    p = sub.add_parser("track", help="run the tracker over a detections file")
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="run-config JSON (defaults used if omitted)")
    p.add_argument("--classes", help="comma-separated class list (overrides config)")
    p.add_argument("--jobs", type=int, help="worker pool size")
    p.add_argument("--plots", action="store_true", help="emit BEV SVG frames")


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a results file against ground truth")
    p.add_argument("--results", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="directory for the JSON report (stdout table always printed)")
    p.add_argument("--match-distance", type=float, default=3.0)
    p.add_argument("--n-recalls", type=int, default=40)


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="SimConfig JSON file")
    p.add_argument("--seed", type=int, help="override the RNG seed")
    p.add_argument("--frames", type=int, help="override the frame count")


def _add_plot(sub):
    p = sub.add_parser("plot", help="render BEV SVG frames from a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--detections", help="optional detections file drawn as grey outlines")
    p.add_argument("--frames", required=True, help="comma-separated frame indices")
    p.add_argument("--out", required=True, help="output directory")


def _add_adapter(sub):
    p = sub.add_parser(
        "adapt-nuscenes", help="convert official nuScenes detection results"
    )
    p.add_argument("--results", required=True, help="official results JSON")
    p.add_argument("--scene-map", required=True, help="sample-token order per scene")
    p.add_argument("--out", required=True, help="detections file to write")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmbtrack")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_track(sub)
    _add_eval(sub)
    _add_simulate(sub)
    _add_plot(sub)
    _add_adapter(sub)
    return parser


def _cmd_track(args) -> int:
    overrides = {"detections_path": args.detections, "output_dir": args.out}
    if args.jobs:
        overrides["parallelism"] = args.jobs
    if args.plots:
        overrides["plots"] = True
    if args.classes:
        overrides["classes"] = tuple(args.classes.split(","))
    if args.config:
        cfg = io_mod.load_run_config(args.config, **overrides)
    else:
        doc = {"schema_version": 1}
        if "classes" in overrides:
            doc["classes"] = list(overrides.pop("classes"))
        cfg = io_mod.build_run_config(doc, **overrides)
    summary = io_mod.run_tracking(cfg)
    print(canonical_dumps(summary), end="")
    return 0


def _cmd_eval(args) -> int:
    match = MatchConfig(match_distance=args.match_distance, n_recalls=args.n_recalls)
    report = io_mod.evaluate(args.results, args.gt, match)
    print(report["table"], end="")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.json").write_text(canonical_dumps(report))
        (out_dir / "metrics.txt").write_text(report["table"])
    return 0


def _cmd_simulate(args) -> int:
    values = {}
    if args.config:
        doc = io_mod._load_json(args.config)
        doc.pop("schema_version", None)
        if "fov" in doc:
            doc["fov"] = tuple(doc["fov"])
        values.update(doc)
    if args.seed is not None:
        values["seed"] = args.seed
    if args.frames is not None:
        values["frames"] = args.frames
    cfg = SimConfig(**values)
    result = simulate(cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    det_path = out_dir / "detections.json"
    gt_path = out_dir / "ground_truth.json"
    write_scenario(result, det_path, gt_path)
    print(
        canonical_dumps(
            {
                "detections_path": str(det_path),
                "ground_truth_path": str(gt_path),
                "frames": cfg.frames,
                "objects": len({g.instance_id for g in result.ground_truth}),
            }
        ),
        end="",
    )
    return 0


def _cmd_plot(args) -> int:
    results = io_mod.load_results(args.results)
    detections = io_mod.load_results(args.detections) if args.detections else None
    frames = tuple(int(v) for v in args.frames.split(","))
    written = emit_plots(results, frames, args.out, detections)
    print(canonical_dumps({"plots": [str(p) for p in written]}), end="")
    return 0


def _cmd_adapter(args) -> int:
    io_mod.convert_nuscenes_results(args.results, args.scene_map, args.out)
    print(canonical_dumps({"detections_path": args.out}), end="")
    return 0


_COMMANDS = {
    "track": _cmd_track,
    "eval": _cmd_eval,
    "simulate": _cmd_simulate,
    "plot": _cmd_plot,
    "adapt-nuscenes": _cmd_adapter,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # surfaced as machine-readable JSON
        error = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(error), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
