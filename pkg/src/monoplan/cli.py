"""Command line entry point.

    monoplan run --scene SCENE --out DIR [--goal X,Y,Z] [--steps N] ...
    monoplan plan-once --disp FILE --goal X,Y,Z [--out DIR]

Exit status: 0 goal reached (or a plan was produced), 2 step budget spent
without reaching the goal (or no plan this cycle), 1 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, bundled_scene
from .errors import PipelineError
from .harness import EXIT_ERROR, EXIT_MAX_STEPS, EXIT_REACHED, RunConfig, plan_from_cloud, run
from .mapio import DEPTH_MAGIC, read_map, write_pgm
from .occupancy import depth_to_pointcloud, export_overlay
from .scene import disparity_constant

log = logging.getLogger("monoplan")


def _triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected X,Y,Z, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three numbers, got {text!r}") from None


def _add_grid_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--resolution", type=float, default=0.25, help="cell edge in meters")
    p.add_argument("--radius", type=float, default=4.0, help="grid half-extent in meters")
    p.add_argument("--pad", type=int, default=1, help="obstacle padding in cells")
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--hfov", type=float, default=90.0, help="horizontal field of view, degrees")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="monoplan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="closed-loop simulation in a box scene")
    r.add_argument("--scene", required=True,
                   help="scene description file, or a bundled scene name (two_stacks, single_stack)")
    r.add_argument("--goal", type=_triple, help="world goal X,Y,Z (defaults to the scene's goal)")
    _add_grid_args(r)
    r.add_argument("--steps", type=int, default=200, help="maximum planning cycles")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--noise", type=float, default=0.0, help="relative disparity noise sigma")
    r.add_argument("--window", type=int, default=6, help="depth smoothing window")
    r.add_argument("--anchors", type=int, default=16, help="matches used as depth anchors")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--figures", action="store_true", help="also render a PNG per cycle")

    p = sub.add_parser("plan-once", help="one mapping and planning cycle on a stored map")
    p.add_argument("--disp", required=True, help="DISP or DMAP map file")
    p.add_argument("--goal", type=_triple, required=True,
                   help="goal X,Y,Z in the body frame (right, forward, up)")
    _add_grid_args(p)
    p.add_argument("--scale", type=float,
                   help="disparity-to-depth constant, depth = scale / disparity "
                        "(defaults to the synthetic source's constant)")
    p.add_argument("--max-range", type=float, default=20.0)
    p.add_argument("--out", help="directory for the depth and plan images")
    return parser


def _scene_path(name: str) -> str:
    if Path(name).exists() or "/" in name or name.endswith(".txt"):
        return name
    return bundled_scene(name)


def _cmd_run(args) -> int:
    config = RunConfig(scene_path=_scene_path(args.scene), goal=args.goal, resolution=args.resolution,
                       radius=args.radius, pad=args.pad, window=args.window, anchors=args.anchors,
                       noise=args.noise, max_steps=args.steps, seed=args.seed, out_dir=args.out,
                       image_width=args.width, image_height=args.height, hfov_deg=args.hfov,
                       figures=args.figures)
    result = run(config)
    print(json.dumps(result.summary(), sort_keys=True))
    return result.exit_code


def _cmd_plan_once(args) -> int:
    config = RunConfig(resolution=args.resolution, radius=args.radius, pad=args.pad,
                       image_width=args.width, image_height=args.height, hfov_deg=args.hfov,
                       max_range=args.max_range)
    intr = config.intrinsics()
    magic, values = read_map(args.disp)
    values = values.astype(float)
    if values.shape != (intr.height, intr.width):
        raise ValueError(f"map is {values.shape[1]}x{values.shape[0]}, "
                         f"expected {intr.width}x{intr.height}")
    if magic == DEPTH_MAGIC:
        depth = values
    else:
        scale = args.scale if args.scale is not None else disparity_constant(intr)
        with np.errstate(divide="ignore"):
            depth = np.where(values > 0, scale / values, np.inf)
    cloud = depth_to_pointcloud(depth, intr, config.stride, config.max_range)
    result = plan_from_cloud(cloud, np.asarray(args.goal, dtype=float), config)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        gray = np.round(255.0 * (1.0 - np.clip(depth / config.max_range, 0.0, 1.0))).astype(np.uint8)
        write_pgm(out / "depth.pgm", gray)
        cells = result.plan.cells if result.plan is not None else []
        export_overlay(result.padded, result.padded.origin_cell[2], cells, out / "plan.ppm")
    print(json.dumps({"goal_cell": result.goal_cell and list(result.goal_cell),
                      "occupied": result.grid.occupied_count,
                      "actions": [list(s) for s in result.steps]}, sort_keys=True))
    return EXIT_REACHED if result.steps else EXIT_MAX_STEPS


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_plan_once(args)
    except (PipelineError, OSError, ValueError) as exc:
        print(f"monoplan: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
