"""Closed-loop simulation: observe, estimate depth, map, plan, move."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import depth as depth_mod
from .camera import CameraIntrinsics, compose_projection
from .depth import DepthConfig, DepthEstimatorState, estimate_metric_depth, scale_disparity
from .errors import InsufficientMatches, InsufficientVisibleSurface, NoFreeCell, PlanningFailed
from .fmm import ActionPlan, commit_actions, extract_path, fmm_solve, project_goal, speed_from_grid
from .mapio import write_pgm
from .matching import lowe_ratio_filter, select_top_n
from .occupancy import OccupancyGrid, bin_points, depth_to_pointcloud, export_overlay, pad_obstacles
from .scene import (Box, NoiseConfig, Scene, camera_pose, load_scene, observe, render_gray,
                    synthetic_matches, vehicle_axes)

logger = logging.getLogger(__name__)

EXIT_REACHED = 0
EXIT_ERROR = 1
EXIT_MAX_STEPS = 2


@dataclass
class RunConfig:
    scene_path: Optional[str] = None
    goal: Optional[tuple[float, float, float]] = None
    resolution: float = 0.25
    radius: float = 4.0
    pad: int = 1
    window: int = 6
    anchors: int = 16
    candidate_matches: int = 32
    noise: float = 0.0
    jitter_px: float = 0.2
    max_steps: int = 200
    seed: int = 0
    out_dir: Optional[str] = None
    image_width: int = 128
    image_height: int = 96
    hfov_deg: float = 90.0
    max_range: float = 20.0
    stride: int = 4
    commit: int = 3
    lowe_ratio: float = 0.75
    bootstrap_offset: float = 0.1
    min_parallax_deg: float = 1.0
    source_radius_cells: int = 2
    geofence_margin: float = 0.1
    yaw_hold_distance: float = 1.0
    figures: bool = False

    def __post_init__(self):
        positive = ("resolution", "radius", "window", "anchors", "candidate_matches", "max_steps",
                    "image_width", "image_height", "hfov_deg", "max_range", "stride", "commit")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.pad < 0 or self.noise < 0 or self.jitter_px < 0:
            raise ValueError("pad, noise and jitter must be nonnegative")

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.image_width, self.image_height, self.hfov_deg)


@dataclass
class DroneState:
    position: np.ndarray
    yaw: float
    step_count: int = 0


@dataclass
class PipelineState:
    depth: DepthEstimatorState
    reference_pose: object = None
    last_scale: Optional[float] = None
    # products of the latest cycle, kept for artifact export
    depth_map: Optional[np.ndarray] = None
    grid: Optional[OccupancyGrid] = None
    padded: Optional[OccupancyGrid] = None
    path_cells: list = field(default_factory=list)

    @classmethod
    def fresh(cls, config: RunConfig) -> "PipelineState":
        return cls(DepthEstimatorState(config.window))


@dataclass
class RunLog:
    records: list[dict]
    outcome: str
    exit_code: int
    collisions: int
    trajectory: list

    def summary(self) -> dict:
        return {"outcome": self.outcome, "reached": self.outcome == "reached", "exit_code": self.exit_code,
                "cycles": len(self.records), "collisions": self.collisions}


def segment_hits_box(p0, p1, box: Box) -> bool:
    """Whether the closed segment p0 -> p1 touches the closed box."""
    p0 = np.asarray(p0, dtype=float)
    d = np.asarray(p1, dtype=float) - p0
    t0, t1 = 0.0, 1.0
    for ax in range(3):
        if d[ax] == 0.0:
            if not box.lo[ax] <= p0[ax] <= box.hi[ax]:
                return False
            continue
        a = (box.lo[ax] - p0[ax]) / d[ax]
        b = (box.hi[ax] - p0[ax]) / d[ax]
        t0, t1 = max(t0, min(a, b)), min(t1, max(a, b))
        if t0 > t1:
            return False
    return True


def _body_frame(position, yaw):
    right, fwd, up = vehicle_axes(yaw)
    basis = np.vstack([right, fwd, up])
    # snap rounding noise so points on cell boundaries land in the intended cell
    return basis, lambda p: np.round(basis @ (np.asarray(p, dtype=float) - position), 9)


def _geofence(grid: OccupancyGrid, basis: np.ndarray, position: np.ndarray, bounds: Box, margin: float):
    """Flag every cell whose vehicle position would leave the shrunken scene bounds."""
    idx = np.indices(grid.dims).reshape(3, -1).T
    world = position + ((idx - grid.offset) * grid.resolution) @ basis
    lo = np.array(bounds.lo) + margin
    hi = np.array(bounds.hi) - margin
    outside = np.any((world < lo) | (world > hi), axis=1)
    grid.flags |= outside.reshape(grid.dims)


def _gather_matches(scene, pose_a, pose_b, intr, config: RunConfig, seed):
    count = config.candidate_matches
    while count >= 4:
        try:
            return synthetic_matches(scene, pose_a, pose_b, intr, count, config.jitter_px, seed,
                                     config.max_range)
        except InsufficientVisibleSurface:
            count //= 2
    return []


def _round(x, nd=6):
    if x is None:
        return None
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_round(v, nd) for v in x]
    return round(float(x), nd)


@dataclass
class PlanResult:
    grid: OccupancyGrid
    padded: OccupancyGrid
    goal_cell: Optional[tuple[int, int, int]]
    plan: Optional[ActionPlan]
    steps: list


def plan_from_cloud(cloud: np.ndarray, goal_body, config: RunConfig, fence=None) -> PlanResult:
    """Bin a body-frame cloud, pad it, and plan toward a body-frame goal.

    ``fence`` may flag extra cells on the padded grid before planning. A
    failed plan is reported through an empty ``steps`` list.
    """
    grid = bin_points(cloud, config.resolution, config.radius)
    padded = pad_obstacles(grid, config.pad)
    if fence is not None:
        fence(padded)
    start = padded.origin_cell
    padded.flags[start] = False
    goal_cell = plan = None
    steps = []
    try:
        goal_cell = project_goal(goal_body, padded)
        T = fmm_solve(speed_from_grid(padded), goal_cell, config.resolution,
                      config.source_radius_cells * config.resolution)
        plan = extract_path(T, start)
        steps = commit_actions(plan, config.commit)
        if not steps:
            raise PlanningFailed("projected goal coincides with the vehicle cell")
    except (PlanningFailed, NoFreeCell) as exc:
        logger.info("planning failed: %s", exc)
    return PlanResult(grid, padded, goal_cell, plan, steps)


def step(state: DroneState, scene: Scene, config: RunConfig, pstate: PipelineState, goal=None):
    """Run one planning cycle and return the new state and its log record."""
    goal = np.asarray(goal if goal is not None else config.goal or scene.goal, dtype=float)
    intr = config.intrinsics()
    position = np.asarray(state.position, dtype=float)
    basis, to_body = _body_frame(position, state.yaw)
    template = OccupancyGrid.empty(config.resolution, config.radius)
    record = {"step": state.step_count, "position": _round(position), "yaw": _round(state.yaw),
              "actions": [], "z_min_raw": None, "z_min": None, "z_max_raw": None, "z_max": None,
              "anchors": 0, "plan_length": 0, "occupied": 0, "collisions": 0}

    if template.cell_of(to_body(goal)) == template.origin_cell:
        record.update(status="reached", distance_to_goal=_round(np.linalg.norm(goal - position)))
        return DroneState(position, state.yaw, state.step_count + 1), record

    pose_cur = camera_pose(position, state.yaw)
    pose_ref = pstate.reference_pose
    if pose_ref is None or np.linalg.norm(pose_ref.center - pose_cur.center) < 0.05:
        pose_ref = camera_pose(position + config.bootstrap_offset * basis[0], state.yaw)
    seed = [config.seed, state.step_count]
    obs = observe(scene, pose_cur, intr, NoiseConfig(config.noise), seed + [0], config.max_range)
    right_image = render_gray(scene, pose_ref, intr, config.max_range)
    raw = _gather_matches(scene, pose_cur, pose_ref, intr, config, seed + [1])
    chosen = select_top_n(lowe_ratio_filter(raw, config.lowe_ratio), config.anchors) if raw else []

    depth_map = None
    if chosen:
        M = compose_projection(intr, pose_cur)
        M_prime = compose_projection(intr, pose_ref)
        dconf = DepthConfig(window=config.window, min_parallax_deg=config.min_parallax_deg,
                            max_depth=config.max_range, conservative_shift=True)
        try:
            res = estimate_metric_depth(obs.disparity, [m.to_pixel_match() for m in chosen], M, M_prime,
                                        pstate.depth, obs.image, right_image, dconf)
            depth_map = res.depth
            pstate.last_scale = float(np.mean([a.depth * a.disparity for a in res.anchors]))
            record.update(z_min_raw=_round(res.z_min_raw), z_min=_round(res.z_min),
                          z_max_raw=_round(res.z_max_raw), z_max=_round(res.z_max),
                          anchors=len(res.anchors))
        except InsufficientMatches as exc:
            logger.info("cycle %d: %s", state.step_count, exc)
    if depth_map is None and pstate.last_scale is not None and chosen:
        # hold the last recovered disparity scale
        anchor = depth_mod.DepthAnchor((0.0, 0.0), pstate.last_scale, 1.0)
        depth_map = scale_disparity(obs.disparity, [anchor])
    if depth_map is None and chosen:
        record.update(status="no_depth", distance_to_goal=_round(np.linalg.norm(goal - position)))
        pstate.reference_pose = None
        return DroneState(position, state.yaw, state.step_count + 1), record

    if depth_map is None:
        depth_map = np.full(obs.disparity.shape, config.max_range)
        cloud = np.empty((0, 3))
    else:
        cloud = depth_to_pointcloud(depth_map, intr, config.stride, config.max_range)
    fence = None
    if scene.bounds is not None:
        fence = lambda g: _geofence(g, basis, position, scene.bounds, config.geofence_margin)
    result = plan_from_cloud(cloud, to_body(goal), config, fence)
    record["occupied"] = result.grid.occupied_count
    record["plan_length"] = len(result.plan) if result.plan is not None else 0
    pstate.depth_map, pstate.grid, pstate.padded = depth_map, result.grid, result.padded
    pstate.path_cells = result.plan.cells if result.plan is not None else []
    steps = result.steps
    status = "moving" if steps else "planning_failed"

    collisions = 0
    new_pos = position.copy()
    for k, s in enumerate(steps):
        nxt = new_pos + config.resolution * (np.asarray(s, dtype=float) @ basis)
        collisions += sum(segment_hits_box(new_pos, nxt, b) for b in scene.boxes)
        new_pos = nxt
        if k == 0:
            pstate.reference_pose = camera_pose(new_pos, state.yaw)
    if not steps:
        pstate.reference_pose = None

    new_yaw = state.yaw
    _, to_new_body = _body_frame(new_pos, state.yaw)
    if template.cell_of(to_new_body(goal)) == template.origin_cell:
        status = "reached"
    else:
        d = goal - new_pos
        if math.hypot(d[0], d[1]) > config.yaw_hold_distance:
            new_yaw = math.atan2(d[1], d[0])
    record.update(status=status, actions=[list(s) for s in steps], collisions=collisions,
                  distance_to_goal=_round(np.linalg.norm(goal - new_pos)))
    return DroneState(new_pos, new_yaw, state.step_count + 1), record


def _depth_gray(depth: np.ndarray, max_range: float) -> np.ndarray:
    return np.round(255.0 * (1.0 - np.clip(depth / max_range, 0.0, 1.0))).astype(np.uint8)


def _write_cycle_artifacts(out: Path, index: int, pstate: PipelineState, config: RunConfig) -> None:
    if pstate.depth_map is None or pstate.padded is None:
        return
    write_pgm(out / f"cycle_{index:03d}_depth.pgm", _depth_gray(pstate.depth_map, config.max_range))
    layer = pstate.padded.origin_cell[2]
    export_overlay(pstate.padded, layer, pstate.path_cells, out / f"cycle_{index:03d}_plan.ppm")
    if config.figures:
        from .plotting import render_cycle_figure
        render_cycle_figure(pstate.depth_map, pstate.grid, pstate.padded, pstate.path_cells,
                            out / f"cycle_{index:03d}.png", config.max_range)


def run(config: RunConfig, scene: Optional[Scene] = None) -> RunLog:
    """Loop :func:`step` until the goal is reached or ``max_steps`` cycles have run."""
    if scene is None:
        if config.scene_path is None:
            raise ValueError("a scene or scene_path is required")
        scene = load_scene(config.scene_path)
    goal = config.goal if config.goal is not None else scene.goal
    if goal is None:
        raise ValueError("no goal given in the config or the scene file")
    out = Path(config.out_dir) if config.out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    state = DroneState(np.asarray(scene.start, dtype=float), math.radians(scene.start_yaw_deg))
    pstate = PipelineState.fresh(config)
    records = []
    trajectory = [state.position.tolist()]
    # a run that spends its step budget without reaching the goal ends as a planning failure
    outcome = "planning_failed"
    for i in range(config.max_steps):
        state, rec = step(state, scene, config, pstate, goal)
        records.append(rec)
        trajectory.append(state.position.tolist())
        if out is not None:
            _write_cycle_artifacts(out, i, pstate, config)
        if rec["status"] == "reached":
            outcome = "reached"
            break

    collisions = sum(r["collisions"] for r in records)
    exit_code = EXIT_REACHED if outcome == "reached" else EXIT_MAX_STEPS
    log = RunLog(records, outcome, exit_code, collisions, trajectory)
    if out is not None:
        write_log(out / "run.jsonl", log)
        (out / "summary.json").write_text(json.dumps(log.summary(), sort_keys=True) + "\n")
        from .plotting import render_trajectory
        render_trajectory(scene, np.asarray(trajectory), np.asarray(goal, dtype=float),
                          out / "trajectory.png")
    return log


def write_log(path, log: RunLog) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in log.records]
    lines.append(json.dumps({"summary": log.summary()}, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
