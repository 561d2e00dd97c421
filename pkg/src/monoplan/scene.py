"""Box-world scenes and a ray-cast disparity source.

World frame is z-up. A vehicle at ``position`` with heading ``yaw`` (radians,
counter-clockwise from +x) looks along ``(cos yaw, sin yaw, 0)``; its body
frame is x right, y forward, z up and its camera is the usual x right,
y down, z forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .camera import CameraIntrinsics, CameraPose
from .errors import InsufficientVisibleSurface, SceneParseError
from .mapio import DISPARITY_MAGIC, read_map
from .matching import FeatureMatch

DEFAULT_MAX_RANGE = 20.0
NOMINAL_BASELINE = 0.1


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        if not all(h > l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"box {self.lo} -> {self.hi} has non-positive extent")

    def contains(self, p, margin: float = 0.0) -> bool:
        return all(l - margin <= x <= h + margin for l, x, h in zip(self.lo, p, self.hi))


@dataclass
class Scene:
    boxes: list[Box] = field(default_factory=list)
    bounds: Optional[Box] = None
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    start_yaw_deg: float = 0.0
    goal: Optional[tuple[float, float, float]] = None

    def validate(self) -> None:
        for name, p in (("start", self.start), ("goal", self.goal)):
            if p is not None and any(b.contains(p) for b in self.boxes):
                raise SceneParseError(f"{name} {p} lies inside a box")

    def mirrored_x(self) -> "Scene":
        """The scene reflected across the x = 0 plane."""
        flip = lambda b: Box((-b.hi[0], b.lo[1], b.lo[2]), (-b.lo[0], b.hi[1], b.hi[2]))
        mx = lambda p: None if p is None else (-p[0], p[1], p[2])
        return Scene([flip(b) for b in self.boxes], None if self.bounds is None else flip(self.bounds),
                     mx(self.start), 180.0 - self.start_yaw_deg, mx(self.goal))


def parse_scene(text: str) -> Scene:
    scene = Scene()
    arity = {"box": 6, "bounds": 6, "start": 4, "goal": 3}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        if key not in arity:
            raise SceneParseError(f"unknown directive {key!r}", lineno)
        if len(rest) != arity[key]:
            raise SceneParseError(f"{key} expects {arity[key]} numbers, got {len(rest)}", lineno)
        try:
            v = [float(x) for x in rest]
        except ValueError:
            raise SceneParseError(f"malformed number in {raw.strip()!r}", lineno) from None
        if not all(math.isfinite(x) for x in v):
            raise SceneParseError("non-finite value", lineno)
        try:
            if key == "box":
                scene.boxes.append(Box(tuple(v[:3]), tuple(v[3:])))
            elif key == "bounds":
                scene.bounds = Box(tuple(v[:3]), tuple(v[3:]))
            elif key == "start":
                scene.start, scene.start_yaw_deg = tuple(v[:3]), v[3]
            else:
                scene.goal = tuple(v)
        except ValueError as exc:
            raise SceneParseError(str(exc), lineno) from None
    scene.validate()
    return scene


def load_scene(path) -> Scene:
    return parse_scene(Path(path).read_text())


def vehicle_axes(yaw: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World-frame (right, forward, up) unit vectors for heading ``yaw``."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([s, -c, 0.0]), np.array([c, s, 0.0]), np.array([0.0, 0.0, 1.0])


def camera_pose(position, yaw: float) -> CameraPose:
    right, fwd, up = vehicle_axes(yaw)
    R = np.vstack([right, -up, fwd])
    return CameraPose(R, -R @ np.asarray(position, dtype=float))


def pixel_rays(intrinsics: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray per pixel, scaled so the z component is 1 (H x W x 3)."""
    v, u = np.mgrid[0:intrinsics.height, 0:intrinsics.width].astype(float)
    return np.stack([(u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy,
                     np.ones_like(u)], axis=-1)


def _slab_hits(origin: np.ndarray, dirs: np.ndarray, boxes: list[Box]) -> np.ndarray:
    """Nearest positive ray parameter to any box, inf where nothing is hit."""
    best = np.full(dirs.shape[:-1], np.inf)
    for b in boxes:
        t_near = np.full(best.shape, -np.inf)
        t_far = np.full(best.shape, np.inf)
        for ax in range(3):
            d = dirs[..., ax]
            lo, hi, o = b.lo[ax], b.hi[ax], origin[ax]
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo - o) / d
                t2 = (hi - o) / d
            parallel = d == 0
            inside = lo <= o <= hi
            t1 = np.where(parallel, -np.inf if inside else np.inf, t1)
            t2 = np.where(parallel, np.inf if inside else -np.inf, t2)
            t_near = np.maximum(t_near, np.minimum(t1, t2))
            t_far = np.minimum(t_far, np.maximum(t1, t2))
        hit = (t_near <= t_far) & (t_near > 0)
        best = np.where(hit & (t_near < best), t_near, best)
    return best


def raycast_depth(scene: Scene, pose: CameraPose, intrinsics: CameraIntrinsics,
                  max_range: float = DEFAULT_MAX_RANGE) -> np.ndarray:
    """Per-pixel depth along the optical axis to the nearest box, ``max_range`` on a miss."""
    if not max_range > 0:
        raise ValueError("max_range must be positive")
    dirs = pixel_rays(intrinsics) @ pose.rotation
    t = _slab_hits(pose.center, dirs, scene.boxes)
    return np.minimum(t, max_range)


# Fixed pseudo-random plane waves; any aperiodic sum works as long as patches are distinct.
_TEXTURE_K = np.array([[9.1, 3.7, -5.3], [-4.4, 11.3, 6.1], [6.7, -7.9, 10.2],
                       [13.7, 5.2, 2.9], [-2.3, -12.6, 8.8], [3.3, 8.1, -14.4]])
_TEXTURE_PHASE = np.array([0.3, 1.7, 2.9, 4.1, 5.3, 0.9])
_SKY_K = np.array([[17.0, 3.0, 5.0], [-6.0, 19.0, 2.0], [4.0, -7.0, 23.0]])


def _surface_texture(points: np.ndarray) -> np.ndarray:
    waves = np.sin(points @ _TEXTURE_K.T + _TEXTURE_PHASE)
    return np.clip(0.5 + 0.12 * waves.sum(axis=-1), 0.0, 1.0)


def _sky_texture(dirs: np.ndarray) -> np.ndarray:
    unit = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    waves = np.sin(unit @ _SKY_K.T)
    return np.clip(0.8 + 0.05 * waves.sum(axis=-1), 0.0, 1.0)


def render_gray(scene: Scene, pose: CameraPose, intrinsics: CameraIntrinsics,
                max_range: float = DEFAULT_MAX_RANGE) -> np.ndarray:
    """Luminance image in [0, 1]; box surfaces carry a world-anchored texture."""
    dirs = pixel_rays(intrinsics) @ pose.rotation
    t = _slab_hits(pose.center, dirs, scene.boxes)
    hit = np.isfinite(t) & (t < max_range)
    img = _sky_texture(dirs)
    pts = pose.center + dirs[hit] * t[hit][:, None]
    img[hit] = _surface_texture(pts)
    return img


@dataclass(frozen=True)
class NoiseConfig:
    """Additive Gaussian disparity noise, ``relative_sigma * kappa / mean(depth)`` per frame."""

    relative_sigma: float = 0.0


@dataclass
class FrameObservation:
    disparity: np.ndarray
    true_depth: np.ndarray
    pose: CameraPose
    image: Optional[np.ndarray] = None


def disparity_constant(intrinsics: CameraIntrinsics, baseline: float = NOMINAL_BASELINE) -> float:
    return intrinsics.fx * baseline


def observe(scene: Scene, pose: CameraPose, intrinsics: CameraIntrinsics,
            noise: NoiseConfig = NoiseConfig(), rng_seed=0,
            max_range: float = DEFAULT_MAX_RANGE, with_image: bool = True) -> FrameObservation:
    depth = raycast_depth(scene, pose, intrinsics, max_range)
    kappa = disparity_constant(intrinsics)
    disp = kappa / depth
    if noise.relative_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        sigma = noise.relative_sigma * kappa / float(depth.mean())
        disp = np.maximum(disp + rng.normal(0.0, sigma, disp.shape), 0.0)
    image = render_gray(scene, pose, intrinsics, max_range) if with_image else None
    return FrameObservation(disp, depth, pose, image)


class SyntheticDisparitySource:
    """Iterator-style source over a sequence of poses; the disparity scale is fixed per instance."""

    def __init__(self, scene: Scene, intrinsics: CameraIntrinsics, noise: NoiseConfig = NoiseConfig(),
                 seed: int = 0, max_range: float = DEFAULT_MAX_RANGE):
        self.scene = scene
        self.intrinsics = intrinsics
        self.noise = noise
        self.max_range = max_range
        self._seed = seed
        self._count = 0

    def observe(self, pose: CameraPose) -> FrameObservation:
        obs = observe(self.scene, pose, self.intrinsics, self.noise, [self._seed, self._count],
                      self.max_range)
        self._count += 1
        return obs


class DirectoryDisparitySource:
    """Replays ``DISP`` files from a directory in lexicographic order."""

    def __init__(self, directory):
        self.paths = sorted(p for p in Path(directory).iterdir() if p.is_file())

    def __iter__(self) -> Iterator[np.ndarray]:
        for p in self.paths:
            magic, values = read_map(p)
            if magic == DISPARITY_MAGIC:
                yield values.astype(float)


def _project(pose: CameraPose, intrinsics: CameraIntrinsics, pts: np.ndarray):
    pc = pose.to_camera(pts)
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * pc[:, 0] / z + intrinsics.cx
        v = intrinsics.fy * pc[:, 1] / z + intrinsics.cy
    return u, v, z


def synthetic_matches(scene: Scene, pose_a: CameraPose, pose_b: CameraPose,
                      intrinsics: CameraIntrinsics, count: int, jitter_px: float = 0.0,
                      rng_seed=0, max_range: float = DEFAULT_MAX_RANGE,
                      border: int = 2) -> list[FeatureMatch]:
    """Correspondences between two views of mutually visible box surface points.

    Left pixels are integer pixel centers of view ``a`` (plus jitter); right
    pixels are exact projections into view ``b`` (plus jitter). One match in
    eight is an ambiguous, badly localized one whose descriptor ratio fails a
    0.75 ratio test.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(rng_seed)
    W, H = intrinsics.width, intrinsics.height
    depth = raycast_depth(scene, pose_a, intrinsics, max_range)
    rows, cols = np.nonzero(depth < max_range)
    keep = (rows >= border) & (rows < H - border) & (cols >= border) & (cols < W - border)
    rows, cols = rows[keep], cols[keep]
    order = rng.permutation(len(rows))
    rays = pixel_rays(intrinsics)[rows[order], cols[order]]
    pts = pose_a.center + (rays @ pose_a.rotation) * depth[rows[order], cols[order]][:, None]
    u, v, z = _project(pose_b, intrinsics, pts)
    ok = (z > 0) & (u >= border) & (u <= W - 1 - border) & (v >= border) & (v <= H - 1 - border)
    # occlusion in view b: the first hit along the ray must be the point itself
    dirs = pts - pose_b.center
    t = _slab_hits(pose_b.center, dirs, scene.boxes)
    ok &= np.abs(t - 1.0) < 1e-6
    idx = np.nonzero(ok)[0][:count]
    if len(idx) < count:
        raise InsufficientVisibleSurface(f"only {len(idx)} mutually visible points, need {count}")

    n_bad = count // 8
    bad = np.zeros(count, dtype=bool)
    bad[rng.choice(count, size=n_bad, replace=False)] = True
    matches = []
    for k, i in enumerate(idx):
        sigma = jitter_px * (4.0 if bad[k] else 1.0) + (2.0 if bad[k] else 0.0)
        jl = rng.normal(0.0, sigma, 2) if sigma > 0 else np.zeros(2)
        jr = rng.normal(0.0, sigma, 2) if sigma > 0 else np.zeros(2)
        best = float(rng.uniform(0.05, 0.3))
        ratio = float(rng.uniform(0.8, 0.98) if bad[k] else rng.uniform(0.2, 0.6))
        left = (float(cols[order][i] + jl[0]), float(rows[order][i] + jl[1]))
        right = (float(u[i] + jr[0]), float(v[i] + jr[1]))
        matches.append(FeatureMatch(left, right, best, best / ratio))
    return matches
