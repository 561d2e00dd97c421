"""Disparity-to-metric-depth conversion from sparse triangulated anchors."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from . import camera
from .camera import PixelMatch, RefineConfig
from .errors import (AnchorDisparityTooSmall, GeometryError, InsufficientMatches, MatchingError,
                     NoAnchors)
from .matching import DEFAULT_WINDOW, min_disparity_correspondence

logger = logging.getLogger(__name__)

DISPARITY_FLOOR = 1e-3


@dataclass(frozen=True)
class DepthAnchor:
    pixel: tuple[float, float]
    depth: float
    disparity: float


class SmoothingWindow:
    """Ring of the most recent scalar estimates and their mean."""

    def __init__(self, capacity: int = 6):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.entries: deque[float] = deque(maxlen=capacity)

    def __len__(self):
        return len(self.entries)

    def push(self, estimate: float) -> float:
        if not math.isfinite(estimate):
            raise ValueError("estimate must be finite")
        self.entries.append(float(estimate))
        return self.mean()

    def mean(self) -> Optional[float]:
        if not self.entries:
            return None
        # shifted summation: identical entries average to themselves exactly
        ref = self.entries[0]
        return ref + math.fsum(e - ref for e in self.entries) / len(self.entries)


def update_window(window: SmoothingWindow, estimate: float) -> tuple[SmoothingWindow, float]:
    return window, window.push(estimate)


def scale_disparity(disp: np.ndarray, anchors: Sequence[DepthAnchor],
                    floor: float = DISPARITY_FLOOR) -> np.ndarray:
    """Average of the per-anchor inverse-disparity depth maps.

    Anchor ``i`` maps a pixel of disparity ``d`` to ``depth_i * disparity_i / d``;
    the per-anchor maps are summed in anchor order and divided by their count.
    """
    if not anchors:
        raise NoAnchors("at least one anchor is required")
    d = np.maximum(np.asarray(disp, dtype=float), floor)
    total = np.zeros_like(d)
    for a in anchors:
        if not a.disparity > floor:
            raise AnchorDisparityTooSmall(f"anchor at {a.pixel} has disparity {a.disparity}")
        total += a.depth * (a.disparity / d)
    return total / len(anchors)


def apply_min_depth_shift(unshifted: np.ndarray, z_min: float) -> np.ndarray:
    """Offset the map so that its minimum lands on ``z_min``."""
    if not z_min >= 0:
        raise ValueError("z_min must be nonnegative")
    m = np.asarray(unshifted, dtype=float)
    return m - m.min() + z_min


@dataclass
class DepthConfig:
    window: int = 6
    patch: int = DEFAULT_WINDOW
    refine: RefineConfig = field(default_factory=RefineConfig)
    min_parallax_deg: float = 0.0
    max_depth: float = math.inf
    floor: float = DISPARITY_FLOOR
    # template-search depths further than this (relative) from the anchor-scaled
    # depth at the same pixel are treated as mismatches
    extreme_gate: float = 0.25
    # never place the nearest surface farther than the anchors put it
    conservative_shift: bool = False


@dataclass
class DepthResult:
    depth: np.ndarray
    unshifted: np.ndarray
    anchors: list[DepthAnchor]
    z_min_raw: Optional[float]
    z_min: float
    z_max_raw: Optional[float]
    z_max: Optional[float]


class DepthEstimatorState:
    """Per-run smoothing state: independent windows for the minimum and maximum depth."""

    def __init__(self, capacity: int = 6):
        self.z_min = SmoothingWindow(capacity)
        self.z_max = SmoothingWindow(capacity)


def _pixel_index(px, shape) -> tuple[int, int]:
    col = min(max(int(round(px[0])), 0), shape[1] - 1)
    row = min(max(int(round(px[1])), 0), shape[0] - 1)
    return row, col


def _solve_point(match: PixelMatch, M, M_prime, config: DepthConfig) -> Optional[float]:
    """Triangulate, refine and return the left-camera depth, or None if unusable."""
    try:
        P0 = camera.triangulate(match, M, M_prime)
        P = camera.refine_point(P0, match, M, M_prime, config.refine)
    except (camera.PointAtInfinity, camera.BehindCamera, camera.NonFinite) as exc:
        logger.debug("dropping match %s: %s", match, exc)
        return None
    except GeometryError:
        raise
    z = camera.point_depth(P, M)
    if not (0 < z <= config.max_depth) or camera.point_depth(P, M_prime) <= 0:
        return None
    if math.degrees(camera.parallax_angle(P, M, M_prime)) < config.min_parallax_deg:
        return None
    return z


def _extreme_pixel(disp: np.ndarray, window: int, largest: bool) -> Optional[tuple[int, int]]:
    """Pixel (x, y) of the extreme window-averaged disparity among centers where a patch fits."""
    h = window // 2
    if disp.shape[0] <= 2 * h or disp.shape[1] <= 2 * h:
        return None
    smooth = uniform_filter(disp, size=window, mode="nearest")[h:disp.shape[0] - h, h:disp.shape[1] - h]
    k = int(np.argmax(smooth) if largest else np.argmin(smooth))
    r, c = divmod(k, smooth.shape[1])
    return c + h, r + h


def _template_depth(left, right, pixel, M, M_prime, config: DepthConfig) -> Optional[float]:
    try:
        right_px = min_disparity_correspondence(left, right, pixel, config.patch)
    except MatchingError as exc:
        logger.debug("template search at %s failed: %s", pixel, exc)
        return None
    return _solve_point(PixelMatch(tuple(map(float, pixel)), tuple(map(float, right_px))),
                        M, M_prime, config)


def _extreme_depth(disp, unshifted, left, right, M, M_prime, config: DepthConfig,
                   nearest: bool) -> Optional[float]:
    px = _extreme_pixel(disp, config.patch, largest=nearest)
    if px is None:
        return None
    z = _template_depth(left, right, px, M, M_prime, config)
    if z is None:
        return None
    ref = unshifted[px[1], px[0]]
    if abs(z - ref) > config.extreme_gate * ref:
        logger.debug("template depth %.3f disagrees with scaled depth %.3f at %s", z, ref, px)
        return None
    return z


def estimate_metric_depth(disp: np.ndarray, matches: Sequence[PixelMatch], M: np.ndarray,
                          M_prime: np.ndarray, state: DepthEstimatorState,
                          left_image: Optional[np.ndarray] = None,
                          right_image: Optional[np.ndarray] = None,
                          config: DepthConfig = DepthConfig()) -> DepthResult:
    """Dense metric depth for the left frame of a pseudo-stereo pair.

    Every match is triangulated and refined into an anchor, the disparity map
    is scaled by the anchors, and the result is re-offset to the smoothed
    minimum-depth estimate. The minimum (maximum) depth is measured at the
    pixel with the largest (smallest) window-averaged disparity by locating
    its template in ``right_image``. When no minimum estimate has been
    accepted yet the anchor-scaled map is returned unshifted.
    """
    disp = np.asarray(disp, dtype=float)
    if not matches:
        raise InsufficientMatches("no matches supplied")
    M = np.asarray(M, dtype=float)
    M_prime = np.asarray(M_prime, dtype=float)

    anchors = []
    for m in matches:
        z = _solve_point(m, M, M_prime, config)
        if z is None:
            continue
        d = float(disp[_pixel_index(m.left, disp.shape)])
        if d <= config.floor:
            continue
        anchors.append(DepthAnchor(tuple(m.left), z, d))
    if not anchors:
        raise InsufficientMatches(f"all {len(matches)} matches were rejected")
    unshifted = scale_disparity(disp, anchors, config.floor)

    z_min_raw = z_max_raw = None
    if left_image is not None and right_image is not None:
        z_min_raw = _extreme_depth(disp, unshifted, left_image, right_image, M, M_prime, config, True)
        z_max_raw = _extreme_depth(disp, unshifted, left_image, right_image, M, M_prime, config, False)

    if z_min_raw is not None:
        state.z_min.push(z_min_raw)
    if z_max_raw is not None and (z_min_raw is None or z_max_raw > z_min_raw):
        state.z_max.push(z_max_raw)

    z_min = state.z_min.mean()
    if z_min is None:
        z_min = float(unshifted.min())
    elif config.conservative_shift:
        z_min = min(z_min, float(unshifted.min()))
    depth = apply_min_depth_shift(unshifted, z_min)
    z_max = state.z_max.mean()
    if z_max is not None and z_max > z_min:
        depth = np.minimum(depth, z_max)
    return DepthResult(depth, unshifted, anchors, z_min_raw, z_min, z_max_raw, z_max)
