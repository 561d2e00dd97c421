"""Correspondence filtering and the normalized-patch template search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .camera import PixelMatch
from .errors import EmptySearchRegion, PatchOutOfBounds, ZeroNormPatch

DEFAULT_RATIO = 0.75
DEFAULT_WINDOW = 11
DEFAULT_ROW_BAND = 8


@dataclass(frozen=True)
class FeatureMatch:
    left_pixel: tuple[float, float]
    right_pixel: tuple[float, float]
    best_distance: float
    second_distance: float

    def __post_init__(self):
        if self.best_distance < 0 or self.best_distance > self.second_distance:
            raise ValueError("descriptor distances must satisfy 0 <= best <= second")

    def to_pixel_match(self) -> PixelMatch:
        return PixelMatch(tuple(self.left_pixel), tuple(self.right_pixel))


@dataclass(frozen=True)
class SearchRegion:
    """Inclusive ranges of candidate patch centers in the right image."""

    row_min: int
    row_max: int
    col_min: int
    col_max: int

    @classmethod
    def row_band(cls, row: int, half_rows: int, width: int) -> "SearchRegion":
        return cls(row - half_rows, row + half_rows, 0, width - 1)

    def clipped(self, shape: tuple[int, int], window: int) -> "SearchRegion":
        """Shrink to the centers where a ``window`` patch fits inside ``shape``."""
        h = window // 2
        return SearchRegion(max(self.row_min, h), min(self.row_max, shape[0] - 1 - h),
                            max(self.col_min, h), min(self.col_max, shape[1] - 1 - h))

    @property
    def empty(self) -> bool:
        return self.row_min > self.row_max or self.col_min > self.col_max


def lowe_ratio_filter(matches: Sequence[FeatureMatch], ratio: float = DEFAULT_RATIO) -> list[FeatureMatch]:
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    return [m for m in matches if m.best_distance < ratio * m.second_distance]


def select_top_n(matches: Sequence[FeatureMatch], n: int = 16) -> list[FeatureMatch]:
    """The ``n`` matches with the smallest best distance; ties go to the earlier row-major left pixel."""
    if n < 1:
        raise ValueError("n must be at least 1")
    key = lambda m: (m.best_distance, m.left_pixel[1], m.left_pixel[0])
    return sorted(matches, key=key)[:n]


def patch_distance(template: np.ndarray, candidate: np.ndarray) -> float:
    """``|| T/|T| - W/|W| ||_2`` for two equally sized patches (inf if ``W`` is all zero)."""
    t = np.asarray(template, dtype=float).ravel()
    w = np.asarray(candidate, dtype=float).ravel()
    nt, nw = np.linalg.norm(t), np.linalg.norm(w)
    if nt == 0:
        raise ZeroNormPatch("template has zero norm")
    if nw == 0:
        return float("inf")
    return float(np.linalg.norm(t / nt - w / nw))


def _check_image(img) -> np.ndarray:
    a = np.asarray(img, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise ValueError("expected a non-empty 2-D luminance image")
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite values")
    return a


def min_disparity_correspondence(left, right, left_pixel: tuple[int, int],
                                 window: int = DEFAULT_WINDOW,
                                 search: Optional[SearchRegion] = None) -> tuple[int, int]:
    """Locate ``left_pixel`` in ``right`` by exhaustive normalized-patch search.

    ``left_pixel`` and the returned pixel are ``(x, y)`` = (column, row).
    Without an explicit ``search`` region the band of rows within
    ``DEFAULT_ROW_BAND`` of the pixel's row is scanned over the full width,
    clipped to centers where the window fits. An explicit region must fit
    entirely. Ties go to the smallest row-major center.
    """
    L = _check_image(left)
    R = _check_image(right)
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd size")
    h = window // 2
    x, y = int(left_pixel[0]), int(left_pixel[1])
    if not (h <= y < L.shape[0] - h and h <= x < L.shape[1] - h):
        raise PatchOutOfBounds(f"template at {(x, y)} does not fit in the left image")
    T = L[y - h:y + h + 1, x - h:x + h + 1]
    t = T.ravel()
    nt = np.linalg.norm(t)
    if nt == 0 or np.ptp(t) == 0:
        raise ZeroNormPatch(f"template at {(x, y)} is constant")

    if search is None:
        region = SearchRegion.row_band(y, DEFAULT_ROW_BAND, R.shape[1]).clipped(R.shape, window)
        if region.empty:
            raise EmptySearchRegion("no valid centers in the default search band")
    else:
        region = search
        if region.empty:
            raise EmptySearchRegion("search region is empty")
        if region != region.clipped(R.shape, window):
            raise PatchOutOfBounds("search region places patches outside the right image")

    sub = R[region.row_min - h:region.row_max + h + 1, region.col_min - h:region.col_max + h + 1]
    patches = sliding_window_view(sub, (window, window))
    nr, nc = patches.shape[:2]
    W = patches.reshape(nr * nc, window * window)
    nw = np.linalg.norm(W, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.linalg.norm(t / nt - W / nw[:, None], axis=1)
    d[nw == 0] = np.inf
    k = int(np.argmin(d))
    return region.col_min + k % nc, region.row_min + k // nc
