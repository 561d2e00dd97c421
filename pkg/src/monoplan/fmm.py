"""First-order fast marching on 3-D grids and greedy path extraction.

The solver propagates arrival times outward from a goal cell with the
standard six-neighbor upwind quadratic and a binary-heap narrow band. The
heap and the marching loop are compiled with numba.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import GoalInObstacle, NoFreeCell, PlanningFailed, StuckAtLocalPlateau
from .occupancy import OccupancyGrid

NEIGHBORS_26 = [o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)]
COMMIT_STEPS = 3


@numba.njit(cache=True)
def _heap_push(keys, vals, n, key, val):
    if n == keys.shape[0]:
        k2 = np.empty(2 * n)
        v2 = np.empty(2 * n, np.int64)
        k2[:n] = keys
        v2[:n] = vals
        keys, vals = k2, v2
    i = n
    while i > 0:
        p = (i - 1) >> 1
        if keys[p] < key or (keys[p] == key and vals[p] < val):
            break
        keys[i] = keys[p]
        vals[i] = vals[p]
        i = p
    keys[i] = key
    vals[i] = val
    return keys, vals, n + 1


@numba.njit(cache=True)
def _heap_pop(keys, vals, n):
    top_k, top_v = keys[0], vals[0]
    n -= 1
    key, val = keys[n], vals[n]
    i = 0
    while True:
        c = 2 * i + 1
        if c >= n:
            break
        if c + 1 < n and (keys[c + 1] < keys[c] or (keys[c + 1] == keys[c] and vals[c + 1] < vals[c])):
            c += 1
        if key < keys[c] or (key == keys[c] and val < vals[c]):
            break
        keys[i] = keys[c]
        vals[i] = vals[c]
        i = c
    keys[i] = key
    vals[i] = val
    return top_k, top_v, n


@numba.njit(cache=True)
def _upwind_value(T, accepted, speed, nx, ny, nz, h, idx):
    """Solve sum_axes max(0, (t - a_axis) / h)^2 = 1 / F^2 using accepted neighbors only."""
    i = idx // (ny * nz)
    j = (idx // nz) % ny
    k = idx % nz
    a0 = np.inf
    if i > 0 and accepted[idx - ny * nz]:
        a0 = T[idx - ny * nz]
    if i < nx - 1 and accepted[idx + ny * nz] and T[idx + ny * nz] < a0:
        a0 = T[idx + ny * nz]
    a1 = np.inf
    if j > 0 and accepted[idx - nz]:
        a1 = T[idx - nz]
    if j < ny - 1 and accepted[idx + nz] and T[idx + nz] < a1:
        a1 = T[idx + nz]
    a2 = np.inf
    if k > 0 and accepted[idx - 1]:
        a2 = T[idx - 1]
    if k < nz - 1 and accepted[idx + 1] and T[idx + 1] < a2:
        a2 = T[idx + 1]
    # sort the three axis minima ascending
    if a0 > a1:
        a0, a1 = a1, a0
    if a1 > a2:
        a1, a2 = a2, a1
    if a0 > a1:
        a0, a1 = a1, a0
    f = h / speed[idx]
    t = a0 + f
    if a1 < t:
        s1 = a0 + a1
        s2 = a0 * a0 + a1 * a1
        t = (s1 + math.sqrt(max(s1 * s1 - 2.0 * (s2 - f * f), 0.0))) / 2.0
        if a2 < t:
            s1 += a2
            s2 += a2 * a2
            t = (s1 + math.sqrt(max(s1 * s1 - 3.0 * (s2 - f * f), 0.0))) / 3.0
    return t


@numba.njit(cache=True)
def _expand(speed, T, accepted, nx, ny, nz, h, idx, keys, vals, n):
    i = idx // (ny * nz)
    j = (idx // nz) % ny
    k = idx % nz
    for ax in range(3):
        for sgn in (-1, 1):
            if ax == 0:
                c, dim, stride = i + sgn, nx, ny * nz
            elif ax == 1:
                c, dim, stride = j + sgn, ny, nz
            else:
                c, dim, stride = k + sgn, nz, 1
            if c < 0 or c >= dim:
                continue
            nb = idx + sgn * stride
            if accepted[nb] or not speed[nb] > 0:
                continue
            tn = _upwind_value(T, accepted, speed, nx, ny, nz, h, nb)
            if tn < T[nb]:
                T[nb] = tn
                keys, vals, n = _heap_push(keys, vals, n, tn, nb)
    return keys, vals, n


@numba.njit(cache=True)
def _march(speed, T, accepted, nx, ny, nz, h, seeds, order):
    keys = np.empty(4096)
    vals = np.empty(4096, np.int64)
    n = 0
    n_order = 0
    for s in seeds:
        order[n_order] = s
        n_order += 1
    for s in seeds:
        keys, vals, n = _expand(speed, T, accepted, nx, ny, nz, h, s, keys, vals, n)
    while n > 0:
        t, idx, n = _heap_pop(keys, vals, n)
        if accepted[idx] or t > T[idx]:
            continue
        accepted[idx] = True
        order[n_order] = idx
        n_order += 1
        keys, vals, n = _expand(speed, T, accepted, nx, ny, nz, h, idx, keys, vals, n)
    return n_order


def _line_of_sight(free: np.ndarray, a, b) -> bool:
    """True if every cell sampled along the segment between cell centers a and b is free."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    steps = max(1, int(math.ceil(4 * np.max(np.abs(b - a)))))
    for s in range(steps + 1):
        p = np.floor(a + (b - a) * (s / steps) + 0.5).astype(int)
        if not free[tuple(p)]:
            return False
    return True


def fmm_solve(speed: np.ndarray, goal_cell, h: float = 1.0, source_radius: float = 0.0,
              trace: bool = False):
    """Arrival-time field from ``goal_cell`` over a speed grid with cell size ``h``.

    Cells with zero speed are impermeable and keep ``T = inf``. Free cells in
    the cube of half-width ``source_radius`` (same units as ``h``) around the
    goal with a clear straight line to it start from the exact travel time
    ``distance / speed(goal)``; holding that radius fixed in physical units
    removes the point-source error that otherwise limits the first-order
    scheme to ``O(h log h)``. With ``trace=True`` the flat indices in
    acceptance order are returned too.
    """
    speed = np.asarray(speed, dtype=float)
    if speed.ndim != 3:
        raise ValueError("speed must be a 3-D array")
    if np.any(~np.isfinite(speed)) or np.any(speed < 0):
        raise ValueError("speed must be finite and nonnegative")
    goal = tuple(int(g) for g in goal_cell)
    if not all(0 <= g < n for g, n in zip(goal, speed.shape)):
        raise ValueError(f"goal cell {goal} outside the grid")
    if not speed[goal] > 0:
        raise GoalInObstacle(f"goal cell {goal} has zero speed")
    nx, ny, nz = speed.shape
    T = np.full(speed.size, np.inf)
    accepted = np.zeros(speed.size, dtype=np.bool_)

    seeds = [(0.0, np.ravel_multi_index(goal, speed.shape))]
    R = int(math.floor(source_radius / h + 1e-12))
    if R >= 1:
        free = speed > 0
        lo = [max(0, g - R) for g in goal]
        hi = [min(n, g + R + 1) for g, n in zip(goal, speed.shape)]
        for c in itertools.product(*(range(a, b) for a, b in zip(lo, hi))):
            if c == goal or not free[c]:
                continue
            if _line_of_sight(free, goal, c):
                d = h * math.sqrt(sum((x - g) ** 2 for x, g in zip(c, goal)))
                seeds.append((d / speed[goal], np.ravel_multi_index(c, speed.shape)))
    seeds.sort()
    seed_idx = np.array([s[1] for s in seeds], dtype=np.int64)
    for t, s in seeds:
        T[s] = t
        accepted[s] = True
    order = np.empty(speed.size, dtype=np.int64)
    n_order = _march(speed.ravel(), T, accepted, nx, ny, nz, float(h), seed_idx, order)
    T = T.reshape(speed.shape)
    if trace:
        return T, order[:n_order]
    return T


def speed_from_grid(grid: OccupancyGrid) -> np.ndarray:
    """Unit speed in free cells, zero on occupied ones."""
    return np.where(grid.flags, 0.0, 1.0)


def project_goal(goal, grid: OccupancyGrid) -> tuple[int, int, int]:
    """Grid cell to plan toward for a body-frame goal position.

    Goals outside the grid are clipped onto its boundary along the segment
    from the grid center. If the chosen cell is occupied, the nearest free
    cell (Chebyshev rings, then Euclidean distance, then row-major order)
    is returned instead.
    """
    g = np.asarray(goal, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("goal must be finite")
    n = np.array(grid.dims)
    lo, hi = np.full(3, grid.lower), np.full(3, grid.upper)
    center = (lo + hi) / 2.0
    cell = grid.cell_of(g)
    if not grid.inside(cell):
        d = g - center
        t = 1.0
        for ax in range(3):
            if d[ax] > 0:
                t = min(t, (hi[ax] - center[ax]) / d[ax])
            elif d[ax] < 0:
                t = min(t, (lo[ax] - center[ax]) / d[ax])
        p = center + t * d
        cell = tuple(int(min(max(math.floor(x / grid.resolution + 0.5) + grid.offset, 0), m - 1))
                     for x, m in zip(p, n))
    if not grid.flags[cell]:
        return cell
    free = np.argwhere(~grid.flags)
    if len(free) == 0:
        raise NoFreeCell("every cell of the grid is occupied")
    diff = free - np.array(cell)
    cheb = np.max(np.abs(diff), axis=1)
    eucl = np.sum(diff * diff, axis=1)
    flat = np.ravel_multi_index(free.T, grid.dims)
    best = np.lexsort((flat, eucl, cheb))[0]
    return tuple(int(x) for x in free[best])


@dataclass
class ActionPlan:
    cells: list = field(default_factory=list)
    committed: int = 0

    @property
    def steps(self) -> list[tuple[int, int, int]]:
        return [tuple(int(b - a) for a, b in zip(c0, c1)) for c0, c1 in zip(self.cells, self.cells[1:])]

    def __len__(self):
        return max(0, len(self.cells) - 1)

    def cost(self, h: float = 1.0) -> float:
        return h * sum(math.sqrt(sum(s * s for s in st)) for st in self.steps)


def extract_path(T: np.ndarray, start_cell) -> ActionPlan:
    """Greedy descent on ``T`` through the 26-neighborhood until ``T == 0``."""
    cur = tuple(int(c) for c in start_cell)
    if not math.isfinite(T[cur]):
        raise PlanningFailed(f"start cell {cur} is unreachable")
    shape = T.shape
    cells = [cur]
    limit = int(np.isfinite(T).sum())
    while T[cur] > 0:
        best, best_t = None, T[cur]
        for o in NEIGHBORS_26:
            q = (cur[0] + o[0], cur[1] + o[1], cur[2] + o[2])
            if 0 <= q[0] < shape[0] and 0 <= q[1] < shape[1] and 0 <= q[2] < shape[2] and T[q] < best_t:
                best, best_t = q, T[q]
        if best is None:
            raise StuckAtLocalPlateau(f"no descending neighbor at {cur}")
        cells.append(best)
        cur = best
        if len(cells) > limit:
            raise StuckAtLocalPlateau("path exceeded the number of reachable cells")
    return ActionPlan(cells)


def commit_actions(plan: ActionPlan, k: int = COMMIT_STEPS) -> list[tuple[int, int, int]]:
    steps = plan.steps[:k]
    plan.committed = len(steps)
    return steps

