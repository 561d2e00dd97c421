import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monoplan.errors import GoalInObstacle, NoFreeCell, PlanningFailed
from monoplan.fmm import (NEIGHBORS_26, ActionPlan, commit_actions, extract_path, fmm_solve, project_goal,
                          speed_from_grid)
from monoplan.occupancy import OccupancyGrid

from conftest import dijkstra_field, euclidean_field


def upwind_oracle(T, rank, speed, h, cell):
    """Recompute one cell's update from the neighbors accepted before it."""
    mins = []
    for ax in range(3):
        best = math.inf
        for s in (-1, 1):
            q = list(cell)
            q[ax] += s
            q = tuple(q)
            if 0 <= q[ax] < T.shape[ax] and rank[q] < rank[cell]:
                best = min(best, T[q])
        mins.append(best)
    a = sorted(mins)
    f = h / speed[cell]
    t = a[0] + f
    for m in (2, 3):
        if a[m - 1] < t:
            s1, s2 = sum(a[:m]), sum(x * x for x in a[:m])
            t = (s1 + math.sqrt(max(s1 * s1 - m * (s2 - f * f), 0.0))) / m
    return t


def test_face_neighbor_is_one_step():
    T = fmm_solve(np.ones((5, 5, 5)), (2, 2, 2), h=0.3)
    assert T[2, 2, 2] == 0.0
    for c in ((1, 2, 2), (3, 2, 2), (2, 1, 2), (2, 2, 3)):
        assert T[c] == pytest.approx(0.3, abs=1e-15)


def test_empty_grid_relative_error():
    n = 33
    goal = (16, 16, 16)
    T = fmm_solve(np.ones((n, n, n)), goal, 1.0 / (n - 1), source_radius=1.0 / 16)
    E = euclidean_field(T.shape, goal, 1.0 / (n - 1))
    mask = E > 0
    assert np.max(np.abs(T - E)[mask] / E[mask]) <= 0.12


def test_sandwich_empty_grid():
    n = 17
    goal = (8, 8, 8)
    free = np.ones((n, n, n), dtype=bool)
    for radius in (0.0, 2.0):
        T = fmm_solve(free.astype(float), goal, 1.0, radius)
        assert np.all(T >= euclidean_field(T.shape, goal) - 1e-12)
        assert np.all(T <= dijkstra_field(free, goal, diagonal=False) + 1e-12)


def test_sandwich_with_obstacles():
    rng = np.random.default_rng(0)
    free = rng.random((15, 15, 15)) > 0.15
    goal = (7, 7, 7)
    free[goal] = True
    T = fmm_solve(free.astype(float), goal)
    D6 = dijkstra_field(free, goal, diagonal=False)
    fin = np.isfinite(D6)
    assert np.array_equal(np.isfinite(T), fin)
    assert np.all(T[fin] <= D6[fin] + 1e-12)
    assert np.all(T[fin] >= euclidean_field(T.shape, goal)[fin] - 1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 0.3))
def test_causality_and_upwind_consistency(seed, density):
    rng = np.random.default_rng(seed)
    speed = np.where(rng.random((9, 10, 11)) < density, 0.0, rng.uniform(0.5, 2.0, (9, 10, 11)))
    goal = (4, 5, 5)
    speed[goal] = 1.0
    h = 0.7
    T, order = fmm_solve(speed, goal, h, trace=True)
    flat = T.ravel()
    assert np.all(np.diff(flat[order]) >= 0)
    rank = np.full(T.shape, np.iinfo(np.int64).max)
    rank.ravel()[order] = np.arange(len(order))
    for idx in order[1:]:
        cell = np.unravel_index(idx, T.shape)
        assert abs(upwind_oracle(T, rank, speed, h, cell) - T[cell]) <= 1e-9 * max(1.0, T[cell])


def test_causality_after_source_seeds():
    T, order = fmm_solve(np.ones((21, 21, 21)), (10, 10, 10), 1.0, source_radius=3.0, trace=True)
    n_seeds = 7 ** 3
    marched = T.ravel()[order[n_seeds:]]
    assert np.all(np.diff(marched) >= 0)
    assert np.all(np.diff(T.ravel()[order[:n_seeds]]) >= 0)


def test_impermeability():
    speed = np.ones((11, 11, 11))
    speed[3:8, 3:8, 3:8] = 0.0
    speed[4:7, 4:7, 4:7] = 1.0  # sealed pocket
    T = fmm_solve(speed, (0, 0, 0))
    assert np.all(np.isinf(T[speed == 0]))
    assert np.all(np.isinf(T[4:7, 4:7, 4:7]))
    outside = speed > 0
    outside[4:7, 4:7, 4:7] = False
    assert np.all(np.isfinite(T[outside]))


def test_wall_gap_routes_through_gap():
    n = 15
    speed = np.ones((n, n, n))
    speed[:, 7, :] = 0.0
    gap = (2, 7, 12)
    speed[gap] = 1.0
    T = fmm_solve(speed, (7, 2, 7))
    far = T[:, 8:, :]
    assert np.all(np.isfinite(far))
    assert np.all(far >= T[gap])


def test_solver_errors():
    speed = np.ones((4, 4, 4))
    speed[1, 1, 1] = 0
    with pytest.raises(GoalInObstacle):
        fmm_solve(speed, (1, 1, 1))
    with pytest.raises(ValueError):
        fmm_solve(speed, (9, 0, 0))
    with pytest.raises(ValueError):
        fmm_solve(np.ones((4, 4)), (0, 0))
    with pytest.raises(ValueError):
        fmm_solve(-np.ones((4, 4, 4)), (0, 0, 0))


def test_project_goal_interior_and_axis():
    g = OccupancyGrid.empty(0.25, 4.0)
    assert project_goal((0.3, 1.1, -0.2), g) == g.cell_of((0.3, 1.1, -0.2))
    assert project_goal((0.0, 100.0, 0.0), g) == (16, 31, 16)


def clip_oracle(goal, grid):
    """Bisection for the exit point of the center-to-goal segment."""
    lo, hi = grid.lower, grid.upper
    center = np.full(3, (lo + hi) / 2)
    inside = lambda p: np.all((p >= lo) & (p < hi))
    a, b = 0.0, 1.0
    for _ in range(200):
        m = (a + b) / 2
        a, b = (m, b) if inside(center + m * (goal - center)) else (a, m)
    p = center + a * (goal - center)
    return tuple(int(min(max(math.floor(x / grid.resolution + 0.5) + grid.offset, 0), grid.dims[0] - 1))
                 for x in p)


def test_project_goal_clip_oracle():
    rng = np.random.default_rng(3)
    g = OccupancyGrid.empty(0.25, 4.0)
    for _ in range(200):
        d = rng.normal(size=3)
        goal = d / np.linalg.norm(d) * rng.uniform(5, 200)
        assert project_goal(goal, g) == clip_oracle(goal, g)


def test_project_goal_occupied_picks_nearest_free():
    g = OccupancyGrid.empty(0.25, 1.0)
    g.flags[3:6, 3:6, 3:6] = True
    cell = project_goal(g.cell_center((4, 4, 4)) + 0.1, g)
    assert max(abs(a - b) for a, b in zip(cell, (4, 4, 4))) == 2
    assert not g.flags[cell]
    assert cell == (2, 4, 4)  # smallest row-major index among the face-adjacent ring cells
    g.flags[:] = True
    with pytest.raises(NoFreeCell):
        project_goal((0.0, 0.0, 0.0), g)
    with pytest.raises(ValueError):
        project_goal((math.nan, 0.0, 0.0), g)


def test_start_equals_goal():
    T = fmm_solve(np.ones((3, 3, 3)), (1, 1, 1))
    plan = extract_path(T, (1, 1, 1))
    assert len(plan) == 0 and commit_actions(plan) == []


def test_corridor():
    speed = np.zeros((5, 3, 3))
    speed[:, 1, 1] = 1.0
    T = fmm_solve(speed, (4, 1, 1))
    plan = extract_path(T, (0, 1, 1))
    assert plan.steps == [(1, 0, 0)] * 4


def test_unreachable_start():
    speed = np.ones((5, 5, 5))
    speed[2] = 0.0
    T = fmm_solve(speed, (0, 2, 2))
    with pytest.raises(PlanningFailed):
        extract_path(T, (4, 2, 2))


def test_commit_prefix():
    plan = ActionPlan([(i, 0, 0) for i in range(11)])
    assert commit_actions(plan) == [(1, 0, 0)] * 3 and plan.committed == 3
    short = ActionPlan([(0, 0, 0), (1, 0, 0), (1, 1, 0)])
    assert commit_actions(short) == [(1, 0, 0), (0, 1, 0)]
    assert commit_actions(ActionPlan()) == []


def test_diagonal_cost():
    assert ActionPlan([(0, 0, 0), (1, 1, 1), (2, 1, 1)]).cost(0.5) == pytest.approx(0.5 * (math.sqrt(3) + 1))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_paths_descend_and_avoid_obstacles(seed):
    rng = np.random.default_rng(seed)
    grid = OccupancyGrid(0.25, 2.0, rng.random((16, 16, 16)) < 0.2)
    start, goal = (2, 2, 2), (13, 13, 13)
    grid.flags[start] = grid.flags[goal] = False
    speed = speed_from_grid(grid)
    T = fmm_solve(speed, goal, 0.25)
    if not math.isfinite(T[start]):
        return
    plan = extract_path(T, start)
    assert plan.cells[-1] == goal
    assert all(not grid.flags[c] for c in plan.cells)
    assert all(T[b] < T[a] for a, b in zip(plan.cells, plan.cells[1:]))
    assert all(s in NEIGHBORS_26 for s in plan.steps)
    D26 = dijkstra_field(~grid.flags, goal, 0.25)
    assert plan.cost(0.25) <= 1.15 * D26[start] + 1e-9
