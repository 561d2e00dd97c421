import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from monoplan.camera import CameraIntrinsics, CameraPose, PixelMatch, compose_projection


def random_rotation(rng, max_angle=math.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * rng.uniform(0, max_angle)).as_matrix()


def random_intrinsics(rng):
    w, h = int(rng.integers(64, 1025)), int(rng.integers(48, 769))
    f = rng.uniform(0.5, 2.0) * w
    return CameraIntrinsics(f, f * rng.uniform(0.95, 1.05), rng.uniform(0.3, 0.7) * w,
                            rng.uniform(0.3, 0.7) * h, w, h)


VGA = CameraIntrinsics(500.0, 500.0, 319.5, 239.5, 640, 480)


def random_two_view(rng, depth=(0.5, 50.0), baseline=(0.05, 2.0), tilt=0.3, lateral=False, K=None):
    """Two cameras and a point at the requested depth in front of both, plus the projections.

    ``lateral`` keeps the baseline within 30 degrees of the first camera's image plane.
    """
    K = K or random_intrinsics(rng)
    R0 = random_rotation(rng)
    c0 = rng.uniform(-5, 5, 3)
    pose0 = CameraPose(R0, -R0 @ c0)
    b = rng.uniform(*baseline)
    offset = rng.normal(size=3)
    if lateral:
        offset = R0.T @ np.array([offset[0], offset[1], rng.uniform(-0.5, 0.5) * math.hypot(*offset[:2])])
    offset *= b / np.linalg.norm(offset)
    R1 = random_rotation(rng, tilt) @ R0
    c1 = c0 + offset
    pose1 = CameraPose(R1, -R1 @ c1)
    M0 = compose_projection(K, pose0)
    M1 = compose_projection(K, pose1)
    while True:
        z = rng.uniform(*depth)
        ray = np.array([rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3), 1.0])
        Q = R0.T @ (ray * z) + c0
        h0 = M0 @ np.append(Q, 1.0)
        h1 = M1 @ np.append(Q, 1.0)
        if h1[2] > 0.1:
            break
    match = PixelMatch((h0[0] / h0[2], h0[1] / h0[2]), (h1[0] / h1[2], h1[1] / h1[2]))
    return M0, M1, Q, match


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


DEPTH_SCENE = """
# fronto-parallel faces at 2, 4 and 8 m from a camera at the origin looking along +y
box -10 8 -10  10 9 10
box -0.6 2 0.4  0.4 2.8 1.6
box 1.0 4 0    2.0 4.5 1.2
"""


def rectified_pair(scene_text=DEPTH_SCENE, baseline=0.25, count=16, jitter=0.0, seed=0):
    """Left/right observations from a lateral baseline, plus exact synthetic matches."""
    from monoplan.camera import CameraIntrinsics, compose_projection
    from monoplan.matching import lowe_ratio_filter, select_top_n
    from monoplan.scene import camera_pose, observe, parse_scene, render_gray, synthetic_matches, vehicle_axes

    intr = CameraIntrinsics.from_fov(128, 96, 90)
    scene = parse_scene(scene_text)
    pos, yaw = np.array([0.0, 0.0, 1.0]), math.pi / 2
    right = vehicle_axes(yaw)[0]
    pa, pb = camera_pose(pos, yaw), camera_pose(pos + baseline * right, yaw)
    obs = observe(scene, pa, intr)
    right_img = render_gray(scene, pb, intr)
    ms = select_top_n(lowe_ratio_filter(synthetic_matches(scene, pa, pb, intr, count, jitter, seed)), count)
    return dict(intr=intr, scene=scene, obs=obs, right_image=right_img,
                matches=[m.to_pixel_match() for m in ms],
                M=compose_projection(intr, pa), M_prime=compose_projection(intr, pb))


def grid_graph(free, h=1.0, diagonal=True):
    """Sparse adjacency of free cells: 26-neighbor (Euclidean step costs) or 6-neighbor."""
    import itertools

    from scipy.sparse import coo_matrix

    shape = free.shape
    idx = np.arange(free.size).reshape(shape)
    offsets = [o for o in itertools.product((-1, 0, 1), repeat=3) if any(o)]
    if not diagonal:
        offsets = [o for o in offsets if sum(map(abs, o)) == 1]
    rows, cols, w = [], [], []
    for o in offsets:
        src = tuple(slice(max(0, -d), s - max(0, d)) for d, s in zip(o, shape))
        dst = tuple(slice(max(0, d), s - max(0, -d)) for d, s in zip(o, shape))
        ok = free[src] & free[dst]
        rows.append(idx[src][ok])
        cols.append(idx[dst][ok])
        w.append(np.full(ok.sum(), h * math.sqrt(sum(d * d for d in o))))
    r, c, ww = np.concatenate(rows), np.concatenate(cols), np.concatenate(w)
    return coo_matrix((ww, (r, c)), shape=(free.size, free.size)).tocsr()


def dijkstra_field(free, goal, h=1.0, diagonal=True):
    from scipy.sparse.csgraph import dijkstra

    g = grid_graph(free, h, diagonal)
    return dijkstra(g, indices=np.ravel_multi_index(goal, free.shape)).reshape(free.shape)


def euclidean_field(shape, goal, h=1.0):
    grids = np.indices(shape).astype(float)
    return h * np.sqrt(sum((g - c) ** 2 for g, c in zip(grids, goal)))
