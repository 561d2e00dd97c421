"""Pinhole camera model, two-view DLT triangulation and robust point refinement.

Conventions: extrinsics are world-to-camera (``x_cam = R @ x_world + t``),
camera axes are x right, y down, z forward, and pixel ``(x, y)`` is
(column, row) with pixel centers on integer coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import BehindCamera, DegenerateBaseline, DomainError, NonFinite, PointAtInfinity

BASELINE_MIN = 0.01
_W_EPS = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        """Square-pixel camera with the principal point at the image center."""
        f = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation is not proper (det != +1)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class PixelMatch:
    """A correspondence between pixel ``left`` in the first image and ``right`` in the second."""

    left: tuple[float, float]
    right: tuple[float, float]

    @property
    def p(self) -> np.ndarray:
        return np.array([self.left[0], self.left[1], 1.0])

    @property
    def p_prime(self) -> np.ndarray:
        return np.array([self.right[0], self.right[1], 1.0])


@dataclass(frozen=True)
class RefineConfig:
    g_tol: float = 1e-8
    x_tol: float = 1e-10
    max_iters: int = 50
    initial_damping: float = 1e-3
    max_rejections: int = 30


def compose_projection(intrinsics: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """Return the 3x4 camera matrix ``K @ [R | t]``."""
    Rt = np.hstack([pose.rotation, pose.translation[:, None]])
    return intrinsics.K @ Rt


def camera_center(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return -np.linalg.solve(M[:, :3], M[:, 3])


def build_triangulation_matrix(match: PixelMatch, M: np.ndarray, M_prime: np.ndarray) -> np.ndarray:
    x_l, y_l = match.left
    x_r, y_r = match.right
    M = np.asarray(M, dtype=float)
    Mp = np.asarray(M_prime, dtype=float)
    return np.vstack([
        x_l * M[2] - M[0],
        y_l * M[2] - M[1],
        x_r * Mp[2] - Mp[0],
        y_r * Mp[2] - Mp[1],
    ])


def triangulate(match: PixelMatch, M: np.ndarray, M_prime: np.ndarray,
                baseline_min: float = BASELINE_MIN) -> np.ndarray:
    """Linear triangulation from the null vector of the 4x4 constraint matrix.

    Rows are scaled to unit norm before the SVD; this leaves the exact null
    space untouched and keeps the decomposition well conditioned when pixel
    coordinates are in the hundreds.
    """
    c0 = camera_center(M)
    c1 = camera_center(M_prime)
    if np.linalg.norm(c0 - c1) < baseline_min:
        raise DegenerateBaseline(f"camera centers {np.linalg.norm(c0 - c1):.3g} m apart")
    A = build_triangulation_matrix(match, M, M_prime)
    norms = np.linalg.norm(A, axis=1)
    A = A / np.where(norms > 0, norms, 1.0)[:, None]
    _, _, Vt = np.linalg.svd(A)
    X = Vt[-1]
    if abs(X[3]) < _W_EPS:
        raise PointAtInfinity("homogeneous scale vanished")
    return X[:3] / X[3]


def soft_l1(x):
    """Robust loss ``2 (sqrt(1 + x) - 1)`` of a squared residual."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise DomainError("soft_l1 is defined for squared residuals only")
    out = 2.0 * (np.sqrt(1.0 + arr) - 1.0)
    return float(out) if out.ndim == 0 else out


def _soft_l1_grad(s: np.ndarray) -> np.ndarray:
    return 1.0 / np.sqrt(1.0 + s)


def _project(M: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, float]:
    h = M[:, :3] @ P + M[:, 3]
    if not h[2] > 0:
        raise BehindCamera(f"point has nonpositive depth {h[2]:.3g}")
    return h[:2] / h[2], h[2]


def reprojection_residuals(P_hat: np.ndarray, match: PixelMatch, M: np.ndarray,
                           M_prime: np.ndarray) -> np.ndarray:
    """Projected-minus-observed pixel offsets ``(du, dv, du', dv')``."""
    P = np.asarray(P_hat, dtype=float)
    uv, _ = _project(np.asarray(M, dtype=float), P)
    uv_p, _ = _project(np.asarray(M_prime, dtype=float), P)
    return np.array([uv[0] - match.left[0], uv[1] - match.left[1],
                     uv_p[0] - match.right[0], uv_p[1] - match.right[1]])


def reprojection_jacobian(P_hat: np.ndarray, M: np.ndarray, M_prime: np.ndarray) -> np.ndarray:
    """4x3 derivative of :func:`reprojection_residuals` with respect to the point."""
    P = np.asarray(P_hat, dtype=float)
    rows = []
    for cam in (np.asarray(M, dtype=float), np.asarray(M_prime, dtype=float)):
        uv, w = _project(cam, P)
        B = cam[:, :3]
        rows.append((B[0] - uv[0] * B[2]) / w)
        rows.append((B[1] - uv[1] * B[2]) / w)
    return np.vstack(rows)


def reprojection_objective(P_hat: np.ndarray, match: PixelMatch, M: np.ndarray,
                           M_prime: np.ndarray) -> float:
    """Plain sum of squared reprojection errors over both images."""
    r = reprojection_residuals(P_hat, match, M, M_prime)
    return float(r @ r)


def robust_objective(P_hat: np.ndarray, match: PixelMatch, M: np.ndarray,
                     M_prime: np.ndarray) -> float:
    """Soft-L1 applied to each image's squared reprojection error, summed."""
    r = reprojection_residuals(P_hat, match, M, M_prime)
    s = np.array([r[0] ** 2 + r[1] ** 2, r[2] ** 2 + r[3] ** 2])
    return float(np.sum(soft_l1(s)))


def refine_point(P0: np.ndarray, match: PixelMatch, M: np.ndarray, M_prime: np.ndarray,
                 config: RefineConfig = RefineConfig(),
                 callback: Optional[Callable[[np.ndarray, float], None]] = None) -> np.ndarray:
    """Minimize the robust reprojection objective with a damped trust-region iteration.

    Each image contributes ``soft_l1(|r_k|^2)``. The model Hessian is the
    reweighted Gauss-Newton matrix ``2 sum_k rho'(s_k) J_k^T J_k``; the damping
    parameter plays the role of the trust-region radius and is updated from
    the ratio of actual to predicted reduction. Only decreasing steps are
    accepted, so the result never scores worse than ``P0``.
    """
    M = np.asarray(M, dtype=float)
    M_prime = np.asarray(M_prime, dtype=float)
    x = np.array(P0, dtype=float)
    F = robust_objective(x, match, M, M_prime)
    if not math.isfinite(F):
        raise NonFinite("initial objective is not finite")
    mu = None
    nu = 2.0
    for _ in range(config.max_iters):
        r = reprojection_residuals(x, match, M, M_prime)
        J = reprojection_jacobian(x, M, M_prime)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(J))):
            raise NonFinite("residual or Jacobian is not finite")
        s = np.array([r[0] ** 2 + r[1] ** 2, r[2] ** 2 + r[3] ** 2])
        w = np.repeat(_soft_l1_grad(s), 2)
        g = 2.0 * J.T @ (w * r)
        H = 2.0 * (J * w[:, None]).T @ J
        if np.max(np.abs(g)) < config.g_tol:
            break
        if mu is None:
            mu = config.initial_damping * float(np.max(np.diag(H)))
        accepted = False
        converged = False
        for _ in range(config.max_rejections):
            step = np.linalg.solve(H + mu * np.eye(3), -g)
            if np.linalg.norm(step) < config.x_tol:
                converged = True
                break
            x_new = x + step
            try:
                F_new = robust_objective(x_new, match, M, M_prime)
            except BehindCamera:
                F_new = math.inf
            predicted = -(g @ step + 0.5 * step @ H @ step)
            if F_new < F and predicted > 0:
                rho = (F - F_new) / predicted
                x, F = x_new, F_new
                mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                accepted = True
                if callback is not None:
                    callback(x.copy(), F)
                break
            mu *= nu
            nu *= 2.0
        if converged or not accepted:
            break
    if not math.isfinite(F):
        raise NonFinite("objective diverged")
    return x


def point_depth(P: np.ndarray, M: np.ndarray) -> float:
    """Depth along the optical axis of camera ``M`` (its third homogeneous row)."""
    M = np.asarray(M, dtype=float)
    return float((M[2, :3] @ P + M[2, 3]) / np.linalg.norm(M[2, :3]))


def parallax_angle(P: np.ndarray, M: np.ndarray, M_prime: np.ndarray) -> float:
    """Angle in radians subtended at ``P`` by the two camera centers."""
    a = camera_center(M) - P
    b = camera_center(M_prime) - P
    c = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return math.acos(max(-1.0, min(1.0, float(c))))
