"""Pinhole projection, depth-map occlusion tests and per-point view lookup.

Pixel convention: integer pixel ``j`` is centred on continuous coordinate
``u = j`` and covers ``[j - 0.5, j + 0.5)``.  Maps are sampled at the
nearest pixel, ``floor(u + 0.5)``.  A projection is visible when the point is
in front of the camera, ``u >= 0`` and its rounded pixel lies inside the
image, i.e. ``0 <= u < width - 0.5`` (likewise for ``v``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

DEFAULT_TAU = 0.05
ORTHO_TOL = 1e-5


@dataclass(frozen=True)
class CameraPose:
    """Intrinsics, world-to-camera extrinsics and image size of one view."""

    intrinsics: np.ndarray
    world_to_camera: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3)
        E = np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "world_to_camera", E)
        if not (K[0, 0] > 0 and K[1, 1] > 0):
            raise ValueError(f"focal lengths must be positive, got fx={K[0, 0]}, fy={K[1, 1]}")
        check_rigid(E)
        if self.width < 1 or self.height < 1:
            raise ValueError(f"bad image size {self.width}x{self.height}")

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])

    @property
    def camera_to_world(self) -> np.ndarray:
        return invert_rigid(self.world_to_camera)


@dataclass(frozen=True)
class Projection:
    u: float
    v: float
    depth: float
    visible: bool


def check_rigid(T: np.ndarray, tol: float = ORTHO_TOL) -> None:
    R = T[:3, :3]
    if not np.allclose(R @ R.T, np.eye(3), atol=tol):
        raise ValueError("extrinsic rotation block is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("extrinsic rotation has determinant != +1")
    if not np.allclose(T[3], [0.0, 0.0, 0.0, 1.0], atol=tol):
        raise ValueError("extrinsic bottom row must be [0, 0, 0, 1]")


def invert_rigid(T: np.ndarray) -> np.ndarray:
    R, t = T[:3, :3], T[:3, 3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ t
    return out


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera transform for a camera at ``eye`` looking at ``target``.

    Camera frame: +z forward, +x right, +y down (image rows grow downward).
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("look_at: up vector parallel to viewing direction")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = -R @ eye
    return T


def pixel_index(coord):
    """Nearest-pixel index, rounding halves up."""
    return np.floor(np.asarray(coord) + 0.5).astype(np.int64)


def project_points(xyz: np.ndarray, cam: CameraPose):
    """Vectorised projection. Returns ``(u, v, depth, visible)`` arrays."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    E = cam.world_to_camera
    q = xyz @ E[:3, :3].T + E[:3, 3]
    z = q[:, 2]
    front = z > 0
    safe_z = np.where(front, z, 1.0)
    u = cam.fx * q[:, 0] / safe_z + cam.cx
    v = cam.fy * q[:, 1] / safe_z + cam.cy
    u = np.where(front, u, np.nan)
    v = np.where(front, v, np.nan)
    with np.errstate(invalid="ignore"):
        visible = (
            front
            & (u >= 0)
            & (v >= 0)
            & (u < cam.width - 0.5)
            & (v < cam.height - 0.5)
        )
    return u, v, z, visible


def project_point(p, cam: CameraPose) -> Projection:
    u, v, z, vis = project_points(np.asarray(p, dtype=np.float64)[None, :], cam)
    return Projection(u=float(u[0]), v=float(v[0]), depth=float(z[0]), visible=bool(vis[0]))


def occlusion_mask(u, v, depth, depth_map: Optional[np.ndarray], tau: float) -> np.ndarray:
    """Vectorised :func:`occlusion_check` for already-visible projections."""
    u = np.asarray(u, dtype=np.float64)
    if depth_map is None or not np.isfinite(tau):
        return np.ones(u.shape, dtype=bool)
    H, W = depth_map.shape
    col = pixel_index(np.nan_to_num(u, nan=-1.0))
    row = pixel_index(np.nan_to_num(np.asarray(v, dtype=np.float64), nan=-1.0))
    inside = (col >= 0) & (col < W) & (row >= 0) & (row < H)
    sensed = np.zeros(u.shape, dtype=np.float64)
    sensed[inside] = depth_map[row[inside], col[inside]]
    with np.errstate(invalid="ignore"):
        return inside & (sensed > 0) & (np.abs(np.asarray(depth) - sensed) <= tau)


def occlusion_check(proj: Projection, depth_map: Optional[np.ndarray], tau: float = DEFAULT_TAU) -> bool:
    """True when the sensed depth at the projected pixel agrees with ``proj.depth``.

    A zero depth reading is an invalid sensor value and rejects the point.
    Without a depth map, or with ``tau = inf``, the check is skipped.
    """
    if depth_map is None or not np.isfinite(tau):
        return True
    return bool(occlusion_mask(np.array([proj.u]), np.array([proj.v]), np.array([proj.depth]), depth_map, tau)[0])


def passing_mask(xyz: np.ndarray, cam: CameraPose, depth_map: Optional[np.ndarray], tau: float):
    """Per-point visibility in one view after the occlusion test.

    Returns ``(mask, u, v)``.
    """
    u, v, z, vis = project_points(xyz, cam)
    mask = vis.copy()
    if depth_map is not None and np.isfinite(tau) and vis.any():
        idx = np.flatnonzero(vis)
        mask[idx] = occlusion_mask(u[idx], v[idx], z[idx], depth_map, tau)
    return mask, u, v


def visible_views(p, views: Sequence, tau: float = DEFAULT_TAU) -> list:
    """``[(view_index, u, v), ...]`` for every view that sees ``p`` unoccluded."""
    out = []
    for i, view in enumerate(views):
        proj = project_point(p, view.camera)
        if proj.visible and occlusion_check(proj, view.depth, tau):
            out.append((i, proj.u, proj.v))
    return out
