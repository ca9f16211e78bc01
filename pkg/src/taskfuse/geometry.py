"""Camera intrinsics and rigid-pose helpers shared by the pipeline and dataset.

Camera convention: x right, y down, z forward; pixel (u, v) maps to the ray
direction ((u - cx) / fx, (v - cy) / fy, 1), so marching that (unnormalized)
direction by t lands at camera depth z = t.  Poses are camera-to-world.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TaskFuseError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise TaskFuseError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise TaskFuseError("principal point outside the frame")

    @classmethod
    def for_frame(cls, width: int, height: int, focal_scale: float = 0.9):
        f = focal_scale * width
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    def half(self) -> "CameraIntrinsics":
        return CameraIntrinsics(self.fx / 2.0, self.fy / 2.0, self.cx / 2.0,
                                self.cy / 2.0, self.width // 2, self.height // 2)

    def level(self, l: int) -> "CameraIntrinsics":
        k = self
        for _ in range(l):
            k = k.half()
        return k

    def ray_grid(self) -> np.ndarray:
        """(h, w, 3) float32: per-pixel camera-frame ray with z = 1."""
        u = (np.arange(self.width, dtype=np.float32) - np.float32(self.cx)) / np.float32(self.fx)
        v = (np.arange(self.height, dtype=np.float32) - np.float32(self.cy)) / np.float32(self.fy)
        g = np.empty((self.height, self.width, 3), dtype=np.float32)
        g[..., 0] = u[None, :]
        g[..., 1] = v[:, None]
        g[..., 2] = 1.0
        return g


def look_at_pose(position, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Camera-to-world pose (float64) looking from position at target."""
    p = np.asarray(position, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - p
    zn = np.linalg.norm(z)
    if zn < 1e-12:
        raise TaskFuseError("look_at: position equals target")
    z = z / zn
    down = -np.asarray(up, dtype=np.float64)
    x = np.cross(down, z)
    xn = np.linalg.norm(x)
    if xn < 1e-12:
        raise TaskFuseError("look_at: view direction parallel to up")
    x = x / xn
    y = np.cross(z, x)
    m = np.eye(4)
    m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = x, y, z, p
    return m


def invert_rigid(m: np.ndarray) -> np.ndarray:
    out = np.eye(4, dtype=m.dtype)
    rt = m[:3, :3].T
    out[:3, :3] = rt
    out[:3, 3] = -rt @ m[:3, 3]
    return out


def orthonormalize(m: np.ndarray) -> np.ndarray:
    """Re-orthonormalize the rotation block by Gram-Schmidt (float64)."""
    r = m[:3, :3].astype(np.float64)
    x = r[:, 0] / np.linalg.norm(r[:, 0])
    y = r[:, 1] - x * (x @ r[:, 1])
    y = y / np.linalg.norm(y)
    z = np.cross(x, y)
    out = np.eye(4)
    out[:3, 0], out[:3, 1], out[:3, 2] = x, y, z
    out[:3, 3] = m[:3, 3]
    return out


def quat_to_mat(q) -> np.ndarray:
    """Unit quaternion (qx, qy, qz, qw) to a 4x4 rigid transform (no translation)."""
    x, y, z, w = (float(v) for v in q)
    n = math.sqrt(x * x + y * y + z * z + w * w)
    x, y, z, w = x / n, y / n, z / n, w / n
    m = np.eye(4)
    m[:3, :3] = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ]
    return m


def mat_to_quat(m) -> np.ndarray:
    """Rotation block of a rigid transform to (qx, qy, qz, qw), w >= 0."""
    r = np.asarray(m, dtype=np.float64)[:3, :3]
    t = np.trace(r)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        x = 0.25 * s
        w = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] >= r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        y = 0.25 * s
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        z = 0.25 * s
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
    q = np.array([x, y, z, w])
    q /= np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    return q


def pose_params(m) -> tuple:
    """Flatten a 4x4 pose row-major into 16 scalar kernel params."""
    return tuple(float(v) for v in np.asarray(m, dtype=np.float64).reshape(16))


def params_to_pose(params) -> np.ndarray:
    return np.asarray(params, dtype=np.float64).reshape(4, 4)
