"""Depth sequences: a small binary container, synthetic scenes with analytic
ground truth, trajectory files, and trajectory accuracy metrics.

Sequence container (all little-endian): a 20-byte header -- magic ``BHDR``,
version u32, width u32, height u32, frame_count u32 -- followed by
frame_count raw frames of width*height u16 millimeter depths (0 = invalid).
Trajectories are text, one ``idx tx ty tz qx qy qz qw`` line per frame.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .errors import FormatError, TaskFuseError
from .geometry import CameraIntrinsics, invert_rigid, look_at_pose, mat_to_quat, quat_to_mat

MAGIC = b"BHDR"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class SequenceHeader:
    width: int
    height: int
    frame_count: int
    version: int = VERSION

    @property
    def frame_bytes(self) -> int:
        return self.width * self.height * 2


def write_sequence(path, frames, width: int, height: int) -> SequenceHeader:
    """Write u16 depth frames; returns the header actually written."""
    frames = list(frames)
    header = SequenceHeader(width, height, len(frames))
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, width, height, len(frames)))
        for i, frame in enumerate(frames):
            arr = np.ascontiguousarray(frame, dtype="<u2")
            if arr.shape != (height, width):
                raise FormatError(f"frame {i} has shape {arr.shape}, expected {(height, width)}")
            fh.write(arr.tobytes())
    return header


def read_sequence(path):
    """Open a sequence; returns (header, frame iterator) with strict bounds checks."""
    fh = open(path, "rb")
    raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        fh.close()
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, width, height, count = _HEADER.unpack(raw)
    if magic != MAGIC:
        fh.close()
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        fh.close()
        raise FormatError(f"{path}: unsupported version {version}")
    header = SequenceHeader(width, height, count, version)

    def frames():
        try:
            for i in range(count):
                payload = fh.read(header.frame_bytes)
                if len(payload) < header.frame_bytes:
                    raise FormatError(f"{path}: truncated frame {i}")
                yield np.frombuffer(payload, dtype="<u2").reshape(height, width)
        finally:
            fh.close()

    return header, frames()


# ---------------------------------------------------------------------------
# trajectories

@dataclass
class Trajectory:
    """Per-frame camera-to-world poses as (index, translation, quaternion) rows."""

    rows: list = field(default_factory=list)  # (idx, t[3] float64, q[4] float64)

    @classmethod
    def from_poses(cls, poses) -> "Trajectory":
        rows = []
        for i, m in enumerate(poses):
            m = np.asarray(m, dtype=np.float64)
            rows.append((i, m[:3, 3].copy(), mat_to_quat(m)))
        return cls(rows)

    def poses(self):
        out = []
        for _, t, q in self.rows:
            m = quat_to_mat(q)
            m[:3, 3] = t
            out.append(m)
        return out

    def __len__(self):
        return len(self.rows)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for idx, t, q in self.rows:
                vals = " ".join("%.9g" % v for v in (*t, *q))
                fh.write(f"{idx} {vals}\n")

    @classmethod
    def load(cls, path) -> "Trajectory":
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 8:
                    raise FormatError(f"{path}:{lineno}: expected 8 fields")
                idx = int(parts[0])
                vals = [float(p) for p in parts[1:]]
                q = np.array(vals[3:7])
                if abs(np.linalg.norm(q) - 1.0) > 1e-6:
                    raise FormatError(f"{path}:{lineno}: quaternion not unit")
                rows.append((idx, np.array(vals[0:3]), q))
        return cls(rows)


def ate_rmse(estimated: Trajectory, truth: Trajectory) -> float:
    """Absolute trajectory error (meters, RMSE over translations).

    Both trajectories are anchored by composing the estimate with the inverse
    of the first-frame relative transform, so a shared global rigid motion
    drops out.  The anchor frame itself (error identically zero) is excluded
    from the mean.
    """
    if len(estimated) != len(truth):
        raise TaskFuseError("trajectory lengths differ")
    if len(estimated) == 0:
        return 0.0
    for (ia, _, _), (ib, _, _) in zip(estimated.rows, truth.rows):
        if ia != ib:
            raise TaskFuseError("trajectories are not frame-index aligned")
    est = estimated.poses()
    tru = truth.poses()
    align = tru[0] @ invert_rigid(est[0])
    errs = []
    for e, t in zip(est[1:], tru[1:]):
        d = (align @ e)[:3, 3] - t[:3, 3]
        errs.append(float(d @ d))
    if not errs:
        return 0.0
    return math.sqrt(sum(errs) / len(errs))


# ---------------------------------------------------------------------------
# synthetic scene

@dataclass(frozen=True)
class SyntheticScene:
    """A sphere centered in an axis-aligned room box, orbited by the camera.

    The orbit radius must keep the camera inside the box and outside the
    sphere.  ``boost_every``/``boost_factor`` occasionally enlarge the
    angular step so tracking effort (and hence per-frame kernel counts)
    varies across a run; 0 disables the boosts.
    """

    sphere_center: tuple = (0.0, 0.0, 0.0)
    sphere_radius: float = 0.6
    box_half_extents: tuple = (2.2, 1.6, 2.2)
    orbit_radius: float = 1.6
    orbit_height: float = 0.0
    angular_step: float = 0.035
    boost_every: int = 0
    boost_factor: float = 4.0

    def __post_init__(self):
        c = np.asarray(self.sphere_center)
        half = np.asarray(self.box_half_extents)
        cam = np.array([self.orbit_radius, self.orbit_height, self.orbit_radius])
        if np.any(np.abs(c) + self.sphere_radius >= half):
            raise TaskFuseError("sphere does not fit inside the box")
        if np.any(np.abs(cam) >= half) or self.orbit_radius <= self.sphere_radius:
            raise TaskFuseError("camera path must stay inside the box and outside the sphere")

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "SyntheticScene":
        return cls(sphere_radius=cfg.sphere_radius,
                   box_half_extents=tuple(cfg.box_half_extents),
                   orbit_radius=cfg.orbit_radius, orbit_height=cfg.orbit_height,
                   angular_step=cfg.angular_step, boost_every=cfg.boost_every,
                   boost_factor=cfg.boost_factor)

    def angle(self, frame: int) -> float:
        theta = frame * self.angular_step
        if self.boost_every > 0:
            boosts = frame // self.boost_every
            theta += boosts * (self.boost_factor - 1.0) * self.angular_step
        return theta

    def camera_pose(self, frame: int) -> np.ndarray:
        theta = self.angle(frame)
        c = np.asarray(self.sphere_center, dtype=np.float64)
        p = c + np.array([self.orbit_radius * math.cos(theta), self.orbit_height,
                          self.orbit_radius * math.sin(theta)])
        return look_at_pose(p, c)

    def analytic_depth(self, intrinsics: CameraIntrinsics, pose) -> np.ndarray:
        """Exact z-depth (float64 meters) of the sphere/room for one pose."""
        pose = np.asarray(pose, dtype=np.float64)
        dirs = intrinsics.ray_grid().astype(np.float64)      # (h, w, 3), z = 1
        d = dirs @ pose[:3, :3].T                             # world directions
        o = pose[:3, 3]

        # ray-box exit: camera is inside, so every axis' far slab bounds the hit
        half = np.asarray(self.box_half_extents, dtype=np.float64)
        with np.errstate(divide="ignore"):
            far = np.where(d >= 0, half[None, None, :], -half[None, None, :])
            t_axis = np.where(np.abs(d) > 1e-12, (far - o) / d, np.inf)
        t_box = t_axis.min(axis=2)

        # ray-sphere near root
        c = np.asarray(self.sphere_center, dtype=np.float64)
        oc = o - c
        a = np.einsum("hwk,hwk->hw", d, d)
        b = 2.0 * (d @ oc)
        c0 = oc @ oc - self.sphere_radius ** 2
        disc = b * b - 4.0 * a * c0
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t_sphere = np.where(hit, (-b - sq) / (2.0 * a), np.inf)
        t_sphere = np.where(t_sphere > 1e-9, t_sphere, np.inf)

        return np.minimum(t_sphere, t_box)


def depth_to_mm(depth_m, rng=None, noise_sigma_mm: float = 0.0) -> np.ndarray:
    """Quantize meters to u16 millimeters, optionally with Gaussian noise."""
    mm = np.asarray(depth_m, dtype=np.float64) * 1000.0
    if noise_sigma_mm > 0:
        if rng is None:
            raise TaskFuseError("noise requested without a seeded generator")
        mm = mm + rng.normal(0.0, noise_sigma_mm, size=mm.shape)
    return np.clip(np.rint(mm), 0, 65535).astype(np.uint16)


def synthetic_frames(scene: SyntheticScene, intrinsics: CameraIntrinsics,
                     n_frames: int, *, noise_sigma_mm: float = 0.0, seed: int = 0):
    """Yield (raw u16 frame, float64 pose); bitwise deterministic per seed."""
    for i in range(n_frames):
        pose = scene.camera_pose(i)
        depth = scene.analytic_depth(intrinsics, pose)
        rng = np.random.default_rng([seed, i]) if noise_sigma_mm > 0 else None
        yield depth_to_mm(depth, rng, noise_sigma_mm), pose


def generate_synthetic(scene: SyntheticScene, intrinsics: CameraIntrinsics,
                       n_frames: int, sequence_path, trajectory_path, *,
                       noise_sigma_mm: float = 0.0, seed: int = 0):
    """Write a synthetic sequence and its exact trajectory; returns the header."""
    frames, poses = [], []
    for raw, pose in synthetic_frames(scene, intrinsics, n_frames,
                                      noise_sigma_mm=noise_sigma_mm, seed=seed):
        frames.append(raw)
        poses.append(pose)
    header = write_sequence(sequence_path, frames, intrinsics.width, intrinsics.height)
    Trajectory.from_poses(poses).save(trajectory_path)
    return header
