"""The six-stage dense SLAM pipeline assembled from registered kernels.

Stages: acquisition (host-side frame source; never offloaded), preprocessing
(mm scaling + bilateral filter, optionally fused into one task), tracking
(depth pyramid, vertex/normal maps, projective point-to-plane ICP against the
last raycast), integration (TSDF fusion, only on converged tracking or frame
0), raycast (new reference maps), and rendering.

Each frame executes as a short sequence of task graphs on one persistent
runtime: per-iteration ICP graphs end at the reduced 6x6 system, which the
host consumes to solve and update the pose before emitting the next graph.
Residency carries everything else between graphs, so an all-accelerator
mapping moves only initial inputs in and graph outputs back out.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .errors import GraphError, TaskFuseError
from .geometry import (CameraIntrinsics, invert_rigid, look_at_pose, orthonormalize,
                       pose_params)
from .graph import DeviceMapping, Task, TaskGraph, fuse, infer_dependencies
from .kernels import KERNEL_STAGE, register_pipeline_kernels, unpack_icp_system
from .runtime import Runtime

STAGES = ("acquisition", "preprocess", "tracking", "integrate", "raycast", "rendering")


def parse_mapping_spec(spec: str) -> dict:
    """Parse 'all:<device>' or 'stage=device,stage=device' into stage->device."""
    spec = (spec or "").strip()
    out = {s: "serial-cpu" for s in STAGES}
    if not spec:
        return out
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if part.startswith("all:"):
            dev = part[4:].strip()
            for s in STAGES:
                out[s] = dev
        elif "=" in part:
            stage, dev = (x.strip() for x in part.split("=", 1))
            if stage not in STAGES:
                raise TaskFuseError(f"unknown pipeline stage {stage!r}")
            out[stage] = dev
        else:
            raise TaskFuseError(f"bad mapping spec part {part!r}")
    out["acquisition"] = "serial-cpu"  # frame input is inherently serial
    return out


@dataclass
class TrackResult:
    pose: np.ndarray
    rmse: float
    matched_fraction: float
    converged: bool
    iterations: tuple
    codes_buffer: str = "codes_l0"


@dataclass
class FrameResult:
    index: int
    pose: np.ndarray
    track: TrackResult | None
    integrated: bool
    kernel_count: int
    wall: float
    reports: list = field(default_factory=list)
    digest: str | None = None


class Pipeline:
    def __init__(self, runtime: Runtime, config: PipelineConfig,
                 intrinsics: CameraIntrinsics | None = None, *,
                 fuse_preprocess: bool = False, mapping_spec: str = "",
                 tick_hook=None):
        self.rt = runtime
        self.cfg = config.validate()
        self.K = intrinsics or CameraIntrinsics.for_frame(
            config.width, config.height, config.focal_scale)
        if (self.K.width, self.K.height) != (config.width, config.height):
            raise TaskFuseError("intrinsics do not match the configured frame size")
        self.fuse_preprocess = fuse_preprocess
        self.stage_devices = parse_mapping_spec(mapping_spec)
        self.tick_hook = tick_hook
        self.levels = config.level_count()

        n = config.volume_resolution
        self.voxel = config.volume_size / n
        self.vol_origin = (-config.volume_size / 2.0,) * 3

        register_pipeline_kernels(runtime, config.width, config.height,
                                  config.bilateral_radius)
        self._declare_buffers()

        self.pose = np.eye(4)
        self.ref_pose = np.eye(4)
        self.has_reference = False
        self.frame_index = 0
        self.trace = []          # (global tick, task idx, kernel, reads, writes)
        self._tick_base = 0

    # -- setup ---------------------------------------------------------------

    def _declare_buffers(self):
        cfg, rt = self.cfg, self.rt
        w, h = cfg.width, cfg.height
        rt.declare_buffer("raw", "u16", (h, w))
        rt.declare_buffer("scaled", "f32", (h, w))
        for l in range(self.levels):
            wl, hl = w >> l, h >> l
            rt.declare_buffer(f"depth_l{l}", "f32", (hl, wl))
            rt.declare_buffer(f"vertex_l{l}", "f32", (hl, wl, 4))
            rt.declare_buffer(f"normal_l{l}", "f32", (hl, wl, 4))
            rt.declare_buffer(f"icp_partials_l{l}", "f32", (hl, 32))
            rt.declare_buffer(f"codes_l{l}", "u8", (hl, wl))
        rt.declare_buffer("icp_system", "f32", (32,))
        rt.declare_buffer("ref_vertex", "f32", (h, w, 4))
        rt.declare_buffer("ref_normal", "f32", (h, w, 4))
        n = cfg.volume_resolution
        rt.declare_buffer("tsdf", "f32", (n, n, n))
        rt.declare_buffer("tsdf_weight", "f32", (n, n, n))
        rt.write_buffer("tsdf", np.ones((n, n, n), dtype=np.float32))
        for kind in ("depth", "track", "volume"):
            rt.declare_buffer(f"render_{kind}", "u8", (h, w, 4))

    def mapping_for(self, graph: TaskGraph) -> DeviceMapping:
        def chooser(i, task):
            stage = KERNEL_STAGE[task.kernel]
            return self.rt.device(self.stage_devices[stage])
        return DeviceMapping.by_task(graph, chooser)

    def _execute(self, graph: TaskGraph, into: list) -> None:
        infer_dependencies(graph)
        report = self.rt.execute(graph, self.mapping_for(graph),
                                 tick_hook=self.tick_hook)
        for tick, tid, kernel, reads, writes in report.trace:
            self.trace.append((self._tick_base + tick, tid, kernel, reads, writes))
        self._tick_base += report.launches
        into.append(report)

    # -- graph builders --------------------------------------------------------

    def _volume_params(self):
        return (*self.vol_origin, self.voxel)

    def _k_params(self, k: CameraIntrinsics):
        return (k.fx, k.fy, k.cx, k.cy)

    def preprocess_graph(self) -> TaskGraph:
        cfg = self.cfg
        g = self.rt.new_graph("preprocess")
        shape = (cfg.height, cfg.width)
        bf_params = (float(cfg.bilateral_radius), cfg.sigma_spatial, cfg.sigma_range)
        if self.fuse_preprocess:
            g.add_task(Task("mm2meters+bilateral_filter", ("raw",), ("depth_l0",),
                            shape, bf_params))
        else:
            g.add_task(Task("mm2meters", ("raw",), ("scaled",), shape))
            g.add_task(Task("bilateral_filter", ("scaled",), ("depth_l0",),
                            shape, bf_params))
        for l in range(1, self.levels):
            wl, hl = cfg.width >> l, cfg.height >> l
            g.add_task(Task("pyramid_down", (f"depth_l{l-1}",), (f"depth_l{l}",),
                            (hl, wl)))
        for l in range(self.levels):
            wl, hl = cfg.width >> l, cfg.height >> l
            kl = self.K.level(l)
            g.add_task(Task("depth2vertex", (f"depth_l{l}",), (f"vertex_l{l}",),
                            (hl, wl), self._k_params(kl)))
            g.add_task(Task("vertex2normal", (f"vertex_l{l}",), (f"normal_l{l}",),
                            (hl, wl)))
        return g

    def icp_graph(self, level: int, pose_estimate) -> TaskGraph:
        cfg = self.cfg
        wl, hl = cfg.width >> level, cfg.height >> level
        params = (pose_params(pose_estimate) + pose_params(invert_rigid(self.ref_pose))
                  + self._k_params(self.K)
                  + (cfg.dist_threshold, cfg.normal_threshold))
        g = self.rt.new_graph(f"icp_l{level}")
        g.add_task(Task("icp_step",
                        (f"vertex_l{level}", f"normal_l{level}", "ref_vertex", "ref_normal"),
                        (f"icp_partials_l{level}", f"codes_l{level}"),
                        (hl, wl), params))
        g.add_task(Task("icp_reduce", (f"icp_partials_l{level}",), ("icp_system",),
                        (hl,)))
        return g

    def integrate_graph(self, pose) -> TaskGraph:
        cfg = self.cfg
        n = cfg.volume_resolution
        params = (pose_params(invert_rigid(pose)) + self._k_params(self.K)
                  + (cfg.mu, cfg.max_weight) + self._volume_params())
        g = self.rt.new_graph("integrate")
        g.add_task(Task("integrate", ("depth_l0", "tsdf", "tsdf_weight"),
                        ("tsdf", "tsdf_weight"), (n, n, n), params))
        return g

    def raycast_render_graph(self, pose, *, renders=None) -> TaskGraph:
        cfg = self.cfg
        ray_params = (pose_params(pose) + self._k_params(self.K)
                      + (cfg.near_plane, cfg.far_plane, cfg.raycast_step)
                      + self._volume_params())
        g = self.rt.new_graph("raycast+render")
        shape = (cfg.height, cfg.width)
        g.add_task(Task("raycast", ("tsdf",), ("ref_vertex", "ref_normal"),
                        shape, ray_params))
        for kind in (cfg.renders if renders is None else renders):
            if kind == "depth":
                g.add_task(Task("render_depth", ("depth_l0",), ("render_depth",),
                                shape, (cfg.near_plane, cfg.far_plane)))
            elif kind == "track":
                g.add_task(Task("render_track", ("codes_l0",), ("render_track",), shape))
            elif kind == "volume":
                g.add_task(Task("render_volume", ("tsdf",), ("render_volume",),
                                shape, ray_params))
        return g

    def build_frame_graph(self, *, icp_iterations=None, tracked: bool = True,
                          integrate: bool = True) -> TaskGraph:
        """One frame's full task list as a single graph.

        The executable per-frame path runs the same tasks as a sequence of
        graphs (the host solves the 6x6 system between ICP iterations); this
        assembled form serves DOT dumps, transfer analysis, and the kernel
        count band.  ``icp_iterations`` defaults to the configured caps
        (worst case).
        """
        iters = tuple(self.cfg.icp_iterations[:self.levels]
                      if icp_iterations is None else icp_iterations)
        g = self.preprocess_graph()
        if tracked:
            for level in reversed(range(self.levels)):
                for _ in range(iters[level]):
                    for t in self.icp_graph(level, self.pose).tasks:
                        g.add_task(t)
        if integrate:
            for t in self.integrate_graph(self.pose).tasks:
                g.add_task(t)
        for t in self.raycast_render_graph(self.pose).tasks:
            g.add_task(t)
        return infer_dependencies(g)

    def kernel_count_bounds(self) -> dict:
        """Documented per-frame kernel count band for the current config."""
        pre = 1 if self.fuse_preprocess else 2
        fixed = pre + (self.levels - 1) + 2 * self.levels + 1 + 1 + len(self.cfg.renders)
        caps = sum(self.cfg.icp_iterations[:self.levels])
        return {
            "frame0": fixed,                               # no ICP, always integrates
            "tracked_min": fixed - 1 + 2 * self.levels,    # -1: integrate is conditional
            "tracked_max": fixed + 2 * caps,
        }

    # -- per-frame driver ------------------------------------------------------

    def track(self, reports: list) -> TrackResult:
        cfg = self.cfg
        pose_est = self.pose.copy()
        iters = [0] * self.levels
        rmse = float("inf")
        matched = 0.0
        for level in reversed(range(self.levels)):
            for _ in range(cfg.icp_iterations[level]):
                self._execute(self.icp_graph(level, pose_est), reports)
                system = np.asarray(self.rt.read_buffer("icp_system"), dtype=np.float64)
                a, b, sum_r2, count, valid = unpack_icp_system(system)
                iters[level] += 1
                rmse = float(np.sqrt(sum_r2 / count)) if count > 0 else float("inf")
                matched = count / valid if valid > 0 else 0.0
                if count < 6:
                    break
                try:
                    np.linalg.cholesky(a)
                    twist = np.linalg.solve(a, -b)
                except np.linalg.LinAlgError:
                    break
                wx, wy, wz, tx, ty, tz = twist
                inc = np.array([[1.0, -wz, wy, tx],
                                [wz, 1.0, -wx, ty],
                                [-wy, wx, 1.0, tz],
                                [0.0, 0.0, 0.0, 1.0]])
                pose_est = orthonormalize(inc @ pose_est)
                if np.linalg.norm(twist) < cfg.twist_epsilon:
                    break
        converged = rmse < cfg.rmse_max and matched > cfg.track_min_fraction
        return TrackResult(pose_est, rmse, matched, converged, tuple(iters))

    def process_frame(self, raw_frame, *, collect_digest: bool = False) -> FrameResult:
        t0 = time.perf_counter()
        raw = np.asarray(raw_frame)
        if raw.shape != (self.cfg.height, self.cfg.width):
            raise TaskFuseError(
                f"frame shape {raw.shape} does not match config "
                f"{(self.cfg.height, self.cfg.width)}")
        reports: list = []
        self.rt.write_buffer("raw", raw.astype(np.uint16))
        self._execute(self.preprocess_graph(), reports)

        track = None
        if self.has_reference:
            track = self.track(reports)
            if track.converged:
                self.pose = track.pose

        do_integrate = (not self.has_reference) or (track is not None and track.converged)
        if do_integrate:
            self._execute(self.integrate_graph(self.pose), reports)

        self._execute(self.raycast_render_graph(self.pose), reports)
        self.ref_pose = self.pose.copy()
        self.has_reference = True

        digest = None
        if collect_digest:
            digest = self.frame_digest()
        result = FrameResult(self.frame_index, self.pose.copy(), track, do_integrate,
                             sum(r.launches for r in reports),
                             time.perf_counter() - t0, reports, digest)
        self.frame_index += 1
        return result

    def frame_digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.pose, dtype=np.float64).tobytes())
        h.update(np.asarray(self.rt.read_buffer("tsdf")).tobytes())
        return h.hexdigest()

    def set_initial_pose(self, pose) -> None:
        if self.has_reference:
            raise GraphError("initial pose must be set before the first frame")
        self.pose = np.asarray(pose, dtype=np.float64).copy()

    def run(self, frames, *, initial_pose=None, collect_digests: bool = False):
        """Process an iterable of raw frames; returns the FrameResult list."""
        if initial_pose is not None:
            self.set_initial_pose(initial_pose)
        return [self.process_frame(f, collect_digest=collect_digests) for f in frames]


def synthetic_pipeline(config: PipelineConfig, *, workers: int = 4, seed: int = 0,
                       fuse_preprocess: bool = False, mapping_spec: str = "",
                       debug: bool = False, tick_hook=None) -> Pipeline:
    """A pipeline on a fresh runtime with the standard three-device inventory."""
    rt = Runtime(workers=workers, seed=seed, debug=debug)
    rt.add_device("parallel-cpu", workers=workers)
    rt.add_device("sim-accel")
    return Pipeline(rt, config, fuse_preprocess=fuse_preprocess,
                    mapping_spec=mapping_spec, tick_hook=tick_hook)
