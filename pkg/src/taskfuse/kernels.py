"""SLAM kernel bodies: preprocessing, tracking, fusion, raycast, rendering.

Every body follows the device contract: ``body(span, reads, writes, params)``
writes only rows [lo, hi) of the outermost extent, reads whole buffers, and
is pure -- so any partitioning of the index space produces identical bytes.
All arithmetic is float32 with fixed evaluation order; per-pixel reductions
stay within their own row (partition-independent) and cross-row reductions
go through the fixed-tree ``icp_reduce`` kernel, which is registered as
non-partitionable.

Scalar params pack poses as 16 row-major floats (see geometry.pose_params);
intrinsics as (fx, fy, cx, cy); the volume as (origin_x, origin_y, origin_z,
voxel_size).
"""

from __future__ import annotations

import numpy as np

F32 = np.float32

# per-pixel association codes written by icp_step
CODE_OK = 0
CODE_NO_INPUT = 1
CODE_OUT_OF_FRAME = 2
CODE_DIST_REJECT = 3
CODE_NORMAL_REJECT = 4

TRACK_PALETTE = np.array([
    [0, 255, 0, 255],        # ok
    [0, 0, 0, 255],          # no-input
    [128, 128, 128, 255],    # out-of-frame / no reference
    [255, 0, 0, 255],        # distance reject
    [0, 64, 255, 255],       # normal reject
], dtype=np.uint8)

VOLUME_BG = np.array([30, 30, 30, 255], dtype=np.uint8)
VOLUME_AMBIENT = 0.2

_TRIU = np.triu_indices(6)


def _pose(params, at=0):
    return np.asarray(params[at:at + 16], dtype=F32).reshape(4, 4)


# ---------------------------------------------------------------------------
# preprocessing

def mm2meters_body(span, reads, writes, params):
    lo, hi = span
    writes[0][lo:hi] = reads[0][lo:hi].astype(F32) / 1000.0


def bilateral_body(span, reads, writes, params):
    """Gaussian bilateral filter over a (2r+1)^2 window.

    Written as out = d0 + sum(w * (dq - d0)) / sum(w): identical to the
    normalized-average form in exact arithmetic, and exactly d0 on constant
    neighborhoods.  Invalid (0) pixels contribute no weight and stay 0.
    """
    lo, hi = span
    depth = reads[0]
    radius = int(params[0])
    inv2ss = F32(-0.5 / (params[1] * params[1]))
    inv2sr = F32(-0.5 / (params[2] * params[2]))
    h, w = depth.shape
    pad = np.pad(depth, radius)
    center = depth[lo:hi]
    cvalid = center > 0
    num = np.zeros_like(center)
    den = np.zeros_like(center)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            q = pad[lo + dy + radius:hi + dy + radius, dx + radius:dx + radius + w]
            ws = np.exp(F32(dy * dy + dx * dx) * inv2ss).astype(F32)
            delta = q - center
            wgt = ws * np.exp(delta * delta * inv2sr)
            wgt = np.where(q > 0, wgt, F32(0))
            num += wgt * delta
            den += wgt
    out = center + num / np.where(den > 0, den, F32(1))
    writes[0][lo:hi] = np.where(cvalid, out, F32(0))


def pyramid_down_body(span, reads, writes, params):
    """2x2 block average over valid pixels; an all-invalid block stays 0."""
    lo, hi = span
    src = reads[0]
    if src.shape[0] % 2 or src.shape[1] % 2:
        raise ValueError(f"pyramid_down needs even dimensions, got {src.shape}")
    block = src[2 * lo:2 * hi].reshape(hi - lo, 2, src.shape[1] // 2, 2)
    valid = block > 0
    total = np.where(valid, block, F32(0)).sum(axis=(1, 3), dtype=F32)
    count = valid.sum(axis=(1, 3)).astype(F32)
    writes[0][lo:hi] = np.where(count > 0, total / np.maximum(count, F32(1)), F32(0))


def depth2vertex_body(span, reads, writes, params):
    lo, hi = span
    depth = reads[0][lo:hi]
    fx, fy, cx, cy = (F32(p) for p in params[:4])
    h, w = reads[0].shape
    us = (np.arange(w, dtype=F32) - cx) / fx
    vs = (np.arange(lo, hi, dtype=F32) - cy) / fy
    out = writes[0]
    out[lo:hi, :, 0] = depth * us[None, :]
    out[lo:hi, :, 1] = depth * vs[:, None]
    out[lo:hi, :, 2] = depth
    out[lo:hi, :, 3] = F32(0)


def vertex2normal_body(span, reads, writes, params):
    """Central-difference normals, oriented toward the camera; any invalid
    neighbor (or a frame border) marks the output invalid via lane 3 = -1."""
    lo, hi = span
    v = reads[0]
    h, w = v.shape[:2]
    out = writes[0]
    out[lo:hi, :, :3] = F32(0)
    out[lo:hi, :, 3] = F32(-1)
    r0, r1 = max(lo, 1), min(hi, h - 1)
    if r1 <= r0 or w < 3:
        return
    dx = v[r0:r1, 2:, :3] - v[r0:r1, :-2, :3]
    dy = v[r0 + 1:r1 + 1, 1:-1, :3] - v[r0 - 1:r1 - 1, 1:-1, :3]
    n = np.cross(dy, dx).astype(F32)
    norm = np.sqrt((n * n).sum(axis=2, dtype=F32))
    ok = ((v[r0:r1, 2:, 2] > 0) & (v[r0:r1, :-2, 2] > 0)
          & (v[r0 + 1:r1 + 1, 1:-1, 2] > 0) & (v[r0 - 1:r1 - 1, 1:-1, 2] > 0)
          & (norm > F32(1e-12)))
    n = np.where(ok[..., None], n / np.maximum(norm, F32(1e-12))[..., None], F32(0))
    out[r0:r1, 1:-1, :3] = n
    out[r0:r1, 1:-1, 3] = np.where(ok, F32(0), F32(-1))


# ---------------------------------------------------------------------------
# tracking

def icp_step_body(span, reads, writes, params):
    """Projective point-to-plane association for one pyramid level.

    Per output row, accumulates the 6x6 normal-equation system of the
    point-to-plane linearization (J = [p x n_ref, n_ref], residual
    r = n_ref . (p - q)) into a 32-wide partial row: 21 upper-triangle
    entries, 6 J.r entries, sum of squared residuals, inlier count.  The
    per-pixel code map records why pixels were rejected.

    params: pose_est(16) + ref_pose_inv(16) + ref K (fx, fy, cx, cy)
            + (dist_threshold, normal_threshold)
    """
    lo, hi = span
    vertex, normal, ref_vertex, ref_normal = reads
    partials, codes = writes
    pose = _pose(params, 0)
    ref_inv = _pose(params, 16)
    fx, fy, cx, cy = (F32(p) for p in params[32:36])
    d_max2 = F32(params[36]) ** 2
    n_min = F32(params[37])
    rh, rw = ref_vertex.shape[:2]

    v = vertex[lo:hi]
    n = normal[lo:hi]
    valid_in = (v[..., 2] > 0) & (n[..., 3] == 0)

    r_est, t_est = pose[:3, :3], pose[:3, 3]
    p_w = v[..., :3] @ r_est.T + t_est
    n_w = n[..., :3] @ r_est.T
    q_cam = p_w @ ref_inv[:3, :3].T + ref_inv[:3, 3]

    z = q_cam[..., 2]
    in_front = z > F32(1e-6)
    zs = np.where(in_front, z, F32(1))
    ui = np.floor(fx * q_cam[..., 0] / zs + cx + F32(0.5)).astype(np.int32)
    vi = np.floor(fy * q_cam[..., 1] / zs + cy + F32(0.5)).astype(np.int32)
    in_frame = in_front & (ui >= 0) & (ui < rw) & (vi >= 0) & (vi < rh)
    uis = np.clip(ui, 0, rw - 1)
    vis = np.clip(vi, 0, rh - 1)

    ref_v = ref_vertex[vis, uis, :3]
    ref_n = ref_normal[vis, uis, :3]
    ref_ok = in_frame & (ref_normal[vis, uis, 3] == 0)

    diff = p_w - ref_v
    dist2 = (diff * diff).sum(axis=-1, dtype=F32)
    ndot = (n_w * ref_n).sum(axis=-1, dtype=F32)
    dist_ok = dist2 <= d_max2
    angle_ok = ndot >= n_min

    code = np.full(v.shape[:2], CODE_NO_INPUT, dtype=np.uint8)
    code[valid_in & ~ref_ok] = CODE_OUT_OF_FRAME
    code[valid_in & ref_ok & ~dist_ok] = CODE_DIST_REJECT
    code[valid_in & ref_ok & dist_ok & ~angle_ok] = CODE_NORMAL_REJECT
    ok = valid_in & ref_ok & dist_ok & angle_ok
    code[ok] = CODE_OK
    codes[lo:hi] = code

    res = (ref_n * diff).sum(axis=-1, dtype=F32)
    jac = np.empty(v.shape[:2] + (6,), dtype=F32)
    jac[..., 0:3] = np.cross(p_w, ref_n).astype(F32)
    jac[..., 3:6] = ref_n
    okf = ok.astype(F32)
    jac *= okf[..., None]
    res_ok = res * okf

    a = np.einsum("rwi,rwj->rij", jac, jac)
    b = np.einsum("rwi,rw->ri", jac, res_ok)
    partials[lo:hi, :21] = a[:, _TRIU[0], _TRIU[1]]
    partials[lo:hi, 21:27] = b
    partials[lo:hi, 27] = (res_ok * res_ok).sum(axis=1, dtype=F32)
    partials[lo:hi, 28] = okf.sum(axis=1, dtype=F32)
    partials[lo:hi, 29] = valid_in.astype(F32).sum(axis=1, dtype=F32)
    partials[lo:hi, 30:] = F32(0)


def icp_reduce_body(span, reads, writes, params):
    """Fold per-row partials with a fixed adjacent-pairs binary tree, so the
    combination order never depends on worker count or device."""
    acc = reads[0].copy()
    while acc.shape[0] > 1:
        even = acc[0::2].copy()
        odd = acc[1::2]
        even[:odd.shape[0]] += odd
        acc = even
    writes[0][:] = acc[0]


def unpack_icp_system(system):
    """(A 6x6 float64, b 6, sum_r2, inlier count, valid count) from a reduce row."""
    a = np.zeros((6, 6))
    a[_TRIU] = system[:21]
    a = a + np.triu(a, 1).T
    b = np.asarray(system[21:27], dtype=np.float64)
    return a, b, float(system[27]), float(system[28]), float(system[29])


# ---------------------------------------------------------------------------
# volumetric fusion

def integrate_body(span, reads, writes, params):
    """Weighted-average TSDF update over an x-slab of the voxel grid.

    sdf is the depth difference d(proj) - z_cam; voxels with sdf > -mu fold
    clamp(sdf/mu) into the running average, weight capped at max_weight.

    params: world-to-camera pose(16) + K(4) + (mu, max_weight)
            + volume (origin x, y, z, voxel)
    """
    lo, hi = span
    depth, tsdf_in, weight_in = reads
    tsdf, weight = writes
    inv_pose = _pose(params, 0)
    fx, fy, cx, cy = (F32(p) for p in params[16:20])
    mu = F32(params[20])
    w_max = F32(params[21])
    ox, oy, oz, voxel = (F32(p) for p in params[22:26])
    h, w = depth.shape
    n = tsdf_in.shape[1]

    px = ox + (np.arange(lo, hi, dtype=F32) + F32(0.5)) * voxel
    py = oy + (np.arange(n, dtype=F32) + F32(0.5)) * voxel
    pz = oz + (np.arange(n, dtype=F32) + F32(0.5)) * voxel
    r, t = inv_pose[:3, :3], inv_pose[:3, 3]
    gx = px[:, None, None]
    gy = py[None, :, None]
    gz = pz[None, None, :]
    cam_x = r[0, 0] * gx + r[0, 1] * gy + r[0, 2] * gz + t[0]
    cam_y = r[1, 0] * gx + r[1, 1] * gy + r[1, 2] * gz + t[1]
    cam_z = r[2, 0] * gx + r[2, 1] * gy + r[2, 2] * gz + t[2]

    in_front = cam_z > F32(1e-6)
    zs = np.where(in_front, cam_z, F32(1))
    ui = np.floor(fx * cam_x / zs + cx + F32(0.5)).astype(np.int32)
    vi = np.floor(fy * cam_y / zs + cy + F32(0.5)).astype(np.int32)
    in_frame = in_front & (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    d = depth[np.clip(vi, 0, h - 1), np.clip(ui, 0, w - 1)]
    sdf = d - cam_z
    upd = in_frame & (d > 0) & (sdf > -mu)

    f = np.clip(sdf / mu, F32(-1), F32(1))
    t_old = tsdf_in[lo:hi]
    w_old = weight_in[lo:hi]
    t_new = (t_old * w_old + f) / (w_old + F32(1))
    w_new = np.minimum(w_old + F32(1), w_max)
    tsdf[lo:hi] = np.where(upd, t_new, t_old)
    weight[lo:hi] = np.where(upd, w_new, w_old)


def trilinear(tsdf, pts, origin, voxel):
    """Trilinearly interpolated tsdf at world points; returns (value, valid)."""
    n = tsdf.shape[0]
    q = (pts - origin) / voxel - F32(0.5)
    i0 = np.floor(q).astype(np.int32)
    frac = (q - i0).astype(F32)
    valid = np.all((i0 >= 0) & (i0 <= n - 2), axis=-1)
    i0c = np.clip(i0, 0, n - 2)
    ix, iy, iz = i0c[..., 0], i0c[..., 1], i0c[..., 2]
    flat = tsdf.ravel()
    base = (ix * n + iy) * n + iz
    c000 = flat[base]
    c001 = flat[base + 1]
    c010 = flat[base + n]
    c011 = flat[base + n + 1]
    c100 = flat[base + n * n]
    c101 = flat[base + n * n + 1]
    c110 = flat[base + n * n + n]
    c111 = flat[base + n * n + n + 1]
    fz = frac[..., 2]
    c00 = c000 + (c001 - c000) * fz
    c01 = c010 + (c011 - c010) * fz
    c10 = c100 + (c101 - c100) * fz
    c11 = c110 + (c111 - c110) * fz
    fy = frac[..., 1]
    c0 = c00 + (c01 - c00) * fy
    c1 = c10 + (c11 - c10) * fy
    fx = frac[..., 0]
    return c0 + (c1 - c0) * fx, valid


def raycast_rays(tsdf, origin_pt, dirs, near, far, step, vol_origin, voxel):
    """March rays through the volume; returns (t_hit, found) per ray.

    The zero crossing (+ to -) between consecutive samples is refined by
    linear interpolation; rays that never cross, or leave the volume, stay
    not-found.
    """
    shape = dirs.shape[:-1]
    t_hit = np.zeros(shape, dtype=F32)
    found = np.zeros(shape, dtype=bool)
    prev_f = np.zeros(shape, dtype=F32)
    prev_valid = np.zeros(shape, dtype=bool)
    t_prev = F32(near)
    steps = np.arange(near, far, step, dtype=F32)
    for k, t in enumerate(steps):
        p = origin_pt + t * dirs
        f, valid = trilinear(tsdf, p, vol_origin, voxel)
        crossing = prev_valid & valid & (prev_f > 0) & (f < 0) & ~found
        if crossing.any():
            denom = prev_f - f  # > 0 wherever crossing holds
            tt = t_prev + (t - t_prev) * prev_f / np.where(denom != 0, denom, F32(1))
            t_hit = np.where(crossing, tt, t_hit)
            found |= crossing
        prev_f, prev_valid, t_prev = f, valid, t
        if k % 8 == 7 and found.all():
            break
    return t_hit, found


def raycast_normals(tsdf, pts, vol_origin, voxel):
    """Central-difference tsdf gradient, normalized; camera-facing by
    construction (tsdf grows toward free space)."""
    eps = voxel * F32(0.5)
    g = np.empty(pts.shape, dtype=F32)
    ok = np.ones(pts.shape[:-1], dtype=bool)
    for axis in range(3):
        off = np.zeros(3, dtype=F32)
        off[axis] = eps
        fp, vp = trilinear(tsdf, pts + off, vol_origin, voxel)
        fm, vm = trilinear(tsdf, pts - off, vol_origin, voxel)
        g[..., axis] = fp - fm
        ok &= vp & vm
    norm = np.sqrt((g * g).sum(axis=-1, dtype=F32))
    ok &= norm > F32(1e-12)
    g = np.where(ok[..., None], g / np.maximum(norm, F32(1e-12))[..., None], F32(0))
    return g, ok


def _ray_dirs(span, pose, fx, fy, cx, cy, width):
    lo, hi = span
    us = (np.arange(width, dtype=F32) - cx) / fx
    vs = (np.arange(lo, hi, dtype=F32) - cy) / fy
    d_cam = np.empty((hi - lo, width, 3), dtype=F32)
    d_cam[..., 0] = us[None, :]
    d_cam[..., 1] = vs[:, None]
    d_cam[..., 2] = F32(1)
    return d_cam @ pose[:3, :3].T


def raycast_body(span, reads, writes, params):
    """Reference vertex/normal maps from the volume for rows [lo, hi).

    params: camera-to-world pose(16) + K(4) + (near, far, step)
            + volume (origin x, y, z, voxel)
    """
    lo, hi = span
    tsdf = reads[0]
    vertex, normal = writes
    pose = _pose(params, 0)
    fx, fy, cx, cy = (F32(p) for p in params[16:20])
    near, far, step = (F32(p) for p in params[20:23])
    vol_origin = np.asarray(params[23:26], dtype=F32)
    voxel = F32(params[26])
    width = vertex.shape[1]

    dirs = _ray_dirs(span, pose, fx, fy, cx, cy, width)
    origin_pt = pose[:3, 3].astype(F32)
    t_hit, found = raycast_rays(tsdf, origin_pt, dirs, near, far, step, vol_origin, voxel)
    pts = origin_pt + t_hit[..., None] * dirs
    nrm, n_ok = raycast_normals(tsdf, pts, vol_origin, voxel)
    n_ok &= found

    vertex[lo:hi, :, :3] = np.where(found[..., None], pts, F32(0))
    vertex[lo:hi, :, 3] = F32(0)
    normal[lo:hi, :, :3] = np.where(n_ok[..., None], nrm, F32(0))
    normal[lo:hi, :, 3] = np.where(n_ok, F32(0), F32(-1))


# ---------------------------------------------------------------------------
# rendering

def render_depth_body(span, reads, writes, params):
    lo, hi = span
    d = reads[0][lo:hi]
    near, far = F32(params[0]), F32(params[1])
    gray = np.clip((d - near) / (far - near), F32(0), F32(1))
    px = np.rint(gray * F32(255)).astype(np.uint8)
    px = np.where(d > 0, px, np.uint8(0))
    out = writes[0]
    out[lo:hi, :, 0] = px
    out[lo:hi, :, 1] = px
    out[lo:hi, :, 2] = px
    out[lo:hi, :, 3] = 255


def render_track_body(span, reads, writes, params):
    lo, hi = span
    writes[0][lo:hi] = TRACK_PALETTE[reads[0][lo:hi]]


def render_volume_body(span, reads, writes, params):
    """Diffuse-shaded raycast of the volume from a view pose (headlight)."""
    lo, hi = span
    tsdf = reads[0]
    pose = _pose(params, 0)
    fx, fy, cx, cy = (F32(p) for p in params[16:20])
    near, far, step = (F32(p) for p in params[20:23])
    vol_origin = np.asarray(params[23:26], dtype=F32)
    voxel = F32(params[26])
    out = writes[0]
    width = out.shape[1]

    dirs = _ray_dirs(span, pose, fx, fy, cx, cy, width)
    origin_pt = pose[:3, 3].astype(F32)
    t_hit, found = raycast_rays(tsdf, origin_pt, dirs, near, far, step, vol_origin, voxel)
    pts = origin_pt + t_hit[..., None] * dirs
    nrm, n_ok = raycast_normals(tsdf, pts, vol_origin, voxel)
    lit = found & n_ok

    dn = dirs / np.sqrt((dirs * dirs).sum(axis=-1, dtype=F32))[..., None]
    diffuse = np.maximum(-(nrm * dn).sum(axis=-1, dtype=F32), F32(0))
    gray = F32(VOLUME_AMBIENT) + F32(1 - VOLUME_AMBIENT) * diffuse
    px = np.rint(np.clip(gray, F32(0), F32(1)) * F32(255)).astype(np.uint8)
    out[lo:hi] = VOLUME_BG
    for c in range(3):
        out[lo:hi, :, c] = np.where(lit, px, VOLUME_BG[c])


# ---------------------------------------------------------------------------
# registration

KERNEL_STAGE = {
    "mm2meters": "preprocess",
    "bilateral_filter": "preprocess",
    "mm2meters+bilateral_filter": "preprocess",
    "pyramid_down": "tracking",
    "depth2vertex": "tracking",
    "vertex2normal": "tracking",
    "icp_step": "tracking",
    "icp_reduce": "tracking",
    "integrate": "integrate",
    "raycast": "raycast",
    "render_depth": "rendering",
    "render_track": "rendering",
    "render_volume": "rendering",
}


def register_pipeline_kernels(runtime, width: int, height: int, bilateral_radius: int) -> None:
    """Register the SLAM kernel set plus the fused preprocessing composition."""
    reg = runtime.registry
    reg.register("mm2meters", mm2meters_body, 1, 1, elementwise=True)
    reg.register("bilateral_filter", bilateral_body, 1, 1, halo=bilateral_radius)
    reg.register("pyramid_down", pyramid_down_body, 1, 1)
    reg.register("depth2vertex", depth2vertex_body, 1, 1, elementwise=True)
    reg.register("vertex2normal", vertex2normal_body, 1, 1, halo=1)
    reg.register("icp_step", icp_step_body, 4, 2)
    reg.register("icp_reduce", icp_reduce_body, 1, 1, partitionable=False)
    reg.register("integrate", integrate_body, 3, 2)
    reg.register("raycast", raycast_body, 1, 2)
    reg.register("render_depth", render_depth_body, 1, 1, elementwise=True)
    reg.register("render_track", render_track_body, 1, 1, elementwise=True)
    reg.register("render_volume", render_volume_body, 1, 1)
    reg.register_fused("mm2meters", "bilateral_filter",
                       (height, width), np.float32, n_producer_params=0)
