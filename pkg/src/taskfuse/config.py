"""Pipeline configuration: one flat key=value surface for every constant.

Defaults are desk-scale: 160x120 frames, a 64^3 volume over 4.8 m, three
pyramid levels with fine-to-coarse iteration caps (10, 5, 4).  Everything is
overridable from a key=value text file and echoed into run reports so a run
is reproducible from (config, seed) alone.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import TaskFuseError


class ConfigError(TaskFuseError, ValueError):
    pass


@dataclass
class PipelineConfig:
    # frame geometry
    width: int = 160
    height: int = 120
    # preprocessing
    bilateral_radius: int = 2
    sigma_spatial: float = 1.5      # pixels
    sigma_range: float = 0.1        # meters
    # tracking
    pyramid_levels: int = 3
    icp_iterations: tuple = (10, 5, 4)   # fine -> coarse
    dist_threshold: float = 0.1     # meters
    normal_threshold: float = 0.8   # min dot of associated normals
    rmse_max: float = 2e-2          # meters
    track_min_fraction: float = 0.1
    twist_epsilon: float = 1e-5
    # volume
    volume_resolution: int = 64
    volume_size: float = 4.8        # meters per side, centered on the origin
    mu: float = 0.1                 # truncation, meters
    max_weight: float = 100.0
    # raycast
    near_plane: float = 0.4
    far_plane: float = 4.0
    raycast_step: float = 0.05      # mu / 2
    # rendering
    renders: tuple = ("depth", "track", "volume")
    # synthetic scene
    sphere_radius: float = 0.6
    box_half_extents: tuple = (2.2, 1.6, 2.2)
    orbit_radius: float = 1.6
    orbit_height: float = 0.4   # tilts the view so roll is observable to ICP
    angular_step: float = 0.035     # radians per frame
    # every boost_every-th frame takes a boost_factor-times larger step
    # (stresses ICP so per-frame kernel counts vary; 0 disables)
    boost_every: int = 0
    boost_factor: float = 4.0
    noise_sigma_mm: float = 0.0
    # camera intrinsics scale (focal length = focal_scale * width)
    focal_scale: float = 0.9
    # acceptance thresholds used by --check
    ate_max: float = 0.15           # 2 voxels at 4.8 m / 64

    def level_count(self) -> int:
        return min(self.pyramid_levels, len(self.icp_iterations))

    def validate(self) -> "PipelineConfig":
        if self.width % (1 << (self.level_count() - 1)) or self.height % (1 << (self.level_count() - 1)):
            raise ConfigError("frame dimensions must halve cleanly across pyramid levels")
        if self.bilateral_radius < 1 or self.sigma_spatial <= 0 or self.sigma_range <= 0:
            raise ConfigError("bad bilateral settings")
        if self.mu <= 0 or self.volume_size <= 0 or self.volume_resolution < 8:
            raise ConfigError("bad volume settings")
        if not 0 < self.near_plane < self.far_plane:
            raise ConfigError("bad raycast planes")
        for r in self.renders:
            if r not in ("depth", "track", "volume"):
                raise ConfigError(f"unknown render kind {r!r}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_TUPLE_FIELDS = {"icp_iterations": int, "box_half_extents": float, "renders": str}


def _parse_value(name: str, text: str, target_type):
    text = text.strip()
    if name in _TUPLE_FIELDS:
        conv = _TUPLE_FIELDS[name]
        return tuple(conv(x.strip()) for x in text.split(",") if x.strip())
    if target_type is int:
        return int(text)
    if target_type is float:
        return float(text)
    return text


def apply_overrides(cfg: PipelineConfig, pairs) -> PipelineConfig:
    """Apply (key, value-string) pairs onto a config copy."""
    fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    out = dataclasses.replace(cfg)
    for key, value in pairs:
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(out, key)
        target = type(current) if not isinstance(current, tuple) else tuple
        setattr(out, key, _parse_value(key, value, target))
    return out.validate()


def load_config(path, base: PipelineConfig = None) -> PipelineConfig:
    """Read a key=value text file (# comments, blank lines allowed)."""
    cfg = base or PipelineConfig()
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            pairs.append((key.strip(), value))
    return apply_overrides(cfg, pairs)


def save_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in cfg.to_dict().items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key}={value}\n")
