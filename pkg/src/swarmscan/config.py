"""Run configuration: defaults, JSON loading, validation, and echo.

The configuration is a single flat JSON document. Unknown keys are rejected
so that a run directory's echoed config is always a complete, authoritative
record of the run. See docs/config.md for the schema.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

VARIANTS = (
    "full",
    "exploration_only",
    "surface_uncertainty_rec",
    "semantic_rec",
    "no_mode_assignment",
    "plain_kmeans",
)


@dataclass
class RobotSpec:
    """Start pose of one robot."""

    id: int
    position: tuple[float, float, float]
    yaw: float = 0.0
    pitch: float = 0.0

    @classmethod
    def from_dict(cls, data: dict) -> "RobotSpec":
        unknown = set(data) - {"id", "position", "yaw", "pitch"}
        if unknown:
            raise ConfigError(f"robots entry has unknown keys: {sorted(unknown)}")
        if "id" not in data or "position" not in data:
            raise ConfigError("robots entry needs 'id' and 'position'")
        pos = data["position"]
        if not (isinstance(pos, (list, tuple)) and len(pos) == 3):
            raise ConfigError("robots entry 'position' must be [x, y, z]")
        return cls(
            id=int(data["id"]),
            position=tuple(float(v) for v in pos),
            yaw=float(data.get("yaw", 0.0)),
            pitch=float(data.get("pitch", 0.0)),
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "position": list(self.position),
            "yaw": self.yaw,
            "pitch": self.pitch,
        }


@dataclass
class RunConfig:
    """Every tunable of the engine plus the run inputs, flat."""

    # run inputs
    scene: str | None = None
    robots: list[RobotSpec] = field(default_factory=list)
    budget: int = 300
    seed: int = 0
    variant: str = "full"
    max_cycles: int = 200

    # loss cache
    lambda_d: float = 0.5
    prune_threshold_m: float = 0.05
    prune_interval_frames: int = 30
    synth_color_base: float = 1.0
    synth_depth_base: float = 1.0
    synth_decay: float = 0.8
    synth_slope: float = 0.5
    synth_complexity_gain: float = 1.0

    # instance scoring
    lambda_e: float = 50.0
    c_min: float = 0.2
    c_max: float = 0.6

    # task generation
    n_down: int = 5
    d_poi_m: float = 1.2
    ring_radii_m: list[float] = field(default_factory=lambda: [1.0, 1.8])
    ring_yaw_count: int = 8
    ring_pitch_levels_rad: list[float] = field(
        default_factory=lambda: [-math.pi / 6.0, 0.0]
    )

    # camera
    camera_h_fov_rad: float = math.radians(80.0)
    camera_v_fov_rad: float = math.radians(60.0)
    camera_range_m: float = 4.5
    camera_raster: list[int] = field(default_factory=lambda: [40, 30])
    camera_pitch_limits_rad: list[float] = field(
        default_factory=lambda: [-math.radians(70.0), math.radians(70.0)]
    )

    # collaboration
    d_local_m: float = 6.0
    cluster_w_move: float = 1.0
    cluster_w_count: float = 1.0
    cluster_w_spread: float = 1.0
    cluster_max_iters: int = 100
    cluster_tol: float = 1e-9

    # tour planning and execution
    v_max_mps: float = 2.0
    yaw_rate_rps: float = math.pi
    pitch_rate_rps: float = math.pi / 2.0
    travel_cost_mode: str = "max"
    atsp_exact_max: int = 10
    smooth_step_m: float = 0.1
    dt_s: float = 0.4
    l_exec_m: float = 6.0

    # pathing
    path_clearance_voxels: int = 1

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["robots"] = [r.to_dict() for r in self.robots]
        return data


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def config_from_dict(data: dict) -> RunConfig:
    """Build a validated RunConfig from a plain dict (defaults overlaid)."""
    unknown = set(data) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(data)
    if "robots" in kwargs:
        robots = kwargs["robots"]
        if not isinstance(robots, list):
            raise ConfigError("robots: must be a list")
        kwargs["robots"] = [
            r if isinstance(r, RobotSpec) else RobotSpec.from_dict(r) for r in robots
        ]
    cfg = RunConfig(**kwargs)
    validate_config(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    """Load a JSON config file; defaults fill any key not present."""
    path = Path(path)
    text = path.read_text()
    if text.strip() == "":
        data = {}
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return config_from_dict(data)


def echo_config(cfg: RunConfig, out_dir: str | Path) -> Path:
    """Write the full effective config next to the run artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "effective_config.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def _require(ok: bool, key: str, bound: str) -> None:
    if not ok:
        raise ConfigError(f"{key}: {bound}")


def validate_config(cfg: RunConfig) -> None:
    """Range-check every field; raises ConfigError naming key and bound."""
    _require(cfg.budget >= 1, "budget", "must be >= 1")
    _require(cfg.max_cycles >= 1, "max_cycles", "must be >= 1")
    _require(cfg.variant in VARIANTS, "variant", f"must be one of {VARIANTS}")

    _require(cfg.lambda_d >= 0.0, "lambda_d", "must be >= 0")
    _require(cfg.prune_threshold_m > 0.0, "prune_threshold_m", "must be > 0")
    _require(cfg.prune_interval_frames >= 1, "prune_interval_frames", "must be >= 1")
    _require(cfg.synth_color_base > 0.0, "synth_color_base", "must be > 0")
    _require(cfg.synth_depth_base > 0.0, "synth_depth_base", "must be > 0")
    _require(0.0 < cfg.synth_decay < 1.0, "synth_decay", "must be in (0, 1)")
    _require(cfg.synth_slope >= 0.0, "synth_slope", "must be >= 0")
    _require(
        cfg.synth_complexity_gain >= 0.0, "synth_complexity_gain", "must be >= 0"
    )

    _require(cfg.lambda_e > 0.0, "lambda_e", "must be > 0")
    _require(0.0 <= cfg.c_min, "c_min", "must be >= 0")
    _require(cfg.c_max <= 1.0, "c_max", "must be <= 1")
    _require(cfg.c_min < cfg.c_max, "c_min", "must be < c_max")

    _require(cfg.n_down >= 1, "n_down", "must be >= 1")
    _require(cfg.d_poi_m > 0.0, "d_poi_m", "must be > 0")
    _require(len(cfg.ring_radii_m) >= 1, "ring_radii_m", "must be non-empty")
    _require(all(r > 0 for r in cfg.ring_radii_m), "ring_radii_m", "radii must be > 0")
    _require(cfg.ring_yaw_count >= 1, "ring_yaw_count", "must be >= 1")
    _require(
        len(cfg.ring_pitch_levels_rad) >= 1,
        "ring_pitch_levels_rad",
        "must be non-empty",
    )

    _require(
        0.0 < cfg.camera_h_fov_rad < math.pi, "camera_h_fov_rad", "must be in (0, pi)"
    )
    _require(
        0.0 < cfg.camera_v_fov_rad < math.pi, "camera_v_fov_rad", "must be in (0, pi)"
    )
    _require(cfg.camera_range_m > 0.0, "camera_range_m", "must be > 0")
    _require(
        len(cfg.camera_raster) == 2 and all(int(v) == v and v >= 1 for v in cfg.camera_raster),
        "camera_raster",
        "must be [width, height] with both >= 1",
    )
    lims = cfg.camera_pitch_limits_rad
    _require(
        len(lims) == 2 and -math.pi / 2 <= lims[0] < lims[1] <= math.pi / 2,
        "camera_pitch_limits_rad",
        "must be [lo, hi] within [-pi/2, pi/2] with lo < hi",
    )
    _require(
        all(lims[0] <= p <= lims[1] for p in cfg.ring_pitch_levels_rad),
        "ring_pitch_levels_rad",
        "pitch levels must lie within camera_pitch_limits_rad",
    )

    _require(cfg.d_local_m > 0.0, "d_local_m", "must be > 0")
    _require(cfg.cluster_w_move >= 0.0, "cluster_w_move", "must be >= 0")
    _require(cfg.cluster_w_count >= 0.0, "cluster_w_count", "must be >= 0")
    _require(cfg.cluster_w_spread >= 0.0, "cluster_w_spread", "must be >= 0")
    _require(cfg.cluster_max_iters >= 1, "cluster_max_iters", "must be >= 1")
    _require(cfg.cluster_tol > 0.0, "cluster_tol", "must be > 0")

    _require(cfg.v_max_mps > 0.0, "v_max_mps", "must be > 0")
    _require(cfg.yaw_rate_rps > 0.0, "yaw_rate_rps", "must be > 0")
    _require(cfg.pitch_rate_rps > 0.0, "pitch_rate_rps", "must be > 0")
    _require(
        cfg.travel_cost_mode in ("max", "sum"),
        "travel_cost_mode",
        "must be 'max' or 'sum'",
    )
    _require(cfg.atsp_exact_max >= 1, "atsp_exact_max", "must be >= 1")
    _require(cfg.smooth_step_m > 0.0, "smooth_step_m", "must be > 0")
    _require(cfg.dt_s > 0.0, "dt_s", "must be > 0")
    _require(cfg.l_exec_m > 0.0, "l_exec_m", "must be > 0")

    _require(cfg.path_clearance_voxels >= 0, "path_clearance_voxels", "must be >= 0")

    ids = [r.id for r in cfg.robots]
    _require(len(ids) == len(set(ids)), "robots", "robot ids must be unique")
    for r in cfg.robots:
        _require(
            lims[0] <= r.pitch <= lims[1],
            "robots",
            f"robot {r.id} start pitch outside camera_pitch_limits_rad",
        )
