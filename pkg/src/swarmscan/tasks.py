"""Viewpoint task generation.

Exploration tasks pick, per frontier, the ring-sampled viewpoint that covers
the most frontier voxels. Reconstruction tasks work per gated instance:
downsample its surface, greedily pick well-spaced points of interest by
uncertainty, sample aimed candidate views around each, and keep the candidate
with the highest visibility-weighted gain. A surface-only generator does the
same directly on the whole cache surface, with no instance gating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .instances import ReconInstance
from .loss_cache import UncertaintyCache
from .world import (
    CameraModel,
    Frontier,
    Viewpoint,
    VoxelWorld,
    direction_from_angles,
    visible_targets,
    wrap_angle,
)

EXPLORATION = "exploration"
RECONSTRUCTION = "reconstruction"


@dataclass
class Task:
    """A candidate viewpoint worth visiting."""

    kind: str  # EXPLORATION or RECONSTRUCTION
    viewpoint: Viewpoint
    gain: float
    source: str  # "exp:<frontier>" or "rec:<instance>:<poi>" or "srf:<poi>"

    @property
    def position(self) -> np.ndarray:
        return self.viewpoint.position

    def to_dict(self) -> dict:
        d = self.viewpoint.to_dict()
        d.update({"kind": self.kind, "gain": float(self.gain), "source": self.source})
        return d


@dataclass
class POI:
    """A point of interest on an instance surface."""

    position: np.ndarray
    uncertainty: float


def camera_from_config(cfg: RunConfig) -> CameraModel:
    return CameraModel(
        h_fov=cfg.camera_h_fov_rad,
        v_fov=cfg.camera_v_fov_rad,
        max_range=cfg.camera_range_m,
        raster_w=int(cfg.camera_raster[0]),
        raster_h=int(cfg.camera_raster[1]),
    )


# -- geometry helpers ---------------------------------------------------------


def frustum_range_mask(
    pose: Viewpoint, camera: CameraModel, points: np.ndarray
) -> np.ndarray:
    """Points inside the angular frustum and within sensor range."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = pts - pose.position
    dist = np.linalg.norm(d, axis=1)
    at_pose = dist == 0.0
    with np.errstate(invalid="ignore"):
        az = np.arctan2(d[:, 1], d[:, 0])
        el = np.arctan2(d[:, 2], np.hypot(d[:, 0], d[:, 1]))
    ok = (
        (np.abs(wrap_angle(az - pose.yaw)) <= camera.h_fov / 2.0)
        & (np.abs(el - pose.pitch) <= camera.v_fov / 2.0)
        & (dist <= camera.max_range)
    )
    ok |= at_pose
    return ok


def ring_viewpoints(
    center: np.ndarray,
    radii: list[float],
    yaw_count: int,
    pitch_levels: list[float],
) -> list[Viewpoint]:
    """Candidate viewpoints on rings around `center`, each aimed at it.

    A candidate at view pitch p sits on a ring elevated by -p, so looking at
    the center gives exactly that pitch. Ordering is pitch-major, then radius,
    then yaw index, which fixes the tie-break order downstream.
    """
    center = np.asarray(center, dtype=float).reshape(3)
    out = []
    for pitch in pitch_levels:
        elev = -pitch
        for r in radii:
            for k in range(yaw_count):
                a = 2.0 * math.pi * k / yaw_count
                offset = r * np.asarray(
                    [
                        math.cos(elev) * math.cos(a),
                        math.cos(elev) * math.sin(a),
                        math.sin(elev),
                    ]
                )
                pos = center + offset
                d = center - pos
                yaw = math.atan2(d[1], d[0])
                view_pitch = math.atan2(d[2], math.hypot(d[0], d[1]))
                out.append(Viewpoint(position=pos, yaw=yaw, pitch=view_pitch))
    return out


def _feasible(world: VoxelWorld, cands: list[Viewpoint], clearance: int) -> list[Viewpoint]:
    if not cands:
        return []
    pos = np.stack([c.position for c in cands])
    ok = world.positions_traversable(pos, clearance)
    return [c for c, k in zip(cands, ok) if k]


# -- surface downsampling and POIs ---------------------------------------------


def downsample_surface(
    points: np.ndarray, uncertainties: np.ndarray, n_down: int = 5
) -> tuple[np.ndarray, np.ndarray]:
    """Keep every n_down-th point of the voxel-index-ordered surface set."""
    if n_down < 1:
        raise ValueError("n_down must be >= 1")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    unc = np.asarray(uncertainties, dtype=float).reshape(-1)
    if len(pts) != len(unc):
        raise ValueError("points and uncertainties must align")
    return pts[::n_down].copy(), unc[::n_down].copy()


def select_pois(
    points: np.ndarray, uncertainties: np.ndarray, d_poi: float = 1.2
) -> list[POI]:
    """Greedy max-uncertainty selection under a minimum spacing.

    The first pick is the global argmax (lowest index on ties); each later
    pick is the highest-uncertainty point at distance >= d_poi from all
    previous picks; stops when no point qualifies.
    """
    if d_poi <= 0:
        raise ValueError("d_poi must be > 0")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    unc = np.asarray(uncertainties, dtype=float).reshape(-1)
    if len(pts) == 0:
        return []
    eligible = np.ones(len(pts), dtype=bool)
    out = []
    while eligible.any():
        masked = np.where(eligible, unc, -np.inf)
        i = int(np.argmax(masked))
        out.append(POI(position=pts[i].copy(), uncertainty=float(unc[i])))
        dist = np.linalg.norm(pts - pts[i], axis=1)
        eligible &= dist >= d_poi
    return out


# -- information gain ----------------------------------------------------------


def info_gain(
    world: VoxelWorld,
    viewpoint: Viewpoint,
    points: np.ndarray,
    uncertainties: np.ndarray,
    camera: CameraModel,
) -> float:
    """Sum of sigma_k * exp(-0.5 * d_k) over the points visible from the
    viewpoint; a point is visible when it is inside the frustum, within
    range, and its ray is unoccluded in the known map."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    unc = np.asarray(uncertainties, dtype=float).reshape(-1)
    if len(pts) == 0:
        return 0.0
    mask = frustum_range_mask(viewpoint, camera, pts)
    if not mask.any():
        return 0.0
    idx = np.flatnonzero(mask)
    vox = world.pos_to_voxel(pts[idx])
    vis = visible_targets(world, viewpoint.position, vox)
    idx = idx[vis]
    if idx.size == 0:
        return 0.0
    d = np.linalg.norm(pts[idx] - viewpoint.position, axis=1)
    return float(np.sum(unc[idx] * np.exp(-0.5 * d)))


# -- exploration tasks -----------------------------------------------------------


def gen_exploration_tasks(
    world: VoxelWorld,
    frontiers: list[Frontier],
    camera: CameraModel,
    cfg: RunConfig,
) -> list[Task]:
    """One max-coverage viewpoint per frontier; frontiers with no feasible or
    no seeing candidate emit nothing."""
    tasks = []
    for f_idx, fr in enumerate(frontiers):
        cands = ring_viewpoints(
            fr.centroid, cfg.ring_radii_m, cfg.ring_yaw_count, cfg.ring_pitch_levels_rad
        )
        cands = _feasible(world, cands, cfg.path_clearance_voxels)
        if not cands:
            continue
        centers = world.voxel_centers(fr.voxels)
        best_count = 0
        best = None
        for cand in cands:
            mask = frustum_range_mask(cand, camera, centers)
            if not mask.any():
                continue
            vis = visible_targets(world, cand.position, fr.voxels[mask])
            n = int(vis.sum())
            if n > best_count:
                best_count = n
                best = cand
        if best is not None and best_count > 0:
            tasks.append(
                Task(
                    kind=EXPLORATION,
                    viewpoint=best,
                    gain=float(best_count),
                    source=f"exp:{f_idx}",
                )
            )
    return tasks


# -- reconstruction tasks ----------------------------------------------------------


def sample_views(
    world: VoxelWorld, poi: POI, cfg: RunConfig
) -> list[Viewpoint]:
    """Aimed ring candidates around a POI, keeping only positions in
    known-empty space with path clearance."""
    cands = ring_viewpoints(
        poi.position, cfg.ring_radii_m, cfg.ring_yaw_count, cfg.ring_pitch_levels_rad
    )
    return _feasible(world, cands, cfg.path_clearance_voxels)


def _best_view_for_poi(
    world: VoxelWorld,
    poi: POI,
    points: np.ndarray,
    uncertainties: np.ndarray,
    camera: CameraModel,
    cfg: RunConfig,
) -> tuple[Viewpoint, float] | None:
    """Argmax-gain candidate for one POI, or None without candidates.

    Points farther than max_range + max ring radius from the POI cannot be
    visible from any of its candidates, so they are filtered up front.
    """
    cands = sample_views(world, poi, cfg)
    if not cands:
        return None
    reach = camera.max_range + max(cfg.ring_radii_m)
    near = np.linalg.norm(points - poi.position, axis=1) <= reach
    pts = points[near]
    unc = uncertainties[near]
    best_gain = -1.0
    best = None
    for cand in cands:
        g = info_gain(world, cand, pts, unc, camera)
        if g > best_gain:
            best_gain = g
            best = cand
    return best, best_gain


def gen_reconstruction_tasks(
    world: VoxelWorld,
    recon_instances: list[ReconInstance],
    camera: CameraModel,
    cfg: RunConfig,
) -> list[Task]:
    """Per gated instance: downsample, pick POIs, and emit the best-gain
    candidate view per POI, evaluated against the downsampled set."""
    tasks = []
    for rec in sorted(recon_instances, key=lambda r: r.id):
        pd, ud = downsample_surface(rec.points, rec.uncertainties, cfg.n_down)
        pois = select_pois(pd, ud, cfg.d_poi_m)
        for p_idx, poi in enumerate(pois):
            found = _best_view_for_poi(world, poi, pd, ud, camera, cfg)
            if found is None:
                continue
            view, gain = found
            tasks.append(
                Task(
                    kind=RECONSTRUCTION,
                    viewpoint=view,
                    gain=gain,
                    source=f"rec:{rec.id}:{p_idx}",
                )
            )
    return tasks


def gen_surface_tasks(
    world: VoxelWorld,
    cache: UncertaintyCache,
    camera: CameraModel,
    cfg: RunConfig,
) -> list[Task]:
    """Reconstruction tasks straight from the raw cache surface: POI selection,
    view sampling and gain evaluation over the full surface set, with no
    instance gating. Scattered high-loss points each spawn their own POI, so
    this variant tends to emit many more tasks than the gated one."""
    pts, unc, _ = cache.surface_points()
    pois = select_pois(pts, unc, cfg.d_poi_m)
    tasks = []
    for p_idx, poi in enumerate(pois):
        found = _best_view_for_poi(world, poi, pts, unc, camera, cfg)
        if found is None:
            continue
        view, gain = found
        tasks.append(
            Task(
                kind=RECONSTRUCTION,
                viewpoint=view,
                gain=gain,
                source=f"srf:{p_idx}",
            )
        )
    return tasks
