"""Voxel occupancy world.

Holds the ground-truth scene and the incrementally observed (known) map,
and provides the simulated depth sensor, frontier extraction, obstacle
distance fields and grid shortest paths that the planner builds on.

State convention: every voxel starts UNKNOWN and is promoted to EMPTY or
OCCUPIED by sensing. The sensor is noiseless, so promotions always agree
with the immutable truth grid and never flip afterwards.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from .errors import CameraPoseError, SceneFormatError

UNKNOWN = 0
EMPTY = 1
OCCUPIED = 2

SCENE_FORMAT = "scene-v1"

_SCENE_KEYS = {"format", "name", "resolution", "origin", "extent", "occupied_runs", "instances"}
_INSTANCE_KEYS = {"id", "name", "voxels", "similarity"}

# Face-neighbourhood offsets (6-connectivity) and the 26-neighbourhood used
# by grid path edges.
_FACE_OFFSETS = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
_ALL_OFFSETS = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
]


def wrap_angle(a: float | np.ndarray) -> float | np.ndarray:
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def direction_from_angles(yaw, pitch):
    """Unit direction for yaw about +z and pitch as elevation above the xy plane."""
    yaw = np.asarray(yaw, dtype=float)
    pitch = np.asarray(pitch, dtype=float)
    cp = np.cos(pitch)
    return np.stack([cp * np.cos(yaw), cp * np.sin(yaw), np.sin(pitch)], axis=-1)


@dataclass
class Viewpoint:
    """A sensor pose: position in meters, yaw and pitch in radians."""

    position: np.ndarray
    yaw: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)

    def to_dict(self) -> dict:
        return {
            "position": [float(v) for v in self.position],
            "yaw": float(self.yaw),
            "pitch": float(self.pitch),
        }


@dataclass
class CameraModel:
    """Pinhole-style angular raster: one ray per cell of a w x h grid."""

    h_fov: float
    v_fov: float
    max_range: float
    raster_w: int
    raster_h: int

    def __post_init__(self):
        if not (0.0 < self.h_fov < math.pi and 0.0 < self.v_fov < math.pi):
            raise ValueError("camera fov must be in (0, pi)")
        if self.max_range <= 0.0:
            raise ValueError("camera max_range must be > 0")
        if self.raster_w < 0 or self.raster_h < 0:
            raise ValueError("camera raster must be >= 0")

    def ray_angles(self, yaw: float, pitch: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-ray (azimuth, elevation), row-major over the raster."""
        w, h = self.raster_w, self.raster_h
        az = yaw - self.h_fov / 2.0 + (np.arange(w) + 0.5) * self.h_fov / max(w, 1)
        el = pitch - self.v_fov / 2.0 + (np.arange(h) + 0.5) * self.v_fov / max(h, 1)
        azg, elg = np.meshgrid(az, el)
        return azg.ravel(), elg.ravel()


@dataclass
class Frontier:
    """A maximal cluster of known-empty voxels face-adjacent to unknown space."""

    voxels: np.ndarray  # (n, 3) int
    centroid: np.ndarray  # (3,) float, meters


@dataclass
class ObservationFrame:
    """Per-ray result of one sense() call; arrays are in ray (row-major) order."""

    pose: Viewpoint
    n_rays: int
    hit_mask: np.ndarray  # (n,) bool
    hit_voxels: np.ndarray  # (n, 3) int, -1 rows for misses
    hit_distances: np.ndarray  # (n,) float, inf for misses
    hit_instances: np.ndarray  # (n,) int, -1 where the hit voxel has no instance
    changed: bool = False


@dataclass
class PathResult:
    """Outcome of a grid shortest-path query."""

    found: bool
    points: np.ndarray | None  # (k, 3) float polyline in meters
    length: float  # meters; inf when not found


@dataclass
class SceneInstance:
    """One segmented object from the scene file."""

    id: int
    name: str
    voxels: np.ndarray  # (n, 3) int
    similarity: np.ndarray  # (V,) float


class VoxelWorld:
    """Axis-aligned voxel grid with truth occupancy and an observed state map."""

    def __init__(self, resolution: float, origin, shape, name: str = "") -> None:
        self.resolution = float(resolution)
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.shape = tuple(int(s) for s in shape)
        self.name = name
        self.known_state = np.full(self.shape, UNKNOWN, dtype=np.uint8)
        self.truth_occupied = np.zeros(self.shape, dtype=bool)
        self.truth_instance = np.full(self.shape, -1, dtype=np.int32)
        self.instances: dict[int, SceneInstance] = {}
        self.revision = 0
        self._edt_cache: tuple[int, np.ndarray] | None = None
        self._graph_cache: dict[int, tuple] = {}

    # -- coordinates ------------------------------------------------------

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.shape, dtype=float) * self.resolution

    def voxel_center(self, voxel) -> np.ndarray:
        return self.origin + (np.asarray(voxel, dtype=float) + 0.5) * self.resolution

    def voxel_centers(self, voxels: np.ndarray) -> np.ndarray:
        return self.origin + (np.asarray(voxels, dtype=float) + 0.5) * self.resolution

    def pos_to_voxel(self, position) -> np.ndarray:
        """Voxel containing a point; exact boundary points go to the lower-index voxel."""
        q = (np.asarray(position, dtype=float) - self.origin) / self.resolution
        v = np.floor(q).astype(np.int64)
        on_boundary = (q == np.floor(q)) & (v > 0)
        v[on_boundary] -= 1
        return v

    def in_bounds(self, voxels: np.ndarray) -> np.ndarray:
        v = np.atleast_2d(voxels)
        ok = np.ones(len(v), dtype=bool)
        for a in range(3):
            ok &= (v[:, a] >= 0) & (v[:, a] < self.shape[a])
        return ok if np.ndim(voxels) == 2 else bool(ok[0])

    def contains_position(self, position) -> bool:
        p = np.asarray(position, dtype=float) - self.origin
        return bool(np.all(p >= 0.0) and np.all(p <= self.extent))

    def flat_index(self, voxels: np.ndarray) -> np.ndarray:
        v = np.asarray(voxels)
        return np.ravel_multi_index((v[..., 0], v[..., 1], v[..., 2]), self.shape)

    # -- state ------------------------------------------------------------

    def counts(self) -> dict[str, int]:
        return {
            "unknown": int(np.count_nonzero(self.known_state == UNKNOWN)),
            "empty": int(np.count_nonzero(self.known_state == EMPTY)),
            "occupied": int(np.count_nonzero(self.known_state == OCCUPIED)),
        }

    def _bump(self) -> None:
        self.revision += 1

    # -- clearance / traversability ----------------------------------------

    def edt_voxels(self) -> np.ndarray:
        """Distance (in voxel units) from each voxel center to the nearest
        known-occupied or unknown voxel center; +inf when no obstacle exists."""
        if self._edt_cache is not None and self._edt_cache[0] == self.revision:
            return self._edt_cache[1]
        obstacle = self.known_state != EMPTY
        if not obstacle.any():
            edt = np.full(self.shape, np.inf)
        else:
            edt = ndimage.distance_transform_edt(~obstacle)
        self._edt_cache = (self.revision, edt)
        return edt

    def traversable_mask(self, clearance_voxels: int = 1) -> np.ndarray:
        """Known-empty voxels keeping a free gap of `clearance_voxels` to any
        obstacle (center distance >= clearance_voxels + 1)."""
        return (self.known_state == EMPTY) & (
            self.edt_voxels() >= float(clearance_voxels + 1)
        )

    def positions_traversable(self, positions: np.ndarray, clearance_voxels: int = 1) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(positions, dtype=float))
        ok = np.zeros(len(pts), dtype=bool)
        trav = self.traversable_mask(clearance_voxels)
        for i, p in enumerate(pts):
            if not self.contains_position(p):
                continue
            v = self.pos_to_voxel(p)
            if self.in_bounds(v.reshape(1, 3))[0]:
                ok[i] = bool(trav[tuple(v)])
        return ok


# -- scene I/O --------------------------------------------------------------


def scene_from_dict(data: dict, source: str = "<memory>") -> VoxelWorld:
    """Build a world from a parsed scene document (see docs/formats.md)."""
    if not isinstance(data, dict):
        raise SceneFormatError(f"{source}: scene document must be an object")
    unknown = set(data) - _SCENE_KEYS
    if unknown:
        raise SceneFormatError(f"{source}: unknown scene keys: {sorted(unknown)}")
    if data.get("format") != SCENE_FORMAT:
        raise SceneFormatError(
            f"{source}: field 'format' must be '{SCENE_FORMAT}', got {data.get('format')!r}"
        )
    resolution = float(data.get("resolution", 0.05))
    if resolution <= 0:
        raise SceneFormatError(f"{source}: field 'resolution' must be > 0")
    origin = data.get("origin", [0.0, 0.0, 0.0])
    if not (isinstance(origin, (list, tuple)) and len(origin) == 3):
        raise SceneFormatError(f"{source}: field 'origin' must be [x, y, z]")
    extent = data.get("extent")
    if not (isinstance(extent, (list, tuple)) and len(extent) == 3):
        raise SceneFormatError(f"{source}: field 'extent' must be [x, y, z]")
    extent = [float(e) for e in extent]
    if any(e <= 0 for e in extent):
        raise SceneFormatError(f"{source}: field 'extent' must be positive")
    shape = tuple(int(round(e / resolution)) for e in extent)
    if any(s < 1 for s in shape):
        raise SceneFormatError(f"{source}: extent smaller than one voxel")

    world = VoxelWorld(resolution, origin, shape, name=str(data.get("name", "")))

    runs = data.get("occupied_runs", [])
    if not isinstance(runs, list):
        raise SceneFormatError(f"{source}: field 'occupied_runs' must be a list")
    for i, run in enumerate(runs):
        if not (isinstance(run, (list, tuple)) and len(run) == 4):
            raise SceneFormatError(
                f"{source}: occupied_runs[{i}] must be [ix, iy, iz0, iz1]"
            )
        ix, iy, iz0, iz1 = (int(v) for v in run)
        if iz1 < iz0:
            raise SceneFormatError(f"{source}: occupied_runs[{i}] has iz1 < iz0")
        if not (
            0 <= ix < shape[0]
            and 0 <= iy < shape[1]
            and 0 <= iz0
            and iz1 < shape[2]
        ):
            raise SceneFormatError(
                f"{source}: occupied_runs[{i}] out of bounds for shape {shape}"
            )
        world.truth_occupied[ix, iy, iz0 : iz1 + 1] = True

    instances = data.get("instances", [])
    if not isinstance(instances, list):
        raise SceneFormatError(f"{source}: field 'instances' must be a list")
    sim_len = None
    for j, inst in enumerate(instances):
        if not isinstance(inst, dict):
            raise SceneFormatError(f"{source}: instances[{j}] must be an object")
        unknown = set(inst) - _INSTANCE_KEYS
        if unknown:
            raise SceneFormatError(
                f"{source}: instances[{j}] unknown keys: {sorted(unknown)}"
            )
        for key in _INSTANCE_KEYS:
            if key not in inst:
                raise SceneFormatError(f"{source}: instances[{j}] missing '{key}'")
        iid = int(inst["id"])
        if iid < 0:
            raise SceneFormatError(f"{source}: instances[{j}] id must be >= 0")
        if iid in world.instances:
            raise SceneFormatError(f"{source}: duplicate instance id {iid}")
        sim = np.asarray(inst["similarity"], dtype=float)
        if sim.ndim != 1 or len(sim) < 2:
            raise SceneFormatError(
                f"{source}: instances[{j}] similarity must be a vector of length >= 2"
            )
        if not np.isfinite(sim).all():
            raise SceneFormatError(f"{source}: instances[{j}] similarity not finite")
        if sim_len is None:
            sim_len = len(sim)
        elif len(sim) != sim_len:
            raise SceneFormatError(
                f"{source}: instances[{j}] similarity length {len(sim)} != {sim_len}"
            )
        vox = np.asarray(inst["voxels"], dtype=np.int64)
        if vox.size == 0:
            vox = vox.reshape(0, 3)
        if vox.ndim != 2 or vox.shape[1] != 3:
            raise SceneFormatError(
                f"{source}: instances[{j}] voxels must be a list of [ix, iy, iz]"
            )
        for v in vox:
            t = tuple(int(x) for x in v)
            if not (
                0 <= t[0] < shape[0] and 0 <= t[1] < shape[1] and 0 <= t[2] < shape[2]
            ):
                raise SceneFormatError(
                    f"{source}: instances[{j}] voxel {t} out of bounds"
                )
            if not world.truth_occupied[t]:
                raise SceneFormatError(
                    f"{source}: instances[{j}] voxel {t} is not occupied"
                )
            if world.truth_instance[t] != -1:
                raise SceneFormatError(
                    f"{source}: voxel {t} claimed by instances "
                    f"{int(world.truth_instance[t])} and {iid}"
                )
            world.truth_instance[t] = iid
        world.instances[iid] = SceneInstance(
            id=iid, name=str(inst["name"]), voxels=vox, similarity=sim
        )
    return world


def load_scene(path: str | Path) -> VoxelWorld:
    """Parse and validate a scene JSON file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(
            f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return scene_from_dict(data, source=str(path))


# -- DDA raycasting ----------------------------------------------------------


def _dda_setup(world: VoxelWorld, origin: np.ndarray, dirs: np.ndarray):
    """Initial voxel, step signs, boundary distances and per-axis step lengths
    for a batch of rays sharing one origin. Distances are in meters."""
    res = world.resolution
    rel = np.asarray(origin, dtype=float) - world.origin
    v0 = world.pos_to_voxel(origin)
    n = len(dirs)
    vox = np.tile(v0, (n, 1))
    step = np.sign(dirs).astype(np.int64)
    with np.errstate(divide="ignore"):
        t_delta = np.where(dirs != 0.0, res / np.abs(dirs), np.inf)
        boundary = np.where(step > 0, (v0 + 1) * res, v0 * res)
        t_max = np.where(dirs != 0.0, (boundary - rel) / dirs, np.inf)
    t_max = np.maximum(t_max, 0.0)
    return vox, step, t_max, t_delta


def _step_axes(t_max: np.ndarray, step: np.ndarray) -> np.ndarray:
    """Axis to advance for each ray. Ties at voxel corners resolve toward the
    lexicographically lower next voxel index."""
    m = t_max.min(axis=1, keepdims=True)
    tie = t_max == m
    neg = tie & (step < 0)
    has_neg = neg.any(axis=1)
    axis_neg = np.argmax(neg, axis=1)
    axis_pos = 2 - np.argmax(tie[:, ::-1], axis=1)
    return np.where(has_neg, axis_neg, axis_pos)


def sense(world: VoxelWorld, pose: Viewpoint, camera: CameraModel) -> ObservationFrame:
    """Cast one ray per raster cell through the truth grid and update the
    known map: traversed voxels become EMPTY, first hits become OCCUPIED.

    Deterministic given (world, pose, camera). Raises CameraPoseError when the
    pose is outside the map or inside a truth-occupied voxel.
    """
    if not world.contains_position(pose.position):
        raise CameraPoseError(f"sensor pose {pose.position.tolist()} outside map extent")
    v0 = world.pos_to_voxel(pose.position)
    if world.truth_occupied[tuple(v0)]:
        raise CameraPoseError(f"sensor pose {pose.position.tolist()} inside occupied voxel")

    n = camera.raster_w * camera.raster_h
    if n == 0:
        return ObservationFrame(
            pose=pose,
            n_rays=0,
            hit_mask=np.zeros(0, dtype=bool),
            hit_voxels=np.full((0, 3), -1, dtype=np.int64),
            hit_distances=np.full(0, np.inf),
            hit_instances=np.full(0, -1, dtype=np.int64),
            changed=False,
        )

    az, el = camera.ray_angles(pose.yaw, pose.pitch)
    dirs = direction_from_angles(az, el)
    vox, step, t_max, t_delta = _dda_setup(world, pose.position, dirs)

    hit_mask = np.zeros(n, dtype=bool)
    hit_voxels = np.full((n, 3), -1, dtype=np.int64)
    hit_t = np.full(n, np.inf)
    entry_t = np.zeros(n)
    active = np.ones(n, dtype=bool)
    empty_flats: list[np.ndarray] = []
    shape = np.asarray(world.shape)

    max_iter = int(shape.sum()) + 4
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        vv = vox[idx]
        inb = np.all((vv >= 0) & (vv < shape), axis=1)
        within = entry_t[idx] <= camera.max_range
        alive = inb & within
        active[idx[~alive]] = False
        idx = idx[alive]
        if idx.size == 0:
            break
        vv = vox[idx]
        occ = world.truth_occupied[vv[:, 0], vv[:, 1], vv[:, 2]]
        hits = idx[occ]
        if hits.size:
            hit_mask[hits] = True
            hit_voxels[hits] = vox[hits]
            hit_t[hits] = entry_t[hits]
            active[hits] = False
        free = idx[~occ]
        if free.size:
            empty_flats.append(world.flat_index(vox[free]))
            axes = _step_axes(t_max[free], step[free])
            entry_t[free] = t_max[free, axes]
            vox[free, axes] += step[free, axes]
            t_max[free, axes] += t_delta[free, axes]

    changed = False
    ks = world.known_state.reshape(-1)
    if empty_flats:
        flats = np.unique(np.concatenate(empty_flats))
        if (ks[flats] != EMPTY).any():
            changed = True
        ks[flats] = EMPTY
    if hit_mask.any():
        hflats = world.flat_index(hit_voxels[hit_mask])
        if (ks[hflats] != OCCUPIED).any():
            changed = True
        ks[hflats] = OCCUPIED
    if changed:
        world._bump()

    hit_instances = np.full(n, -1, dtype=np.int64)
    hv = hit_voxels[hit_mask]
    if len(hv):
        hit_instances[hit_mask] = world.truth_instance[hv[:, 0], hv[:, 1], hv[:, 2]]

    return ObservationFrame(
        pose=pose,
        n_rays=n,
        hit_mask=hit_mask,
        hit_voxels=hit_voxels,
        hit_distances=hit_t,
        hit_instances=hit_instances,
        changed=changed,
    )


def visible_targets(
    world: VoxelWorld, origin: np.ndarray, target_voxels: np.ndarray
) -> np.ndarray:
    """True per target voxel when the straight ray from `origin` to its center
    reaches it without first entering a known-occupied voxel.

    Occlusion is evaluated against the known map only: unknown voxels do not
    block. The target voxel itself never occludes the ray.
    """
    targets = np.atleast_2d(np.asarray(target_voxels, dtype=np.int64))
    m = len(targets)
    if m == 0:
        return np.zeros(0, dtype=bool)
    origin = np.asarray(origin, dtype=float).reshape(3)
    centers = world.voxel_centers(targets)
    deltas = centers - origin
    dists = np.linalg.norm(deltas, axis=1)
    visible = np.zeros(m, dtype=bool)

    v0 = world.pos_to_voxel(origin)
    same = np.all(targets == v0, axis=1)
    visible[same] = True
    todo = np.flatnonzero(~same & (dists > 0.0))
    if todo.size == 0:
        return visible

    dirs = deltas[todo] / dists[todo][:, None]
    vox, step, t_max, t_delta = _dda_setup(world, origin, dirs)
    tgt = targets[todo]
    blocked = world.known_state == OCCUPIED
    active = np.ones(len(todo), dtype=bool)
    shape = np.asarray(world.shape)

    max_iter = int(shape.sum()) + 4
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        vv = vox[idx]
        reached = np.all(vv == tgt[idx], axis=1)
        visible[todo[idx[reached]]] = True
        active[idx[reached]] = False
        idx = idx[~reached]
        if idx.size == 0:
            break
        vv = vox[idx]
        inb = np.all((vv >= 0) & (vv < shape), axis=1)
        occl = np.zeros(len(idx), dtype=bool)
        if inb.any():
            vi = vv[inb]
            occl[inb] = blocked[vi[:, 0], vi[:, 1], vi[:, 2]]
        dead = ~inb | occl
        active[idx[dead]] = False
        idx = idx[~dead]
        if idx.size == 0:
            break
        axes = _step_axes(t_max[idx], step[idx])
        vox[idx, axes] += step[idx, axes]
        t_max[idx, axes] += t_delta[idx, axes]
    return visible


# -- frontiers ---------------------------------------------------------------


def extract_frontiers(world: VoxelWorld) -> list[Frontier]:
    """All maximal clusters of known-empty voxels with a face-adjacent unknown
    neighbour. Clusters use 26-connectivity; output is sorted by centroid."""
    empty = world.known_state == EMPTY
    unknown = world.known_state == UNKNOWN
    adj = np.zeros(world.shape, dtype=bool)
    for dx, dy, dz in _FACE_OFFSETS:
        shifted = np.zeros(world.shape, dtype=bool)
        src = [slice(None)] * 3
        dst = [slice(None)] * 3
        for a, d in enumerate((dx, dy, dz)):
            if d == 1:
                src[a], dst[a] = slice(1, None), slice(None, -1)
            elif d == -1:
                src[a], dst[a] = slice(None, -1), slice(1, None)
        shifted[tuple(dst)] = unknown[tuple(src)]
        adj |= shifted
    mask = empty & adj
    if not mask.any():
        return []
    labels, count = ndimage.label(mask, structure=np.ones((3, 3, 3), dtype=bool))
    frontiers = []
    for lab in range(1, count + 1):
        vox = np.argwhere(labels == lab)
        centroid = world.voxel_centers(vox).mean(axis=0)
        frontiers.append(Frontier(voxels=vox, centroid=centroid))
    order = sorted(
        range(len(frontiers)), key=lambda i: tuple(frontiers[i].centroid)
    )
    return [frontiers[i] for i in order]


# -- distance field ----------------------------------------------------------


def distance_field(world: VoxelWorld) -> np.ndarray:
    """Euclidean distance in meters from each voxel center to the nearest
    known-occupied or unknown voxel center; +inf when no obstacle exists."""
    edt = world.edt_voxels()
    if np.isinf(edt).all():
        return np.full(world.shape, np.inf)
    return edt * world.resolution


# -- grid shortest paths -------------------------------------------------------


def _grid_edges(world: VoxelWorld, clearance_voxels: int):
    """Directed edge arrays (rows, cols, weights) of the 26-connected graph
    over traversable voxels; cached per world revision."""
    key = clearance_voxels
    cached = world._graph_cache.get(key)
    if cached is not None and cached[0] == world.revision:
        return cached[1]
    trav = world.traversable_mask(clearance_voxels)
    flat = np.arange(int(np.prod(world.shape)), dtype=np.int64).reshape(world.shape)
    rows_l, cols_l, w_l = [], [], []
    res = world.resolution
    for dx, dy, dz in _ALL_OFFSETS:
        src = [slice(None)] * 3
        dst = [slice(None)] * 3
        for a, d in enumerate((dx, dy, dz)):
            if d == 1:
                src[a], dst[a] = slice(None, -1), slice(1, None)
            elif d == -1:
                src[a], dst[a] = slice(1, None), slice(None, -1)
        ok = trav[tuple(src)] & trav[tuple(dst)]
        if not ok.any():
            continue
        u = flat[tuple(src)][ok]
        v = flat[tuple(dst)][ok]
        w = np.full(len(u), res * math.sqrt(dx * dx + dy * dy + dz * dz))
        rows_l.append(u)
        cols_l.append(v)
        w_l.append(w)
    if rows_l:
        edges = (np.concatenate(rows_l), np.concatenate(cols_l), np.concatenate(w_l))
    else:
        edges = (
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=float),
        )
    n = int(np.prod(world.shape))
    graph = csr_matrix((edges[2], (edges[0], edges[1])), shape=(n, n))
    world._graph_cache[key] = (world.revision, edges, graph)
    return edges


def _grid_graph(world: VoxelWorld, clearance_voxels: int) -> csr_matrix:
    """Shared CSR adjacency for the current revision."""
    _grid_edges(world, clearance_voxels)
    return world._graph_cache[clearance_voxels][2]


def _exempt_edges(world: VoxelWorld, voxel: np.ndarray, trav: np.ndarray):
    """Edges linking one empty-but-tight voxel to its traversable neighbours."""
    res = world.resolution
    rows, cols, ws = [], [], []
    u = int(world.flat_index(voxel.reshape(1, 3))[0])
    for off in _ALL_OFFSETS:
        nb = voxel + np.asarray(off)
        if not world.in_bounds(nb.reshape(1, 3))[0]:
            continue
        if not trav[tuple(nb)]:
            continue
        v = int(world.flat_index(nb.reshape(1, 3))[0])
        w = res * math.sqrt(sum(o * o for o in off))
        rows.extend((u, v))
        cols.extend((v, u))
        ws.extend((w, w))
    return rows, cols, ws


class PathField:
    """Single-source grid distances plus predecessors, for batched queries."""

    def __init__(self, world: VoxelWorld, source_position, clearance_voxels: int = 1):
        self.world = world
        self.clearance_voxels = clearance_voxels
        self.source_position = np.asarray(source_position, dtype=float).reshape(3)
        if not world.contains_position(self.source_position):
            raise ValueError("path source outside map extent")
        self.source_voxel = world.pos_to_voxel(self.source_position)
        sv = tuple(self.source_voxel)
        if world.known_state[sv] != EMPTY:
            raise ValueError("path source is not in known-empty space")
        trav = world.traversable_mask(clearance_voxels)
        if trav[sv]:
            graph = _grid_graph(world, clearance_voxels)
        else:
            rows, cols, ws = _grid_edges(world, clearance_voxels)
            er, ec, ew = _exempt_edges(world, self.source_voxel, trav)
            if er:
                rows = np.concatenate([rows, np.asarray(er, dtype=np.int64)])
                cols = np.concatenate([cols, np.asarray(ec, dtype=np.int64)])
                ws = np.concatenate([ws, np.asarray(ew)])
            n = int(np.prod(world.shape))
            graph = csr_matrix((ws, (rows, cols)), shape=(n, n))
        src_flat = int(world.flat_index(self.source_voxel.reshape(1, 3))[0])
        dist, preds = _csgraph_dijkstra(
            graph, directed=True, indices=src_flat, return_predecessors=True
        )
        self._dist = dist
        self._preds = preds
        self._src_flat = src_flat

    def _target_flat(self, position) -> int | None:
        p = np.asarray(position, dtype=float).reshape(3)
        if not self.world.contains_position(p):
            return None
        v = self.world.pos_to_voxel(p)
        if not self.world.in_bounds(v.reshape(1, 3))[0]:
            return None
        return int(self.world.flat_index(v.reshape(1, 3))[0])

    def distance_to(self, position) -> float:
        """Grid path length in meters to the voxel containing `position`
        (center-to-center, plus the endpoint stubs); +inf when unreachable."""
        path = self.path_to(position)
        return path.length

    def path_to(self, position) -> PathResult:
        p = np.asarray(position, dtype=float).reshape(3)
        if np.array_equal(p, self.source_position):
            return PathResult(found=True, points=p.reshape(1, 3).copy(), length=0.0)
        tf = self._target_flat(p)
        if tf is None:
            return PathResult(found=False, points=None, length=np.inf)
        tv = np.asarray(np.unravel_index(tf, self.world.shape))
        if np.array_equal(tv, self.source_voxel):
            pts = np.stack([self.source_position, p])
            return PathResult(
                found=True, points=pts, length=float(np.linalg.norm(p - self.source_position))
            )
        if self.world.known_state[tuple(tv)] != EMPTY:
            return PathResult(found=False, points=None, length=np.inf)
        if not np.isfinite(self._dist[tf]):
            return PathResult(found=False, points=None, length=np.inf)
        chain = [tf]
        cur = tf
        while cur != self._src_flat:
            cur = int(self._preds[cur])
            if cur < 0:
                return PathResult(found=False, points=None, length=np.inf)
            chain.append(cur)
        chain.reverse()
        vox = np.asarray(np.unravel_index(np.asarray(chain), self.world.shape)).T
        centers = self.world.voxel_centers(vox)
        pts = np.vstack([self.source_position.reshape(1, 3), centers, p.reshape(1, 3)])
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > 0.0
        pts = pts[keep]
        length = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
        return PathResult(found=True, points=pts, length=length)


def shortest_path(
    world: VoxelWorld, frm, to, clearance_voxels: int = 1
) -> PathResult:
    """Collision-free 26-connected grid path through known-empty voxels.

    Interior voxels keep a free gap of `clearance_voxels` to every known
    obstacle (occupied or unknown); the two endpoint voxels only need to be
    known-empty. Raises ValueError when an endpoint is not in free space;
    a disconnected pair returns an unreachable PathResult instead.
    """
    frm = np.asarray(frm, dtype=float).reshape(3)
    to = np.asarray(to, dtype=float).reshape(3)
    for name, p in (("start", frm), ("goal", to)):
        if not world.contains_position(p):
            raise ValueError(f"path {name} {p.tolist()} outside map extent")
        if world.known_state[tuple(world.pos_to_voxel(p))] != EMPTY:
            raise ValueError(f"path {name} {p.tolist()} is not in known-empty space")
    if np.array_equal(frm, to):
        return PathResult(found=True, points=frm.reshape(1, 3).copy(), length=0.0)
    vf = world.pos_to_voxel(frm)
    vt = world.pos_to_voxel(to)
    if np.array_equal(vf, vt):
        pts = np.stack([frm, to])
        return PathResult(found=True, points=pts, length=float(np.linalg.norm(to - frm)))

    rows, cols, ws = _grid_edges(world, clearance_voxels)
    trav = world.traversable_mask(clearance_voxels)
    extra_r: list[int] = []
    extra_c: list[int] = []
    extra_w: list[float] = []
    for v in (vf, vt):
        if not trav[tuple(v)]:
            er, ec, ew = _exempt_edges(world, v, trav)
            extra_r.extend(er)
            extra_c.extend(ec)
            extra_w.extend(ew)
    if not (trav[tuple(vf)] and trav[tuple(vt)]):
        off = vt - vf
        if np.all(np.abs(off) <= 1):
            u = int(world.flat_index(vf.reshape(1, 3))[0])
            v = int(world.flat_index(vt.reshape(1, 3))[0])
            w = world.resolution * float(np.linalg.norm(off))
            extra_r.extend((u, v))
            extra_c.extend((v, u))
            extra_w.extend((w, w))
    if extra_r:
        rows = np.concatenate([rows, np.asarray(extra_r, dtype=np.int64)])
        cols = np.concatenate([cols, np.asarray(extra_c, dtype=np.int64)])
        ws = np.concatenate([ws, np.asarray(extra_w)])
        n = int(np.prod(world.shape))
        graph = csr_matrix((ws, (rows, cols)), shape=(n, n))
    else:
        graph = _grid_graph(world, clearance_voxels)
    src = int(world.flat_index(vf.reshape(1, 3))[0])
    dst = int(world.flat_index(vt.reshape(1, 3))[0])
    dist, preds = _csgraph_dijkstra(
        graph, directed=True, indices=src, return_predecessors=True
    )
    if not np.isfinite(dist[dst]):
        return PathResult(found=False, points=None, length=np.inf)
    chain = [dst]
    cur = dst
    while cur != src:
        cur = int(preds[cur])
        if cur < 0:
            return PathResult(found=False, points=None, length=np.inf)
        chain.append(cur)
    chain.reverse()
    vox = np.asarray(np.unravel_index(np.asarray(chain), world.shape)).T
    centers = world.voxel_centers(vox)
    pts = np.vstack([frm.reshape(1, 3), centers, to.reshape(1, 3)])
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > 0.0
    pts = pts[keep]
    length = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
    return PathResult(found=True, points=pts, length=length)


# -- reachability ------------------------------------------------------------


def reachable_truth_mask(world: VoxelWorld, start_positions) -> np.ndarray:
    """Voxels a scan can ever cover: truth-empty voxels face-connected to any
    start position, plus the occupied voxels face-adjacent to that region."""
    starts = np.atleast_2d(np.asarray(start_positions, dtype=float))
    free = ~world.truth_occupied
    labels, _ = ndimage.label(free)
    ids = set()
    for p in starts:
        v = world.pos_to_voxel(p)
        if world.in_bounds(v.reshape(1, 3))[0]:
            lab = int(labels[tuple(v)])
            if lab > 0:
                ids.add(lab)
    if not ids:
        return np.zeros(world.shape, dtype=bool)
    region = np.isin(labels, sorted(ids))
    shell = ndimage.binary_dilation(region) & world.truth_occupied
    return region | shell
