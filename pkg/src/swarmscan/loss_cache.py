"""Per-voxel loss cache over observed-occupied voxels.

Each sensed frame deposits a combined color/depth loss into the voxels it
hit; the cache keeps the running arithmetic mean per voxel and exposes the
result as a surface point set with per-point uncertainty. A distance-based
outlier filter prunes points far from a reference surface.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import MissingCacheEntryError
from .world import Viewpoint, VoxelWorld


@dataclass
class LossFrame:
    """Per-hit-ray loss tuples for one sensed frame."""

    positions: np.ndarray  # (n, 3) hit positions in meters
    color: np.ndarray  # (n,) color loss, >= 0
    depth: np.ndarray  # (n,) depth loss, >= 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.color = np.asarray(self.color, dtype=float).reshape(-1)
        self.depth = np.asarray(self.depth, dtype=float).reshape(-1)
        if not (len(self.positions) == len(self.color) == len(self.depth)):
            raise ValueError("loss frame arrays must have equal length")


@dataclass
class PruneResult:
    kept: np.ndarray  # indices of retained points, ascending
    empty_reference: bool  # True when the reference set was empty


class UncertaintyCache:
    """Hash-addressed occupied voxels with running mean projected loss.

    Entries are keyed by voxel index; the stored value is (loss sum, count)
    so the mean is always a single division away from the full deposit log.
    """

    def __init__(self, resolution: float, origin, shape, keep_log: bool = False):
        self.resolution = float(resolution)
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.shape = tuple(int(s) for s in shape)
        self._sum: dict[int, float] = {}
        self._count: dict[int, int] = {}
        self.keep_log = keep_log
        self._log: dict[int, list[float]] = {}

    @classmethod
    def for_world(cls, world: VoxelWorld, keep_log: bool = False) -> "UncertaintyCache":
        return cls(world.resolution, world.origin, world.shape, keep_log=keep_log)

    def __len__(self) -> int:
        return len(self._sum)

    # -- keys ---------------------------------------------------------------

    def _flat(self, positions: np.ndarray) -> np.ndarray:
        q = (np.asarray(positions, dtype=float) - self.origin) / self.resolution
        v = np.floor(q).astype(np.int64)
        v[(q == np.floor(q)) & (v > 0)] -= 1
        return np.ravel_multi_index((v[:, 0], v[:, 1], v[:, 2]), self.shape)

    def flat_of_voxel(self, voxel) -> int:
        v = np.asarray(voxel, dtype=np.int64).reshape(3)
        return int(np.ravel_multi_index((v[0], v[1], v[2]), self.shape))

    def _unflat(self, flats: np.ndarray) -> np.ndarray:
        return np.asarray(np.unravel_index(np.asarray(flats), self.shape)).T

    # -- deposits -------------------------------------------------------------

    def project_losses(self, frame: LossFrame, lambda_d: float = 0.5) -> None:
        """Deposit L = color + lambda_d * depth for every hit; running means
        per voxel update as (old_sum + new_sum) / (old_count + new_count)."""
        if lambda_d < 0:
            raise ValueError("lambda_d must be >= 0")
        if len(frame.positions) == 0:
            return
        if (frame.color < 0).any() or (frame.depth < 0).any():
            raise ValueError("losses must be >= 0")
        if not (np.isfinite(frame.color).all() and np.isfinite(frame.depth).all()):
            raise ValueError("losses must be finite")
        proj = frame.color + lambda_d * frame.depth
        flats = self._flat(frame.positions)
        order = np.argsort(flats, kind="stable")
        flats = flats[order]
        proj = proj[order]
        bounds = np.flatnonzero(np.diff(flats)) + 1
        groups = np.split(proj, bounds)
        keys = flats[np.concatenate([[0], bounds])] if len(bounds) else flats[:1]
        for key, grp in zip(keys, groups):
            k = int(key)
            self._sum[k] = self._sum.get(k, 0.0) + float(grp.sum())
            self._count[k] = self._count.get(k, 0) + len(grp)
            if self.keep_log:
                self._log.setdefault(k, []).extend(float(x) for x in grp)

    # -- queries ----------------------------------------------------------------

    def mean_loss(self, voxel) -> float:
        k = self.flat_of_voxel(voxel)
        if k not in self._sum:
            raise MissingCacheEntryError(f"voxel {tuple(int(v) for v in np.asarray(voxel))} not in cache")
        return self._sum[k] / self._count[k]

    def count(self, voxel) -> int:
        return self._count.get(self.flat_of_voxel(voxel), 0)

    def contains_voxel(self, voxel) -> bool:
        return self.flat_of_voxel(voxel) in self._sum

    def sorted_flats(self) -> np.ndarray:
        return np.asarray(sorted(self._sum), dtype=np.int64)

    def surface_points(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(positions, uncertainties, voxels) at voxel centers, one per entry,
        ordered by voxel index."""
        flats = self.sorted_flats()
        if len(flats) == 0:
            return (
                np.zeros((0, 3)),
                np.zeros(0),
                np.zeros((0, 3), dtype=np.int64),
            )
        vox = self._unflat(flats)
        pos = self.origin + (vox + 0.5) * self.resolution
        unc = np.asarray([self._sum[int(f)] / self._count[int(f)] for f in flats])
        return pos, unc, vox

    def deposit_log(self, voxel) -> list[float]:
        if not self.keep_log:
            raise RuntimeError("cache was built without keep_log")
        return list(self._log.get(self.flat_of_voxel(voxel), []))

    def remove_flats(self, flats) -> None:
        for f in flats:
            self._sum.pop(int(f), None)
            self._count.pop(int(f), None)
            self._log.pop(int(f), None)

    def snapshot(self) -> "UncertaintyCache":
        return copy.deepcopy(self)

    def dump_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pos, unc, vox = self.surface_points()
        flats = self.sorted_flats()
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["voxel_ix", "x", "y", "z", "mean_loss", "count"])
            for f, p, u in zip(flats, pos, unc):
                w.writerow(
                    [int(f), repr(float(p[0])), repr(float(p[1])), repr(float(p[2])),
                     repr(float(u)), self._count[int(f)]]
                )


def synth_loss(
    world: VoxelWorld,
    pose: Viewpoint,
    voxel,
    count: int,
    *,
    color_base: float = 1.0,
    depth_base: float = 1.0,
    decay: float = 0.8,
    slope: float = 0.5,
    complexity_gain: float = 1.0,
) -> tuple[float, float]:
    """Deterministic stand-in for render-vs-image residuals on one hit voxel.

    base(instance complexity) * decay**count * (1 + slope * incidence angle),
    strictly positive and strictly decreasing in the observation count.
    Incidence is approximated as the angle between the viewing ray and the
    grid axis it is most aligned with.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if not (0.0 < decay < 1.0):
        raise ValueError("decay must be in (0, 1)")
    voxel = np.asarray(voxel, dtype=np.int64).reshape(3)
    center = world.voxel_center(voxel)
    d = center - pose.position
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        angle = 0.0
    else:
        cos_axis = float(np.max(np.abs(d)) / dist)
        angle = math.acos(min(1.0, cos_axis))
    inst = int(world.truth_instance[tuple(voxel)])
    if inst >= 0:
        complexity = float(np.clip(1.0 - world.instances[inst].similarity.max(), 0.0, 1.0))
    else:
        complexity = 0.0
    factor = (decay ** count) * (1.0 + slope * angle)
    scale = 1.0 + complexity_gain * complexity
    return color_base * scale * factor, depth_base * scale * factor


def prune_outliers(points, reference, threshold: float = 0.05) -> PruneResult:
    """Keep exactly the points whose nearest reference point is within
    `threshold` meters. An empty reference prunes everything and sets a flag."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    ref = np.asarray(reference, dtype=float).reshape(-1, 3)
    if len(ref) == 0:
        return PruneResult(kept=np.zeros(0, dtype=np.int64), empty_reference=True)
    if len(pts) == 0:
        return PruneResult(kept=np.zeros(0, dtype=np.int64), empty_reference=False)
    dists, _ = cKDTree(ref).query(pts)
    kept = np.flatnonzero(dists <= threshold).astype(np.int64)
    return PruneResult(kept=kept, empty_reference=False)
