"""Segmented instance registry and vocabulary scoring.

Each instance accumulates the surface voxels observed for it, carries the
scene-supplied similarity vector, and gets a softmax class distribution whose
top probability acts as the objectness score. Mid-confidence instances are
the ones worth further scanning: very low scores look like label noise and
very high scores indicate an object that is already well covered.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MissingCacheEntryError, UnknownInstanceError
from .loss_cache import UncertaintyCache
from .world import ObservationFrame, VoxelWorld


def score_instance(
    similarities, lambda_e: float = 50.0
) -> tuple[np.ndarray, int, float]:
    """(probabilities, label, objectness) from a vocabulary similarity vector.

    probabilities = softmax(lambda_e * similarities) with max-subtraction for
    overflow safety; the label is the argmax (lowest index wins ties) and the
    objectness is the top probability.
    """
    if lambda_e <= 0:
        raise ValueError("lambda_e must be > 0")
    sims = np.asarray(similarities, dtype=float).reshape(-1)
    if len(sims) < 2:
        raise ValueError("similarity vector must have length >= 2")
    if not np.isfinite(sims).all():
        raise ValueError("similarity vector must be finite")
    scaled = lambda_e * sims
    scaled = scaled - scaled.max()
    ex = np.exp(scaled)
    probs = ex / ex.sum()
    label = int(np.argmax(probs))
    return probs, label, float(probs[label])


@dataclass
class InstanceRecord:
    """One segmented object with its observed surface voxels."""

    id: int
    name: str
    similarity: np.ndarray
    probabilities: np.ndarray
    label: int
    objectness: float
    _voxels: set[tuple[int, int, int]] = field(default_factory=set)

    def point_count(self) -> int:
        return len(self._voxels)

    def sorted_voxels(self) -> np.ndarray:
        """Observed surface voxels in ascending voxel-index order."""
        if not self._voxels:
            return np.zeros((0, 3), dtype=np.int64)
        return np.asarray(sorted(self._voxels), dtype=np.int64)


@dataclass
class ReconInstance:
    """An instance gated for reconstruction, with per-point uncertainty."""

    id: int
    label: int
    objectness: float
    points: np.ndarray  # (k, 3) positions in meters
    uncertainties: np.ndarray  # (k,) mean losses aligned with points


class InstanceRegistry:
    """Single-writer registry of instance records keyed by scene instance id."""

    def __init__(self, world: VoxelWorld, lambda_e: float = 50.0):
        self.world = world
        self.lambda_e = float(lambda_e)
        self.records: dict[int, InstanceRecord] = {}

    def __len__(self) -> int:
        return len(self.records)

    def sorted_records(self) -> list[InstanceRecord]:
        return [self.records[i] for i in sorted(self.records)]

    def register_observation(self, frame: ObservationFrame) -> None:
        """Fold a sensed frame into the registry: hit voxels join the record
        of their instance (deduplicated); first sightings create records."""
        ids = frame.hit_instances[frame.hit_mask]
        vox = frame.hit_voxels[frame.hit_mask]
        for iid in np.unique(ids):
            iid = int(iid)
            if iid < 0:
                continue
            if iid not in self.world.instances:
                raise UnknownInstanceError(f"instance id {iid} not in scene table")
            if iid not in self.records:
                scene_inst = self.world.instances[iid]
                probs, label, objectness = score_instance(
                    scene_inst.similarity, self.lambda_e
                )
                self.records[iid] = InstanceRecord(
                    id=iid,
                    name=scene_inst.name,
                    similarity=scene_inst.similarity,
                    probabilities=probs,
                    label=label,
                    objectness=objectness,
                )
            rec = self.records[iid]
            for v in vox[ids == iid]:
                rec._voxels.add((int(v[0]), int(v[1]), int(v[2])))

    def remove_voxels(self, voxels) -> None:
        """Drop pruned surface voxels from every record."""
        drop = {tuple(int(x) for x in v) for v in np.atleast_2d(voxels)}
        for rec in self.records.values():
            rec._voxels -= drop

    def dump_json(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = [
            {
                "id": rec.id,
                "label": rec.label,
                "objectness": rec.objectness,
                "points": rec.point_count(),
            }
            for rec in self.sorted_records()
        ]
        path.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")


def gate_reconstruction(instances, c_min: float = 0.2, c_max: float = 0.6) -> list:
    """Retain exactly the instances with c_min < objectness < c_max, strict on
    both sides, input order preserved."""
    if not (0.0 <= c_min < c_max <= 1.0):
        raise ValueError("need 0 <= c_min < c_max <= 1")
    return [inst for inst in instances if c_min < inst.objectness < c_max]


def instance_uncertainty(record: InstanceRecord, cache: UncertaintyCache) -> np.ndarray:
    """Mean cache losses for the record's voxels, in sorted voxel order."""
    vox = record.sorted_voxels()
    out = np.zeros(len(vox))
    for i, v in enumerate(vox):
        if not cache.contains_voxel(v):
            raise MissingCacheEntryError(
                f"instance {record.id} voxel {tuple(int(x) for x in v)} missing from cache"
            )
        out[i] = cache.mean_loss(v)
    return out


def recon_candidates(
    registry: InstanceRegistry,
    cache: UncertaintyCache,
    c_min: float = 0.2,
    c_max: float = 0.6,
) -> list[ReconInstance]:
    """Gate the registry and join per-point uncertainties from the cache."""
    out = []
    for rec in gate_reconstruction(registry.sorted_records(), c_min, c_max):
        vox = rec.sorted_voxels()
        unc = instance_uncertainty(rec, cache)
        pts = registry.world.voxel_centers(vox) if len(vox) else np.zeros((0, 3))
        out.append(
            ReconInstance(
                id=rec.id,
                label=rec.label,
                objectness=rec.objectness,
                points=pts,
                uncertainties=unc,
            )
        )
    return out
