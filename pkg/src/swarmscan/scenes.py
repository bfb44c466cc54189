"""Benchmark scene generators.

Scenes are emitted as plain dicts in the scene-v1 format (docs/formats.md):
occupancy as per-column z runs plus an instance table with similarity
vectors. Generation is deterministic given the seed, so shipped fixture
files can be reproduced bit for bit.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

PRESETS = ("rooms3", "corridor", "cluttered")

_VOCAB_SIZE = 200


def _encode_runs(occ: np.ndarray) -> list[list[int]]:
    """Run-length encode an occupancy grid per z column."""
    runs = []
    nx, ny, nz = occ.shape
    for x in range(nx):
        for y in range(ny):
            col = occ[x, y]
            z = 0
            while z < nz:
                if col[z]:
                    z0 = z
                    while z + 1 < nz and col[z + 1]:
                        z += 1
                    runs.append([x, y, z0, z])
                z += 1
    return runs


def _similarity(
    rng: np.random.Generator,
    label: int,
    target_objectness: float,
    size: int = _VOCAB_SIZE,
    lambda_e: float = 50.0,
) -> list[float]:
    """Similarity vector whose softmax(lambda_e * .) top probability equals
    `target_objectness` at index `label`."""
    sims = 0.40 + rng.uniform(-0.005, 0.005, size)
    rest = np.delete(sims, label)
    p = target_objectness
    s_top = (logsumexp(lambda_e * rest) + math.log(p / (1.0 - p))) / lambda_e
    sims[label] = s_top
    return [float(v) for v in sims]


def _shell(occ: np.ndarray) -> None:
    occ[0, :, :] = True
    occ[-1, :, :] = True
    occ[:, 0, :] = True
    occ[:, -1, :] = True
    occ[:, :, 0] = True
    occ[:, :, -1] = True


def _box(occ: np.ndarray, x0, x1, y0, y1, z0, z1) -> list[list[int]]:
    """Fill a voxel box (inclusive bounds) and return its voxel list."""
    occ[x0 : x1 + 1, y0 : y1 + 1, z0 : z1 + 1] = True
    return [
        [int(x), int(y), int(z)]
        for x in range(x0, x1 + 1)
        for y in range(y0, y1 + 1)
        for z in range(z0, z1 + 1)
    ]


def rooms3(seed: int = 7) -> dict:
    """Three rooms in a row joined by doors; two mid-confidence objects worth
    rescanning and one high-confidence object that gates out."""
    rng = np.random.default_rng(seed)
    res = 0.1
    shape = (60, 42, 22)  # 6.0 x 4.2 x 2.2 m
    occ = np.zeros(shape, dtype=bool)
    _shell(occ)
    # dividing walls with door openings
    occ[20, :, :] = True
    occ[20, 16:26, 1:19] = False
    occ[40, :, :] = True
    occ[40, 10:20, 1:19] = False

    crate = _box(occ, 8, 13, 6, 11, 1, 8)
    pillar = _box(occ, 29, 31, 20, 22, 1, 10)
    shelf = _box(occ, 46, 51, 30, 35, 1, 12)

    instances = [
        {"id": 1, "name": "crate", "voxels": crate, "similarity": _similarity(rng, 21, 0.40)},
        {"id": 2, "name": "shelf", "voxels": shelf, "similarity": _similarity(rng, 55, 0.35)},
        {"id": 3, "name": "pillar", "voxels": pillar, "similarity": _similarity(rng, 90, 0.75)},
    ]
    return {
        "format": "scene-v1",
        "name": "rooms3",
        "resolution": res,
        "origin": [0.0, 0.0, 0.0],
        "extent": [6.0, 4.2, 2.2],
        "occupied_runs": _encode_runs(occ),
        "instances": instances,
    }


def corridor(seed: int = 7) -> dict:
    """An L-shaped corridor with a single mid-confidence object at the bend."""
    rng = np.random.default_rng(seed)
    res = 0.1
    shape = (60, 40, 20)  # 6.0 x 4.0 x 2.0 m
    occ = np.ones(shape, dtype=bool)
    occ[1:59, 1:13, 1:19] = False  # leg along x
    occ[45:59, 13:39, 1:19] = False  # leg along y
    crate = _box(occ, 50, 53, 30, 33, 1, 6)
    instances = [
        {"id": 1, "name": "crate", "voxels": crate, "similarity": _similarity(rng, 21, 0.40)},
    ]
    return {
        "format": "scene-v1",
        "name": "corridor",
        "resolution": res,
        "origin": [0.0, 0.0, 0.0],
        "extent": [6.0, 4.0, 2.0],
        "occupied_runs": _encode_runs(occ),
        "instances": instances,
    }


def cluttered(seed: int = 7) -> dict:
    """A single room with one mid-confidence object plus isolated floating
    noise voxels carrying low-confidence labels: each noise voxel is its own
    tiny instance, far enough from the rest to spawn its own point of
    interest in ungated surface planning."""
    rng = np.random.default_rng(seed)
    res = 0.1
    shape = (40, 30, 22)  # 4.0 x 3.0 x 2.2 m
    occ = np.zeros(shape, dtype=bool)
    _shell(occ)
    crate = _box(occ, 12, 17, 8, 13, 1, 8)

    instances = [
        {"id": 1, "name": "crate", "voxels": crate, "similarity": _similarity(rng, 21, 0.40)},
    ]
    # scattered noise voxels, pairwise >= 1.25 m apart and clear of the crate
    placed: list[np.ndarray] = []
    next_id = 2
    attempts = 0
    while len(placed) < 12 and attempts < 10000:
        attempts += 1
        v = np.asarray(
            [
                rng.integers(4, 36),
                rng.integers(4, 26),
                rng.integers(3, 19),
            ]
        )
        if occ[v[0], v[1], v[2]]:
            continue
        pos = (v + 0.5) * res
        if any(np.linalg.norm(pos - q) < 1.25 for q in placed):
            continue
        crate_center = np.asarray([15.0, 11.0, 4.5]) * res
        if np.linalg.norm(pos - crate_center) < 1.4:
            continue
        occ[v[0], v[1], v[2]] = True
        placed.append(pos)
        instances.append(
            {
                "id": next_id,
                "name": f"speck{next_id}",
                "voxels": [[int(v[0]), int(v[1]), int(v[2])]],
                "similarity": _similarity(rng, 100 + next_id, 0.08),
            }
        )
        next_id += 1
    return {
        "format": "scene-v1",
        "name": "cluttered",
        "resolution": res,
        "origin": [0.0, 0.0, 0.0],
        "extent": [4.0, 3.0, 2.2],
        "occupied_runs": _encode_runs(occ),
        "instances": instances,
    }


def build(preset: str, seed: int = 7) -> dict:
    if preset == "rooms3":
        return rooms3(seed)
    if preset == "corridor":
        return corridor(seed)
    if preset == "cluttered":
        return cluttered(seed)
    raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")


def write_scene(data: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path
