"""Robot mode assignment and balanced task clustering.

Robots are split between exploration and reconstruction in proportion to the
global task mix, with each robot's own mode chosen from the task counts in
its local neighbourhood. Tasks within one mode are then partitioned by an
iterative clustering whose objective charges travel (task-to-centroid and
robot-to-centroid distance) plus two balance terms: squared deviation of the
cluster size from the mean size, and absolute deviation of the cluster's
internal distance sum from the mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tasks import EXPLORATION, RECONSTRUCTION, Task
from .world import Viewpoint

IDLE = "idle"
MIXED = "mixed"


@dataclass
class RobotState:
    """Planner-side state of one robot."""

    id: int
    pose: Viewpoint
    mode: str = IDLE
    assigned: list[Task] = field(default_factory=list)
    executed: list[Viewpoint] = field(default_factory=list)
    path_length: float = 0.0


def mode_counts(n_exp: int, n_rec: int, n_robots: int) -> tuple[int, int]:
    """(exploration robots, reconstruction robots) from global task counts.

    The share is round(n_robots * n_exp / total), clamped so any mode with at
    least one task keeps at least one robot. A single robot facing both modes
    goes to the larger task pool (exploration on ties). Empty modes release
    all robots to the other; with no tasks at all both counts are zero.
    """
    if n_robots < 1:
        raise ValueError("n_robots must be >= 1")
    if n_exp < 0 or n_rec < 0:
        raise ValueError("task counts must be >= 0")
    if n_exp == 0 and n_rec == 0:
        return 0, 0
    if n_exp == 0:
        return 0, n_robots
    if n_rec == 0:
        return n_robots, 0
    r_exp = round(n_robots * n_exp / (n_exp + n_rec))
    r_exp = max(r_exp, 1)
    r_exp = min(r_exp, n_robots - 1)
    if n_robots == 1:
        r_exp = 1 if n_exp >= n_rec else 0
    return r_exp, n_robots - r_exp


def assign_modes(
    robots: list[RobotState],
    tasks: list[Task],
    d_local: float,
    counts: tuple[int, int],
) -> dict[int, str]:
    """Mode per robot id. Each robot scores exploration-minus-reconstruction
    task counts within Euclidean distance d_local; higher scores claim the
    exploration slots first (ties broken by robot id)."""
    if d_local <= 0:
        raise ValueError("d_local must be > 0")
    r_exp, r_rec = counts
    if r_exp + r_rec == 0:
        return {r.id: IDLE for r in robots}
    if r_exp + r_rec != len(robots):
        raise ValueError("counts must sum to the number of robots")
    exp_pos = np.asarray([t.position for t in tasks if t.kind == EXPLORATION])
    rec_pos = np.asarray([t.position for t in tasks if t.kind == RECONSTRUCTION])
    scores = {}
    for r in robots:
        ne = (
            int((np.linalg.norm(exp_pos - r.pose.position, axis=1) <= d_local).sum())
            if len(exp_pos)
            else 0
        )
        nr = (
            int((np.linalg.norm(rec_pos - r.pose.position, axis=1) <= d_local).sum())
            if len(rec_pos)
            else 0
        )
        scores[r.id] = ne - nr
    ranked = sorted(robots, key=lambda r: (-scores[r.id], r.id))
    out = {}
    for i, r in enumerate(ranked):
        out[r.id] = EXPLORATION if i < r_exp else RECONSTRUCTION
    return out


@dataclass
class ClusterAssignment:
    """Partition of one mode's tasks across its robots."""

    by_robot: dict[int, list[Task]]
    centroids: dict[int, np.ndarray]
    objective: float
    history: list[float]  # best objective after each iteration, non-increasing
    d_sums: dict[int, float]
    counts: dict[int, int]


def _objective(
    robot_pos: np.ndarray,
    groups: list[list[int]],
    pts: np.ndarray,
    n_bar: float,
    w_move: float,
    w_count: float,
    w_spread: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Clustering objective for a concrete partition; centroids are the
    member means (robot position for empty clusters)."""
    k = len(groups)
    cents = np.empty((k, 3))
    d_sums = np.zeros(k)
    for r, g in enumerate(groups):
        if g:
            cents[r] = pts[g].mean(axis=0)
            d_sums[r] = float(np.linalg.norm(pts[g] - cents[r], axis=1).sum())
        else:
            cents[r] = robot_pos[r]
    d_bar = d_sums.sum() / k
    total = 0.0
    for r, g in enumerate(groups):
        move = d_sums[r] + float(np.linalg.norm(robot_pos[r] - cents[r]))
        total += (
            w_move * move
            + w_count * (len(g) - n_bar) ** 2
            + w_spread * abs(d_sums[r] - d_bar)
        )
    return total, cents, d_sums


def cluster_tasks(
    robots: list[RobotState],
    tasks: list[Task],
    w_move: float = 1.0,
    w_count: float = 1.0,
    w_spread: float = 1.0,
    max_iters: int = 100,
    tol: float = 1e-9,
) -> ClusterAssignment:
    """Partition tasks among robots by iterative marginal-cost assignment.

    Centroids start at the robot positions. Each pass assigns tasks in input
    order to the cluster with the smallest marginal objective increase,
    evaluated against the current centroids and the running size/distance
    sums (an empty cluster's hypothetical centroid is the candidate task
    itself, so only the robot-to-centroid move is charged). Centroids are
    then recomputed as member means. The best-objective iterate over all
    passes is kept; iteration stops when the improvement drops below tol.
    Fewer tasks than robots is fine: the surplus clusters stay empty.
    """
    if not robots:
        raise ValueError("need at least one robot")
    order = sorted(range(len(robots)), key=lambda i: robots[i].id)
    robot_ids = [robots[i].id for i in order]
    robot_pos = np.stack([robots[i].pose.position for i in order])
    k = len(robots)
    pts = (
        np.stack([t.position for t in tasks]) if tasks else np.zeros((0, 3))
    )
    n = len(tasks)
    n_bar = n / k

    cents = robot_pos.copy()
    best: tuple[float, list[list[int]], np.ndarray, np.ndarray] | None = None
    history: list[float] = []
    prev_obj = None
    for _ in range(max_iters):
        groups: list[list[int]] = [[] for _ in range(k)]
        counts = np.zeros(k, dtype=int)
        d_sums = np.zeros(k)
        for ti in range(n):
            p = pts[ti]
            d_bar = d_sums.sum() / k
            best_r = 0
            best_delta = np.inf
            for r in range(k):
                if counts[r] == 0:
                    g_move = float(np.linalg.norm(robot_pos[r] - p))
                    g_d = 0.0
                else:
                    g_move = float(np.linalg.norm(cents[r] - p))
                    g_d = g_move
                delta = (
                    w_move * g_move
                    + w_count * ((counts[r] + 1 - n_bar) ** 2 - (counts[r] - n_bar) ** 2)
                    + w_spread * (abs(d_sums[r] + g_d - d_bar) - abs(d_sums[r] - d_bar))
                )
                if delta < best_delta:
                    best_delta = delta
                    best_r = r
            groups[best_r].append(ti)
            counts[best_r] += 1
            if counts[best_r] > 1:
                d_sums[best_r] += float(np.linalg.norm(cents[best_r] - p))
        obj, new_cents, new_dsums = _objective(
            robot_pos, groups, pts, n_bar, w_move, w_count, w_spread
        )
        if best is None or obj < best[0]:
            best = (obj, groups, new_cents, new_dsums)
        history.append(best[0])
        if prev_obj is not None and prev_obj - obj < tol:
            break
        prev_obj = obj
        cents = new_cents

    assert best is not None
    obj, groups, cents, d_sums = best

    # Greedy nearest matching of clusters to robots (ties by robot id, then
    # by cluster slot). Usually the identity since clusters grow around their
    # seed robot.
    pairs = []
    for ri in range(k):
        for ci in range(k):
            pairs.append((float(np.linalg.norm(robot_pos[ri] - cents[ci])), robot_ids[ri], ri, ci))
    pairs.sort(key=lambda x: (x[0], x[1], x[3]))
    robot_to_cluster: dict[int, int] = {}
    used = set()
    for _, _, ri, ci in pairs:
        if ri in robot_to_cluster or ci in used:
            continue
        robot_to_cluster[ri] = ci
        used.add(ci)
        if len(robot_to_cluster) == k:
            break

    matched_groups = [groups[robot_to_cluster[ri]] for ri in range(k)]
    final_obj, final_cents, final_dsums = _objective(
        robot_pos, matched_groups, pts, n_bar, w_move, w_count, w_spread
    )
    return ClusterAssignment(
        by_robot={robot_ids[ri]: [tasks[i] for i in matched_groups[ri]] for ri in range(k)},
        centroids={robot_ids[ri]: final_cents[ri].copy() for ri in range(k)},
        objective=final_obj,
        history=history,
        d_sums={robot_ids[ri]: float(final_dsums[ri]) for ri in range(k)},
        counts={robot_ids[ri]: len(matched_groups[ri]) for ri in range(k)},
    )
