"""Per-robot tour planning and trajectory sampling.

Travel cost between viewpoints is a time lower bound: the slowest of the
translation, yaw and pitch times (a summed form is available behind a
switch). Task order comes from an open asymmetric-TSP solve: exact dynamic
programming for small task counts, nearest-neighbour construction plus
2-opt and Or-opt local search otherwise. Ordered waypoint paths are smoothed
with a clamped cubic B-spline under a collision fallback, and execution
viewpoints are sampled along the result at fixed time steps up to a path
length budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .tasks import Task
from .world import EMPTY, Viewpoint, VoxelWorld, shortest_path, wrap_angle


@dataclass
class TravelCostParams:
    """Kinematic bounds used by the travel-time lower bound."""

    v_max: float = 2.0
    yaw_rate: float = math.pi
    pitch_rate: float = math.pi / 2.0
    mode: str = "max"  # "max" or "sum" of the three component times

    def __post_init__(self):
        if self.v_max <= 0 or self.yaw_rate <= 0 or self.pitch_rate <= 0:
            raise ValueError("rates must be > 0")
        if self.mode not in ("max", "sum"):
            raise ValueError("mode must be 'max' or 'sum'")


def combine_cost(
    path_length: float, d_yaw: float, d_pitch: float, params: TravelCostParams
) -> float:
    """Travel-time lower bound from a path length and wrapped angle deltas."""
    if not np.isfinite(path_length):
        return float("inf")
    t_lin = path_length / params.v_max
    t_yaw = abs(wrap_angle(d_yaw)) / params.yaw_rate
    t_pitch = abs(wrap_angle(d_pitch)) / params.pitch_rate
    if params.mode == "sum":
        return t_lin + t_yaw + t_pitch
    return max(t_lin, t_yaw, t_pitch)


def travel_cost(
    world: VoxelWorld,
    frm: Viewpoint,
    to: Viewpoint,
    params: TravelCostParams,
    clearance_voxels: int = 1,
) -> float:
    """Lower-bound travel time between two free-space viewpoints; +inf when
    no collision-free path exists (not an error)."""
    path = shortest_path(world, frm.position, to.position, clearance_voxels)
    return combine_cost(path.length, to.yaw - frm.yaw, to.pitch - frm.pitch, params)


@dataclass
class Tour:
    """Ordered visit plan for one robot."""

    robot_id: int
    tasks: list[Task]  # visit order
    leg_costs: list[float]
    total_cost: float
    dropped: list[str] = field(default_factory=list)  # source ids of unreachable tasks


# -- ATSP solvers -------------------------------------------------------------


def _tour_cost(matrix: np.ndarray, order: list[int]) -> float:
    cost = 0.0
    prev = 0
    for j in order:
        cost += matrix[prev, j]
        prev = j
    return float(cost)


def _held_karp(matrix: np.ndarray) -> tuple[list[int], float]:
    """Exact open tour from node 0 over nodes 1..n by subset DP."""
    n = matrix.shape[0] - 1
    if n == 0:
        return [], 0.0
    full = 1 << n
    dp = [[math.inf] * n for _ in range(full)]
    parent = [[-1] * n for _ in range(full)]
    for j in range(n):
        dp[1 << j][j] = float(matrix[0, j + 1])
    for mask in range(1, full):
        row = dp[mask]
        for j in range(n):
            if not (mask >> j) & 1:
                continue
            cur = row[j]
            if cur == math.inf:
                continue
            rest = (~mask) & (full - 1)
            m = rest
            while m:
                b = m & (-m)
                k = b.bit_length() - 1
                nm = mask | b
                cand = cur + float(matrix[j + 1, k + 1])
                if cand < dp[nm][k]:
                    dp[nm][k] = cand
                    parent[nm][k] = j
                m ^= b
    last_row = dp[full - 1]
    end = min(range(n), key=lambda j: last_row[j])
    best = last_row[end]
    order_rev = [end]
    mask = full - 1
    cur = end
    while parent[mask][cur] != -1:
        prev = parent[mask][cur]
        mask ^= 1 << cur
        cur = prev
        order_rev.append(cur)
    order_rev.reverse()
    return [j + 1 for j in order_rev], float(best)


def _nearest_neighbor(matrix: np.ndarray) -> list[int]:
    n = matrix.shape[0] - 1
    remaining = list(range(1, n + 1))
    order = []
    cur = 0
    while remaining:
        nxt = min(remaining, key=lambda j: (matrix[cur, j], j))
        order.append(nxt)
        remaining.remove(nxt)
        cur = nxt
    return order


def _improve(matrix: np.ndarray, order: list[int]) -> list[int]:
    """First-improvement 2-opt (with full reversed-arc recosting, so it stays
    valid on asymmetric matrices) plus Or-opt segment relocation, iterated
    until a full pass finds nothing better."""
    order = list(order)
    n = len(order)
    if n < 2:
        return order
    eps = 1e-12

    def arc(a: int, b: int) -> float:
        return float(matrix[a, b])

    improved = True
    while improved:
        improved = False
        # 2-opt: reverse order[i..j]
        for i in range(n - 1):
            before = 0 if i == 0 else order[i - 1]
            for j in range(i + 1, n):
                after = order[j + 1] if j + 1 < n else None
                old = arc(before, order[i])
                new = arc(before, order[j])
                for t in range(i, j):
                    old += arc(order[t], order[t + 1])
                    new += arc(order[t + 1], order[t])
                if after is not None:
                    old += arc(order[j], after)
                    new += arc(order[i], after)
                if new < old - eps:
                    order[i : j + 1] = reversed(order[i : j + 1])
                    improved = True
        # Or-opt: relocate segments of length 1..3
        for seg_len in (1, 2, 3):
            if seg_len >= n:
                continue
            i = 0
            while i + seg_len - 1 < n:
                seg = order[i : i + seg_len]
                rest = order[:i] + order[i + seg_len :]
                before = 0 if i == 0 else order[i - 1]
                after = order[i + seg_len] if i + seg_len < n else None
                removed = arc(before, seg[0])
                if after is not None:
                    removed += arc(seg[-1], after) - arc(before, after)
                moved = False
                for p in range(len(rest) + 1):
                    if p == i:
                        continue
                    pb = 0 if p == 0 else rest[p - 1]
                    pa = rest[p] if p < len(rest) else None
                    added = arc(pb, seg[0])
                    if pa is not None:
                        added += arc(seg[-1], pa) - arc(pb, pa)
                    if added < removed - eps:
                        order = rest[:p] + seg + rest[p:]
                        improved = True
                        moved = True
                        break
                if not moved:
                    i += 1
    return order


def solve_atsp(
    matrix: np.ndarray, method: str = "auto", exact_max: int = 10
) -> tuple[list[int], float]:
    """Open tour over an (n+1)x(n+1) cost matrix whose row/column 0 is the
    start. Returns (visit order as matrix indices 1..n, total cost).

    method "auto" solves exactly up to exact_max tasks and heuristically
    beyond; "exact" and "heuristic" force one path. Deterministic given the
    input order.
    """
    matrix = np.asarray(matrix, dtype=float)
    n = matrix.shape[0] - 1
    if n < 0 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("matrix must be square with the start at index 0")
    if n == 0:
        return [], 0.0
    if method not in ("auto", "exact", "heuristic"):
        raise ValueError("method must be auto, exact or heuristic")
    use_exact = method == "exact" or (method == "auto" and n <= exact_max)
    if use_exact:
        return _held_karp(matrix)
    order = _nearest_neighbor(matrix)
    order = _improve(matrix, order)
    return order, _tour_cost(matrix, order)


def plan_tour(
    robot_id: int,
    tasks: list[Task],
    cost_row_from_start: np.ndarray,
    cost_between: np.ndarray,
    method: str = "auto",
    exact_max: int = 10,
) -> Tour:
    """Order the reachable tasks for one robot; tasks with an infinite cost
    from the start are dropped and reported, not fatal.

    `cost_row_from_start` is (n,) start-to-task costs; `cost_between` is the
    (n, n) task-to-task cost matrix.
    """
    n = len(tasks)
    reachable = [i for i in range(n) if np.isfinite(cost_row_from_start[i])]
    dropped = [tasks[i].source for i in range(n) if i not in reachable]
    if not reachable:
        return Tour(robot_id=robot_id, tasks=[], leg_costs=[], total_cost=0.0, dropped=dropped)
    m = len(reachable)
    matrix = np.zeros((m + 1, m + 1))
    for a, i in enumerate(reachable):
        matrix[0, a + 1] = cost_row_from_start[i]
        for b, j in enumerate(reachable):
            matrix[a + 1, b + 1] = cost_between[i, j]
    order, total = solve_atsp(matrix, method=method, exact_max=exact_max)
    ordered = [tasks[reachable[j - 1]] for j in order]
    legs = []
    prev = 0
    for j in order:
        legs.append(float(matrix[prev, j]))
        prev = j
    return Tour(
        robot_id=robot_id,
        tasks=ordered,
        leg_costs=legs,
        total_cost=float(sum(legs)),
        dropped=dropped,
    )


# -- path smoothing ------------------------------------------------------------


def _densify_segment(a: np.ndarray, b: np.ndarray, step: float) -> np.ndarray:
    length = float(np.linalg.norm(b - a))
    count = max(2, int(math.ceil(length / step)) + 1)
    t = np.linspace(0.0, 1.0, count)
    return a[None, :] + t[:, None] * (b - a)[None, :]


def smooth_path(
    waypoints: np.ndarray, world: VoxelWorld, step: float = 0.1
) -> np.ndarray:
    """Dense polyline along a clamped uniform cubic B-spline whose control
    points are the waypoints. Every sample must land in a known-empty voxel;
    spans containing a violating sample fall back to densified samples of the
    original waypoint segment they correspond to. Fewer than four waypoints
    are returned as a densified polyline directly.
    """
    wp = np.asarray(waypoints, dtype=float).reshape(-1, 3)
    m = len(wp)
    if m == 0:
        raise ValueError("need at least one waypoint")
    if m == 1:
        return wp.copy()

    def sample_ok(p: np.ndarray) -> bool:
        if not world.contains_position(p):
            return False
        v = world.pos_to_voxel(p)
        return bool(world.known_state[tuple(v)] == EMPTY)

    n_seg = m - 1
    if m < 4:
        pieces = [_densify_segment(wp[i], wp[i + 1], step) for i in range(n_seg)]
    else:
        t_end = float(m - 3)
        knots = np.concatenate(
            [np.zeros(4), np.arange(1.0, t_end), np.full(4, t_end)]
        )
        spline = BSpline(knots, wp, 3)
        pieces = []
        for s in range(n_seg):
            u0 = t_end * s / n_seg
            u1 = t_end * (s + 1) / n_seg
            chord = float(np.linalg.norm(wp[s + 1] - wp[s]))
            count = max(3, int(math.ceil(chord / step)) + 1)
            u = np.linspace(u0, u1, count)
            pts = spline(u)
            if all(sample_ok(p) for p in pts):
                pieces.append(pts)
            else:
                pieces.append(_densify_segment(wp[s], wp[s + 1], step))
    out = [pieces[0]]
    for piece in pieces[1:]:
        head = piece[1:] if np.allclose(piece[0], out[-1][-1]) else piece
        out.append(head)
    path = np.vstack(out)
    keep = np.ones(len(path), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(path, axis=0), axis=1) > 0.0
    return path[keep]


# -- execution sampling ----------------------------------------------------------


@dataclass
class ExecutionLeg:
    """One smoothed leg of a tour with its endpoint orientations."""

    points: np.ndarray  # (k, 3) dense polyline
    yaw0: float
    pitch0: float
    yaw1: float
    pitch1: float


def sample_execution(
    legs: list[ExecutionLeg],
    params: TravelCostParams,
    dt: float = 0.4,
    l_exec: float = 6.0,
) -> list[Viewpoint]:
    """Viewpoints along the legs at constant speed v_max, one per dt seconds,
    truncated so the sampled arc length never exceeds l_exec. Yaw and pitch
    interpolate linearly (wrap-aware) across each leg by arc fraction."""
    if dt <= 0 or l_exec <= 0:
        raise ValueError("dt and l_exec must be > 0")
    if not legs:
        return []
    cums = []
    lengths = []
    for leg in legs:
        seg = np.linalg.norm(np.diff(leg.points, axis=0), axis=1)
        c = np.concatenate([[0.0], np.cumsum(seg)])
        cums.append(c)
        lengths.append(float(c[-1]))
    offsets = np.concatenate([[0.0], np.cumsum(lengths)])
    total = float(offsets[-1])
    limit = min(total, l_exec)

    step = params.v_max * dt
    out = []
    j = 0
    while True:
        s = j * step
        if s > limit:
            break
        li = int(np.searchsorted(offsets, s, side="right")) - 1
        li = min(li, len(legs) - 1)
        leg = legs[li]
        local = s - offsets[li]
        c = cums[li]
        if c[-1] == 0.0:
            pos = leg.points[0].copy()
            f = 1.0
        else:
            local = min(local, float(c[-1]))
            k = int(np.searchsorted(c, local, side="right")) - 1
            k = min(k, len(c) - 2)
            seg_len = float(c[k + 1] - c[k])
            t = 0.0 if seg_len == 0.0 else (local - float(c[k])) / seg_len
            pos = leg.points[k] + t * (leg.points[k + 1] - leg.points[k])
            f = local / float(c[-1])
        yaw = wrap_angle(leg.yaw0 + f * wrap_angle(leg.yaw1 - leg.yaw0))
        pitch = leg.pitch0 + f * wrap_angle(leg.pitch1 - leg.pitch0)
        out.append(Viewpoint(position=pos, yaw=float(yaw), pitch=float(pitch)))
        j += 1
    return out
