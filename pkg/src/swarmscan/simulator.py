"""Closed-loop simulation: sense, cache, segment, plan, execute, repeat.

Each cycle regenerates tasks from the current map, splits robots between
exploration and reconstruction, clusters tasks within each mode, orders each
robot's cluster into a tour, smooths the tour path and samples execution
viewpoints, then plays the samples back round-robin (one viewpoint per robot
per tick) through the sensor until they are exhausted or the view budget
runs out. Runs are fully deterministic given the config, so metric artifacts
are byte-identical across reruns; wall-clock stage timings go to a separate
file that is exempt from that guarantee.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocation import (
    IDLE,
    MIXED,
    RobotState,
    assign_modes,
    cluster_tasks,
    mode_counts,
)
from .config import RunConfig, echo_config
from .errors import ConfigError
from .instances import InstanceRegistry, recon_candidates
from .loss_cache import LossFrame, UncertaintyCache, prune_outliers, synth_loss
from .tasks import (
    EXPLORATION,
    RECONSTRUCTION,
    Task,
    camera_from_config,
    gen_exploration_tasks,
    gen_reconstruction_tasks,
    gen_surface_tasks,
)
from .tours import (
    ExecutionLeg,
    Tour,
    TravelCostParams,
    combine_cost,
    plan_tour,
    sample_execution,
    smooth_path,
)
from .world import (
    OCCUPIED,
    UNKNOWN,
    PathField,
    Viewpoint,
    VoxelWorld,
    extract_frontiers,
    load_scene,
    reachable_truth_mask,
    sense,
)

TERMINATION_BUDGET = "budget_exhausted"
TERMINATION_NO_TASKS = "no_tasks"
TERMINATION_STALLED = "stalled"
TERMINATION_MAX_CYCLES = "max_cycles"


@dataclass
class VariantFlags:
    """What a comparison variant enables."""

    rec_tasks: str  # "none" | "semantic" | "surface"
    mode_assignment: bool
    spread_balance: bool  # keep the distance-spread term in clustering


VARIANT_FLAGS = {
    "full": VariantFlags("semantic", True, True),
    "exploration_only": VariantFlags("none", True, True),
    "surface_uncertainty_rec": VariantFlags("surface", True, True),
    "semantic_rec": VariantFlags("semantic", False, False),
    "no_mode_assignment": VariantFlags("semantic", False, True),
    "plain_kmeans": VariantFlags("semantic", True, False),
}


@dataclass
class CycleRecord:
    cycle: int
    views_used: int
    coverage: float
    residual_uncertainty: float
    n_exploration_tasks: int
    n_reconstruction_tasks: int
    path_lengths: dict[int, float]


@dataclass
class StageTimes:
    cycle: int
    t_task: float
    t_colla: float
    t_tour: float

    @property
    def t_plan(self) -> float:
        return self.t_task + self.t_colla + self.t_tour


@dataclass
class CycleContext:
    """Planning-time snapshot handed to an optional per-cycle hook."""

    cycle: int
    world: VoxelWorld
    cache: UncertaintyCache
    registry: InstanceRegistry
    exploration_tasks: list[Task]
    reconstruction_tasks: list[Task]


@dataclass
class RunResult:
    config: RunConfig
    records: list[CycleRecord]
    timings: list[StageTimes]
    summary: dict
    termination: str
    world: VoxelWorld
    cache: UncertaintyCache
    registry: InstanceRegistry
    robots: list[RobotState]
    out_dir: Path | None = None


def _validate_run_inputs(cfg: RunConfig) -> None:
    if cfg.scene is None:
        raise ConfigError("scene: a scene file is required to run")
    if len(cfg.robots) < 1:
        raise ConfigError("robots: at least one robot is required")


def _residual_uncertainty(world: VoxelWorld, cache: UncertaintyCache) -> float:
    """Mean cached loss over voxels that belong to a scene instance."""
    pos, unc, vox = cache.surface_points()
    if len(vox) == 0:
        return float("nan")
    inst = world.truth_instance[vox[:, 0], vox[:, 1], vox[:, 2]]
    on_instance = inst >= 0
    if not on_instance.any():
        return float("nan")
    return float(unc[on_instance].mean())


def _coverage(world: VoxelWorld, reach: np.ndarray) -> float:
    denom = int(reach.sum())
    if denom == 0:
        return 0.0
    return float(((world.known_state != UNKNOWN) & reach).sum() / denom)


def _simplify_collinear(points: np.ndarray) -> np.ndarray:
    """Drop interior points whose incoming and outgoing directions match."""
    if len(points) <= 2:
        return points
    keep = [0]
    for i in range(1, len(points) - 1):
        a = points[i] - points[keep[-1]]
        b = points[i + 1] - points[i]
        na = np.linalg.norm(a)
        nb = np.linalg.norm(b)
        if na == 0.0:
            continue
        if nb == 0.0 or abs(float(np.dot(a, b)) - na * nb) > 1e-12:
            keep.append(i)
    keep.append(len(points) - 1)
    return points[keep]


def _fmt(x: float) -> str:
    return repr(float(x))


class _Sim:
    def __init__(self, cfg: RunConfig, out_dir: Path | None, cycle_hook=None):
        _validate_run_inputs(cfg)
        self.cfg = cfg
        self.flags = VARIANT_FLAGS[cfg.variant]
        self.out_dir = out_dir
        self.cycle_hook = cycle_hook
        self.world = load_scene(cfg.scene)
        self.camera = camera_from_config(cfg)
        self.cache = UncertaintyCache.for_world(self.world)
        self.registry = InstanceRegistry(self.world, cfg.lambda_e)
        self.params = TravelCostParams(
            v_max=cfg.v_max_mps,
            yaw_rate=cfg.yaw_rate_rps,
            pitch_rate=cfg.pitch_rate_rps,
            mode=cfg.travel_cost_mode,
        )
        self.robots = [
            RobotState(id=r.id, pose=Viewpoint(np.asarray(r.position), r.yaw, r.pitch))
            for r in sorted(cfg.robots, key=lambda r: r.id)
        ]
        for r in self.robots:
            if not self.world.contains_position(r.pose.position):
                raise ConfigError(f"robots: robot {r.id} starts outside the scene")
            v = self.world.pos_to_voxel(r.pose.position)
            if self.world.truth_occupied[tuple(v)]:
                raise ConfigError(f"robots: robot {r.id} starts inside occupied space")
        self.reach = reachable_truth_mask(
            self.world, np.stack([r.pose.position for r in self.robots])
        )
        self.views_used = 0
        self.frames = 0
        self.records: list[CycleRecord] = []
        self.timings: list[StageTimes] = []
        self.last_assignment_dump: dict | None = None

    # -- perception -----------------------------------------------------

    def _sense_at(self, robot: RobotState, pose: Viewpoint) -> None:
        frame = sense(self.world, pose, self.camera)
        hv = frame.hit_voxels[frame.hit_mask]
        if len(hv):
            uniq = np.unique(hv, axis=0)
            colors = np.empty(len(uniq))
            depths = np.empty(len(uniq))
            for i, v in enumerate(uniq):
                colors[i], depths[i] = synth_loss(
                    self.world,
                    pose,
                    v,
                    self.cache.count(v),
                    color_base=self.cfg.synth_color_base,
                    depth_base=self.cfg.synth_depth_base,
                    decay=self.cfg.synth_decay,
                    slope=self.cfg.synth_slope,
                    complexity_gain=self.cfg.synth_complexity_gain,
                )
            positions = self.world.voxel_centers(uniq)
            self.cache.project_losses(
                LossFrame(positions, colors, depths), self.cfg.lambda_d
            )
        self.registry.register_observation(frame)
        step = float(np.linalg.norm(pose.position - robot.pose.position))
        robot.path_length += step
        robot.pose = pose
        robot.executed.append(pose)
        self.views_used += 1
        self.frames += 1
        if self.frames % self.cfg.prune_interval_frames == 0:
            self._prune_cache()

    def _prune_cache(self) -> None:
        pts, _, vox = self.cache.surface_points()
        if len(pts) == 0:
            return
        occ = np.argwhere(self.world.known_state == OCCUPIED)
        ref = self.world.voxel_centers(occ) if len(occ) else np.zeros((0, 3))
        result = prune_outliers(pts, ref, self.cfg.prune_threshold_m)
        keep = np.zeros(len(pts), dtype=bool)
        keep[result.kept] = True
        if keep.all():
            return
        drop_vox = vox[~keep]
        self.cache.remove_flats(self.cache.flat_of_voxel(v) for v in drop_vox)
        self.registry.remove_voxels(drop_vox)

    # -- planning ---------------------------------------------------------

    def _generate_tasks(self) -> tuple[list[Task], list[Task]]:
        frontiers = extract_frontiers(self.world)
        exp = gen_exploration_tasks(self.world, frontiers, self.camera, self.cfg)
        if self.flags.rec_tasks == "none":
            rec = []
        elif self.flags.rec_tasks == "surface":
            rec = gen_surface_tasks(self.world, self.cache, self.camera, self.cfg)
        else:
            recs = recon_candidates(
                self.registry, self.cache, self.cfg.c_min, self.cfg.c_max
            )
            rec = gen_reconstruction_tasks(self.world, recs, self.camera, self.cfg)
        return exp, rec

    def _assign(self, exp: list[Task], rec: list[Task]):
        """Mode split plus per-mode clustering; returns per-robot task lists,
        per-robot modes and per-mode clustering objectives."""
        cfg = self.cfg
        w_spread = cfg.cluster_w_spread if self.flags.spread_balance else 0.0
        groups: list[tuple[str, list[RobotState], list[Task]]] = []
        modes: dict[int, str] = {}
        if self.flags.mode_assignment:
            counts = mode_counts(len(exp), len(rec), len(self.robots))
            modes = assign_modes(self.robots, exp + rec, cfg.d_local_m, counts)
            exp_robots = [r for r in self.robots if modes[r.id] == EXPLORATION]
            rec_robots = [r for r in self.robots if modes[r.id] == RECONSTRUCTION]
            if exp_robots:
                groups.append((EXPLORATION, exp_robots, exp))
            if rec_robots:
                groups.append((RECONSTRUCTION, rec_robots, rec))
        else:
            modes = {r.id: MIXED for r in self.robots}
            groups.append((MIXED, list(self.robots), exp + rec))

        assigned: dict[int, list[Task]] = {r.id: [] for r in self.robots}
        objectives: dict[str, float] = {}
        dumps: list[dict] = []
        for mode, robots, tasks in groups:
            cl = cluster_tasks(
                robots,
                tasks,
                w_move=cfg.cluster_w_move,
                w_count=cfg.cluster_w_count,
                w_spread=w_spread,
                max_iters=cfg.cluster_max_iters,
                tol=cfg.cluster_tol,
            )
            objectives[mode] = cl.objective
            for rid, tlist in cl.by_robot.items():
                assigned[rid] = tlist
                cent = cl.centroids[rid]
                dumps.append(
                    {
                        "id": rid,
                        "mode": mode,
                        "task_ids": [t.source for t in tlist],
                        "centroid": [float(v) for v in cent] if len(tlist) else None,
                        "d_sum": cl.d_sums[rid],
                        "n_tasks": cl.counts[rid],
                    }
                )
        for r in self.robots:
            r.assigned = assigned[r.id]
            r.mode = modes[r.id] if assigned[r.id] else IDLE
        dumps.sort(key=lambda d: d["id"])
        return assigned, modes, objectives, dumps

    def _plan_tours(self, assigned: dict[int, list[Task]]):
        """ATSP order, smoothing and execution sampling per robot."""
        cfg = self.cfg
        fields: dict[tuple, PathField] = {}

        def field_for(position: np.ndarray) -> PathField:
            key = tuple(float(v) for v in position)
            if key not in fields:
                fields[key] = PathField(
                    self.world, position, cfg.path_clearance_voxels
                )
            return fields[key]

        tours: list[Tour] = []
        samples: dict[int, list[Viewpoint]] = {}
        tour_dumps: list[dict] = []
        for robot in self.robots:
            tasks = assigned[robot.id]
            if not tasks:
                samples[robot.id] = []
                continue
            n = len(tasks)
            rf = field_for(robot.pose.position)
            row = np.asarray(
                [
                    combine_cost(
                        rf.distance_to(t.position),
                        t.viewpoint.yaw - robot.pose.yaw,
                        t.viewpoint.pitch - robot.pose.pitch,
                        self.params,
                    )
                    for t in tasks
                ]
            )
            between = np.zeros((n, n))
            for i, ti in enumerate(tasks):
                if not np.isfinite(row[i]):
                    continue
                fi = field_for(ti.position)
                for j, tj in enumerate(tasks):
                    if i == j:
                        continue
                    between[i, j] = combine_cost(
                        fi.distance_to(tj.position),
                        tj.viewpoint.yaw - ti.viewpoint.yaw,
                        tj.viewpoint.pitch - ti.viewpoint.pitch,
                        self.params,
                    )
            tour = plan_tour(
                robot.id,
                tasks,
                row,
                between,
                exact_max=cfg.atsp_exact_max,
            )
            tours.append(tour)
            robot.assigned = tour.tasks
            legs: list[ExecutionLeg] = []
            prev_vp = robot.pose
            ok = True
            for t in tour.tasks:
                path = field_for(prev_vp.position).path_to(t.position)
                if not path.found:
                    ok = False
                    break
                pts = _simplify_collinear(path.points)
                dense = smooth_path(pts, self.world, cfg.smooth_step_m)
                legs.append(
                    ExecutionLeg(
                        points=dense,
                        yaw0=prev_vp.yaw,
                        pitch0=prev_vp.pitch,
                        yaw1=t.viewpoint.yaw,
                        pitch1=t.viewpoint.pitch,
                    )
                )
                prev_vp = t.viewpoint
            if not ok:
                samples[robot.id] = []
            else:
                samples[robot.id] = sample_execution(
                    legs, self.params, cfg.dt_s, cfg.l_exec_m
                )
            tour_dumps.append(
                {
                    "robot": robot.id,
                    "order": [t.source for t in tour.tasks],
                    "leg_costs": tour.leg_costs,
                    "total_cost": tour.total_cost,
                    "dropped": tour.dropped,
                    "samples": [vp.to_dict() for vp in samples[robot.id]],
                }
            )
        total_tour_cost = float(sum(t.total_cost for t in tours))
        return samples, tour_dumps, total_tour_cost

    # -- execution ----------------------------------------------------------

    def _execute(self, samples: dict[int, list[Viewpoint]]) -> bool:
        executed = False
        tick = 0
        max_len = max((len(s) for s in samples.values()), default=0)
        while tick < max_len and self.views_used < self.cfg.budget:
            for robot in self.robots:
                if self.views_used >= self.cfg.budget:
                    break
                plan = samples.get(robot.id, [])
                if tick < len(plan):
                    self._sense_at(robot, plan[tick])
                    executed = True
            tick += 1
        return executed

    # -- records ----------------------------------------------------------------

    def _record(self, cycle: int) -> None:
        self.records.append(
            CycleRecord(
                cycle=cycle,
                views_used=self.views_used,
                coverage=_coverage(self.world, self.reach),
                residual_uncertainty=_residual_uncertainty(self.world, self.cache),
                n_exploration_tasks=self._last_task_counts[0],
                n_reconstruction_tasks=self._last_task_counts[1],
                path_lengths={r.id: r.path_length for r in self.robots},
            )
        )

    def _dump_cycle(self, cycle: int, tasks: list[Task], assign_dump, tours_dump, objectives, total_tour_cost):
        if self.out_dir is None:
            return
        cdir = self.out_dir / "cycles"
        cdir.mkdir(parents=True, exist_ok=True)
        (cdir / f"cycle_{cycle:03d}_tasks.json").write_text(
            json.dumps([t.to_dict() for t in tasks], indent=2, sort_keys=True) + "\n"
        )
        payload = {
            "robots": assign_dump,
            "clustering_objectives": objectives,
            "total_tour_cost_s": total_tour_cost,
        }
        (cdir / f"cycle_{cycle:03d}_assignments.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n"
        )
        (cdir / f"cycle_{cycle:03d}_tours.json").write_text(
            json.dumps(tours_dump, indent=2, sort_keys=True) + "\n"
        )

    def run(self) -> RunResult:
        cfg = self.cfg
        self._last_task_counts = (0, 0)
        last_objectives: dict[str, float] = {}
        last_tour_cost = 0.0

        for robot in self.robots:
            if self.views_used >= cfg.budget:
                break
            self._sense_at(robot, robot.pose)
        self._record(0)

        termination = TERMINATION_MAX_CYCLES
        for cycle in range(1, cfg.max_cycles + 1):
            if self.views_used >= cfg.budget:
                termination = TERMINATION_BUDGET
                break

            t0 = time.perf_counter()
            exp, rec = self._generate_tasks()
            t1 = time.perf_counter()
            self._last_task_counts = (len(exp), len(rec))
            if self.cycle_hook is not None:
                self.cycle_hook(
                    CycleContext(
                        cycle=cycle,
                        world=self.world,
                        cache=self.cache,
                        registry=self.registry,
                        exploration_tasks=exp,
                        reconstruction_tasks=rec,
                    )
                )
            if not exp and not rec:
                termination = TERMINATION_NO_TASKS
                break

            assigned, modes, objectives, assign_dump = self._assign(exp, rec)
            t2 = time.perf_counter()
            samples, tours_dump, total_tour_cost = self._plan_tours(assigned)
            t3 = time.perf_counter()
            self.timings.append(
                StageTimes(cycle=cycle, t_task=t1 - t0, t_colla=t2 - t1, t_tour=t3 - t2)
            )
            last_objectives = objectives
            last_tour_cost = total_tour_cost
            self._dump_cycle(cycle, exp + rec, assign_dump, tours_dump, objectives, total_tour_cost)

            executed = self._execute(samples)
            self._record(cycle)
            if not executed:
                termination = TERMINATION_STALLED
                break
        else:
            termination = TERMINATION_MAX_CYCLES

        summary = {
            "scene": str(cfg.scene),
            "scene_name": self.world.name,
            "variant": cfg.variant,
            "seed": cfg.seed,
            "budget": cfg.budget,
            "views_used": self.views_used,
            "cycles": self.records[-1].cycle,
            "termination": termination,
            "coverage": self.records[-1].coverage,
            "residual_uncertainty": self.records[-1].residual_uncertainty,
            "path_length_per_robot": {
                str(r.id): r.path_length for r in self.robots
            },
            "path_length_total": float(sum(r.path_length for r in self.robots)),
            "final_clustering_objectives": last_objectives,
            "final_total_tour_cost_s": last_tour_cost,
        }
        result = RunResult(
            config=cfg,
            records=self.records,
            timings=self.timings,
            summary=summary,
            termination=termination,
            world=self.world,
            cache=self.cache,
            registry=self.registry,
            robots=self.robots,
            out_dir=self.out_dir,
        )
        if self.out_dir is not None:
            _write_outputs(result)
        return result


def _write_outputs(result: RunResult) -> None:
    out = result.out_dir
    assert out is not None
    out.mkdir(parents=True, exist_ok=True)
    echo_config(result.config, out)

    robot_ids = sorted(r.id for r in result.robots)
    header = [
        "cycle",
        "views_used",
        "coverage",
        "residual_uncertainty",
        "n_exploration_tasks",
        "n_reconstruction_tasks",
    ] + [f"pl_{rid}" for rid in robot_ids]
    lines = [",".join(header)]
    for rec in result.records:
        row = [
            str(rec.cycle),
            str(rec.views_used),
            _fmt(rec.coverage),
            _fmt(rec.residual_uncertainty),
            str(rec.n_exploration_tasks),
            str(rec.n_reconstruction_tasks),
        ] + [_fmt(rec.path_lengths[rid]) for rid in robot_ids]
        lines.append(",".join(row))
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")

    tlines = ["cycle,t_task_s,t_colla_s,t_tour_s,t_plan_s"]
    for st in result.timings:
        tlines.append(
            f"{st.cycle},{_fmt(st.t_task)},{_fmt(st.t_colla)},{_fmt(st.t_tour)},{_fmt(st.t_plan)}"
        )
    (out / "timings.csv").write_text("\n".join(tlines) + "\n")

    (out / "summary.json").write_text(
        json.dumps(result.summary, indent=2, sort_keys=True) + "\n"
    )
    result.registry.dump_json(out / "instances.json")
    result.cache.dump_csv(out / "cache.csv")


def run(cfg: RunConfig, out_dir: str | Path | None = None, cycle_hook=None) -> RunResult:
    """Run one simulation; writes artifacts when out_dir is given."""
    out = Path(out_dir) if out_dir is not None else None
    return _Sim(cfg, out, cycle_hook=cycle_hook).run()


def compare_variants(
    configs: list[RunConfig], out_dir: str | Path | None = None
) -> list[dict]:
    """Run several variant configs over the same scene and seed and tabulate
    coverage, residual uncertainty, path length and mean stage timings."""
    if not configs:
        raise ConfigError("compare needs at least one config")
    scenes = {str(c.scene) for c in configs}
    seeds = {c.seed for c in configs}
    if len(scenes) != 1 or len(seeds) != 1:
        raise ConfigError("compare requires all configs to share scene and seed")
    rows = []
    for cfg in configs:
        res = run(cfg)
        n_t = max(len(res.timings), 1)
        rows.append(
            {
                "variant": cfg.variant,
                "views_used": res.summary["views_used"],
                "cycles": res.summary["cycles"],
                "coverage": res.summary["coverage"],
                "residual_uncertainty": res.summary["residual_uncertainty"],
                "path_length_total": res.summary["path_length_total"],
                "mean_t_task_s": sum(t.t_task for t in res.timings) / n_t,
                "mean_t_colla_s": sum(t.t_colla for t in res.timings) / n_t,
                "mean_t_plan_s": sum(t.t_plan for t in res.timings) / n_t,
                "termination": res.termination,
            }
        )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = list(rows[0].keys())
        lines = [",".join(header)]
        for r in rows:
            lines.append(
                ",".join(
                    _fmt(r[k]) if isinstance(r[k], float) else str(r[k]) for k in header
                )
            )
        (out / "comparison.csv").write_text("\n".join(lines) + "\n")
    return rows
