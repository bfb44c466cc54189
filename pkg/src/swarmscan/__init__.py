"""Multi-robot scan planning engine with a deterministic voxel simulator."""

from .allocation import (
    ClusterAssignment,
    RobotState,
    assign_modes,
    cluster_tasks,
    mode_counts,
)
from .config import RobotSpec, RunConfig, config_from_dict, load_config
from .instances import (
    InstanceRecord,
    InstanceRegistry,
    ReconInstance,
    gate_reconstruction,
    instance_uncertainty,
    recon_candidates,
    score_instance,
)
from .loss_cache import LossFrame, UncertaintyCache, prune_outliers, synth_loss
from .simulator import RunResult, compare_variants, run
from .tasks import (
    POI,
    Task,
    downsample_surface,
    gen_exploration_tasks,
    gen_reconstruction_tasks,
    gen_surface_tasks,
    info_gain,
    sample_views,
    select_pois,
)
from .tours import (
    ExecutionLeg,
    Tour,
    TravelCostParams,
    plan_tour,
    sample_execution,
    smooth_path,
    solve_atsp,
    travel_cost,
)
from .world import (
    EMPTY,
    OCCUPIED,
    UNKNOWN,
    CameraModel,
    Frontier,
    ObservationFrame,
    PathField,
    PathResult,
    Viewpoint,
    VoxelWorld,
    distance_field,
    extract_frontiers,
    load_scene,
    scene_from_dict,
    sense,
    shortest_path,
    visible_targets,
)

__version__ = "0.1.0"
