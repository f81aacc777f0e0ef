"""Constrained motion planning for planar manipulators.

A projection-based constraint core maps configurations onto task-space
constraint manifolds; a bidirectional tree planner with pluggable
next-configuration samplers (uniform baseline, imitation-trained neural
sampler, exploration-exploitation hybrid) plans on them; a benchmark CLI ties
the pipeline together.
"""

from .constraints import ConstraintSpec, DisplacementVector, constraint_error, constraint_jacobian, project
from .errors import ContractError, CorpusError, InvalidQueryError, SchemaError, TrainingDivergedError
from .kinematics import KinematicChain, TaskPose, forward_kinematics, jacobian, link_segments
from .neural import (
    Demonstration,
    DemonstrationSet,
    PlanningNetwork,
    TrainingConfig,
    create_network,
    forward,
    load_weights,
    save_weights,
    train,
)
from .planner import (
    Path,
    PlanResult,
    PlannerParams,
    PlanTree,
    nearest_node,
    plan,
    smooth,
    traverse_manifold,
    validate_path,
)
from .sampler import (
    HybridSampler,
    NeuralSampler,
    SamplerContext,
    UniformSampler,
    make_sampler,
    normalize,
    unnormalize,
)
from .scenario import Corpus, Scenario, build_corpus, generate_scenarios, load_corpus, save_corpus
from .world import Circle, OccupancyGrid, Rectangle, World, config_in_collision, motion_collision_free, rasterize

__version__ = "0.1.0"
