"""Benchmark scenarios: template-based generation, oracle demonstration corpus
construction, and persistence.

Three shipped templates share one 4-DOF chain and task vocabulary:
  reach        unconstrained point-to-point queries through clutter,
  carry_level  end-effector orientation held level within a narrow band,
  slide_door   end-effector confined to a workspace line segment (a door track).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from . import jsonio
from .constraints import ConstraintSpec, constraint_error, project
from .errors import ContractError, CorpusError, SchemaError
from .kinematics import KinematicChain, TaskPose
from .neural import Demonstration, DemonstrationSet
from .planner import PlannerParams, PlanTree, derive_params, plan, smooth, traverse_manifold, validate_path
from .sampler import SamplerContext, UniformSampler
from .world import Circle, Rectangle, World, config_in_collision, motion_collision_free, rasterize

log = logging.getLogger(__name__)

SCENARIOS_FORMAT = "cmplan-scenarios/1"
CORPUS_FORMAT = "cmplan-corpus/1"

TASK_VOCAB = ("reach", "carry_level", "slide_door")

WORLD_BOUNDS = Rectangle(-3.2, -3.2, 3.2, 3.2)
BASE_CLEARANCE = 0.4
DOOR_LINE = {"x": 1.4, "y_min": -1.0, "y_max": 1.0, "clearance": 0.35}


def default_chain() -> KinematicChain:
    return KinematicChain(
        link_lengths=[0.9, 0.8, 0.7, 0.6],
        joint_limits=[(-2.9, 2.9)] * 4,
    )


def template_constraint(name: str) -> ConstraintSpec:
    if name == "reach":
        return ConstraintSpec("none")
    if name == "carry_level":
        return ConstraintSpec("orientation_band", TaskPose(0.0, 0.0, 0.0), [(-0.01, 0.01)])
    if name == "slide_door":
        half = 0.5 * (DOOR_LINE["y_max"] - DOOR_LINE["y_min"])
        mid = 0.5 * (DOOR_LINE["y_max"] + DOOR_LINE["y_min"])
        return ConstraintSpec(
            "position_line",
            TaskPose(DOOR_LINE["x"], mid, math.pi / 2),
            [(-half, half), (0.0, 0.0)],
        )
    raise ContractError(f"unknown template {name!r}")


@dataclass(frozen=True)
class Template:
    name: str
    task_id: int
    obstacle_count: tuple = (4, 7)
    rect_size: tuple = (0.3, 0.7)
    circle_radius: tuple = (0.15, 0.32)
    circle_prob: float = 0.35
    placement_radius: tuple = (0.7, 2.7)  # annulus around the base where obstacles land
    min_query_dist: float = 2.2  # joint-space L2 between endpoints
    # Goals perturb the start (projected back onto the manifold): nearby goals
    # stay in the start's free-space component far more often than independent
    # draws, so fewer layouts get rejected as unsolvable.
    goal_scale: float = 1.4


TEMPLATES = {
    "reach": Template("reach", 0),
    "carry_level": Template("carry_level", 1),
    "slide_door": Template("slide_door", 2, min_query_dist=1.6, goal_scale=1.0),
}


@dataclass
class Scenario:
    id: str
    template: str
    task_id: int
    chain: KinematicChain
    world: World
    constraint: ConstraintSpec
    c_init: np.ndarray
    c_goal: np.ndarray
    split: str


def task_onehot(task_id: int, vocab_size: int = len(TASK_VOCAB)) -> np.ndarray:
    if not 0 <= task_id < vocab_size:
        raise ContractError(f"task_id {task_id} outside vocabulary of size {vocab_size}")
    v = np.zeros(vocab_size)
    v[task_id] = 1.0
    return v


def query_context(scenario: Scenario, seed: int) -> SamplerContext:
    """Fresh per-query sampler context: seeded rng plus the scenario's grid and
    task encoding (used by the neural and hybrid samplers)."""
    return SamplerContext(
        chain=scenario.chain,
        rng=np.random.default_rng(seed),
        grid=rasterize(scenario.world).flat01(),
        task_onehot=task_onehot(scenario.task_id),
    )


def validate_scenario(scenario: Scenario) -> None:
    """Raise ContractError when an endpoint is invalid for its scenario."""
    for name, q in (("c_init", scenario.c_init), ("c_goal", scenario.c_goal)):
        scenario.chain.config(q)
        norm = constraint_error(scenario.constraint, scenario.chain, q).norm
        if norm >= scenario.constraint.epsilon:
            raise ContractError(f"{scenario.id}: {name} off the manifold (norm {norm:.3g})")
        if config_in_collision(scenario.world, scenario.chain, q):
            raise ContractError(f"{scenario.id}: {name} is in collision")


# ---------------------------------------------------------------------------
# Generation


def _point_rect_dist(px, py, ob: Rectangle) -> float:
    dx = max(ob.x_min - px, 0.0, px - ob.x_max)
    dy = max(ob.y_min - py, 0.0, py - ob.y_max)
    return math.hypot(dx, dy)


def _door_rect_dist(ob: Rectangle) -> float:
    dx = max(ob.x_min - DOOR_LINE["x"], 0.0, DOOR_LINE["x"] - ob.x_max)
    dy = max(ob.y_min - DOOR_LINE["y_max"], 0.0, DOOR_LINE["y_min"] - ob.y_max)
    return math.hypot(dx, dy)


def _door_point_dist(px, py) -> float:
    dy = max(DOOR_LINE["y_min"] - py, 0.0, py - DOOR_LINE["y_max"])
    return math.hypot(px - DOOR_LINE["x"], dy)


def _obstacle_allowed(template: Template, ob) -> bool:
    if isinstance(ob, Rectangle):
        if _point_rect_dist(0.0, 0.0, ob) <= BASE_CLEARANCE:
            return False
        if template.name == "slide_door" and _door_rect_dist(ob) <= DOOR_LINE["clearance"]:
            return False
    else:
        if math.hypot(ob.x, ob.y) <= ob.radius + BASE_CLEARANCE:
            return False
        if template.name == "slide_door" and _door_point_dist(ob.x, ob.y) <= ob.radius + DOOR_LINE["clearance"]:
            return False
    return True


def _sample_obstacles(template: Template, rng) -> list:
    lo, hi = template.obstacle_count
    count = int(rng.integers(lo, hi + 1))
    b = WORLD_BOUNDS
    margin = 0.45  # keep centers clear of the bounds so shapes stay inside
    obstacles = []
    for _ in range(count):
        for _ in range(200):
            # Centers land in an annulus around the base, where the arm sweeps.
            radius = rng.uniform(*template.placement_radius)
            angle = rng.uniform(-math.pi, math.pi)
            cx = np.clip(radius * math.cos(angle), b.x_min + margin, b.x_max - margin)
            cy = np.clip(radius * math.sin(angle), b.y_min + margin, b.y_max - margin)
            if rng.random() < template.circle_prob:
                r = rng.uniform(*template.circle_radius)
                ob = Circle(cx, cy, r)
            else:
                w = rng.uniform(*template.rect_size)
                h = rng.uniform(*template.rect_size)
                ob = Rectangle(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
            if _obstacle_allowed(template, ob):
                obstacles.append(ob)
                break
    return obstacles


class _Budget:
    def __init__(self, total: int):
        self.left = total

    def spend(self) -> bool:
        self.left -= 1
        return self.left >= 0


def _principal_component(spec, chain, q) -> bool:
    """Keep endpoints whose orientation sum lies in the principal branch.

    The wrapped angular displacement makes orientation constraints a stack of
    parallel manifold components (theta sums differing by 2*pi); queries with
    endpoints on different components are unsolvable, so generation sticks to
    the branch nearest the reference.
    """
    if 2 not in spec.active:
        return True
    raw = float(np.sum(q)) + chain.base_pose[2] - spec.reference.theta
    return abs(raw) < math.pi - 0.2


def _sample_endpoint(spec, chain, world, rng, budget, near=None, scale=1.0):
    while budget.spend():
        if near is None:
            q = rng.uniform(chain.lower, chain.upper)
        else:
            q = chain.clamp(near + rng.normal(0.0, scale, chain.dof))
        q = project(spec, chain, q)
        if q is None or not _principal_component(spec, chain, q):
            continue
        if config_in_collision(world, chain, q):
            continue
        return q
    return None


def _directly_connectable(spec, chain, world, c_init, c_goal) -> bool:
    """True when one straight constrained interpolation already joins the pair."""
    params = PlannerParams()
    scratch = PlanTree(c_init, "scratch")
    frontier = traverse_manifold(spec, chain, world, c_goal, 0, scratch, params)
    return float(np.max(np.abs(frontier - c_goal))) <= params.reach_radius and motion_collision_free(
        world, chain, frontier, c_goal, params.resolution
    )


def _generate_one(template: Template, chain, spec, index: int, seed: int, rejection_budget: int, roll: int = 0):
    rng = np.random.default_rng([seed, template.task_id, index, roll])
    budget = _Budget(rejection_budget)
    while budget.left > 0:
        world = World(_sample_obstacles(template, rng), WORLD_BOUNDS)
        c_init = _sample_endpoint(spec, chain, world, rng, budget)
        if c_init is None:
            continue
        c_goal = None
        for attempt in range(40):
            scale = template.goal_scale + 0.04 * attempt
            cand = _sample_endpoint(spec, chain, world, rng, budget, near=c_init, scale=scale)
            if cand is None:
                break
            if float(np.linalg.norm(cand - c_init)) < template.min_query_dist:
                continue
            # Queries a single constrained interpolation already solves teach a
            # sampler nothing; keep only pairs that need a detour.
            if _directly_connectable(spec, chain, world, c_init, cand):
                continue
            c_goal = cand
            break
        if c_goal is None:
            continue
        return Scenario(
            id=f"{template.name}-s{seed}-{index:03d}",
            template=template.name,
            task_id=template.task_id,
            chain=chain,
            world=world,
            constraint=spec,
            c_init=c_init,
            c_goal=c_goal,
            split="train",
        )
    return None


def generate_scenarios(
    seed: int,
    count: int,
    template: str = "mixed",
    test_fraction: float = 0.2,
    rejection_budget: int = 10000,
    solvability_probe: int | None = 600,
    min_probe_iterations: int = 5,
    max_rolls: int = 25,
) -> list:
    """Deterministically generate ``count`` scenarios.

    Endpoints are rejection-sampled (uniform draw, project onto the manifold,
    discard on collision); a layout is skipped with a warning when the budget
    runs out. When ``solvability_probe`` is set, each candidate scenario is
    re-rolled until a goal-biased uniform probe plan solves it within that
    iteration budget but needs at least ``min_probe_iterations`` iterations:
    unreachable queries are filtered out (the usual reachability filter) and so
    are queries a couple of blind extensions already solve, which would say
    nothing about a sampler. Splits are assigned per template; the test share
    always exceeds 10% for count >= 2.
    """
    if count < 0:
        raise ContractError("count must be >= 0")
    if template == "mixed":
        names = list(TEMPLATES)
    elif template in TEMPLATES:
        names = [template]
    else:
        raise ContractError(f"unknown template {template!r}")
    chain = default_chain()
    per = {name: count // len(names) for name in names}
    for i in range(count % len(names)):
        per[names[i]] += 1

    scenarios = []
    for name in names:
        tpl = TEMPLATES[name]
        spec = template_constraint(name)
        group = []
        for i in range(per[name]):
            scn = None
            for roll in range(max_rolls):
                cand = _generate_one(tpl, chain, spec, i, seed, rejection_budget, roll)
                if cand is None:
                    continue
                if solvability_probe is not None:
                    iters = _probe_iterations(cand, solvability_probe)
                    if iters is None or iters < min_probe_iterations:
                        continue
                scn = cand
                break
            if scn is None:
                log.warning("scenario %s-s%s-%03d: no acceptable layout found, skipped", name, seed, i)
                continue
            group.append(scn)
        _assign_splits(group, seed, test_fraction)
        scenarios.extend(group)
    return scenarios


def _probe_iterations(scenario: Scenario, iterations: int):
    params = PlannerParams(max_iterations=iterations, seed=derive_seed(scenario.id, "probe"))
    ctx = SamplerContext(chain=scenario.chain, rng=np.random.default_rng(params.seed))
    result = plan(
        scenario.constraint,
        scenario.chain,
        scenario.world,
        UniformSampler(),
        scenario.c_init,
        scenario.c_goal,
        params,
        ctx,
    )
    return result.iterations if result.success else None


def _assign_splits(group, seed, test_fraction):
    n = len(group)
    if n == 0:
        return
    n_test = 0
    if n >= 2 and test_fraction > 0:
        n_test = min(n - 1, max(1, round(test_fraction * n)))
    rng = np.random.default_rng([seed, 7777, group[0].task_id])
    test_idx = set(int(i) for i in rng.permutation(n)[:n_test])
    for i, scn in enumerate(group):
        scn.split = "test" if i in test_idx else "train"


def derive_seed(*parts) -> int:
    import hashlib

    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


# ---------------------------------------------------------------------------
# Demonstration corpus


@dataclass
class Corpus:
    scenarios: list
    demos: DemonstrationSet
    oracle_seed: int
    oracle_stats: dict


def build_corpus(
    scenarios,
    planner_params: PlannerParams,
    oracle_seed: int,
    min_success_rate: float = 0.5,
    retries: int = 3,
) -> Corpus:
    """Plan every train-split scenario with the goal-biased uniform oracle,
    smooth, validate, and store the successes as demonstrations.

    Each failed scenario is retried with ``retries`` fresh seeds before being
    dropped with a warning. Raises CorpusError when the oracle success rate over
    train scenarios falls below ``min_success_rate``.
    """
    train = [s for s in scenarios if s.split == "train"]
    demos = []
    grids = {}
    per_scenario = {}
    succeeded = 0
    for scn in train:
        record = {"success": False, "iterations": None, "attempts": 0}
        for attempt in range(1 + retries):
            run_seed = derive_seed(oracle_seed, scn.id, attempt)
            params = derive_params(planner_params, run_seed)
            ctx = query_context(scn, run_seed)
            result = plan(
                scn.constraint, scn.chain, scn.world, UniformSampler(), scn.c_init, scn.c_goal, params, ctx
            )
            record["attempts"] = attempt + 1
            if not result.success:
                continue
            path = smooth(scn.constraint, scn.chain, scn.world, result.path, params)
            report = validate_path(
                scn.constraint, scn.chain, scn.world, path, params, scn.c_init, scn.c_goal
            )
            if not report.ok:
                raise CorpusError(f"{scn.id}: smoothed oracle path failed validation: {report.detail}")
            record["success"] = True
            record["iterations"] = result.iterations
            demos.append(Demonstration(scn.id, scn.task_id, path.waypoints))
            grids[scn.id] = rasterize(scn.world).flat01()
            succeeded += 1
            break
        if not record["success"]:
            log.warning("scenario %s: oracle failed %d attempts, dropped from corpus", scn.id, 1 + retries)
        per_scenario[scn.id] = record

    rate = succeeded / len(train) if train else 1.0
    if train and rate < min_success_rate:
        raise CorpusError(
            f"oracle solved {succeeded}/{len(train)} train scenarios "
            f"({rate:.0%} < {min_success_rate:.0%}); the template set is too hard"
        )
    chain = scenarios[0].chain if scenarios else default_chain()
    demo_set = DemonstrationSet(chain=chain, vocab_size=len(TASK_VOCAB), demos=demos, grids=grids)
    stats = {
        "attempted": len(train),
        "succeeded": succeeded,
        "success_rate": rate,
        "per_scenario": per_scenario,
    }
    return Corpus(scenarios=list(scenarios), demos=demo_set, oracle_seed=oracle_seed, oracle_stats=stats)


# ---------------------------------------------------------------------------
# Persistence


def _obstacle_doc(ob) -> dict:
    if isinstance(ob, Rectangle):
        return {"shape": "rect", "x_min": ob.x_min, "y_min": ob.y_min, "x_max": ob.x_max, "y_max": ob.y_max}
    return {"shape": "circle", "x": ob.x, "y": ob.y, "radius": ob.radius}


def _obstacle_from_doc(doc, where) -> object:
    shape = jsonio.require(doc, "shape", where)
    if shape == "rect":
        return Rectangle(
            jsonio.require(doc, "x_min", where),
            jsonio.require(doc, "y_min", where),
            jsonio.require(doc, "x_max", where),
            jsonio.require(doc, "y_max", where),
        )
    if shape == "circle":
        return Circle(
            jsonio.require(doc, "x", where),
            jsonio.require(doc, "y", where),
            jsonio.require(doc, "radius", where),
        )
    raise SchemaError(f"unknown obstacle shape {shape!r}", path=where)


def scenario_to_doc(scn: Scenario) -> dict:
    b = scn.world.bounds
    return {
        "id": scn.id,
        "template": scn.template,
        "task_id": scn.task_id,
        "chain": {
            "link_lengths": scn.chain.link_lengths.tolist(),
            "joint_limits": scn.chain.joint_limits.tolist(),
            "base_pose": list(scn.chain.base_pose),
        },
        "world": {
            "bounds": [b.x_min, b.y_min, b.x_max, b.y_max],
            "obstacles": [_obstacle_doc(ob) for ob in scn.world.obstacles],
        },
        "constraint": {
            "kind": scn.constraint.kind,
            "reference": list(scn.constraint.reference.as_array()),
            "bounds": scn.constraint.bounds.tolist(),
            "epsilon": scn.constraint.epsilon,
        },
        "c_init": scn.c_init.tolist(),
        "c_goal": scn.c_goal.tolist(),
        "split": scn.split,
    }


def scenario_from_doc(doc, where="$") -> Scenario:
    chain_doc = jsonio.require(doc, "chain", where)
    chain = KinematicChain(
        jsonio.require(chain_doc, "link_lengths", f"{where}.chain"),
        jsonio.require(chain_doc, "joint_limits", f"{where}.chain"),
        tuple(jsonio.require(chain_doc, "base_pose", f"{where}.chain")),
    )
    world_doc = jsonio.require(doc, "world", where)
    bounds = Rectangle(*jsonio.require(world_doc, "bounds", f"{where}.world"))
    obstacles = [
        _obstacle_from_doc(ob, f"{where}.world.obstacles[{i}]")
        for i, ob in enumerate(jsonio.require(world_doc, "obstacles", f"{where}.world"))
    ]
    cons_doc = jsonio.require(doc, "constraint", where)
    ref = jsonio.require(cons_doc, "reference", f"{where}.constraint")
    constraint = ConstraintSpec(
        jsonio.require(cons_doc, "kind", f"{where}.constraint"),
        TaskPose(*ref),
        jsonio.require(cons_doc, "bounds", f"{where}.constraint"),
        jsonio.require(cons_doc, "epsilon", f"{where}.constraint"),
    )
    split = jsonio.require(doc, "split", where)
    if split not in ("train", "test"):
        raise SchemaError(f"split must be 'train' or 'test', got {split!r}", path=f"{where}.split")
    return Scenario(
        id=jsonio.require(doc, "id", where),
        template=jsonio.require(doc, "template", where),
        task_id=int(jsonio.require(doc, "task_id", where)),
        chain=chain,
        world=World(obstacles, bounds),
        constraint=constraint,
        c_init=np.array(jsonio.require(doc, "c_init", where), dtype=float),
        c_goal=np.array(jsonio.require(doc, "c_goal", where), dtype=float),
        split=split,
    )


def save_scenarios(path, scenarios, seed: int | None = None, template: str | None = None) -> None:
    doc = {
        "format": SCENARIOS_FORMAT,
        "seed": seed,
        "template": template,
        "scenarios": [scenario_to_doc(s) for s in scenarios],
    }
    jsonio.dump(path, doc)


def load_scenarios(path) -> list:
    doc = jsonio.load(path)
    jsonio.check_format(doc, SCENARIOS_FORMAT, str(path))
    return [
        scenario_from_doc(entry, f"$.scenarios[{i}]")
        for i, entry in enumerate(jsonio.require(doc, "scenarios", "$"))
    ]


def save_corpus(path, corpus: Corpus) -> None:
    doc = {
        "format": CORPUS_FORMAT,
        "oracle_seed": corpus.oracle_seed,
        "oracle_stats": corpus.oracle_stats,
        "scenarios": [scenario_to_doc(s) for s in corpus.scenarios],
        "demonstrations": [
            {"scenario_id": d.scenario_id, "task_id": d.task_id, "waypoints": d.waypoints.tolist()}
            for d in corpus.demos.demos
        ],
    }
    jsonio.dump(path, doc)


def load_corpus(path) -> Corpus:
    doc = jsonio.load(path)
    jsonio.check_format(doc, CORPUS_FORMAT, str(path))
    scenarios = [
        scenario_from_doc(entry, f"$.scenarios[{i}]")
        for i, entry in enumerate(jsonio.require(doc, "scenarios", "$"))
    ]
    by_id = {s.id: s for s in scenarios}
    demos = []
    grids = {}
    for i, entry in enumerate(jsonio.require(doc, "demonstrations", "$")):
        where = f"$.demonstrations[{i}]"
        sid = jsonio.require(entry, "scenario_id", where)
        if sid not in by_id:
            raise SchemaError(f"demonstration references unknown scenario {sid!r}", path=where)
        if by_id[sid].split != "train":
            raise SchemaError(f"demonstration for non-train scenario {sid!r}", path=where)
        demos.append(
            Demonstration(
                sid,
                int(jsonio.require(entry, "task_id", where)),
                np.array(jsonio.require(entry, "waypoints", where), dtype=float),
            )
        )
        if sid not in grids:
            grids[sid] = rasterize(by_id[sid].world).flat01()
    chain = scenarios[0].chain if scenarios else default_chain()
    demo_set = DemonstrationSet(chain=chain, vocab_size=len(TASK_VOCAB), demos=demos, grids=grids)
    return Corpus(
        scenarios=scenarios,
        demos=demo_set,
        oracle_seed=jsonio.require(doc, "oracle_seed", "$"),
        oracle_stats=jsonio.require(doc, "oracle_stats", "$"),
    )
