"""Bidirectional constrained planner: manifold traversal, tree bookkeeping,
path extraction, validation, and shortcut smoothing.

Two trees rooted at the start and goal grow alternately. Each iteration draws
one sample, extends the current tree toward it along the constraint manifold
(small interpolation steps, each re-projected), then extends the other tree
toward the new frontier. When the frontiers meet within the reach threshold and
the junction edge checks out, the path is extracted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .constraints import ConstraintSpec, constraint_error, project
from .errors import ContractError, InvalidQueryError
from .kinematics import KinematicChain
from .sampler import SamplerContext
from .world import (
    MOTION_RESOLUTION,
    World,
    config_in_collision,
    configs_in_collision,
    motion_collision_free,
    sweep_free,
)

PROGRESS_EPS = 1e-6  # minimum joint-space step to count as traversal progress
JUNCTION_DEDUP = 1e-9


@dataclass(frozen=True)
class PlannerParams:
    max_iterations: int = 2000
    step_fraction: float = 0.05  # fraction of the remaining vector per traversal step
    step_cap: float = 0.1  # rad per joint, also the tree-edge gap bound
    reach_radius: float = 0.05  # rad, max-norm meeting threshold
    projection_iters: int = 50
    resolution: float = MOTION_RESOLUTION
    smooth_attempts: int = 100
    seed: int = 0
    sampler_goal: str = "frontier"  # "frontier": pass the other tree's frontier as
    # the sampler goal (per the bidirectional swap); "query": pass the other
    # tree's root instead.

    def __post_init__(self):
        if min(self.max_iterations, self.projection_iters) < 1:
            raise ContractError("iteration budgets must be >= 1")
        if min(self.step_fraction, self.step_cap, self.reach_radius, self.resolution) <= 0:
            raise ContractError("step sizes and thresholds must be positive")
        if self.reach_radius < self.resolution:
            raise ContractError("reach_radius must be >= interpolation resolution")
        if self.sampler_goal not in ("frontier", "query"):
            raise ContractError("sampler_goal must be 'frontier' or 'query'")


class PlanTree:
    """Append-only configuration tree; node 0 is the root."""

    def __init__(self, root, label: str):
        root = np.asarray(root, dtype=float).reshape(-1)
        self.label = label
        self.parents = [None]
        self._buf = np.empty((16, root.size))
        self._buf[0] = root
        self._sq = np.empty(16)  # cached squared norms, for nearest-node queries
        self._sq[0] = float(root @ root)
        self._n = 1

    def __len__(self) -> int:
        return self._n

    @property
    def nodes(self) -> np.ndarray:
        return self._buf[: self._n]

    def node(self, idx: int) -> np.ndarray:
        return self._buf[idx].copy()

    def add(self, config, parent: int) -> int:
        if not 0 <= parent < self._n:
            raise ContractError("parent index out of range")
        if self._n == self._buf.shape[0]:
            grown = np.empty((2 * self._buf.shape[0], self._buf.shape[1]))
            grown[: self._n] = self._buf
            self._buf = grown
            grown_sq = np.empty(2 * self._sq.shape[0])
            grown_sq[: self._n] = self._sq[: self._n]
            self._sq = grown_sq
        self._buf[self._n] = config
        self._sq[self._n] = float(self._buf[self._n] @ self._buf[self._n])
        self.parents.append(parent)
        self._n += 1
        return self._n - 1

    def branch_to_root(self, idx: int) -> list:
        """Configurations from ``idx`` up to the root, in that order."""
        out = []
        node = idx
        while node is not None:
            out.append(self.node(node))
            node = self.parents[node]
        return out


@dataclass
class Path:
    """Waypoint matrix (m, dof) from start to goal plus run metadata."""

    waypoints: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.waypoints.shape[0]

    def length(self) -> float:
        return _joint_length(self.waypoints)


@dataclass
class PlanResult:
    success: bool
    path: Path | None
    iterations: int
    nodes_expanded: int
    projection_calls: int
    wall_time_ms: float


@dataclass
class ValidationReport:
    ok: bool
    reason: str | None = None
    index: int | None = None
    detail: str = ""


@dataclass
class _Counters:
    projection_calls: int = 0


def _joint_length(waypoints) -> float:
    w = np.asarray(waypoints, dtype=float)
    if w.shape[0] < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(w, axis=0), axis=1).sum())


def nearest_node(tree: PlanTree, config) -> int:
    """Index of the tree node closest to ``config`` in Euclidean joint distance;
    ties break toward the lowest index."""
    if len(tree) == 0:
        raise ContractError("nearest_node on an empty tree")
    q = np.asarray(config, dtype=float).reshape(-1)
    # |n - q|^2 = |n|^2 - 2 n.q + |q|^2; the constant |q|^2 cannot change the argmin.
    scores = tree._sq[: len(tree)] - 2.0 * (tree.nodes @ q)
    return int(np.argmin(scores))


def traverse_manifold(
    spec: ConstraintSpec,
    chain: KinematicChain,
    world: World,
    c_target,
    c_near_idx: int,
    tree: PlanTree,
    params: PlannerParams,
    counters: _Counters | None = None,
) -> np.ndarray:
    """Extend ``tree`` from node ``c_near_idx`` toward ``c_target`` along the
    constraint manifold and return the frontier configuration reached.

    Each step moves a fraction of the remaining vector (capped per joint),
    re-projects onto the manifold, and inserts a node when the connecting motion
    is collision-free. Stops at the target (within reach_radius), on projection
    failure, on collision, or when progress stalls; the frontier so far is
    returned unmodified in those cases.
    """
    target = np.asarray(c_target, dtype=float).reshape(-1)
    current = tree.node(c_near_idx)
    idx = c_near_idx
    while float(np.linalg.norm(current - target)) > params.reach_radius:
        step = params.step_fraction * (target - current)
        step = np.clip(step, -params.step_cap, params.step_cap)
        candidate = None
        for _ in range(4):
            if counters is not None:
                counters.projection_calls += 1
            candidate = project(spec, chain, current + step, params.projection_iters)
            if candidate is None:
                break
            if float(np.max(np.abs(candidate - current))) <= params.step_cap:
                break
            # The projection correction overshot the per-joint gap bound;
            # retry with a smaller linear step before giving up.
            step *= 0.5
            candidate = None
        if candidate is None:
            break
        if float(np.linalg.norm(candidate - current)) < PROGRESS_EPS:
            break
        # current is a tree node and known collision-free; sweep the rest.
        if not sweep_free(world, chain, current, candidate, params.resolution, skip_start=True):
            break
        idx = tree.add(candidate, idx)
        current = candidate
    return current


def _check_query(spec, chain, world, q, name):
    if not chain.contains(q):
        raise InvalidQueryError(f"{name} violates joint limits")
    err = constraint_error(spec, chain, q)
    if err.norm >= spec.epsilon:
        raise InvalidQueryError(f"{name} is off the constraint manifold (norm {err.norm:.3g})")
    if config_in_collision(world, chain, q):
        raise InvalidQueryError(f"{name} is in collision")


def _dedup(waypoints) -> np.ndarray:
    out = [waypoints[0]]
    for w in waypoints[1:]:
        if float(np.max(np.abs(w - out[-1]))) > JUNCTION_DEDUP:
            out.append(w)
    return np.asarray(out)


def _extract(tree_a, idx_a, tree_b, idx_b) -> np.ndarray:
    branch_a = tree_a.branch_to_root(idx_a)
    branch_b = tree_b.branch_to_root(idx_b)
    if tree_a.label == "start":
        waypoints = branch_a[::-1] + branch_b
    else:
        waypoints = branch_b[::-1] + branch_a
    return _dedup(waypoints)


def plan(
    spec: ConstraintSpec,
    chain: KinematicChain,
    world: World,
    sampler,
    c_init,
    c_goal,
    params: PlannerParams,
    context: SamplerContext | None = None,
) -> PlanResult:
    """Bidirectional constrained search from c_init to c_goal.

    Returns a PlanResult whose ``path`` passes validate_path on success and is
    None after ``params.max_iterations`` fruitless iterations. Deterministic
    given the sampler context rng seed. Raises InvalidQueryError when an
    endpoint is off-manifold, colliding, or out of limits.
    """
    q_init = chain.config(c_init)
    q_goal = chain.config(c_goal)
    _check_query(spec, chain, world, q_init, "start")
    _check_query(spec, chain, world, q_goal, "goal")
    if context is None:
        context = SamplerContext(chain=chain, rng=np.random.default_rng(params.seed))
    t0 = time.perf_counter()
    counters = _Counters()
    tree_a = PlanTree(q_init, "start")
    tree_b = PlanTree(q_goal, "goal")

    def result(success, waypoints, iterations):
        wall = (time.perf_counter() - t0) * 1000.0
        path = None
        if success:
            path = Path(
                waypoints,
                metadata={
                    "iterations": iterations,
                    "nodes": len(tree_a) + len(tree_b),
                    "projection_calls": counters.projection_calls,
                    "wall_time_ms": wall,
                    "length": _joint_length(waypoints),
                },
            )
        return PlanResult(
            success,
            path,
            iterations,
            len(tree_a) + len(tree_b),
            counters.projection_calls,
            wall,
        )

    if float(np.max(np.abs(q_init - q_goal))) <= params.reach_radius and motion_collision_free(
        world, chain, q_init, q_goal, params.resolution
    ):
        return result(True, _dedup([q_init, q_goal]), 0)

    c_t, c_T = q_init, q_goal
    for i in range(params.max_iterations):
        goal_arg = c_T if params.sampler_goal == "frontier" else tree_b.node(0)
        sample = np.asarray(sampler.next_config(c_t, goal_arg, context), dtype=float)

        near_a = nearest_node(tree_a, sample)
        size_a = len(tree_a)
        new_a = traverse_manifold(spec, chain, world, sample, near_a, tree_a, params, counters)
        idx_a = len(tree_a) - 1 if len(tree_a) > size_a else near_a

        near_b = nearest_node(tree_b, new_a)
        size_b = len(tree_b)
        new_b = traverse_manifold(spec, chain, world, new_a, near_b, tree_b, params, counters)
        idx_b = len(tree_b) - 1 if len(tree_b) > size_b else near_b

        if float(np.max(np.abs(new_a - new_b))) <= params.reach_radius and motion_collision_free(
            world, chain, new_a, new_b, params.resolution
        ):
            return result(True, _extract(tree_a, idx_a, tree_b, idx_b), i + 1)

        c_t, c_T = new_b, new_a
        tree_a, tree_b = tree_b, tree_a

    return result(False, None, params.max_iterations)


def validate_path(
    spec: ConstraintSpec,
    chain: KinematicChain,
    world: World,
    path: Path,
    params: PlannerParams,
    c_init=None,
    c_goal=None,
    collision_resolution: float = 1e-3,
) -> ValidationReport:
    """Independent re-check of a path: endpoint identity (when the query is
    given), joint limits, per-waypoint constraint norms, per-edge gaps, and
    collisions re-swept at a much finer resolution than the planner uses."""
    w = np.asarray(path.waypoints, dtype=float)
    if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] != chain.dof:
        return ValidationReport(False, "empty", None, "path needs at least one waypoint of chain dof")
    for name, ref, idx in (("start", c_init, 0), ("goal", c_goal, w.shape[0] - 1)):
        if ref is not None and float(np.max(np.abs(w[idx] - np.asarray(ref, dtype=float)))) > 1e-9:
            return ValidationReport(False, "endpoint", idx, f"{name} waypoint differs from query")
    for i, q in enumerate(w):
        if not chain.contains(q, tol=1e-9):
            return ValidationReport(False, "limits", i, f"waypoint {i} violates joint limits")
        norm = constraint_error(spec, chain, q).norm
        if norm >= spec.epsilon:
            return ValidationReport(
                False, "constraint", i, f"waypoint {i} constraint norm {norm:.3g} >= {spec.epsilon:.3g}"
            )
    gaps = np.max(np.abs(np.diff(w, axis=0)), axis=1) if w.shape[0] > 1 else np.zeros(0)
    for i, gap in enumerate(gaps):
        if gap > params.step_cap * (1.0 + 1e-9):
            return ValidationReport(False, "gap", i, f"edge {i} jumps {gap:.3g} rad > {params.step_cap:.3g}")
    for i in range(w.shape[0] - 1):
        n = max(1, int(np.ceil(gaps[i] / collision_resolution)))
        ts = np.linspace(0.0, 1.0, n + 1)
        sweep = w[i] + ts[:, None] * (w[i + 1] - w[i])
        if bool(configs_in_collision(world, chain, sweep).any()):
            return ValidationReport(False, "collision", i, f"edge {i} sweeps through an obstacle")
    return ValidationReport(True)


def smooth(
    spec: ConstraintSpec,
    chain: KinematicChain,
    world: World,
    path: Path,
    params: PlannerParams,
    attempts: int | None = None,
) -> Path:
    """Shortcut smoothing: try constrained geodesic connections between random
    waypoint pairs (seeded by params.seed) and splice when the connection both
    reaches and shortens the path. The output still validates and is never
    longer than the input."""
    attempts = params.smooth_attempts if attempts is None else attempts
    rng = np.random.default_rng([params.seed, 0x5A17])
    points = [np.array(w, dtype=float) for w in path.waypoints]
    for _ in range(attempts):
        m = len(points)
        if m < 3:
            break
        i, j = sorted(int(v) for v in rng.integers(0, m, size=2))
        if j - i < 2:
            continue
        scratch = PlanTree(points[i], "scratch")
        frontier = traverse_manifold(spec, chain, world, points[j], 0, scratch, params)
        if float(np.max(np.abs(frontier - points[j]))) > params.reach_radius:
            continue
        if not motion_collision_free(world, chain, frontier, points[j], params.resolution):
            continue
        shortcut = [scratch.node(k) for k in range(1, len(scratch))]
        candidate = points[: i + 1] + shortcut + points[j:]
        candidate = [np.asarray(v) for v in _dedup(candidate)]
        if _joint_length(np.asarray(candidate)) < _joint_length(np.asarray(points)) - 1e-12:
            points = candidate
    waypoints = np.asarray(points)
    meta = dict(path.metadata)
    meta["length"] = _joint_length(waypoints)
    meta["smoothed"] = True
    return Path(waypoints, meta)


def audit_tree(
    spec: ConstraintSpec,
    chain: KinematicChain,
    world: World,
    tree: PlanTree,
    params: PlannerParams,
) -> ValidationReport:
    """Post-hoc check of the tree invariants: parent ordering plus the
    constrained-edge contract on every edge."""
    for idx in range(len(tree)):
        parent = tree.parents[idx]
        if idx == 0:
            if parent is not None:
                return ValidationReport(False, "root", idx, "root must have no parent")
            continue
        if parent is None or parent >= idx:
            return ValidationReport(False, "order", idx, "parent index must precede node")
        q = tree.node(idx)
        if constraint_error(spec, chain, q).norm >= spec.epsilon:
            return ValidationReport(False, "constraint", idx, "node off the manifold")
        gap = float(np.max(np.abs(q - tree.node(parent))))
        if gap > params.step_cap * (1.0 + 1e-9):
            return ValidationReport(False, "gap", idx, f"edge gap {gap:.3g}")
        if not motion_collision_free(world, chain, tree.node(parent), q, params.resolution):
            return ValidationReport(False, "collision", idx, "edge collides")
    return ValidationReport(True)


def derive_params(params: PlannerParams, seed: int) -> PlannerParams:
    return replace(params, seed=seed)
