"""Planar workspace: obstacles, collision queries, motion sweeps, occupancy grids.

Links are zero-width segments; obstacles are axis-aligned rectangles and
circles. A World is immutable after construction and safe to query from any
number of threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .kinematics import KinematicChain, batch_joint_points, link_segments

MOTION_RESOLUTION = 0.01  # rad, max-norm spacing of swept configurations
GRID_RESOLUTION = 32


@dataclass(frozen=True)
class Rectangle:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ContractError("rectangle needs lo < hi on both axes")


@dataclass(frozen=True)
class Circle:
    x: float
    y: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ContractError("circle radius must be positive")


class World:
    """Obstacle set inside a bounding box.

    Args:
        obstacles: iterable of Rectangle / Circle, each fully inside bounds.
        bounds: workspace bounding box.
    """

    def __init__(self, obstacles, bounds: Rectangle):
        self.obstacles = tuple(obstacles)
        self.bounds = bounds
        rects, circles = [], []
        for ob in self.obstacles:
            if isinstance(ob, Rectangle):
                if not (
                    ob.x_min >= bounds.x_min
                    and ob.y_min >= bounds.y_min
                    and ob.x_max <= bounds.x_max
                    and ob.y_max <= bounds.y_max
                ):
                    raise ContractError("rectangle obstacle lies outside world bounds")
                rects.append([ob.x_min, ob.y_min, ob.x_max, ob.y_max])
            elif isinstance(ob, Circle):
                if not (
                    ob.x - ob.radius >= bounds.x_min
                    and ob.x + ob.radius <= bounds.x_max
                    and ob.y - ob.radius >= bounds.y_min
                    and ob.y + ob.radius <= bounds.y_max
                ):
                    raise ContractError("circle obstacle lies outside world bounds")
                circles.append([ob.x, ob.y, ob.radius])
            else:
                raise ContractError(f"unsupported obstacle type {type(ob).__name__}")
        self._rects = np.array(rects, dtype=float).reshape(-1, 4)
        self._circles = np.array(circles, dtype=float).reshape(-1, 3)
        self._rects.setflags(write=False)
        self._circles.setflags(write=False)
        # Bounding boxes of every obstacle (circles inflated), for sweep prefilters.
        boxes = [self._rects]
        if self._circles.size:
            c = self._circles
            boxes.append(
                np.column_stack([c[:, 0] - c[:, 2], c[:, 1] - c[:, 2], c[:, 0] + c[:, 2], c[:, 1] + c[:, 2]])
            )
        self._boxes = np.concatenate([b for b in boxes if b.size] or [np.zeros((0, 4))])
        self._boxes.setflags(write=False)
        self.is_empty = not self.obstacles


def empty_world(bounds: Rectangle) -> World:
    return World((), bounds)


def points_in_collision(world: World, points) -> np.ndarray:
    """Boolean mask of points lying inside any obstacle (boundary inclusive).

    ``points`` has shape (..., 2); the result drops the trailing axis.
    """
    p = np.asarray(points, dtype=float)
    hit = np.zeros(p.shape[:-1], dtype=bool)
    if world._rects.size:
        r = world._rects
        inside = (
            (p[..., None, 0] >= r[:, 0])
            & (p[..., None, 0] <= r[:, 2])
            & (p[..., None, 1] >= r[:, 1])
            & (p[..., None, 1] <= r[:, 3])
        )
        hit |= inside.any(axis=-1)
    if world._circles.size:
        c = world._circles
        d2 = (p[..., None, 0] - c[:, 0]) ** 2 + (p[..., None, 1] - c[:, 1]) ** 2
        hit |= (d2 <= c[:, 2] ** 2).any(axis=-1)
    return hit


def _segments_hit_rects(p0, d, rects):
    # Slab clipping of segments p0 + t*d, t in [0, 1], against axis-aligned boxes.
    lo = rects[:, (0, 1)]
    hi = rects[:, (2, 3)]
    p0e = p0[..., None, :]
    de = d[..., None, :]
    parallel = de == 0.0
    d_safe = np.where(parallel, 1.0, de)
    t_lo = (lo - p0e) / d_safe
    t_hi = (hi - p0e) / d_safe
    t1 = np.minimum(t_lo, t_hi)
    t2 = np.maximum(t_lo, t_hi)
    inside = (p0e >= lo) & (p0e <= hi)
    t1 = np.where(parallel, np.where(inside, -np.inf, np.inf), t1)
    t2 = np.where(parallel, np.where(inside, np.inf, -np.inf), t2)
    t_min = t1.max(axis=-1)
    t_max = t2.min(axis=-1)
    return (t_min <= t_max) & (t_max >= 0.0) & (t_min <= 1.0)


def _segments_hit_circles(p0, d, circles):
    # Closest-point distance from each circle center to each segment.
    centers = circles[:, :2]
    radii = circles[:, 2]
    p0e = p0[..., None, :]
    de = d[..., None, :]
    w = centers - p0e
    dd = (de * de).sum(axis=-1)
    t = np.where(dd > 0.0, (w * de).sum(axis=-1) / np.where(dd > 0.0, dd, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = p0e + t[..., None] * de
    dist2 = ((closest - centers) ** 2).sum(axis=-1)
    return dist2 <= radii**2


def segments_in_collision(world: World, segments) -> np.ndarray:
    """Boolean mask of line segments touching any obstacle.

    ``segments`` has shape (..., 2, 2) as (start, end) point pairs; the result
    drops the last two axes.
    """
    segs = np.asarray(segments, dtype=float)
    p0 = segs[..., 0, :]
    d = segs[..., 1, :] - p0
    hit = np.zeros(p0.shape[:-1], dtype=bool)
    if world._rects.size:
        hit |= _segments_hit_rects(p0, d, world._rects).any(axis=-1)
    if world._circles.size:
        hit |= _segments_hit_circles(p0, d, world._circles).any(axis=-1)
    return hit


def config_in_collision(world: World, chain: KinematicChain, joints) -> bool:
    """True iff any link segment of the configuration intersects any obstacle."""
    if world.is_empty:
        _ = link_segments(chain, joints)  # still validates dimensions
        return False
    return bool(segments_in_collision(world, link_segments(chain, joints)).any())


def configs_in_collision(world: World, chain: KinematicChain, configs) -> np.ndarray:
    """Vectorized config_in_collision over a stack of configurations (m, dof)."""
    pts = batch_joint_points(chain, configs)
    if world.is_empty:
        return np.zeros(pts.shape[0], dtype=bool)
    segs = np.stack([pts[:, :-1], pts[:, 1:]], axis=2)
    return segments_in_collision(world, segs).any(axis=-1)


def _points_sweep_hits(world: World, pts: np.ndarray) -> bool:
    """Collision verdict for the chain polylines in ``pts`` (m, dof+1, 2),
    with an overall-bounding-box prefilter against the obstacle boxes."""
    flat = pts.reshape(-1, 2)
    lo = flat.min(axis=0)
    hi = flat.max(axis=0)
    b = world._boxes
    near = (b[:, 0] <= hi[0]) & (b[:, 2] >= lo[0]) & (b[:, 1] <= hi[1]) & (b[:, 3] >= lo[1])
    if not near.any():
        return False
    p0 = pts[:, :-1].reshape(-1, 2)
    d = pts[:, 1:].reshape(-1, 2) - p0
    n_rects = world._rects.shape[0]
    if near[:n_rects].any():
        if _segments_hit_rects(p0, d, world._rects[near[:n_rects]]).any():
            return True
    if near[n_rects:].any():
        if _segments_hit_circles(p0, d, world._circles[near[n_rects:]]).any():
            return True
    return False


def _sweep_steps(gap: float, resolution: float) -> int:
    # Power-of-two step counts make halving the resolution a strict refinement:
    # the coarse sample points are a subset of the fine ones.
    n = 1
    while n * resolution < gap - 1e-15:
        n *= 2
    return n


def sweep_free(
    world: World,
    chain: KinematicChain,
    qa: np.ndarray,
    qb: np.ndarray,
    resolution: float,
    skip_start: bool = False,
) -> bool:
    """Sweep collision check; ``skip_start`` drops the qa sample for callers
    that already know qa is collision-free (tree extension loops)."""
    if world.is_empty:
        return True
    gap = float(np.max(np.abs(qb - qa)))
    n = _sweep_steps(gap, resolution)
    ts = np.linspace(0.0, 1.0, n + 1)
    if skip_start:
        ts = ts[1:]
    sweep = qa + ts[:, None] * (qb - qa)
    return not _points_sweep_hits(world, batch_joint_points(chain, sweep))


def motion_collision_free(
    world: World,
    chain: KinematicChain,
    joints_a,
    joints_b,
    resolution: float = MOTION_RESOLUTION,
) -> bool:
    """True iff the straight joint-space motion between two configurations stays
    collision-free when sampled every ``resolution`` radians (max-norm),
    endpoints included."""
    qa = np.asarray(joints_a, dtype=float).reshape(-1)
    qb = np.asarray(joints_b, dtype=float).reshape(-1)
    if qa.size != chain.dof or qb.size != chain.dof:
        raise ContractError("configuration dimension mismatch")
    return sweep_free(world, chain, qa, qb, resolution)


@dataclass(frozen=True)
class OccupancyGrid:
    """Binary occupancy over the world bounds; cell (i, j) covers row i in y
    (ascending) and column j in x."""

    cells: np.ndarray
    bounds: Rectangle

    @property
    def resolution(self) -> int:
        return self.cells.shape[0]

    def flat01(self) -> np.ndarray:
        """Row-major float view in {0.0, 1.0}, the network input layout."""
        return self.cells.astype(float).ravel()


def rasterize(world: World, resolution: int = GRID_RESOLUTION) -> OccupancyGrid:
    """Sample obstacle occupancy at cell centers over the world bounds."""
    if resolution < 1:
        raise ContractError("grid resolution must be >= 1")
    b = world.bounds
    xs = b.x_min + (np.arange(resolution) + 0.5) * (b.x_max - b.x_min) / resolution
    ys = b.y_min + (np.arange(resolution) + 0.5) * (b.y_max - b.y_min) / resolution
    xx, yy = np.meshgrid(xs, ys)
    centers = np.stack([xx, yy], axis=-1)
    cells = points_in_collision(world, centers).astype(np.uint8)
    cells.setflags(write=False)
    return OccupancyGrid(cells, b)
