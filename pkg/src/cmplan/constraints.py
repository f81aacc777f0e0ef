"""Task-space constraints as bounded end-effector displacement, plus manifold projection.

A constraint restricts the end-effector pose to per-coordinate intervals around
a reference pose, measured in the reference frame. Displacement outside the
intervals is the constraint error; iterating damped pseudo-inverse steps of the
constraint Jacobian drives it to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .kinematics import KinematicChain, TaskPose, forward_kinematics, jacobian, wrap_angle

# Active task-space coordinates (indices into (x, y, theta)) per constraint kind.
KINDS = {
    "none": (),
    "orientation_band": (2,),
    "position_line": (0, 1),
    "pose_region": (0, 1, 2),
}

DEFAULT_EPSILON = 1e-4
DLS_DAMPING = 1e-8


@dataclass(frozen=True)
class ConstraintSpec:
    """End-effector displacement bounds around a reference pose.

    ``bounds`` holds one (lo, hi) interval per active coordinate of ``kind``:
    nothing for "none", (theta,) for "orientation_band", (along, across) for
    "position_line" measured in the reference frame, and (x, y, theta) for
    "pose_region". Equality constraints use lo == hi.
    """

    kind: str
    reference: TaskPose = field(default_factory=lambda: TaskPose(0.0, 0.0, 0.0))
    bounds: np.ndarray = ()
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown constraint kind {self.kind!r}")
        k = len(KINDS[self.kind])
        flat = np.array(self.bounds, dtype=float).reshape(-1)
        if flat.size != 2 * k:
            raise ContractError(f"kind {self.kind!r} needs {k} (lo, hi) bounds")
        b = flat.reshape(k, 2) if k else np.zeros((0, 2))
        if np.any(b[:, 0] > b[:, 1]):
            raise ContractError("bounds must satisfy lo <= hi")
        if not self.epsilon > 0:
            raise ContractError("epsilon must be positive")
        b.setflags(write=False)
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def active(self) -> tuple:
        return KINDS[self.kind]

    @property
    def k(self) -> int:
        return len(KINDS[self.kind])


def unconstrained() -> ConstraintSpec:
    return ConstraintSpec("none")


@dataclass(frozen=True)
class DisplacementVector:
    """Per-coordinate constraint error (zero inside the bounds) and its 2-norm."""

    values: np.ndarray
    norm: float


def task_displacement(spec: ConstraintSpec, chain: KinematicChain, joints) -> np.ndarray:
    """Raw displacement of the end effector from the reference, in the reference frame.

    Returns the active coordinates only, unclamped; length spec.k.
    """
    if spec.k == 0:
        return np.zeros(0)
    pose = forward_kinematics(chain, joints)
    ref = spec.reference
    c, s = math.cos(ref.theta), math.sin(ref.theta)
    dx, dy = pose.x - ref.x, pose.y - ref.y
    local = np.array([c * dx + s * dy, -s * dx + c * dy, wrap_angle(pose.theta - ref.theta)])
    return local[list(spec.active)]


def constraint_error(spec: ConstraintSpec, chain: KinematicChain, joints) -> DisplacementVector:
    """Displacement clamped against the bounds: the amount by which each
    coordinate exceeds its interval, zero when inside."""
    d = task_displacement(spec, chain, joints)
    lo, hi = spec.bounds[:, 0], spec.bounds[:, 1]
    v = np.where(d > hi, d - hi, 0.0) + np.where(d < lo, d - lo, 0.0)
    return DisplacementVector(v, float(np.linalg.norm(v)))


def constraint_jacobian(spec: ConstraintSpec, chain: KinematicChain, joints) -> np.ndarray:
    """Jacobian of the clamped displacement, shape (k, dof).

    Rows are the kinematic Jacobian rows of the active coordinates rotated into
    the reference frame; rows whose coordinate lies strictly inside its bounds
    are zero because the clamp is flat there.
    """
    if spec.k == 0:
        return np.zeros((0, chain.dof))
    J = jacobian(chain, joints)
    ref = spec.reference
    c, s = math.cos(ref.theta), math.sin(ref.theta)
    rot = np.array([[c, s], [-s, c]])
    J_local = np.vstack([rot @ J[:2], J[2:3]])
    rows = J_local[list(spec.active)]
    d = task_displacement(spec, chain, joints)
    inside = (d > spec.bounds[:, 0]) & (d < spec.bounds[:, 1])
    return np.where(inside[:, None], 0.0, rows)


def _error_and_jacobian(spec: ConstraintSpec, chain: KinematicChain, q):
    """Fused single-FK evaluation of (error values, squared norm, Jacobian rows).

    Same math as constraint_error + constraint_jacobian; kept as one pass
    because the projection loop calls it every iteration.
    """
    ref = spec.reference
    if spec.active == (2,):
        # Orientation-only constraints need no positions: theta is the angle sum.
        d = wrap_angle(float(np.sum(q)) + chain.base_pose[2] - ref.theta)
        lo, hi = spec.bounds[0]
        v = (d - hi) if d > hi else (d - lo) if d < lo else 0.0
        row = np.zeros(chain.dof) if lo < d < hi else np.ones(chain.dof)
        return np.array([v]), v * v, [row]
    bx, by, bth = chain.base_pose
    phis = np.cumsum(q) + bth
    cphi, sphi = np.cos(phis), np.sin(phis)
    seg_x = chain.link_lengths * cphi
    seg_y = chain.link_lengths * sphi
    xs = np.cumsum(seg_x) + bx
    ys = np.cumsum(seg_y) + by
    ee_x, ee_y, ee_th = xs[-1], ys[-1], phis[-1]
    cr, sr = math.cos(ref.theta), math.sin(ref.theta)
    dx, dy = ee_x - ref.x, ee_y - ref.y
    local = (cr * dx + sr * dy, -sr * dx + cr * dy, wrap_angle(ee_th - ref.theta))

    # Joint positions: base then every link start.
    jx = np.empty(chain.dof)
    jx[0] = bx
    jx[1:] = xs[:-1]
    jy = np.empty(chain.dof)
    jy[0] = by
    jy[1:] = ys[:-1]
    row_x = None
    rows = []
    values = np.empty(spec.k)
    norm2 = 0.0
    for i, coord in enumerate(spec.active):
        d = local[coord]
        lo, hi = spec.bounds[i]
        v = (d - hi) if d > hi else (d - lo) if d < lo else 0.0
        values[i] = v
        norm2 += v * v
        if lo < d < hi:
            rows.append(np.zeros(chain.dof))
            continue
        if coord == 2:
            rows.append(np.ones(chain.dof))
            continue
        if row_x is None:
            row_x = ee_y - jy  # -d(ee_y - j_y) sign folded below
            row_y = ee_x - jx
        if coord == 0:
            rows.append(-cr * row_x + sr * row_y)
        else:
            rows.append(sr * row_x + cr * row_y)
    return values, norm2, rows


def project(
    spec: ConstraintSpec,
    chain: KinematicChain,
    joints,
    max_iters: int = 50,
    damping: float = DLS_DAMPING,
):
    """Pull a configuration onto the constraint manifold, or return None.

    Iterates dc = J+ dx with a damped least-squares pseudo-inverse (robust at
    singularities), clamping into joint limits after every step. Succeeds when
    the error norm drops below spec.epsilon within max_iters update steps;
    returns None on exhaustion so callers can discard the sample.
    """
    if max_iters < 1:
        raise ContractError("max_iters must be >= 1")
    lo, hi = chain.lower, chain.upper
    q = np.clip(np.asarray(joints, dtype=float).reshape(-1), lo, hi)
    if q.size != chain.dof:
        raise ContractError(f"configuration has {q.size} joints, chain has {chain.dof}")
    k = spec.k
    if k == 0:
        return q
    eps2 = spec.epsilon * spec.epsilon
    for _ in range(max_iters):
        values, norm2, rows = _error_and_jacobian(spec, chain, q)
        if norm2 < eps2:
            return q
        dq = _dls_step(rows, values, k, damping)
        q = np.clip(q - dq, lo, hi)
    _, norm2, _ = _error_and_jacobian(spec, chain, q)
    if norm2 < eps2:
        return q
    return None


def _dls_step(rows, values, k: int, damping: float):
    """J.T (J J.T + damping I)^-1 values, with closed forms for k <= 2."""
    if k == 1:
        r = rows[0]
        y = values[0] / (float(r @ r) + damping)
        return y * r
    if k == 2:
        r0, r1 = rows
        a = float(r0 @ r0) + damping
        b = float(r0 @ r1)
        c = float(r1 @ r1) + damping
        det = a * c - b * b
        y0 = (c * values[0] - b * values[1]) / det
        y1 = (a * values[1] - b * values[0]) / det
        return y0 * r0 + y1 * r1
    J = np.stack(rows)
    y = np.linalg.solve(J @ J.T + damping * np.eye(k), values)
    return J.T @ y


def on_manifold(spec: ConstraintSpec, chain: KinematicChain, joints) -> bool:
    return constraint_error(spec, chain, joints).norm < spec.epsilon
