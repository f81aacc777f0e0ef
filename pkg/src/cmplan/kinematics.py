"""Planar serial-chain kinematics: forward pose, analytic Jacobian, link geometry.

All operations are pure functions of the chain and a joint vector; joint
vectors are plain float arrays of length ``chain.dof``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

TAU = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    t = math.remainder(theta, TAU)
    if t <= -math.pi:
        t += TAU
    return t


@dataclass(frozen=True)
class TaskPose:
    """Planar end-effector pose; theta is normalized to (-pi, pi] on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class KinematicChain:
    """Planar revolute chain: positive link lengths, per-joint angle limits, base pose.

    Joint limits are (lo, hi) pairs in radians with lo < hi and hi - lo <= 2*pi,
    so angles stay unwrapped and joint-space distance stays Euclidean.
    """

    link_lengths: np.ndarray
    joint_limits: np.ndarray
    base_pose: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        lengths = np.array(self.link_lengths, dtype=float).reshape(-1)
        limits = np.array(self.joint_limits, dtype=float)
        if lengths.size < 1:
            raise ContractError("chain needs at least one link")
        if np.any(lengths <= 0):
            raise ContractError("link lengths must be positive")
        if limits.shape != (lengths.size, 2):
            raise ContractError(f"joint_limits must have shape ({lengths.size}, 2)")
        if np.any(limits[:, 0] >= limits[:, 1]):
            raise ContractError("joint limits must satisfy lo < hi")
        if np.any(limits[:, 1] - limits[:, 0] > TAU + 1e-12):
            raise ContractError("joint limit span must not exceed 2*pi")
        base = tuple(float(v) for v in self.base_pose)
        if len(base) != 3:
            raise ContractError("base_pose must be (x, y, theta)")
        lengths.setflags(write=False)
        limits.setflags(write=False)
        object.__setattr__(self, "link_lengths", lengths)
        object.__setattr__(self, "joint_limits", limits)
        object.__setattr__(self, "base_pose", base)

    @property
    def dof(self) -> int:
        return self.link_lengths.size

    @property
    def lower(self) -> np.ndarray:
        return self.joint_limits[:, 0]

    @property
    def upper(self) -> np.ndarray:
        return self.joint_limits[:, 1]

    def config(self, joints) -> np.ndarray:
        """Validate a joint vector for this chain and return it as a float array.

        Raises ContractError on a dimension mismatch or a joint-limit violation.
        """
        q = np.array(joints, dtype=float).reshape(-1)
        if q.size != self.dof:
            raise ContractError(f"configuration has {q.size} joints, chain has {self.dof}")
        if np.any(q < self.lower - 1e-12) or np.any(q > self.upper + 1e-12):
            raise ContractError("configuration violates joint limits")
        return np.clip(q, self.lower, self.upper)

    def clamp(self, joints) -> np.ndarray:
        """Clip a joint vector into the limit box."""
        q = _as_joints(self, joints)
        return np.clip(q, self.lower, self.upper)

    def contains(self, joints, tol: float = 1e-12) -> bool:
        q = _as_joints(self, joints)
        return bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))

    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


def _as_joints(chain: KinematicChain, joints) -> np.ndarray:
    q = np.asarray(joints, dtype=float).reshape(-1)
    if q.size != chain.dof:
        raise ContractError(f"configuration has {q.size} joints, chain has {chain.dof}")
    return q


def joint_points(chain: KinematicChain, joints) -> np.ndarray:
    """Base position plus every link endpoint, shape (dof + 1, 2)."""
    q = _as_joints(chain, joints)
    bx, by, bth = chain.base_pose
    phis = bth + np.cumsum(q)
    steps = chain.link_lengths[:, None] * np.stack([np.cos(phis), np.sin(phis)], axis=1)
    pts = np.empty((chain.dof + 1, 2))
    pts[0, 0] = bx
    pts[0, 1] = by
    pts[1:] = pts[0] + np.cumsum(steps, axis=0)
    return pts


def batch_joint_points(chain: KinematicChain, configs: np.ndarray) -> np.ndarray:
    """joint_points for a stack of configurations, shape (m, dof + 1, 2)."""
    Q = np.asarray(configs, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != chain.dof:
        raise ContractError(f"expected configurations of shape (m, {chain.dof})")
    bx, by, bth = chain.base_pose
    phis = bth + np.cumsum(Q, axis=1)
    steps = chain.link_lengths[None, :, None] * np.stack(
        [np.cos(phis), np.sin(phis)], axis=2
    )
    pts = np.empty((Q.shape[0], chain.dof + 1, 2))
    pts[:, 0, 0] = bx
    pts[:, 0, 1] = by
    pts[:, 1:] = pts[:, :1] + np.cumsum(steps, axis=1)
    return pts


def forward_kinematics(chain: KinematicChain, joints) -> TaskPose:
    """End-effector pose (x, y, theta) of the chain at the given joint angles."""
    q = _as_joints(chain, joints)
    pts = joint_points(chain, q)
    return TaskPose(pts[-1, 0], pts[-1, 1], chain.base_pose[2] + float(np.sum(q)))


def jacobian(chain: KinematicChain, joints) -> np.ndarray:
    """Analytic Jacobian of (x, y, theta) with respect to the joints, shape (3, dof).

    Column j is (-(y_ee - y_j), x_ee - x_j, 1) with (x_j, y_j) the position of
    joint j; the orientation row is all ones for a planar revolute chain.
    """
    pts = joint_points(chain, joints)
    ee = pts[-1]
    J = np.ones((3, chain.dof))
    J[0] = -(ee[1] - pts[:-1, 1])
    J[1] = ee[0] - pts[:-1, 0]
    return J


def link_segments(chain: KinematicChain, joints) -> np.ndarray:
    """Link line segments joined end-to-end from the base, shape (dof, 2, 2)."""
    pts = joint_points(chain, joints)
    return np.stack([pts[:-1], pts[1:]], axis=1)
