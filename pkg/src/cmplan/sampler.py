"""Next-configuration samplers behind one interface, plus configuration normalization.

Samplers are per-query objects: they may keep per-query state (the hybrid's
iteration counter) and draw from the context rng. The planner calls
``next_config`` exactly once per planning iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import neural
from .errors import ContractError
from .kinematics import KinematicChain

GOAL_BIAS = 0.1
EXPLOIT_BUDGET = 50


def normalize(chain: KinematicChain, joints) -> np.ndarray:
    """Affine map of joint values from [lo, hi] onto [-1, 1] per joint.

    Accepts single configurations or stacks (..., dof); values are clamped into
    the limit box first.
    """
    q = np.asarray(joints, dtype=float)
    if q.shape[-1] != chain.dof:
        raise ContractError(f"configuration has {q.shape[-1]} joints, chain has {chain.dof}")
    lo, hi = chain.lower, chain.upper
    q = np.clip(q, lo, hi)
    return 2.0 * (q - lo) / (hi - lo) - 1.0


def unnormalize(chain: KinematicChain, values) -> np.ndarray:
    """Inverse of normalize: [-1, 1] (clamped) back to joint values in [lo, hi]."""
    v = np.asarray(values, dtype=float)
    if v.shape[-1] != chain.dof:
        raise ContractError(f"vector has {v.shape[-1]} entries, chain has {chain.dof}")
    v = np.clip(v, -1.0, 1.0)
    lo, hi = chain.lower, chain.upper
    return lo + 0.5 * (v + 1.0) * (hi - lo)


@dataclass
class SamplerContext:
    """Per-query inputs shared by all samplers.

    ``grid`` (flat occupancy) and ``task_onehot`` are only needed by the neural
    and hybrid samplers; ``cache`` memoizes the deterministic encoder outputs so
    they are computed once per query.
    """

    chain: KinematicChain
    rng: np.random.Generator
    grid: np.ndarray | None = None
    task_onehot: np.ndarray | None = None
    cache: dict = field(default_factory=dict)


class UniformSampler:
    """Goal-biased uniform sampling over the joint-limit box."""

    def __init__(self, goal_bias: float = GOAL_BIAS):
        if not 0.0 <= goal_bias <= 1.0:
            raise ContractError("goal_bias must be in [0, 1]")
        self.goal_bias = goal_bias

    def next_config(self, c_t, c_T, context: SamplerContext) -> np.ndarray:
        if self.goal_bias > 0.0 and context.rng.random() < self.goal_bias:
            return np.array(c_T, dtype=float)
        return context.rng.uniform(context.chain.lower, context.chain.upper)


class NeuralSampler:
    """Stochastic forward pass of a trained policy, unnormalized into joint space."""

    def __init__(self, net):
        if net is None:
            raise ContractError("neural sampler requires a trained network")
        self.net = net

    def _latents(self, context: SamplerContext):
        key = "neural_latents"
        if key not in context.cache:
            if context.grid is None or context.task_onehot is None:
                raise ContractError("neural sampler context needs grid and task_onehot")
            context.cache[key] = (
                neural.encode_task(self.net, context.task_onehot),
                neural.encode_observation(self.net, context.grid),
            )
        return context.cache[key]

    def next_config(self, c_t, c_T, context: SamplerContext) -> np.ndarray:
        z_c, z_o = self._latents(context)
        chain = context.chain
        v = neural.core_forward(
            self.net,
            z_c,
            z_o,
            normalize(chain, c_t),
            normalize(chain, c_T),
            mode="stochastic",
            rng=context.rng,
        )
        return unnormalize(chain, v)


class HybridSampler:
    """Neural proposals for the first ``exploit_budget`` planner iterations of a
    query, uniform sampling afterwards. ``source_log`` records which source
    produced each draw ("neural" / "uniform")."""

    def __init__(self, net, exploit_budget: float = EXPLOIT_BUDGET, goal_bias: float = GOAL_BIAS):
        if exploit_budget < 0:
            raise ContractError("exploit_budget must be >= 0")
        self._neural = NeuralSampler(net)
        self._uniform = UniformSampler(goal_bias)
        self.exploit_budget = exploit_budget
        self.calls = 0
        self.source_log = []

    def next_config(self, c_t, c_T, context: SamplerContext) -> np.ndarray:
        exploit = self.calls < self.exploit_budget
        self.calls += 1
        self.source_log.append("neural" if exploit else "uniform")
        src = self._neural if exploit else self._uniform
        return src.next_config(c_t, c_T, context)


def make_sampler(
    kind: str,
    net=None,
    goal_bias: float = GOAL_BIAS,
    exploit_budget: float = EXPLOIT_BUDGET,
):
    """Fresh per-query sampler instance of the given kind."""
    if kind == "uniform":
        return UniformSampler(goal_bias)
    if kind == "neural":
        return NeuralSampler(net)
    if kind == "hybrid":
        return HybridSampler(net, exploit_budget=exploit_budget, goal_bias=goal_bias)
    raise ContractError(f"unknown sampler kind {kind!r}")
