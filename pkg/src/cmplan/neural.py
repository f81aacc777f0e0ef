"""Imitation-trained next-configuration policy.

A small feed-forward network maps (task one-hot, occupancy grid, current and
goal configurations, all normalized) to the next configuration. Observation and
task encoders are deterministic; the core stack applies dropout to its hidden
layers in training AND in stochastic inference, which is what makes the policy
a sampler. Layers, backprop, and SGD are hand-rolled on numpy: the network is
tiny and this keeps the gradient checks meaningful.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, SchemaError, TrainingDivergedError
from .kinematics import KinematicChain

WEIGHTS_FORMAT = "cmplan-weights/1"


@dataclass
class Dense:
    w: np.ndarray  # (n_out, n_in)
    b: np.ndarray  # (n_out,)


@dataclass
class PlanningNetwork:
    """Weights for the task encoder, observation encoder, and core stack.

    Hidden activations are rectified-linear; the core output layer is tanh so
    raw outputs live in [-1, 1], matching normalized configurations. Dropout
    (inverted convention, scale 1/(1-p) when active) applies to core hidden
    layers only.
    """

    obs_encoder: list
    task_encoder: list
    core: list
    dropout_p: float
    dims: dict

    @property
    def dof(self) -> int:
        return self.dims["dof"]

    @property
    def grid_cells(self) -> int:
        return self.dims["grid_cells"]

    @property
    def vocab_size(self) -> int:
        return self.dims["vocab_size"]


def _init_stack(rng, sizes, out_gain):
    layers = []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        last = i == len(sizes) - 2
        std = out_gain / np.sqrt(fan_in) if last else np.sqrt(2.0 / fan_in)
        layers.append(Dense(rng.normal(0.0, std, (fan_out, fan_in)), np.zeros(fan_out)))
    return layers


def create_network(
    grid_cells: int = 1024,
    vocab_size: int = 3,
    dof: int = 4,
    obs_hidden=(128,),
    obs_dim: int = 64,
    task_hidden=(),
    task_dim: int = 32,
    core_hidden=(128, 128),
    dropout_p: float = 0.5,
    seed: int = 0,
) -> PlanningNetwork:
    """Freshly initialized network (He init on hidden layers, Xavier-style on outputs)."""
    if not 0.0 <= dropout_p < 1.0:
        raise ContractError("dropout_p must be in [0, 1)")
    rng = np.random.default_rng(seed)
    dims = {
        "grid_cells": int(grid_cells),
        "vocab_size": int(vocab_size),
        "dof": int(dof),
        "obs_hidden": [int(h) for h in obs_hidden],
        "obs_dim": int(obs_dim),
        "task_hidden": [int(h) for h in task_hidden],
        "task_dim": int(task_dim),
        "core_hidden": [int(h) for h in core_hidden],
    }
    obs = _init_stack(rng, [grid_cells, *obs_hidden, obs_dim], 1.0)
    task = _init_stack(rng, [vocab_size, *task_hidden, task_dim], 1.0)
    core_in = task_dim + obs_dim + 2 * dof
    core = _init_stack(rng, [core_in, *core_hidden, dof], 1.0)
    return PlanningNetwork(obs, task, core, float(dropout_p), dims)


def _stack_forward(layers, x, out_act, dropout_p=0.0, rng=None):
    """Forward a 2-D batch through a stack; returns (output, caches) where each
    cache is (input, pre_activation, activated, dropout_scale_or_None)."""
    caches = []
    h = x
    for i, layer in enumerate(layers):
        z = h @ layer.w.T + layer.b
        if i == len(layers) - 1:
            a = np.tanh(z) if out_act == "tanh" else z
            mask = None
        else:
            a = np.maximum(z, 0.0)
            mask = None
            if dropout_p > 0.0:
                keep = rng.random(a.shape) >= dropout_p
                mask = keep / (1.0 - dropout_p)
                a = a * mask
        caches.append((h, z, a, mask))
        h = a
    return h, caches


def _stack_backward(layers, caches, grad_out, out_act):
    """Gradients of every layer plus the gradient w.r.t. the stack input."""
    grads = [None] * len(layers)
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        x_in, z, a, mask = caches[i]
        if i == len(layers) - 1:
            dz = g * (1.0 - a**2) if out_act == "tanh" else g
        else:
            if mask is not None:
                g = g * mask
            dz = g * (z > 0.0)
        grads[i] = (dz.T @ x_in, dz.sum(axis=0))
        g = dz @ layers[i].w
    return grads, g


def _as_row(v, n, name):
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.size != n:
        raise ContractError(f"{name} has length {a.size}, expected {n}")
    return a[None, :]


def encode_observation(net: PlanningNetwork, grid) -> np.ndarray:
    """Deterministic latent code of a flattened occupancy grid."""
    x = _as_row(grid, net.grid_cells, "grid")
    out, _ = _stack_forward(net.obs_encoder, x, "linear")
    return out[0]


def encode_task(net: PlanningNetwork, task_onehot) -> np.ndarray:
    """Deterministic latent code of a task one-hot vector."""
    x = _as_row(task_onehot, net.vocab_size, "task one-hot")
    out, _ = _stack_forward(net.task_encoder, x, "linear")
    return out[0]


def core_forward(
    net: PlanningNetwork,
    z_task,
    z_obs,
    c_t,
    c_T,
    mode: str = "deterministic",
    rng=None,
) -> np.ndarray:
    """Next normalized configuration from precomputed latents.

    ``mode`` is "deterministic" (plain forward) or "stochastic" (dropout active
    on core hidden layers; requires ``rng``). Inputs c_t, c_T are normalized
    configurations in [-1, 1]^dof; the output is too.
    """
    if mode not in ("deterministic", "stochastic"):
        raise ContractError(f"unknown mode {mode!r}")
    if mode == "stochastic" and rng is None:
        raise ContractError("stochastic mode requires an rng")
    zc = _as_row(z_task, net.dims["task_dim"], "task latent")
    zo = _as_row(z_obs, net.dims["obs_dim"], "observation latent")
    ct = _as_row(c_t, net.dof, "current configuration")
    cT = _as_row(c_T, net.dof, "goal configuration")
    x = np.concatenate([zc, zo, ct, cT], axis=1)
    p = net.dropout_p if mode == "stochastic" else 0.0
    out, _ = _stack_forward(net.core, x, "tanh", dropout_p=p, rng=rng)
    return out[0]


def forward(
    net: PlanningNetwork,
    grid,
    task_onehot,
    c_t,
    c_T,
    mode: str = "deterministic",
    rng=None,
) -> np.ndarray:
    """Full pipeline: encode grid and task, then predict the next configuration."""
    z_o = encode_observation(net, grid)
    z_c = encode_task(net, task_onehot)
    return core_forward(net, z_c, z_o, c_t, c_T, mode=mode, rng=rng)


def loss(predictions, targets, n_steps: int) -> float:
    """Mean squared next-configuration error: sum of squared norms over all
    predicted steps, divided by the number of steps in the batch."""
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape:
        raise ContractError(f"prediction shape {p.shape} != target shape {t.shape}")
    if p.size == 0 or n_steps <= 0:
        raise ContractError("loss needs a non-empty batch")
    return float(((p - t) ** 2).sum() / n_steps)


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class Demonstration:
    scenario_id: str
    task_id: int
    waypoints: np.ndarray  # (m, dof) raw joint angles


@dataclass
class DemonstrationSet:
    """Training corpus: demonstrations plus the occupancy grid of each scenario.

    Waypoint validity (constraint adherence, collision-free connections) is the
    corpus builder's responsibility at ingestion.
    """

    chain: KinematicChain
    vocab_size: int
    demos: list
    grids: dict  # scenario_id -> flat float grid

    def __post_init__(self):
        for demo in self.demos:
            if demo.scenario_id not in self.grids:
                raise ContractError(f"no occupancy grid for scenario {demo.scenario_id!r}")
            if demo.waypoints.ndim != 2 or demo.waypoints.shape[1] != self.chain.dof:
                raise ContractError(f"bad waypoint shape for scenario {demo.scenario_id!r}")


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 150
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    holdout_fraction: float = 0.125

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ContractError("holdout_fraction must be in [0, 1)")


@dataclass
class TrainingResult:
    history: list  # dicts: epoch, train_loss, heldout_loss (None if no holdout)
    heldout_ids: list
    initial_loss: float
    final_loss: float


@dataclass
class _SampleSet:
    c_t: np.ndarray
    c_T: np.ndarray
    target: np.ndarray
    grid_idx: np.ndarray
    task_idx: np.ndarray
    grid_matrix: np.ndarray

    @property
    def size(self):
        return self.c_t.shape[0]


def _build_samples(demos: DemonstrationSet, use_ids) -> _SampleSet:
    from .sampler import normalize  # deferred: sampler imports this module

    chain = demos.chain
    sid_order, sid_index = [], {}
    ct, cT, tgt, gidx, tidx = [], [], [], [], []
    for demo in demos.demos:
        if demo.scenario_id not in use_ids or demo.waypoints.shape[0] < 2:
            continue
        if demo.scenario_id not in sid_index:
            sid_index[demo.scenario_id] = len(sid_order)
            sid_order.append(demo.scenario_id)
        wpn = normalize(chain, demo.waypoints)
        steps = wpn.shape[0] - 1
        ct.append(wpn[:-1])
        tgt.append(wpn[1:])
        cT.append(np.tile(wpn[-1], (steps, 1)))
        gidx.append(np.full(steps, sid_index[demo.scenario_id]))
        tidx.append(np.full(steps, demo.task_id))
    if not ct:
        raise ContractError("no usable demonstrations")
    grid_matrix = np.stack([np.asarray(demos.grids[s], dtype=float) for s in sid_order])
    return _SampleSet(
        np.concatenate(ct),
        np.concatenate(cT),
        np.concatenate(tgt),
        np.concatenate(gidx),
        np.concatenate(tidx),
        grid_matrix,
    )


def _eval_loss(net, samples: _SampleSet) -> float:
    z_o_all, _ = _stack_forward(net.obs_encoder, samples.grid_matrix, "linear")
    eye = np.eye(net.vocab_size)
    z_c_all, _ = _stack_forward(net.task_encoder, eye, "linear")
    x = np.concatenate(
        [z_c_all[samples.task_idx], z_o_all[samples.grid_idx], samples.c_t, samples.c_T],
        axis=1,
    )
    out, _ = _stack_forward(net.core, x, "tanh")
    return loss(out, samples.target, samples.size)


def _sgd_step(layers, grads, velocities, lr, mu):
    for layer, (dw, db), vel in zip(layers, grads, velocities):
        vel[0] *= mu
        vel[0] -= lr * dw
        vel[1] *= mu
        vel[1] -= lr * db
        layer.w += vel[0]
        layer.b += vel[1]


def train(net: PlanningNetwork, demos: DemonstrationSet, cfg: TrainingConfig) -> TrainingResult:
    """Minimize the mean squared next-step error over all consecutive waypoint
    pairs of every demonstration, with dropout active and gradients flowing
    through both encoders. Mutates ``net`` in place.

    The holdout split is by scenario, never by waypoint. Raises
    TrainingDivergedError on a non-finite loss.
    """
    all_ids = sorted({d.scenario_id for d in demos.demos})
    if not all_ids:
        raise ContractError("empty demonstration set")
    rng_split = np.random.default_rng([cfg.seed, 1])
    heldout = []
    if cfg.holdout_fraction > 0 and len(all_ids) >= 2:
        n_hold = min(len(all_ids) - 1, max(1, round(cfg.holdout_fraction * len(all_ids))))
        perm = rng_split.permutation(len(all_ids))
        heldout = sorted(all_ids[i] for i in perm[:n_hold])
    train_ids = [s for s in all_ids if s not in set(heldout)]

    train_set = _build_samples(demos, set(train_ids))
    held_set = _build_samples(demos, set(heldout)) if heldout else None

    rng = np.random.default_rng([cfg.seed, 2])
    eye = np.eye(net.vocab_size)
    velocities = {
        name: [[np.zeros_like(l.w), np.zeros_like(l.b)] for l in stack]
        for name, stack in (
            ("obs", net.obs_encoder),
            ("task", net.task_encoder),
            ("core", net.core),
        )
    }

    def snapshot(epoch):
        return {
            "epoch": epoch,
            "train_loss": _eval_loss(net, train_set),
            "heldout_loss": _eval_loss(net, held_set) if held_set is not None else None,
        }

    history = [snapshot(0)]
    encoder_grads_checked = False

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train_set.size)
        for start in range(0, train_set.size, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            b = batch.size
            gids = train_set.grid_idx[batch]
            uniq_gids, inv = np.unique(gids, return_inverse=True)

            z_o_u, obs_caches = _stack_forward(
                net.obs_encoder, train_set.grid_matrix[uniq_gids], "linear"
            )
            z_c_all, task_caches = _stack_forward(net.task_encoder, eye, "linear")
            tids = train_set.task_idx[batch]
            x = np.concatenate(
                [z_c_all[tids], z_o_u[inv], train_set.c_t[batch], train_set.c_T[batch]],
                axis=1,
            )
            out, core_caches = _stack_forward(
                net.core, x, "tanh", dropout_p=net.dropout_p, rng=rng
            )
            diff = out - train_set.target[batch]
            batch_loss = float((diff**2).sum() / b)
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss {batch_loss} at epoch {epoch}, sample offset {start}"
                )

            core_grads, gx = _stack_backward(net.core, core_caches, 2.0 * diff / b, "tanh")
            d1, d2 = net.dims["task_dim"], net.dims["obs_dim"]
            g_zc, g_zo = gx[:, :d1], gx[:, d1 : d1 + d2]
            g_zo_u = np.zeros_like(z_o_u)
            np.add.at(g_zo_u, inv, g_zo)
            g_zc_all = np.zeros_like(z_c_all)
            np.add.at(g_zc_all, tids, g_zc)
            obs_grads, _ = _stack_backward(net.obs_encoder, obs_caches, g_zo_u, "linear")
            task_grads, _ = _stack_backward(net.task_encoder, task_caches, g_zc_all, "linear")

            if not encoder_grads_checked and batch_loss > 1e-9:
                flat = [g for gs in (obs_grads, task_grads) for pair in gs for g in pair]
                if not any(np.any(g != 0.0) for g in flat):
                    raise TrainingDivergedError("encoder gradients vanished on a nontrivial batch")
                encoder_grads_checked = True

            _sgd_step(net.core, core_grads, velocities["core"], cfg.learning_rate, cfg.momentum)
            _sgd_step(net.obs_encoder, obs_grads, velocities["obs"], cfg.learning_rate, cfg.momentum)
            _sgd_step(net.task_encoder, task_grads, velocities["task"], cfg.learning_rate, cfg.momentum)

        history.append(snapshot(epoch))
        if not np.isfinite(history[-1]["train_loss"]):
            raise TrainingDivergedError(f"non-finite evaluation loss after epoch {epoch}")

    return TrainingResult(
        history=history,
        heldout_ids=heldout,
        initial_loss=history[0]["train_loss"],
        final_loss=history[-1]["train_loss"],
    )


def write_loss_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "heldout_loss"])
        for row in history:
            held = "" if row["heldout_loss"] is None else repr(row["heldout_loss"])
            writer.writerow([row["epoch"], repr(row["train_loss"]), held])


# ---------------------------------------------------------------------------
# Persistence


def _layer_doc(layer: Dense) -> dict:
    return {"w": layer.w.tolist(), "b": layer.b.tolist()}


def save_weights(net: PlanningNetwork, path) -> None:
    """Write weights as versioned JSON; load_weights restores them bit-identically."""
    doc = {
        "format": WEIGHTS_FORMAT,
        "dropout_p": net.dropout_p,
        "dims": net.dims,
        "obs_encoder": [_layer_doc(l) for l in net.obs_encoder],
        "task_encoder": [_layer_doc(l) for l in net.task_encoder],
        "core": [_layer_doc(l) for l in net.core],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def _require(doc: dict, key: str, where: str):
    if not isinstance(doc, dict) or key not in doc:
        raise SchemaError("missing field", path=f"{where}.{key}")
    return doc[key]


def _load_stack(doc, name):
    layers = []
    for i, entry in enumerate(_require(doc, name, "$")):
        w = np.array(_require(entry, "w", f"$.{name}[{i}]"), dtype=float)
        b = np.array(_require(entry, "b", f"$.{name}[{i}]"), dtype=float)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.size:
            raise SchemaError("inconsistent layer shapes", path=f"$.{name}[{i}]")
        layers.append(Dense(w, b))
    return layers


def load_weights(path) -> PlanningNetwork:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"weights file is not valid JSON: {e}") from e
    fmt = _require(doc, "format", "$")
    if fmt != WEIGHTS_FORMAT:
        raise SchemaError(f"incompatible weights format {fmt!r}, expected {WEIGHTS_FORMAT!r}", path="$.format")
    dims = _require(doc, "dims", "$")
    for key in ("grid_cells", "vocab_size", "dof", "obs_dim", "task_dim"):
        _require(dims, key, "$.dims")
    net = PlanningNetwork(
        obs_encoder=_load_stack(doc, "obs_encoder"),
        task_encoder=_load_stack(doc, "task_encoder"),
        core=_load_stack(doc, "core"),
        dropout_p=float(_require(doc, "dropout_p", "$")),
        dims=dims,
    )
    if net.core[-1].b.size != dims["dof"]:
        raise SchemaError("core output size disagrees with dims.dof", path="$.core")
    if net.obs_encoder[0].w.shape[1] != dims["grid_cells"]:
        raise SchemaError("observation input size disagrees with dims.grid_cells", path="$.obs_encoder")
    return net
