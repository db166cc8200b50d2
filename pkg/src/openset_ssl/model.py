"""Encoder, projection header, classifier head, and dual-branch batch norm.

The encoder is a stack of dense layers (no bias; the following batch-norm
shift makes one redundant), each followed by batch normalization and relu.
Batch-norm scale/shift parameters are shared between a *main* and an
*auxiliary* statistics branch; each branch keeps its own running
mean/variance and is only ever touched by batches routed to it.

The projection header is a two-layer perceptron over the embedding; the
classifier head is a single dense layer over the embedding (the linear-
evaluation convention).
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from .autodiff import DiffGraph

CHECKPOINT_VERSION = 1

BRANCHES = ("main", "aux")
MODES = ("train", "eval")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dims: tuple = ()
    embed_dim: int = 32
    proj_dim: int = 16
    num_classes: int = 2
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        if self.input_dim < 1 or self.embed_dim < 1 or self.proj_dim < 1:
            raise ValueError("dimensions must be positive")
        if any(d < 1 for d in self.hidden_dims):
            raise ValueError("hidden dimensions must be positive")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if not 0.0 < self.bn_momentum < 1.0:
            raise ValueError("bn_momentum must lie in (0, 1)")
        if self.bn_epsilon <= 0.0:
            raise ValueError("bn_epsilon must be positive")

    @property
    def encoder_dims(self):
        """Per-layer (in, out) sizes of the encoder stack."""
        sizes = (self.input_dim,) + self.hidden_dims + (self.embed_dim,)
        return list(zip(sizes[:-1], sizes[1:]))

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "embed_dim": self.embed_dim,
            "proj_dim": self.proj_dim,
            "num_classes": self.num_classes,
            "bn_epsilon": self.bn_epsilon,
            "bn_momentum": self.bn_momentum,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hidden_dims"] = tuple(d.get("hidden_dims", ()))
        return cls(**d)


@dataclass
class Model:
    config: ModelConfig
    params: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def param_count(self):
        return sum(p.size for p in self.params.values())

    def copy(self):
        return Model(
            config=self.config,
            params={k: v.copy() for k, v in self.params.items()},
            stats={k: v.copy() for k, v in self.stats.items()},
        )


def expected_param_count(config):
    """Closed-form trainable parameter count for a config."""
    n = 0
    for fan_in, fan_out in config.encoder_dims:
        n += fan_in * fan_out + 2 * fan_out  # dense + bn scale/shift
    n += config.embed_dim * config.embed_dim + config.embed_dim  # header layer 1
    n += config.embed_dim * config.proj_dim + config.proj_dim  # header layer 2
    n += config.embed_dim * config.num_classes + config.num_classes  # classifier
    return n


def build_model(config, seed):
    """Seeded uniform fan-in init; BN scale 1, shift 0, running stats (0, 1)."""
    gen = rng_mod.stream(seed, "model.init")

    def dense(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return gen.uniform(-bound, bound, size=(fan_in, fan_out))

    params = {}
    stats = {}
    for i, (fan_in, fan_out) in enumerate(config.encoder_dims):
        params[f"enc{i}.w"] = dense(fan_in, fan_out)
        params[f"enc{i}.bn.scale"] = np.ones((1, fan_out))
        params[f"enc{i}.bn.shift"] = np.zeros((1, fan_out))
        for branch in BRANCHES:
            stats[f"enc{i}.bn.{branch}.mean"] = np.zeros((1, fan_out))
            stats[f"enc{i}.bn.{branch}.var"] = np.ones((1, fan_out))
    params["proj0.w"] = dense(config.embed_dim, config.embed_dim)
    params["proj0.b"] = np.zeros((1, config.embed_dim))
    params["proj1.w"] = dense(config.embed_dim, config.proj_dim)
    params["proj1.b"] = np.zeros((1, config.proj_dim))
    params["head.w"] = dense(config.embed_dim, config.num_classes)
    params["head.b"] = np.zeros((1, config.num_classes))
    return Model(config=config, params=params, stats=stats)


@dataclass
class ForwardNodes:
    graph: DiffGraph
    embedding: int
    projection: int
    logits: int
    batch_stats: list


@dataclass
class ForwardResult:
    embedding: np.ndarray
    projection: np.ndarray
    logits: np.ndarray


class GraphBuilder:
    """One differentiable pass: owns a graph and lazily created param nodes."""

    def __init__(self, model, graph=None):
        self.model = model
        self.graph = graph if graph is not None else DiffGraph()
        self._param_nodes = {}

    def param(self, name):
        if name not in self._param_nodes:
            self._param_nodes[name] = self.graph.input(self.model.params[name])
        return self._param_nodes[name]

    def const(self, value):
        return self.graph.input(value)

    @property
    def param_nodes(self):
        return dict(self._param_nodes)

    def gradients_by_name(self, grads):
        return {name: grads[node] for name, node in self._param_nodes.items()}

    # ------------------------------------------------------------------

    def _bn(self, h_id, layer, branch, mode):
        g = self.graph
        cfg = self.model.config
        n_rows = g.value(h_id).shape[0]
        width = g.value(h_id).shape[1]
        scale = self.param(f"{layer}.bn.scale")
        shift = self.param(f"{layer}.bn.shift")

        if mode == "train":
            if n_rows < 2:
                raise ValueError(
                    "train-mode batch must have at least 2 rows for batch norm"
                )
            ones_row = self.const(np.full((1, n_rows), 1.0 / n_rows))
            mu = g.apply("matmul", [ones_row, h_id])
            centered = g.apply("add", [h_id, g.apply("scale", [mu], factor=-1.0)])
            sq = g.apply("elementwise-mul", [centered, centered])
            var = g.apply("matmul", [ones_row, sq])
            eps_row = self.const(np.full((1, width), cfg.bn_epsilon))
            inv_std = g.apply(
                "exp",
                [g.apply("scale", [g.apply("log", [g.apply("add", [var, eps_row])])], factor=-0.5)],
            )
            normed = g.apply("elementwise-mul", [centered, inv_std])
            batch_stats = (layer, branch, g.value(mu).copy(), g.value(var).copy())
        else:
            mean = self.model.stats[f"{layer}.bn.{branch}.mean"]
            var = self.model.stats[f"{layer}.bn.{branch}.var"]
            inv = 1.0 / np.sqrt(var + cfg.bn_epsilon)
            centered = g.apply("add", [h_id, self.const(-mean)])
            normed = g.apply("elementwise-mul", [centered, self.const(inv)])
            batch_stats = None

        out = g.apply("add", [g.apply("elementwise-mul", [normed, scale]), shift])
        return out, batch_stats

    def forward(self, x_id, branch="main", mode="eval"):
        """Encoder -> (embedding, projection, logits) node ids.

        Train mode normalizes by batch statistics and reports them in
        `batch_stats`; committing them to the model's running statistics
        is the caller's decision (see `commit_batch_stats`).
        """
        if branch not in BRANCHES:
            raise ValueError(f"unknown branch: {branch!r}")
        if mode not in MODES:
            raise ValueError(f"unknown mode: {mode!r}")
        g = self.graph
        cfg = self.model.config
        if g.value(x_id).ndim != 2 or g.value(x_id).shape[1] != cfg.input_dim:
            raise ValueError(
                f"forward: batch shape {g.value(x_id).shape} does not match "
                f"input_dim {cfg.input_dim}"
            )
        collected = []
        h = x_id
        for i in range(len(cfg.encoder_dims)):
            h = g.apply("matmul", [h, self.param(f"enc{i}.w")])
            h, bs = self._bn(h, f"enc{i}", branch, mode)
            if bs is not None:
                collected.append(bs)
            h = g.apply("relu", [h])
        embedding = h

        p = g.apply("matmul", [embedding, self.param("proj0.w")])
        p = g.apply("relu", [g.apply("add", [p, self.param("proj0.b")])])
        p = g.apply("matmul", [p, self.param("proj1.w")])
        projection = g.apply("add", [p, self.param("proj1.b")])

        logits = g.apply(
            "add",
            [g.apply("matmul", [embedding, self.param("head.w")]), self.param("head.b")],
        )
        return ForwardNodes(g, embedding, projection, logits, collected)


def commit_batch_stats(model, batch_stats):
    """Fold a train-mode pass's batch moments into the running statistics."""
    m = model.config.bn_momentum
    for layer, branch, mu, var in batch_stats:
        mean_key = f"{layer}.bn.{branch}.mean"
        var_key = f"{layer}.bn.{branch}.var"
        model.stats[mean_key] = (1.0 - m) * model.stats[mean_key] + m * mu
        model.stats[var_key] = (1.0 - m) * model.stats[var_key] + m * var


def forward(model, batch, branch="main", mode="eval"):
    """Plain forward pass returning values (not nodes).

    Train mode updates the selected branch's running statistics; eval mode
    is a pure function of (parameters, running statistics, input).
    """
    batch = np.asarray(batch, dtype=np.float64)
    builder = GraphBuilder(model)
    x = builder.const(batch)
    nodes = builder.forward(x, branch=branch, mode=mode)
    if mode == "train":
        commit_batch_stats(model, nodes.batch_stats)
    g = builder.graph
    return ForwardResult(
        embedding=g.value(nodes.embedding),
        projection=g.value(nodes.projection),
        logits=g.value(nodes.logits),
    )


def cosine_similarity(u, v):
    """u.v / (|u||v|); 0 when either norm is below 1e-12."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(
            f"cosine_similarity: dimensions disagree: {u.shape} vs {v.shape}"
        )
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < 1e-12 or nv < 1e-12:
        return 0.0
    return float(u @ v / (nu * nv))


# ----------------------------------------------------------------------
# checkpoint format: uint32 little-endian manifest length, JSON manifest
# (format version, model config, named array list with shapes), then the
# arrays as little-endian float64 in manifest order.
# ----------------------------------------------------------------------


def save_checkpoint(path, model):
    names = list(model.params) + list(model.stats)
    arrays = [
        model.params[n] if n in model.params else model.stats[n] for n in names
    ]
    kinds = ["param"] * len(model.params) + ["stat"] * len(model.stats)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "arrays": [
            {"name": n, "shape": list(a.shape), "kind": k}
            for n, a, k in zip(names, arrays, kinds)
        ],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        (length,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(length).decode("utf-8"))
        if manifest["format_version"] != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {manifest['format_version']}"
            )
        config = ModelConfig.from_dict(manifest["config"])
        model = Model(config=config)
        for entry in manifest["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
            if entry["kind"] == "param":
                model.params[entry["name"]] = arr
            else:
                model.stats[entry["name"]] = arr
    return model
