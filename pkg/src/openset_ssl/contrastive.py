"""NT-Xent contrastive loss and self-supervised pretraining of the
encoder and projection header on the pooled labeled + unlabeled features,
labels stripped.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from .augment import AugmentConfig, augment_batch
from .model import GraphBuilder, commit_batch_stats, forward
from .optim import NesterovSGD, cosine_lr

_DIAG_MASK = -1e9  # exp of a masked logit underflows to exactly 0.0


@dataclass(frozen=True)
class ContrastiveConfig:
    tau_con: float = 0.5
    batch_size: int = 64
    steps: int = 1000
    lr: float = 0.1
    momentum: float = 0.9
    cosine_decay: bool = False
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.tau_con <= 0:
            raise ValueError("tau_con must be positive")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")


@dataclass
class GraphLoss:
    """A scalar loss node plus everything needed to step an optimizer."""

    builder: GraphBuilder
    node: int
    batch_stats: list = field(default_factory=list)
    terms: dict = field(default_factory=dict)

    @property
    def value(self):
        return float(self.builder.graph.value(self.node))

    def parameter_gradients(self):
        grads = self.builder.graph.backward(self.node)
        return self.builder.gradients_by_name(grads)


def ntxent_query_loss(query, positive, candidates, tau_con):
    """-log( exp(h(q, +)/tau) / sum_i exp(h(q, c_i)/tau) ) with cosine h.

    The candidate set must be nonempty and contain the positive; the query
    itself must not be among the candidates (the caller's contract).
    """
    from .model import cosine_similarity

    if tau_con <= 0:
        raise ValueError("tau_con must be positive")
    candidates = [np.asarray(c, dtype=np.float64) for c in candidates]
    if not candidates:
        raise ValueError("ntxent_query_loss: empty candidate set")
    positive = np.asarray(positive, dtype=np.float64)
    if not any(np.array_equal(positive, c) for c in candidates):
        raise ValueError("ntxent_query_loss: positive is not among the candidates")
    sims = np.array([cosine_similarity(query, c) for c in candidates]) / tau_con
    pos = cosine_similarity(query, positive) / tau_con
    m = sims.max()
    return float(np.log(np.exp(sims - m).sum()) + m - pos)


def ntxent_matrix_loss(builder, proj_node, tau_con):
    """Mean NT-Xent loss node over all 2N queries of a paired view batch.

    Rows of `proj_node` are projections of views ordered so that row q's
    positive sits at row (q + N) mod 2N; every other row except q itself
    is a negative.
    """
    g = builder.graph
    two_n = g.value(proj_node).shape[0]
    if two_n % 2 != 0:
        raise ValueError("paired view batch must have an even row count")
    n = two_n // 2

    normed = g.apply("l2-normalize-rows", [proj_node])
    sims = g.apply("matmul", [normed, normed], transpose_b=True)
    logits = g.apply("scale", [sims], factor=1.0 / tau_con)
    mask = np.zeros((two_n, two_n))
    np.fill_diagonal(mask, _DIAG_MASK)
    probs = g.apply("softmax-rows", [g.apply("add", [logits, builder.const(mask)])])

    pos = np.zeros((two_n, two_n))
    for q in range(two_n):
        pos[q, (q + n) % two_n] = 1.0
    picked = g.apply("elementwise-mul", [probs, builder.const(pos)])
    per_query = g.apply("matmul", [picked, builder.const(np.ones((two_n, 1)))])
    return g.apply("scale", [g.apply("mean", [g.apply("log", [per_query])])], factor=-1.0)


def simclr_batch_loss(model, batch, config, *, seed=0, step=0, ids=None, builder=None):
    """Differentiable SimCLR loss over one batch of N samples.

    Two views per sample are drawn from the augmentation family keyed by
    (step, sample id, view); the 2N views run through the model as a
    single train-mode batch on the main branch.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if ids is None:
        ids = list(range(batch.shape[0]))
    v1 = augment_batch(batch, ids, config.augment, seed, step, 0)
    v2 = augment_batch(batch, ids, config.augment, seed, step, 1)
    views = np.concatenate([v1, v2], axis=0)

    if builder is None:
        builder = GraphBuilder(model)
    x = builder.const(views)
    nodes = builder.forward(x, branch="main", mode="train")
    loss = ntxent_matrix_loss(builder, nodes.projection, config.tau_con)
    return GraphLoss(builder=builder, node=loss, batch_stats=nodes.batch_stats)


def pretrain(model, pool, pool_ids, config, seed, trace_path=None):
    """Seeded SGD on the SimCLR loss; returns the model and a loss trace.

    The pool is iterated in shuffled epochs of whole batches (a short
    remainder rolls into the next epoch's shuffle).  Aborts if the loss
    goes non-finite.
    """
    pool = np.asarray(pool, dtype=np.float64)
    if pool.shape[0] < config.batch_size:
        raise ValueError(
            f"pool of {pool.shape[0]} samples is smaller than one batch "
            f"({config.batch_size})"
        )
    pool_ids = np.asarray(pool_ids, dtype=np.int64)
    opt = NesterovSGD(model.params, lr=config.lr, momentum=config.momentum)
    shuffled = rng_mod.stream(seed, "pretrain.shuffle")
    order = []
    trace = []
    for step in range(config.steps):
        if len(order) < config.batch_size:
            order = list(shuffled.permutation(pool.shape[0]))
        take, order = order[: config.batch_size], order[config.batch_size :]
        batch = pool[take]
        ids = pool_ids[take]
        loss = simclr_batch_loss(
            model, batch, config, seed=seed, step=step, ids=ids
        )
        if not np.isfinite(loss.value):
            raise RuntimeError(f"pretraining loss became non-finite at step {step}")
        commit_batch_stats(model, loss.batch_stats)
        lr = cosine_lr(config.lr, step, config.steps) if config.cosine_decay else None
        opt.step(loss.parameter_gradients(), lr=lr)
        trace.append((step, loss.value))
    if config.steps > 0:
        calibrate_running_stats(model, pool, config.batch_size, seed)
    if trace_path is not None:
        write_loss_trace(trace_path, trace)
    return model, trace


def calibrate_running_stats(model, pool, batch_size, seed, passes=2):
    """Re-estimate main-branch running statistics on clean features.

    Pretraining observes augmented views only, so its running statistics
    carry the augmentation noise; downstream scoring and fine-tuning
    evaluate clean inputs.  A couple of seeded train-mode passes over the
    clean pool realigns them (no parameters move).
    """
    gen = rng_mod.stream(seed, "pretrain.calibrate")
    n = pool.shape[0]
    for _ in range(passes):
        order = gen.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            batch = pool[order[start : start + batch_size]]
            forward(model, batch, branch="main", mode="train")


def write_loss_trace(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for step, loss in trace:
            writer.writerow([step, f"{loss:.17g}"])
