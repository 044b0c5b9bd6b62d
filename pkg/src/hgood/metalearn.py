"""Valuator-weighted prototypical meta-learning over subgraph embeddings.

Meta-training iterates episodic tasks on the source graph: every support and
query node is embedded through the variational network, support embeddings are
combined into class prototypes weighted by each node's richness score, and the
task loss (classification + structure regularization + scaled KL) drives one
optimizer step per task. Meta-testing is gradient-free: a frozen model embeds
support nodes from the target training split and query nodes from the target
testing split, prototypes are rebuilt per task, and accuracy plus macro-F1 are
accumulated.

The richness score of a labeled node adds a structure part (cosine between the
averaged powers of the relation mix and the learned invariant adjacency, plus
log mean in-degree of the learned adjacency) and a node part (attention-pooled
tanh comparisons between the node's path semantics and its learned-adjacency
neighbors' invariant semantics).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .episodes import Task
from .hetgraph import HeteroGraph, khop_subgraph
from .numcore import Adam, Tensor
from .vae_hgnn import ABLATIONS, ForwardResult, VaeHgnn

__all__ = ["TrainConfig", "Prototype", "RichnessScore", "Embedder",
           "ProbeStats", "NumericalError", "richness_structure",
           "richness_node", "richness", "prototypes", "classify", "task_loss",
           "meta_train", "meta_test", "relation_sets", "RICHNESS_EPS"]

RICHNESS_EPS = 1e-6


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lambda_kl: float = 0.4
    epochs: int = 3
    lr: float = 0.005
    seed: int = 0
    ablation: str = "none"

    def __post_init__(self):
        if self.lambda_kl < 0:
            raise ValueError("lambda_kl must be >= 0")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation '{self.ablation}'")


@dataclass
class Prototype:
    class_id: int
    vector: Tensor           # (1, d)
    weights: Tensor          # (K, 1), positive, sums to 1


@dataclass
class RichnessScore:
    structural: float
    nodal: float

    @property
    def total(self) -> float:
        return self.structural + self.nodal


@dataclass
class ProbeStats:
    """Running invariants over every recorded attention row / weight vector."""

    min_entry: float = np.inf
    worst_sum_gap: float = 0.0
    n_rows: int = 0

    def observe(self, rows: np.ndarray):
        rows = np.atleast_2d(rows)
        self.min_entry = min(self.min_entry, float(rows.min()))
        gaps = np.abs(rows.sum(axis=1) - 1.0)
        self.worst_sum_gap = max(self.worst_sum_gap, float(gaps.max()))
        self.n_rows += rows.shape[0]


def relation_sets(schema, partition, side: str):
    """Common/unique relation lists restricted to one graph's schema."""
    unique = partition.unique_a if side == "a" else partition.unique_b
    present = set(schema.relations)
    return ([r for r in partition.common if r in present],
            [r for r in unique if r in present])


class Embedder:
    """Binds a graph, its relation sets, and a subgraph cache to a model."""

    def __init__(self, model: VaeHgnn, graph: HeteroGraph, rels_common,
                 rels_unique, eval_samples: tuple | None = None):
        self.model = model
        self.graph = graph
        self.rels_common = list(rels_common)
        self.rels_unique = list(rels_unique)
        self.eval_samples = eval_samples
        self._cache: dict = {}

    def subgraph(self, node_id: int):
        sub = self._cache.get(node_id)
        if sub is None:
            sub = khop_subgraph(self.graph, node_id, self.model.cfg.n_k)
            self._cache[node_id] = sub
        return sub

    def embed(self, node_id: int, rng, ablation: str = "none",
              compute_str: bool = True) -> ForwardResult:
        return self.model.forward(self.subgraph(node_id), self.rels_common,
                                  self.rels_unique, rng, ablation=ablation,
                                  compute_str=compute_str,
                                  samples=self.eval_samples)


# ------------------------------------------------------------------- valuator

def richness_structure(sub, a_mix_powers, a_inv: Tensor) -> Tensor:
    """Cosine between the layer-averaged mix powers and the learned adjacency
    (flattened-matrix cosine, zero-matrix convention), plus log mean in-degree
    of the learned adjacency."""
    n = sub.n_nodes
    acc = None
    for p in a_mix_powers:
        acc = p if acc is None else acc + p
    a_sum = acc * (1.0 / len(a_mix_powers))
    flat_sum = nc.reshape(a_sum, (1, n * n))
    flat_inv = nc.reshape(a_inv, (1, n * n))
    cos = nc.reduce_sum(nc.cosine_rowwise(flat_sum, flat_inv))
    mean_indeg = nc.reduce_sum(a_inv) * (1.0 / n)
    return cos + nc.log(mean_indeg + RICHNESS_EPS)


def richness_node(sub, z_path: Tensor, z_inv: Tensor, a_inv: Tensor,
                  model: VaeHgnn) -> Tensor:
    """Attention-weighted tanh scores over the target's neighbors in the
    learned adjacency; empty neighborhoods contribute exactly 0."""
    t = sub.target_index
    row = a_inv.data[t]
    nbrs = [j for j in range(sub.n_nodes) if j != t and row[j] > 0]
    if not nbrs:
        return nc.constant(0.0)
    m = len(nbrs)
    ones = nc.constant(np.ones((m, 1)))
    anchor_path = nc.matmul(ones, nc.gather_rows(z_path, [t]))
    anchor_inv = nc.matmul(ones, nc.gather_rows(z_inv, [t]))
    nbr_inv = nc.gather_rows(z_inv, nbrs)
    sn = nc.tanh(nc.matmul(nc.concat([anchor_path, nbr_inv], axis=1),
                           model.p("valuator.score")))
    raw = nc.leaky_relu(nc.matmul(nc.concat([anchor_inv, nbr_inv], axis=1),
                                  model.p("valuator.attn")))
    gamma = nc.softmax(raw, axis=0)
    return nc.reduce_sum(gamma * sn)


def richness(sub, result: ForwardResult, model: VaeHgnn):
    """Total richness of the target node; returns the differentiable scalar
    plus a plain-number report."""
    powers = []
    p = result.a_mix
    for i in range(model.cfg.n_layers):
        p = p if i == 0 else nc.matmul(p, result.a_mix)
        powers.append(p)
    rsl = richness_structure(sub, powers, result.a_inv)
    rnl = richness_node(sub, result.z_path, result.z_inv, result.a_inv, model)
    total = rsl + rnl
    return total, RichnessScore(structural=rsl.item(), nodal=rnl.item())


# ----------------------------------------------------------------- prototypes

def prototypes(support_by_class: dict, scores_by_class: dict | None,
               use_valuator: bool, probe: ProbeStats | None = None):
    """Per-class weighted mean of support embeddings. Weights are the softmax
    of richness scores within the class, or exactly uniform when the valuator
    is off."""
    protos = []
    for c in sorted(support_by_class):
        rows = support_by_class[c]
        k = len(rows)
        stacked = nc.concat(rows, axis=0)
        if use_valuator:
            score_col = nc.concat([nc.reshape(s, (1, 1))
                                   for s in scores_by_class[c]], axis=0)
            weights = nc.softmax(score_col, axis=0)
        else:
            weights = nc.constant(np.full((k, 1), 1.0 / k))
        if probe is not None:
            probe.observe(weights.data.T)
        vec = nc.reduce_sum(weights * stacked, axis=0, keepdims=True)
        protos.append(Prototype(class_id=c, vector=vec, weights=weights))
    return protos


def classify(query_embedding: Tensor, protos) -> Tensor:
    """Class probabilities from squared-Euclidean distances to prototypes,
    ordered by ascending class id."""
    mat = nc.concat([p.vector for p in protos], axis=0)
    d2 = nc.sq_euclidean(query_embedding, mat)
    return nc.softmax(-d2, axis=1)


def predicted_class(probs: Tensor, protos) -> int:
    return protos[int(np.argmax(probs.data[0]))].class_id


# ------------------------------------------------------------------ task loss

def _embed_task_side(embedder: Embedder, pairs, rng, cfg: TrainConfig,
                     want_scores: bool, probe: ProbeStats | None,
                     compute_str: bool = True):
    by_class: dict = {}
    scores: dict = {}
    l_str = nc.constant(0.0)
    l_kl = nc.constant(0.0)
    for node, klass in pairs:
        res = embedder.embed(node, rng, ablation=cfg.ablation,
                             compute_str=compute_str)
        if probe is not None:
            probe.observe(res.attn_common.data)
            if res.attn_unique is not None:
                probe.observe(res.attn_unique.data)
        by_class.setdefault(klass, []).append(res.h_target)
        if want_scores:
            score, _ = richness(embedder.subgraph(node), res, embedder.model)
            scores.setdefault(klass, []).append(score)
        l_str = l_str + res.l_str
        l_kl = l_kl + res.l_kl
    return by_class, scores, l_str, l_kl


def task_loss(spt_embedder: Embedder, qry_embedder: Embedder, task: Task,
              cfg: TrainConfig, rng, probe: ProbeStats | None = None,
              compute_str: bool = True):
    """Episode loss terms: mean query negative log-likelihood plus structure
    and KL terms summed over every support and query forward."""
    use_valuator = cfg.ablation != "mvalue"
    spt, scores, l_str, l_kl = _embed_task_side(
        spt_embedder, task.support, rng, cfg, use_valuator, probe, compute_str)
    protos = prototypes(spt, scores if use_valuator else None,
                        use_valuator, probe)
    l_cls = nc.constant(0.0)
    n_correct = 0
    preds = []
    proto_mat = nc.concat([p.vector for p in protos], axis=0)
    class_pos = {p.class_id: i for i, p in enumerate(protos)}
    for node, klass in task.query:
        res = qry_embedder.embed(node, rng, ablation=cfg.ablation,
                                 compute_str=compute_str)
        if probe is not None:
            probe.observe(res.attn_common.data)
            if res.attn_unique is not None:
                probe.observe(res.attn_unique.data)
        log_probs = nc.log_softmax(-nc.sq_euclidean(res.h_target, proto_mat),
                                   axis=1)
        pos = class_pos[klass]
        l_cls = l_cls - nc.cols(log_probs, pos, pos + 1)
        preds.append(protos[int(np.argmax(log_probs.data[0]))].class_id)
        n_correct += int(preds[-1] == klass)
        l_str = l_str + res.l_str
        l_kl = l_kl + res.l_kl
    l_cls = nc.reduce_sum(l_cls) * (1.0 / len(task.query))
    return {"l_cls": l_cls, "l_str": l_str, "l_kl": l_kl,
            "n_correct": n_correct, "predictions": preds}


# -------------------------------------------------------------- training loop

def meta_train(embedder: Embedder, tasks, cfg: TrainConfig,
               probe: ProbeStats | None = None):
    """Episodic training on source tasks; support and query share the graph.
    Returns the per-task loss trace."""
    model = embedder.model
    opt = Adam(model.params(), lr=cfg.lr, clip_norm=5.0)
    trace = []
    for epoch in range(cfg.epochs):
        for ti, task in enumerate(tasks):
            rng = np.random.default_rng([cfg.seed, epoch, ti])
            parts = task_loss(embedder, embedder, task, cfg, rng, probe)
            total = parts["l_cls"] + parts["l_str"] + cfg.lambda_kl * parts["l_kl"]
            if not np.isfinite(total.item()):
                raise NumericalError(f"non-finite loss at epoch {epoch} task {ti}")
            nc.backward(total)
            opt.step()
            trace.append({"epoch": epoch, "task": ti,
                          "l_cls": parts["l_cls"].item(),
                          "l_str": parts["l_str"].item(),
                          "l_kl": parts["l_kl"].item()})
    return trace


def meta_test(spt_embedder: Embedder, qry_embedder: Embedder, tasks,
              cfg: TrainConfig, eval_seed: int,
              probe: ProbeStats | None = None):
    """Gradient-free evaluation: support embeddings come from the target
    training split, query embeddings from the target testing split."""
    accs, f1s = [], []
    with nc.no_grad():
        for ti, task in enumerate(tasks):
            rng = np.random.default_rng([eval_seed, ti])
            parts = task_loss(spt_embedder, qry_embedder, task, cfg, rng, probe,
                              compute_str=False)
            truth = [c for _, c in task.query]
            preds = parts["predictions"]
            accs.append(parts["n_correct"] / len(task.query))
            f1s.append(_macro_f1(truth, preds, task.classes))
    return {"accuracy": float(np.mean(accs)),
            "macro_f1": float(np.mean(f1s)),
            "n_tasks": len(tasks)}


def _macro_f1(truth, preds, classes) -> float:
    scores = []
    for c in classes:
        tp = sum(1 for t, p in zip(truth, preds) if t == c and p == c)
        fp = sum(1 for t, p in zip(truth, preds) if t != c and p == c)
        fn = sum(1 for t, p in zip(truth, preds) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return float(np.mean(scores))
