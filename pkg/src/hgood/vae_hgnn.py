"""Variational heterogeneous-graph network over target-node subgraphs.

Per subgraph the forward pass:
  1. projects raw features to the hidden width,
  2. encodes a diagonal-Gaussian posterior over invariant node factors from
     common relations, and a second one from unique relations (scored against
     the common summary),
  3. mixes pooled relation adjacencies with a sigmoid gate and runs a linear
     multi-layer GNN over the mix (layer i realizes the i-th matrix power) to
     parameterize path-derived semantics,
  4. learns a fresh adjacency from sampled invariant factors with multi-head
     weighted-cosine similarity and runs a GCN layer over it to parameterize
     invariant semantics,
  5. fuses averaged samples of both semantics through a GCN on the observed
     union adjacency to produce node embeddings,
  6. scores all node pairs with a logistic latent-space model against the
     observed structure (the structure-regularization loss) and accumulates
     the KL of both posteriors against the standard normal prior.

Ablation switches rewire the forward: identity-replace common or unique
relation matrices, zero either averaged semantics sample, or skip the
structure loss.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict

import numpy as np

from . import numcore as nc
from .hetgraph import RelationType, Subgraph
from .numcore import GaussianPosterior, Param, Tensor

__all__ = ["ModelConfig", "ForwardResult", "VaeHgnn", "ABLATIONS",
           "save_checkpoint", "load_checkpoint", "gcn_norm"]

ABLATIONS = ("none", "mz1", "mz2", "mcomm", "muniq", "mlsm", "mvalue")

SIGMA_FLOOR = 1e-6


@dataclass
class ModelConfig:
    d: int = 64                # hidden / latent width
    n_layers: int = 2          # multi-layer GNN depth
    n_att: int = 8             # cosine-learner heads
    n_k: int = 2               # subgraph hop count
    samples_path: int = 1      # Monte-Carlo draws for path semantics
    samples_inv: int = 1       # Monte-Carlo draws for invariant semantics
    pool_common: str = "max"   # pooling across common relation matrices
    pool_mix: str = "max"      # pooling inside the relation mix
    lsm_pair_cap: int = 128    # all-pairs threshold for the structure loss

    def __post_init__(self):
        if self.d < 1 or self.n_layers < 1 or self.n_att < 1:
            raise ValueError("ModelConfig: d, n_layers, n_att must be >= 1")
        if self.samples_path < 1 or self.samples_inv < 1:
            raise ValueError("ModelConfig: sample counts must be >= 1")
        for p in (self.pool_common, self.pool_mix):
            if p not in ("max", "sum", "mean"):
                raise ValueError(f"ModelConfig: unknown pooling '{p}'")


@dataclass
class ForwardResult:
    h: Tensor                  # (n, d) fused node embeddings
    h_target: Tensor           # (1, d) target-node row
    l_str: Tensor              # scalar structure-regularization loss
    l_kl: Tensor               # scalar KL loss (both posteriors)
    a_mix: Tensor              # (n, n) gated relation mix
    a_inv: Tensor              # (n, n) learned invariant adjacency
    z_path: Tensor             # (n, d) averaged path-semantics sample
    z_inv: Tensor              # (n, d) averaged invariant-semantics sample
    attn_common: Tensor        # (n, R_c) rows sum to 1
    attn_unique: Tensor | None
    flags: tuple


def gcn_norm(a: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization with guaranteed unit self-loops."""
    s = np.maximum(a, a.T)
    s = s.copy()
    np.fill_diagonal(s, np.maximum(s.diagonal(), 1.0))
    d = s.sum(axis=1)
    inv = 1.0 / np.sqrt(d)
    return s * inv[:, None] * inv[None, :]


def _gcn_norm_t(a: Tensor) -> Tensor:
    """Differentiable variant for a symmetric nonnegative learned adjacency."""
    n = a.shape[0]
    s = a + nc.constant(np.eye(n))
    d = nc.reduce_sum(s, axis=1, keepdims=True)
    r = nc.pow_const(d, -0.5)
    return s * r * nc.transpose(r)


def _pool(mats, kind):
    if kind == "max":
        return np.maximum.reduce(mats)
    if kind == "sum":
        return np.add.reduce(mats)
    return np.add.reduce(mats) / len(mats)


class VaeHgnn:
    """All trainable parameter groups plus the subgraph forward pass."""

    def __init__(self, cfg: ModelConfig, d_in: int, seed: int = 0):
        self.cfg = cfg
        self.d_in = d_in
        self._params: dict[str, Param] = {}
        rng = np.random.default_rng(seed)
        d = cfg.d

        def mat(name, rows, cols):
            std = np.sqrt(2.0 / (rows + cols))
            self._params[name] = Param(name, Tensor(rng.normal(0.0, std, (rows, cols))))

        def bias(name, width):
            self._params[name] = Param(name, Tensor(np.zeros((1, width))))

        def sigma_bias(name, width, value):
            # decoder heads start quiet so early samples track their means
            self._params[name] = Param(name, Tensor(np.full((1, width), value)))

        mat("proj.w", d_in, d); bias("proj.b", d)
        mat("enc_common.gnn.w", d, d); bias("enc_common.gnn.b", d)
        mat("enc_common.attn", d, 1)
        mat("enc_common.mu.w", d, d); bias("enc_common.mu.b", d)
        mat("enc_common.sigma.w", d, d); bias("enc_common.sigma.b", d)
        mat("enc_unique.gnn.w", d, d); bias("enc_unique.gnn.b", d)
        mat("enc_unique.attn", 2 * d, 1)
        mat("enc_unique.mu.w", d, d); bias("enc_unique.mu.b", d)
        mat("enc_unique.sigma.w", d, d); bias("enc_unique.sigma.b", d)
        self._params["mix.path_gate"] = Param("mix.path_gate", Tensor(np.zeros((1, 1))))
        self._params["mix.inv_gate"] = Param("mix.inv_gate", Tensor(np.zeros((1, 1))))
        for i in range(cfg.n_layers):
            mat(f"path_gnn.w{i + 1}", d, d)
        mat("path_head.mu.w", d, d); bias("path_head.mu.b", d)
        mat("path_head.sigma.w", d, d); sigma_bias("path_head.sigma.b", d, -2.0)
        for side in ("common", "unique"):
            self._params[f"learner.{side}.heads"] = Param(
                f"learner.{side}.heads",
                Tensor(1.0 + 0.1 * rng.normal(size=(cfg.n_att, d))))
        mat("inv_gnn.w", d, d); bias("inv_gnn.b", d)
        mat("inv_head.mu.w", d, d); bias("inv_head.mu.b", d)
        mat("inv_head.sigma.w", d, d); sigma_bias("inv_head.sigma.b", d, -2.0)
        mat("fuse_gnn.w", 2 * d, d); bias("fuse_gnn.b", d)
        mat("lsm.u.w", d_in, d); bias("lsm.u.b", d)
        mat("lsm.w", 6 * d, 1)
        mat("valuator.score", 2 * d, 1)
        mat("valuator.attn", 2 * d, 1)

    # ------------------------------------------------------------- plumbing

    def params(self):
        return [self._params[k] for k in sorted(self._params)]

    def p(self, name: str) -> Tensor:
        return self._params[name].tensor

    def gates(self):
        """Current (path, invariant) mix gates, both in (0, 1)."""
        return (float(nc.sigmoid(self.p("mix.path_gate")).data[0, 0]),
                float(nc.sigmoid(self.p("mix.inv_gate")).data[0, 0]))

    def project(self, sub: Subgraph) -> Tensor:
        x = nc.constant(sub.features)
        return nc.matmul(x, self.p("proj.w")) + self.p("proj.b")

    def _head(self, h: Tensor, prefix: str) -> GaussianPosterior:
        mu = nc.matmul(h, self.p(f"{prefix}.mu.w")) + self.p(f"{prefix}.mu.b")
        sig = nc.softplus(nc.matmul(h, self.p(f"{prefix}.sigma.w"))
                          + self.p(f"{prefix}.sigma.b")) + SIGMA_FLOOR
        return GaussianPosterior(mu, sig)

    def _gcn(self, a_norm, xp: Tensor, prefix: str) -> Tensor:
        a_t = a_norm if isinstance(a_norm, Tensor) else nc.constant(a_norm)
        return nc.relu(nc.matmul(nc.matmul(a_t, xp), self.p(f"{prefix}.w"))
                       + self.p(f"{prefix}.b"))

    @staticmethod
    def _relation_mats(sub: Subgraph, rels, identity: bool):
        mats = [sub.rel_adj[r] for r in rels if r in sub.rel_adj]
        if identity:
            mats = [np.eye(sub.n_nodes) for _ in mats]
        return mats

    # ------------------------------------------------------------- encoders

    def encode_common(self, sub: Subgraph, rels_common, xp: Tensor,
                      ablation: str = "none"):
        """Per-relation GCN + shared-vector attention over common relations.

        Falls back to a single self-loop pseudo-relation when the common set
        is empty for this graph (flagged).
        """
        flags = []
        mats = self._relation_mats(sub, rels_common, ablation == "mcomm")
        if not mats:
            mats = [np.eye(sub.n_nodes)]
            flags.append("fallback_common_selfloop")
        per_rel = [self._gcn(gcn_norm(m), xp, "enc_common.gnn") for m in mats]
        scores = nc.concat([nc.relu(nc.matmul(h, self.p("enc_common.attn")))
                            for h in per_rel], axis=1)
        attn = nc.softmax(scores, axis=1)
        h_c = None
        for i, h in enumerate(per_rel):
            term = nc.cols(attn, i, i + 1) * h
            h_c = term if h_c is None else h_c + term
        return h_c, self._head(h_c, "enc_common"), attn, mats, flags

    def encode_unique(self, sub: Subgraph, rels_unique, xp: Tensor,
                      h_common: Tensor, mats_common, ablation: str = "none"):
        """Unique relations interact with the pooled common structure before
        the GCN; attention scores concatenate each unique summary with the
        common one. Empty unique set yields the neutral prior branch."""
        flags = []
        mats = self._relation_mats(sub, rels_unique, ablation == "muniq")
        if not mats:
            n, d = sub.n_nodes, self.cfg.d
            flags.append("empty_unique")
            prior = GaussianPosterior(nc.constant(np.zeros((n, d))),
                                      nc.constant(np.ones((n, d))))
            return nc.constant(np.zeros((n, d))), prior, None, [], flags
        pooled = _pool(mats_common, self.cfg.pool_common)
        per_rel = [self._gcn(gcn_norm(m @ pooled), xp, "enc_unique.gnn")
                   for m in mats]
        scores = nc.concat(
            [nc.relu(nc.matmul(nc.concat([h, h_common], axis=1),
                               self.p("enc_unique.attn"))) for h in per_rel],
            axis=1)
        attn = nc.softmax(scores, axis=1)
        h_u = None
        for i, h in enumerate(per_rel):
            term = nc.cols(attn, i, i + 1) * h
            h_u = term if h_u is None else h_u + term
        return h_u, self._head(h_u, "enc_unique"), attn, mats, flags

    # -------------------------------------------------------------- decoders

    def metapath_mix(self, sub: Subgraph, mats_common, mats_unique) -> Tensor:
        """Gate-weighted combination of the pooled relation families."""
        n = sub.n_nodes
        p_c = _pool(mats_common, self.cfg.pool_mix) if mats_common else np.zeros((n, n))
        p_u = _pool(mats_unique, self.cfg.pool_mix) if mats_unique else np.zeros((n, n))
        gate = nc.sigmoid(self.p("mix.path_gate"))
        return gate * nc.constant(p_c) + (1.0 - gate) * nc.constant(p_u)

    def multilayer_gnn(self, a: Tensor, x: Tensor):
        """Linear stack H_i = A H_{i-1} W_i averaged across layers, so layer i
        carries exactly the i-th power of A; heads give the path posterior."""
        h = x
        acc = None
        for i in range(self.cfg.n_layers):
            h = nc.matmul(nc.matmul(a, h), self.p(f"path_gnn.w{i + 1}"))
            acc = h if acc is None else acc + h
        h_path = acc * (1.0 / self.cfg.n_layers)
        return h_path, self._head(h_path, "path_head")

    def graph_learner(self, e_nodes: Tensor, side: str) -> Tensor:
        """Multi-head weighted-cosine similarity, averaged over heads with
        negatives clamped to zero. Symmetric, entries in [0, 1]."""
        heads = self.p(f"learner.{side}.heads")
        total = None
        for i in range(self.cfg.n_att):
            w = nc.gather_rows(heads, [i])
            nrm = nc.normalize_rows(e_nodes * w)
            sim = nc.matmul(nrm, nc.transpose(nrm))
            total = sim if total is None else total + sim
        return nc.relu(total * (1.0 / self.cfg.n_att))

    def encode_invariant(self, xp: Tensor, e_common: Tensor, e_unique: Tensor):
        """Learned adjacency from sampled invariant factors only (never from
        the observed structure), then one GCN layer over it."""
        a_c = self.graph_learner(e_common, "common")
        a_u = self.graph_learner(e_unique, "unique")
        gate = nc.sigmoid(self.p("mix.inv_gate"))
        a_inv = gate * a_c + (1.0 - gate) * a_u
        h_inv = self._gcn(_gcn_norm_t(a_inv), xp, "inv_gnn")
        return a_inv, h_inv, self._head(h_inv, "inv_head")

    def fuse_embed(self, sub: Subgraph, p_path: GaussianPosterior,
                   p_inv: GaussianPosterior, rng, ablation: str = "none",
                   samples: tuple | None = None):
        """Average Monte-Carlo draws of both semantics and fuse them through a
        GCN over the observed union adjacency. `samples` overrides the
        configured draw counts (e.g. more draws at evaluation time)."""
        n_path, n_inv = samples if samples else (self.cfg.samples_path,
                                                 self.cfg.samples_inv)

        def avg(post, count):
            s = None
            for _ in range(count):
                draw = nc.reparam_sample(post, rng)
                s = draw if s is None else s + draw
            return s * (1.0 / count)

        z_path = avg(p_path, n_path)
        z_inv = avg(p_inv, n_inv)
        if ablation == "mz1":
            z_path = nc.constant(np.zeros(z_path.shape))
        if ablation == "mz2":
            z_inv = nc.constant(np.zeros(z_inv.shape))
        a_norm = nc.constant(gcn_norm(sub.a_union))
        z = nc.concat([z_path, z_inv], axis=1)
        h = nc.relu(nc.matmul(nc.matmul(a_norm, z), self.p("fuse_gnn.w"))
                    + self.p("fuse_gnn.b"))
        # unit-norm rows keep prototype distances bounded and rule out the
        # shrink-everything degenerate optimum of the episodic loss
        return z_path, z_inv, nc.normalize_rows(h)

    def lsm_edge_logits(self, sub: Subgraph, e_common: Tensor, e_unique: Tensor):
        """Pairwise edge logits of the logistic latent-space model: transformed
        raw features of both endpoints plus their sampled invariant factors."""
        d = self.cfg.d
        x = nc.constant(sub.features)
        ux = nc.matmul(x, self.p("lsm.u.w")) + self.p("lsm.u.b")
        e = nc.concat([e_common, e_unique], axis=1)
        w = self.p("lsm.w")
        s_left = nc.matmul(ux, nc.gather_rows(w, range(0, d))) \
            + nc.matmul(e, nc.gather_rows(w, range(2 * d, 4 * d)))
        s_right = nc.matmul(ux, nc.gather_rows(w, range(d, 2 * d))) \
            + nc.matmul(e, nc.gather_rows(w, range(4 * d, 6 * d)))
        return s_left + nc.transpose(s_right)

    def structure_loss(self, sub: Subgraph, logits: Tensor, rng) -> Tensor:
        """Negative log-likelihood of the union adjacency under the edge
        model, summed over ordered node pairs with self-loop pairs excluded.
        Over the pair cap, all positive pairs plus an equal count of sampled
        negative pairs estimate the full sum (negatives upweighted)."""
        n = sub.n_nodes
        if n < 2:
            return nc.constant(0.0)
        target = sub.a_union.copy()
        np.fill_diagonal(target, 0.0)
        if n <= self.cfg.lsm_pair_cap:
            mask = np.ones((n, n)) - np.eye(n)
            t = nc.constant(target)
            bce = nc.softplus(logits) - t * logits
            return nc.reduce_sum(bce * nc.constant(mask))
        pos = np.argwhere(target > 0)
        neg_pool = np.argwhere((target == 0) & ~np.eye(n, dtype=bool))
        k = min(len(pos), len(neg_pool))
        if len(pos) == 0 or k == 0:
            return nc.constant(0.0)
        neg = neg_pool[rng.choice(len(neg_pool), size=k, replace=False)]

        def pair_logits(pairs):
            lp = nc.gather_rows(logits, pairs[:, 0])
            sel = nc.constant(np.eye(n)[pairs[:, 1]])
            return nc.reshape(nc.reduce_sum(lp * sel, axis=1), (-1, 1))

        lp_pos = pair_logits(pos)
        lp_neg = pair_logits(neg)
        loss_pos = nc.reduce_sum(nc.softplus(lp_pos) - lp_pos)
        loss_neg = nc.reduce_sum(nc.softplus(lp_neg)) * (len(neg_pool) / k)
        return loss_pos + loss_neg

    # ----------------------------------------------------------- full forward

    def forward(self, sub: Subgraph, rels_common, rels_unique, rng,
                ablation: str = "none", compute_str: bool = True,
                samples: tuple | None = None) -> ForwardResult:
        if ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation '{ablation}'")
        xp = self.project(sub)
        h_c, q_c, attn_c, mats_c, flags = self.encode_common(
            sub, rels_common, xp, ablation)
        h_u, q_u, attn_u, mats_u, flags_u = self.encode_unique(
            sub, rels_unique, xp, h_c, mats_c, ablation)
        flags = tuple(flags + flags_u)

        e_c = nc.reparam_sample(q_c, rng)
        e_u = nc.reparam_sample(q_u, rng)

        a_mix = self.metapath_mix(sub, mats_c, mats_u)
        _, p_path = self.multilayer_gnn(a_mix, xp)
        a_inv, _, p_inv = self.encode_invariant(xp, e_c, e_u)
        z_path, z_inv, h = self.fuse_embed(sub, p_path, p_inv, rng, ablation,
                                           samples)

        l_kl = nc.gaussian_kl(q_c.mu, q_c.sigma)
        if "empty_unique" not in flags:
            l_kl = l_kl + nc.gaussian_kl(q_u.mu, q_u.sigma)
        if compute_str and ablation != "mlsm":
            logits = self.lsm_edge_logits(sub, e_c, e_u)
            l_str = self.structure_loss(sub, logits, rng)
        else:
            l_str = nc.constant(0.0)

        h_target = nc.gather_rows(h, [sub.target_index])
        return ForwardResult(h=h, h_target=h_target, l_str=l_str, l_kl=l_kl,
                             a_mix=a_mix, a_inv=a_inv, z_path=z_path,
                             z_inv=z_inv, attn_common=attn_c,
                             attn_unique=attn_u, flags=flags)


# ----------------------------------------------------------------- checkpoints

def save_checkpoint(model: VaeHgnn, path, source_relations, extra=None):
    doc = {
        "model_config": asdict(model.cfg),
        "d_in": model.d_in,
        "source_relations": [[r.src_type, r.dst_type] for r in source_relations],
        "params": {
            name: {"shape": list(p.tensor.data.shape),
                   "data": [float(v) for v in p.tensor.data.reshape(-1)]}
            for name, p in model._params.items()
        },
        "extra": extra or {},
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    cfg = ModelConfig(**doc["model_config"])
    model = VaeHgnn(cfg, d_in=int(doc["d_in"]), seed=0)
    for name, spec in doc["params"].items():
        tensor = model._params[name].tensor
        data = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        if tensor.data.shape != data.shape:
            raise ValueError(f"checkpoint shape mismatch for '{name}'")
        tensor.data = data
    rels = [RelationType(s, d) for s, d in doc["source_relations"]]
    return model, rels, doc.get("extra", {})
