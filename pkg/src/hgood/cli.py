"""Batch entry points: data generation, splitting, training, evaluation,
ablation sweeps, gradient self-checks, the GCN+prototype baseline, and a
metrics aggregation table.

Every run echoes its full configuration (defaults applied) into a
manifest.json next to its artifacts, together with seeds, the RNG algorithm,
a commit identifier, input-file hashes, and wall time, so any run can be
reproduced bit-identically from its manifest.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import subprocess
import sys
import time

import numpy as np

from . import numcore as nc
from .episodes import (RNG_ALGORITHM, EpisodeConfigError, EpisodeSpec,
                       sample_tasks, split_tasks, tasks_to_json)
from .hetgraph import (HeteroGraph, IngestionError, Schema, khop_subgraph,
                       load_graph, partition_relations, save_graph)
from .metalearn import (Embedder, NumericalError, TrainConfig, classify,
                        meta_test, meta_train, prototypes, relation_sets,
                        task_loss)
from .numcore import Adam, NonFiniteGradient, Param, Tensor
from .oodgen import (ScmConfig, SplitConfig, SplitConfigError,
                     degree_covariate_split, gen_scm_graph, iid_split,
                     reduce_heterogeneity, write_dataset)
from .vae_hgnn import (ABLATIONS, ModelConfig, VaeHgnn, gcn_norm,
                       load_checkpoint, save_checkpoint)

__all__ = ["main", "GcnProto", "train_baseline", "eval_baseline"]


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# ------------------------------------------------------------- configuration

MODEL_KEYS = {
    "d": (int, 64),
    "n_layers": (int, 2),
    "n_att": (int, 8),
    "n_k": (int, 2),
    "samples_path": (int, 1),
    "samples_inv": (int, 1),
    "pool_common": (str, "max"),
    "pool_mix": (str, "max"),
    "lsm_pair_cap": (int, 128),
}

EPISODE_KEYS = {
    "n_way": (int, 2),
    "k_shot": (int, 1),
    "q_query": (int, 0),
    "m_tasks": (int, 100),
}

TRAIN_KEYS = {
    "lambda_kl": (float, 0.4),
    "epochs": (int, 3),
    "lr": (float, 0.005),
    "train_tasks": (int, 100),
    "ablation": (str, "none"),
}

DATA_KEYS = {
    "d_in": (int, 0),          # 0 infers the width from nodes.csv
    "src_classes": (str, ""),
    "tgt_classes": (str, ""),
}

SCHEMAS = {
    "gen-scm": {
        "n_target": (int, 120),
        "n_aux": (str, "40,40"),
        "target_type": (str, "t"),
        "aux_types": (str, "a,b"),
        "d_env": (int, 4),
        "d_inv": (int, 4),
        "n_classes": (int, 4),
        "label_seed": (int, 0),
        "env_id": (int, 0),
        "density_env": (float, 0.05),
        "density_inv": (float, 0.05),
        "env_offset_scale": (float, 2.0),
        "struct_coef": (float, 0.1),
        "wiring_sharpness": (float, 3.0),
        "seed": (int, 0),
    },
    "split": {
        "data_dir": (str, None),
        "mode": (str, "iid"),
        "heterogeneity_drop": (int, 0),
        "target_type": (str, "t"),
        "d_in": (int, 0),
        "seed": (int, 0),
    },
    "train": {**MODEL_KEYS, **EPISODE_KEYS, **TRAIN_KEYS, **DATA_KEYS,
              "src_dir": (str, None), "tgt_dir": (str, ""), "seed": (int, 0)},
    "eval": {**EPISODE_KEYS, **DATA_KEYS,
             "ckpt": (str, None), "tr_dir": (str, None), "te_dir": (str, None),
             "ablation": (str, "none"), "method": (str, "full"),
             "setting": (str, ""), "seed": (int, 0)},
    "ablate": {**MODEL_KEYS, **EPISODE_KEYS, **TRAIN_KEYS, **DATA_KEYS,
               "src_dir": (str, None), "tr_dir": (str, None),
               "te_dir": (str, None), "setting": (str, ""), "seed": (int, 0)},
    "baseline": {**EPISODE_KEYS, **DATA_KEYS,
                 "d": (int, 64), "epochs": (int, 3), "lr": (float, 0.005),
                 "train_tasks": (int, 100),
                 "src_dir": (str, None), "tr_dir": (str, None),
                 "te_dir": (str, None), "setting": (str, ""), "seed": (int, 0)},
    "gradcheck": {
        "d": (int, 3),
        "n_att": (int, 2),
        "n_layers": (int, 2),
        "lambda_kl": (float, 0.4),
        "seeds": (str, "0"),
        "seed": (int, 0),
    },
}


def parse_config(path, schema) -> dict:
    raw = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"line {line_no}: expected key=value, got '{line}'")
                key, val = line.split("=", 1)
                raw[key.strip()] = val.strip()
    cfg = {}
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"unknown config key '{key}'")
        caster = schema[key][0]
        try:
            cfg[key] = caster(value)
        except ValueError:
            raise ConfigError(f"config key '{key}': cannot parse '{value}'") from None
    for key, (_, default) in schema.items():
        if key not in cfg:
            if default is None:
                raise ConfigError(f"missing required config key '{key}'")
            cfg[key] = default
    return cfg


def _class_pool(text, graph):
    if text:
        return sorted(int(c) for c in text.split(","))
    return sorted(set(graph.labels.values()))


def _infer_d_in(data_dir) -> int:
    nodes = os.path.join(data_dir, "nodes.csv")
    if not os.path.exists(nodes):
        raise DataError(f"missing {nodes}")
    with open(nodes, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh))
    return len(header) - 2


def _load_dir(data_dir, d_in) -> HeteroGraph:
    if d_in == 0:
        d_in = _infer_d_in(data_dir)
    return load_graph(os.path.join(data_dir, "nodes.csv"),
                      os.path.join(data_dir, "edges.csv"),
                      os.path.join(data_dir, "labels.csv"), d_in)


def _hash_dir(data_dir) -> dict:
    out = {}
    for name in ("nodes.csv", "edges.csv", "labels.csv"):
        path = os.path.join(data_dir, name)
        if os.path.exists(path):
            with open(path, "rb") as fh:
                out[os.path.join(data_dir, name)] = hashlib.sha256(fh.read()).hexdigest()
    return out


def _commit_id() -> str:
    try:
        return subprocess.run(["git", "rev-parse", "--short", "HEAD"],
                              capture_output=True, text=True, check=True,
                              timeout=5).stdout.strip()
    except Exception:
        return "unknown"


def write_manifest(out_dir, command, cfg, seeds, started, input_dirs=(),
                   outputs=(), flags=()):
    manifest = {
        "command": command,
        "config": cfg,
        "seeds": list(seeds),
        "rng_algorithm": RNG_ALGORITHM,
        "commit": _commit_id(),
        "wall_time_s": round(time.time() - started, 3),
        "input_hashes": {k: v for d in input_dirs for k, v in _hash_dir(d).items()},
        "outputs": list(outputs),
        "flags": list(flags),
    }
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------------- baseline

class GcnProto:
    """Single GCN layer over the union adjacency with the shared input
    projection; classified by uniform-weight prototypes. The comparator shares
    the episodic loop, optimizer, and clipping with the main model."""

    def __init__(self, d: int, d_in: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.d = d
        self.d_in = d_in

        def mat(name, rows, cols):
            std = np.sqrt(2.0 / (rows + cols))
            return Param(name, Tensor(rng.normal(0.0, std, (rows, cols))))

        self._params = {
            "proj.w": mat("proj.w", d_in, d),
            "proj.b": Param("proj.b", Tensor(np.zeros((1, d)))),
            "gnn.w": mat("gnn.w", d, d),
            "gnn.b": Param("gnn.b", Tensor(np.zeros((1, d)))),
        }

    def params(self):
        return [self._params[k] for k in sorted(self._params)]

    def p(self, name):
        return self._params[name].tensor

    def embed(self, sub) -> Tensor:
        x = nc.constant(sub.features)
        xp = nc.matmul(x, self.p("proj.w")) + self.p("proj.b")
        a = nc.constant(gcn_norm(sub.a_union))
        h = nc.relu(nc.matmul(nc.matmul(a, xp), self.p("gnn.w")) + self.p("gnn.b"))
        return nc.normalize_rows(nc.gather_rows(h, [sub.target_index]))


def _baseline_task_embeddings(model, graph, pairs, n_k, cache):
    by_class = {}
    for node, klass in pairs:
        sub = cache.get(node)
        if sub is None:
            sub = khop_subgraph(graph, node, n_k)
            cache[node] = sub
        by_class.setdefault(klass, []).append(model.embed(sub))
    return by_class


def train_baseline(model: GcnProto, graph, tasks, epochs, lr, seed, n_k=2):
    opt = Adam(model.params(), lr=lr, clip_norm=5.0)
    cache = {}
    for epoch in range(epochs):
        for ti, task in enumerate(tasks):
            spt = _baseline_task_embeddings(model, graph, task.support, n_k, cache)
            protos = prototypes(spt, None, use_valuator=False)
            proto_mat = nc.concat([p.vector for p in protos], axis=0)
            pos_of = {p.class_id: i for i, p in enumerate(protos)}
            loss = nc.constant(0.0)
            for node, klass in task.query:
                sub = cache.get(node) or khop_subgraph(graph, node, n_k)
                cache[node] = sub
                lp = nc.log_softmax(
                    -nc.sq_euclidean(model.embed(sub), proto_mat), axis=1)
                loss = loss - nc.cols(lp, pos_of[klass], pos_of[klass] + 1)
            loss = nc.reduce_sum(loss) * (1.0 / len(task.query))
            if not np.isfinite(loss.item()):
                raise NumericalError(f"baseline: non-finite loss at task {ti}")
            nc.backward(loss)
            opt.step()
    return model


def eval_baseline(model: GcnProto, g_tr, g_te, tasks, n_k=2):
    from .metalearn import _macro_f1
    accs, f1s = [], []
    cache_tr, cache_te = {}, {}
    with nc.no_grad():
        for task in tasks:
            spt = _baseline_task_embeddings(model, g_tr, task.support, n_k, cache_tr)
            protos = prototypes(spt, None, use_valuator=False)
            preds, truth = [], []
            correct = 0
            for node, klass in task.query:
                sub = cache_te.get(node) or khop_subgraph(g_te, node, n_k)
                cache_te[node] = sub
                probs = classify(model.embed(sub), protos)
                pred = protos[int(np.argmax(probs.data[0]))].class_id
                preds.append(pred)
                truth.append(klass)
                correct += int(pred == klass)
            accs.append(correct / len(task.query))
            f1s.append(_macro_f1(truth, preds, task.classes))
    return {"accuracy": float(np.mean(accs)), "macro_f1": float(np.mean(f1s)),
            "n_tasks": len(tasks)}


# ------------------------------------------------------------------- commands

def cmd_gen_scm(cfg, out_dir, seed):
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = seed
    scm = ScmConfig(
        n_target=cfg["n_target"],
        n_aux=tuple(int(x) for x in cfg["n_aux"].split(",")),
        target_type=cfg["target_type"],
        aux_types=tuple(cfg["aux_types"].split(",")),
        d_env=cfg["d_env"], d_inv=cfg["d_inv"], n_classes=cfg["n_classes"],
        label_seed=cfg["label_seed"], env_id=cfg["env_id"],
        density_env=cfg["density_env"], density_inv=cfg["density_inv"],
        env_offset_scale=cfg["env_offset_scale"],
        struct_coef=cfg["struct_coef"],
        wiring_sharpness=cfg["wiring_sharpness"], seed=cfg["seed"])
    g = gen_scm_graph(scm)
    write_dataset(g, scm, out_dir)
    return cfg, [cfg["seed"]], ["nodes.csv", "edges.csv", "labels.csv"], []


def cmd_split(cfg, out_dir, seed):
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = seed
    g = _load_dir(cfg["data_dir"], cfg["d_in"])
    split_fn = iid_split if cfg["mode"] == "iid" else degree_covariate_split
    parts = split_fn(g, cfg["seed"])
    names = ("source", "train", "test")
    sc = SplitConfig(mode=cfg["mode"],
                     heterogeneity_drop=cfg["heterogeneity_drop"],
                     target_type=cfg["target_type"], seed=cfg["seed"])
    outputs = []
    for i, (name, part) in enumerate(zip(names, parts)):
        part = reduce_heterogeneity(part, sc, seed=np.random.default_rng(
            [cfg["seed"], i]).integers(0, 2 ** 31))
        save_graph(part, os.path.join(out_dir, name))
        outputs.append(name)
    return cfg, [cfg["seed"]], outputs, [cfg["data_dir"]]


def _model_cfg(cfg) -> ModelConfig:
    return ModelConfig(d=cfg["d"], n_layers=cfg["n_layers"], n_att=cfg["n_att"],
                       n_k=cfg["n_k"], samples_path=cfg["samples_path"],
                       samples_inv=cfg["samples_inv"],
                       pool_common=cfg["pool_common"], pool_mix=cfg["pool_mix"],
                       lsm_pair_cap=cfg["lsm_pair_cap"])


def _episode_spec(cfg, m_override=None) -> EpisodeSpec:
    return EpisodeSpec(n_way=cfg["n_way"], k_shot=cfg["k_shot"],
                       q_query=cfg["q_query"],
                       m_tasks=m_override if m_override is not None else cfg["m_tasks"])


def _train_model(cfg, seed, src, tgt_schema, probe=None):
    partition = partition_relations(src.schema, tgt_schema)
    common, unique = relation_sets(src.schema, partition, "a")
    model = VaeHgnn(_model_cfg(cfg), d_in=src.feature_dim, seed=seed)
    embedder = Embedder(model, src, common, unique)
    spec = _episode_spec(cfg, m_override=cfg["train_tasks"])
    tasks = sample_tasks(src, spec, _class_pool(cfg["src_classes"], src), seed)
    tc = TrainConfig(lambda_kl=cfg["lambda_kl"], epochs=cfg["epochs"],
                     lr=cfg["lr"], seed=seed, ablation=cfg["ablation"])
    trace = meta_train(embedder, tasks, tc, probe)
    return model, trace, tc


def _eval_model(cfg, seed, model, source_rels, g_tr, g_te, ablation, probe=None):
    src_schema = Schema(node_types=tuple(sorted({t for r in source_rels
                                                 for t in (r.src_type, r.dst_type)})),
                        edge_types=(), relations=tuple(sorted(source_rels)))
    partition = partition_relations(src_schema, g_tr.schema)
    tr_common, tr_unique = relation_sets(g_tr.schema, partition, "b")
    te_common, te_unique = relation_sets(g_te.schema, partition, "b")
    spt_emb = Embedder(model, g_tr, tr_common, tr_unique)
    qry_emb = Embedder(model, g_te, te_common, te_unique)
    spec = _episode_spec(cfg)
    pool = _class_pool(cfg["tgt_classes"], g_tr)
    tasks = split_tasks(g_tr, g_te, spec, seed, class_pool=pool)
    tc = TrainConfig(seed=seed, ablation=ablation)
    metrics = meta_test(spt_emb, qry_emb, tasks, tc, eval_seed=seed, probe=probe)
    return metrics, tasks, spec


def _metrics_doc(metrics, spec, ablation, seed, method, setting):
    return {"accuracy": metrics["accuracy"], "macro_f1": metrics["macro_f1"],
            "n_tasks": metrics["n_tasks"], "n_way": spec.n_way,
            "k_shot": spec.k_shot, "ablation": ablation, "seed": seed,
            "method": method, "setting": setting}


def cmd_train(cfg, out_dir, seed):
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = seed
    src = _load_dir(cfg["src_dir"], cfg["d_in"])
    tgt_schema = src.schema
    inputs = [cfg["src_dir"]]
    if cfg["tgt_dir"]:
        tgt_schema = _load_dir(cfg["tgt_dir"], cfg["d_in"]).schema
        inputs.append(cfg["tgt_dir"])
    model, trace, _ = _train_model(cfg, cfg["seed"], src, tgt_schema)
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(model, os.path.join(out_dir, "checkpoint.json"),
                    src.schema.relations,
                    extra={"seed": cfg["seed"], "ablation": cfg["ablation"]})
    with open(os.path.join(out_dir, "trace.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "task", "l_cls", "l_str", "l_kl"])
        for row in trace:
            w.writerow([row["epoch"], row["task"], repr(row["l_cls"]),
                        repr(row["l_str"]), repr(row["l_kl"])])
    return cfg, [cfg["seed"]], ["checkpoint.json", "trace.csv"], inputs


def cmd_eval(cfg, out_dir, seed):
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = seed
    model, source_rels, _ = load_checkpoint(cfg["ckpt"])
    g_tr = _load_dir(cfg["tr_dir"], model.d_in)
    g_te = _load_dir(cfg["te_dir"], model.d_in)
    metrics, tasks, spec = _eval_model(cfg, cfg["seed"], model, source_rels,
                                       g_tr, g_te, cfg["ablation"])
    doc = _metrics_doc(metrics, spec, cfg["ablation"], cfg["seed"],
                       cfg["method"], cfg["setting"])
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, f"metrics_seed{cfg['seed']}.json"), doc)
    _write_json(os.path.join(out_dir, f"tasks_seed{cfg['seed']}.json"),
                tasks_to_json(tasks))
    return cfg, [cfg["seed"]], [f"metrics_seed{cfg['seed']}.json"], \
        [cfg["tr_dir"], cfg["te_dir"]]


def cmd_ablate(cfg, out_dir, seed):
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = seed
    src = _load_dir(cfg["src_dir"], cfg["d_in"])
    g_tr = _load_dir(cfg["tr_dir"], cfg["d_in"] or src.feature_dim)
    g_te = _load_dir(cfg["te_dir"], cfg["d_in"] or src.feature_dim)
    outputs = []
    os.makedirs(out_dir, exist_ok=True)
    for variant in ABLATIONS:
        run_cfg = dict(cfg)
        run_cfg["ablation"] = variant
        model, _, _ = _train_model(run_cfg, cfg["seed"], src, g_tr.schema)
        metrics, _, spec = _eval_model(run_cfg, cfg["seed"], model,
                                       src.schema.relations, g_tr, g_te, variant)
        doc = _metrics_doc(metrics, spec, variant, cfg["seed"],
                           "full" if variant == "none" else variant,
                           cfg["setting"])
        name = f"metrics_{variant}_seed{cfg['seed']}.json"
        _write_json(os.path.join(out_dir, name), doc)
        outputs.append(name)
    return cfg, [cfg["seed"]], outputs, [cfg["src_dir"], cfg["tr_dir"], cfg["te_dir"]]


def cmd_baseline(cfg, out_dir, seed):
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = seed
    src = _load_dir(cfg["src_dir"], cfg["d_in"])
    g_tr = _load_dir(cfg["tr_dir"], src.feature_dim)
    g_te = _load_dir(cfg["te_dir"], src.feature_dim)
    spec_tr = _episode_spec(cfg, m_override=cfg["train_tasks"])
    tasks_tr = sample_tasks(src, spec_tr, _class_pool(cfg["src_classes"], src),
                            cfg["seed"])
    model = GcnProto(cfg["d"], src.feature_dim, seed=cfg["seed"])
    train_baseline(model, src, tasks_tr, cfg["epochs"], cfg["lr"], cfg["seed"])
    spec = _episode_spec(cfg)
    tasks = split_tasks(g_tr, g_te, spec, cfg["seed"],
                        class_pool=_class_pool(cfg["tgt_classes"], g_tr))
    metrics = eval_baseline(model, g_tr, g_te, tasks)
    doc = _metrics_doc(metrics, spec, "none", cfg["seed"], "gcn_proto",
                       cfg["setting"])
    os.makedirs(out_dir, exist_ok=True)
    name = f"metrics_seed{cfg['seed']}.json"
    _write_json(os.path.join(out_dir, name), doc)
    return cfg, [cfg["seed"]], [name], [cfg["src_dir"], cfg["tr_dir"], cfg["te_dir"]]


def _gradcheck_graph():
    rng = np.random.default_rng(0)
    ids = [0, 1, 2, 3, 10, 11]
    types = ["t", "t", "t", "t", "a", "a"]
    feats = rng.normal(size=(6, 3))
    edges = [(0, 10, "e"), (1, 10, "e"), (2, 11, "e"), (3, 11, "e"), (0, 11, "e")]
    return HeteroGraph(ids, types, feats, edges, {0: 0, 1: 0, 2: 1, 3: 1})


def run_gradcheck(d, n_att, n_layers, lambda_kl, seeds):
    """Finite-difference comparison of every parameter group on the full task
    loss over a 6-node graph. Returns (passed, per-group max relative error)."""
    from .episodes import Task
    g = _gradcheck_graph()
    partition = partition_relations(g.schema, g.schema)
    common, unique = relation_sets(g.schema, partition, "a")
    task = Task(support=[(0, 0), (2, 1)], query=[(1, 0), (3, 1)], classes=[0, 1])
    report = {}
    for seed in seeds:
        model = VaeHgnn(ModelConfig(d=d, n_att=n_att, n_layers=n_layers),
                        d_in=g.feature_dim, seed=seed)
        emb = Embedder(model, g, common, unique)
        tc = TrainConfig(lambda_kl=lambda_kl, seed=seed)

        def build():
            parts = task_loss(emb, emb, task, tc, np.random.default_rng(seed))
            return parts["l_cls"] + parts["l_str"] + lambda_kl * parts["l_kl"]

        for p in model.params():
            err = nc.grad_check(build, [p.tensor])
            key = p.name
            report[key] = max(report.get(key, 0.0), err)
    passed = all(v < 1e-4 for v in report.values())
    return passed, report


def cmd_gradcheck(cfg, out_dir, seed):
    cfg = dict(cfg)
    seeds = [int(s) for s in str(cfg["seeds"]).split(",")]
    passed, report = run_gradcheck(cfg["d"], cfg["n_att"], cfg["n_layers"],
                                   cfg["lambda_kl"], seeds)
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"{'PASS' if v < 1e-4 else 'FAIL'} {k}: max_rel_err={v:.3e}"
             for k, v in sorted(report.items())]
    lines.append(f"overall: {'PASS' if passed else 'FAIL'}")
    with open(os.path.join(out_dir, "gradcheck.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    if not passed:
        raise NumericalError("gradient check failed")
    return cfg, seeds, ["gradcheck.txt"], []


def build_report(paths):
    groups = {}
    for path in paths:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
            key = (doc.get("method", "?"), doc.get("setting", "?"))
            groups.setdefault(key, []).append(
                (float(doc["accuracy"]), float(doc["macro_f1"])))
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"malformed metrics file {path}: {exc}") from exc
    lines = [f"{'method':<12} {'setting':<10} {'n':>3} {'accuracy':>18} {'macro_f1':>18}"]
    stats = {}
    for (method, setting), vals in sorted(groups.items()):
        accs = np.array([v[0] for v in vals])
        f1s = np.array([v[1] for v in vals])
        stats[(method, setting)] = float(accs.mean())
        if len(vals) > 1:
            acc_s = f"{accs.mean():.4f} ± {accs.std():.4f}"
            f1_s = f"{f1s.mean():.4f} ± {f1s.std():.4f}"
        else:
            acc_s = f"{accs.mean():.4f}"
            f1_s = f"{f1s.mean():.4f}"
        lines.append(f"{method:<12} {setting:<10} {len(vals):>3} {acc_s:>18} {f1_s:>18}")
    methods = sorted({m for m, _ in stats})
    for method in methods:
        if (method, "iid") in stats and (method, "ood") in stats:
            iid, ood = stats[(method, "iid")], stats[(method, "ood")]
            drop = (iid - ood) / iid * 100.0 if iid else float("nan")
            lines.append(f"{method:<12} {'drop':<10} {'':>3} {drop:>17.2f}%")
    return "\n".join(lines)


# ----------------------------------------------------------------------- main

COMMANDS = {
    "gen-scm": cmd_gen_scm,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "baseline": cmd_baseline,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hgood")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--seeds", default=None,
                       help="comma-separated seed sweep")
    rep = sub.add_parser("report")
    rep.add_argument("metrics", nargs="+")
    rep.add_argument("--out", default=None)
    args = parser.parse_args(argv)

    try:
        if args.command == "report":
            table = build_report(args.metrics)
            print(table)
            if args.out:
                os.makedirs(args.out, exist_ok=True)
                with open(os.path.join(args.out, "report.txt"), "w",
                          encoding="utf-8") as fh:
                    fh.write(table + "\n")
            return 0
        schema = SCHEMAS[args.command]
        cfg = parse_config(args.config, schema)
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
        started = time.time()
        all_outputs, all_seeds, inputs = [], [], []
        final_cfg = cfg
        for seed in seeds:
            final_cfg, used, outputs, inputs = COMMANDS[args.command](
                cfg, args.out, seed)
            all_outputs += outputs
            all_seeds += used
        write_manifest(args.out, args.command, final_cfg, all_seeds, started,
                       input_dirs=inputs, outputs=all_outputs)
        return 0
    except (ConfigError, EpisodeConfigError, SplitConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        if isinstance(exc, (IngestionError, DataError)):
            print(f"data error: {exc}", file=sys.stderr)
            return 2
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, NonFiniteGradient) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
