"""N-way K-shot episode construction over labeled graphs.

Tasks pair a support set (K labeled nodes per class) with a query set
(q_query nodes per class, default K). Sampling is driven by numpy's PCG64
generator so episode lists are reproducible across platforms; run manifests
record the generator name.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hetgraph import HeteroGraph

__all__ = ["EpisodeSpec", "Task", "EpisodeConfigError", "sample_tasks",
           "split_tasks", "tasks_to_json", "tasks_from_json", "RNG_ALGORITHM"]

RNG_ALGORITHM = "numpy-PCG64"


class EpisodeConfigError(ValueError):
    pass


@dataclass
class EpisodeSpec:
    n_way: int = 2
    k_shot: int = 1
    q_query: int = 0   # 0 means "same as k_shot"
    m_tasks: int = 100

    def __post_init__(self):
        if self.q_query == 0:
            self.q_query = self.k_shot
        if self.n_way < 2 or self.k_shot < 1 or self.q_query < 1:
            raise EpisodeConfigError(
                f"episode spec out of range: N={self.n_way} K={self.k_shot} q={self.q_query}")


@dataclass
class Task:
    support: list          # (node_id, class_id), N*K entries
    query: list            # (node_id, class_id), N*q entries
    classes: list          # sorted class ids, length N


def _by_class(g: HeteroGraph, pool):
    groups = {c: [] for c in pool}
    for nid in g.labeled_nodes():
        c = g.labels[nid]
        if c in groups:
            groups[c].append(nid)
    return {c: sorted(nodes) for c, nodes in groups.items()}


def sample_tasks(g: HeteroGraph, spec: EpisodeSpec, class_pool, seed: int):
    """m_tasks episodes with support and query drawn disjointly from one graph."""
    pool = sorted(set(class_pool))
    if len(pool) < spec.n_way:
        raise EpisodeConfigError(
            f"need {spec.n_way} classes, pool has {len(pool)}")
    groups = _by_class(g, pool)
    need = spec.k_shot + spec.q_query
    for c in pool:
        if len(groups[c]) < need:
            raise EpisodeConfigError(
                f"class {c} has {len(groups[c])} labeled nodes, needs {need}")
    rng = np.random.default_rng(seed)
    tasks = []
    for _ in range(spec.m_tasks):
        classes = sorted(int(c) for c in rng.choice(pool, size=spec.n_way, replace=False))
        support, query = [], []
        for c in classes:
            picked = rng.choice(groups[c], size=need, replace=False)
            support += [(int(n), c) for n in picked[:spec.k_shot]]
            query += [(int(n), c) for n in picked[spec.k_shot:]]
        tasks.append(Task(support=support, query=query, classes=classes))
    return tasks


def split_tasks(g_tr: HeteroGraph, g_te: HeteroGraph, spec: EpisodeSpec,
                seed: int, class_pool=None):
    """Episodes whose support nodes reference g_tr and query nodes g_te."""
    tr_groups = _by_class(g_tr, set(g_tr.labels.values()))
    te_groups = _by_class(g_te, set(g_te.labels.values()))
    pool = sorted(set(tr_groups) & set(te_groups)) if class_pool is None \
        else sorted(set(class_pool))
    for c in pool:
        if c not in tr_groups or len(tr_groups[c]) < spec.k_shot:
            raise EpisodeConfigError(
                f"class {c} lacks {spec.k_shot} support nodes in the training graph")
        if c not in te_groups or len(te_groups[c]) < spec.q_query:
            raise EpisodeConfigError(
                f"class {c} lacks {spec.q_query} query nodes in the testing graph")
    if len(pool) < spec.n_way:
        raise EpisodeConfigError(
            f"need {spec.n_way} shared classes, found {len(pool)}")
    rng = np.random.default_rng(seed)
    tasks = []
    for _ in range(spec.m_tasks):
        classes = sorted(int(c) for c in rng.choice(pool, size=spec.n_way, replace=False))
        support, query = [], []
        for c in classes:
            spt = rng.choice(tr_groups[c], size=spec.k_shot, replace=False)
            qry = rng.choice(te_groups[c], size=spec.q_query, replace=False)
            support += [(int(n), c) for n in spt]
            query += [(int(n), c) for n in qry]
        tasks.append(Task(support=support, query=query, classes=classes))
    return tasks


def tasks_to_json(tasks):
    return [{"support": [[n, c] for n, c in t.support],
             "query": [[n, c] for n, c in t.query],
             "classes": list(t.classes)} for t in tasks]


def tasks_from_json(obj):
    return [Task(support=[(int(n), int(c)) for n, c in d["support"]],
                 query=[(int(n), int(c)) for n, c in d["query"]],
                 classes=[int(c) for c in d["classes"]]) for d in obj]
