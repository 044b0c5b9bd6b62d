"""Heterogeneous graph data model.

Typed nodes and edges, per-relation adjacency matrices keyed by (source type,
destination type) pairs, feature ingestion with width padding, k-hop subgraph
extraction over the undirected view, and the common/unique relation-set algebra
between two graph schemas.

Graphs are immutable after construction; subgraph extraction and the set
algebra are pure functions.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RelationType",
    "Schema",
    "HeteroGraph",
    "Subgraph",
    "RelationPartition",
    "IngestionError",
    "load_graph",
    "save_graph",
    "relation_adjacencies",
    "khop_subgraph",
    "partition_relations",
    "induced_subgraph",
]


class IngestionError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class RelationType:
    """Ordered (source node type, destination node type) pair."""

    src_type: str
    dst_type: str


@dataclass(frozen=True)
class Schema:
    node_types: tuple
    edge_types: tuple
    relations: tuple

    def is_heterogeneous(self) -> bool:
        return len(self.node_types) + len(self.edge_types) > 2


class HeteroGraph:
    """Typed graph with uniform-width node features and partial labels.

    Node ids are arbitrary integers; internal storage is index based with a
    stable id ordering (ascending node id).
    """

    def __init__(self, node_ids, node_types, features, edges, labels,
                 relations=None, edge_type_names=None):
        order = np.argsort(np.asarray(node_ids, dtype=np.int64), kind="stable")
        self.node_ids = [int(node_ids[i]) for i in order]
        if len(set(self.node_ids)) != len(self.node_ids):
            raise IngestionError("duplicate node id")
        self.node_types = [str(node_types[i]) for i in order]
        feats = np.asarray(features, dtype=np.float64)
        self.features = feats[order]
        self._index = {nid: i for i, nid in enumerate(self.node_ids)}
        self.edges = [(int(s), int(d), str(et)) for s, d, et in edges]
        for row, (s, d, _) in enumerate(self.edges):
            if s not in self._index or d not in self._index:
                raise IngestionError(f"edge row {row}: unknown node id")
        self.labels = {int(k): int(v) for k, v in labels.items()}
        observed_rels = sorted({
            RelationType(self.node_types[self._index[s]],
                         self.node_types[self._index[d]])
            for s, d, _ in self.edges})
        rels = tuple(sorted(relations)) if relations is not None else tuple(observed_rels)
        etypes = tuple(sorted(edge_type_names)) if edge_type_names is not None \
            else tuple(sorted({et for _, _, et in self.edges}))
        self.schema = Schema(node_types=tuple(sorted(set(self.node_types))),
                             edge_types=etypes, relations=rels)
        # undirected neighbor lists for hop counting
        self._nbrs = [[] for _ in self.node_ids]
        for s, d, _ in self.edges:
            si, di = self._index[s], self._index[d]
            if si != di:
                self._nbrs[si].append(di)
                self._nbrs[di].append(si)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def index_of(self, node_id: int) -> int:
        return self._index[node_id]

    def type_of(self, node_id: int) -> str:
        return self.node_types[self._index[node_id]]

    def degree(self, node_id: int) -> int:
        """Total degree over the undirected view (self-loops count once)."""
        i = self._index[node_id]
        return len(self._nbrs[i]) + sum(1 for s, d, _ in self.edges
                                        if s == d == node_id)

    def nodes_of_type(self, node_type: str):
        return [nid for nid, t in zip(self.node_ids, self.node_types)
                if t == node_type]

    def labeled_nodes(self):
        return sorted(self.labels)


@dataclass
class RelationPartition:
    """Relation types shared by two graphs vs particular to each."""

    common: tuple
    unique_a: tuple
    unique_b: tuple


@dataclass
class Subgraph:
    """Induced neighborhood of one target node, indexed locally."""

    node_ids: list
    node_types: list
    target_index: int
    rel_adj: dict            # RelationType -> (n, n) float array, raw directed
    a_union: np.ndarray      # symmetrized union adjacency with unit diagonal
    features: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)


def _pad_features(rows: np.ndarray, d_in: int) -> np.ndarray:
    n, k = rows.shape
    if k == d_in:
        return rows
    if k > d_in:
        return rows[:, :d_in].copy()
    out = np.zeros((n, d_in))
    out[:, :k] = rows
    return out


def load_graph(node_file, edge_file, label_file, d_in: int) -> HeteroGraph:
    """Read the nodes/edges/labels CSV triplet, padding features to width d_in."""
    node_ids, node_types, feats = [], [], []
    with open(node_file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["node_id", "node_type"]:
            raise IngestionError(f"{node_file}: bad header {header[:2]}")
        n_feats = len(header) - 2
        for row_no, row in enumerate(reader, start=2):
            nid = int(row[0])
            if nid in set(node_ids):
                raise IngestionError(f"{node_file} row {row_no}: duplicate node id {nid}")
            node_ids.append(nid)
            node_types.append(row[1])
            feats.append([float(x) for x in row[2:2 + n_feats]])
    features = _pad_features(np.asarray(feats, dtype=np.float64).reshape(len(node_ids), n_feats), d_in)

    known = set(node_ids)
    edges = []
    with open(edge_file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["src", "dst", "edge_type"]:
            raise IngestionError(f"{edge_file}: bad header {header}")
        for row_no, row in enumerate(reader, start=2):
            s, d = int(row[0]), int(row[1])
            if s not in known or d not in known:
                raise IngestionError(f"{edge_file} row {row_no}: unknown node id")
            edges.append((s, d, row[2]))

    labels = {}
    with open(label_file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["node_id", "class"]:
            raise IngestionError(f"{label_file}: bad header {header}")
        for row_no, row in enumerate(reader, start=2):
            nid = int(row[0])
            if nid not in known:
                raise IngestionError(f"{label_file} row {row_no}: unknown node id {nid}")
            labels[nid] = int(row[1])

    g = HeteroGraph(node_ids, node_types, features, edges, labels)
    if not g.schema.is_heterogeneous():
        raise IngestionError(
            f"{node_file}: graph is not heterogeneous "
            f"({len(g.schema.node_types)} node types, {len(g.schema.edge_types)} edge types)")
    return g


def save_graph(g: HeteroGraph, out_dir):
    """Write the nodes/edges/labels CSV triplet into out_dir."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    d = g.feature_dim
    with open(os.path.join(out_dir, "nodes.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "node_type"] + [f"feat_{i}" for i in range(d)])
        for nid, t, feat in zip(g.node_ids, g.node_types, g.features):
            w.writerow([nid, t] + [repr(float(x)) for x in feat])
    with open(os.path.join(out_dir, "edges.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "edge_type"])
        for s, d_, et in g.edges:
            w.writerow([s, d_, et])
    with open(os.path.join(out_dir, "labels.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "class"])
        for nid in sorted(g.labels):
            w.writerow([nid, g.labels[nid]])


def relation_adjacencies(g: HeteroGraph) -> dict:
    """Full-graph adjacency per relation: A[m][n] = 1 iff an m->n edge exists
    with matching endpoint types."""
    n = g.n_nodes
    mats = {r: np.zeros((n, n)) for r in g.schema.relations}
    for s, d, _ in g.edges:
        si, di = g.index_of(s), g.index_of(d)
        r = RelationType(g.node_types[si], g.node_types[di])
        if r in mats:
            mats[r][si, di] = 1.0
    return mats


def khop_subgraph(g: HeteroGraph, target: int, n_k: int) -> Subgraph:
    """All nodes within n_k undirected hops of `target`, with induced edges.

    Local order is (hop distance, node id) ascending, so extraction is
    deterministic. The union adjacency is symmetrized and gets a unit diagonal.
    """
    t_idx = g.index_of(target)
    dist = {t_idx: 0}
    queue = deque([t_idx])
    while queue:
        u = queue.popleft()
        if dist[u] == n_k:
            continue
        for v in g._nbrs[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    local = sorted(dist, key=lambda i: (dist[i], g.node_ids[i]))
    pos = {gi: li for li, gi in enumerate(local)}
    n = len(local)

    rel_adj = {r: np.zeros((n, n)) for r in g.schema.relations}
    a_union = np.eye(n)
    for s, d, _ in g.edges:
        si, di = g.index_of(s), g.index_of(d)
        if si in pos and di in pos:
            li, lj = pos[si], pos[di]
            r = RelationType(g.node_types[si], g.node_types[di])
            if r in rel_adj:
                rel_adj[r][li, lj] = 1.0
            a_union[li, lj] = 1.0
            a_union[lj, li] = 1.0

    return Subgraph(node_ids=[g.node_ids[i] for i in local],
                    node_types=[g.node_types[i] for i in local],
                    target_index=pos[t_idx],
                    rel_adj=rel_adj,
                    a_union=a_union,
                    features=g.features[local].copy())


def partition_relations(schema_a: Schema, schema_b: Schema) -> RelationPartition:
    """Common relations appear (as relations) in both schemas; the rest are
    unique to their side."""
    if not schema_a.relations and not schema_b.relations:
        raise ValueError("partition_relations: both schemas have no relations")
    set_a, set_b = set(schema_a.relations), set(schema_b.relations)
    common = tuple(sorted(set_a & set_b))
    return RelationPartition(common=common,
                             unique_a=tuple(sorted(set_a - set_b)),
                             unique_b=tuple(sorted(set_b - set_a)))


def induced_subgraph(g: HeteroGraph, keep_ids) -> HeteroGraph:
    """New graph on `keep_ids` with all edges whose endpoints survive.

    Relations whose endpoint types both survive are kept in the schema even if
    no induced edge realizes them, so sibling splits keep comparable schemas.
    """
    keep = sorted(set(int(i) for i in keep_ids))
    keep_set = set(keep)
    idx = [g.index_of(i) for i in keep]
    types = [g.node_types[i] for i in idx]
    surviving_types = set(types)
    edges = [(s, d, et) for s, d, et in g.edges
             if s in keep_set and d in keep_set]
    relations = [r for r in g.schema.relations
                 if r.src_type in surviving_types and r.dst_type in surviving_types]
    observed_et = {et for _, _, et in edges}
    edge_types = [et for et in g.schema.edge_types if et in observed_et]
    labels = {i: g.labels[i] for i in keep if i in g.labels}
    return HeteroGraph(keep, types, g.features[idx], edges, labels,
                       relations=relations, edge_type_names=edge_types)
