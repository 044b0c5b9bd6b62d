import numpy as np
import pytest

from hgood.hetgraph import (
    HeteroGraph, IngestionError, RelationType, Schema, induced_subgraph,
    khop_subgraph, load_graph, partition_relations, relation_adjacencies,
    save_graph,
)
from oracles import bfs_nodes


def make_graph(node_specs, edges, labels=None, d=3):
    """node_specs: list of (id, type); features filled with id value."""
    ids = [n for n, _ in node_specs]
    types = [t for _, t in node_specs]
    feats = np.tile(np.array(ids, dtype=float)[:, None], (1, d))
    return HeteroGraph(ids, types, feats, edges, labels or {})


def write_csvs(tmp_path, nodes, edges, labels, n_feat=3):
    np_path = tmp_path / "nodes.csv"
    lines = ["node_id,node_type," + ",".join(f"feat_{i}" for i in range(n_feat))]
    for nid, t, feat in nodes:
        lines.append(f"{nid},{t}," + ",".join(str(x) for x in feat))
    np_path.write_text("\n".join(lines) + "\n")
    e_path = tmp_path / "edges.csv"
    e_path.write_text("src,dst,edge_type\n" +
                      "".join(f"{s},{d},{et}\n" for s, d, et in edges))
    l_path = tmp_path / "labels.csv"
    l_path.write_text("node_id,class\n" +
                      "".join(f"{n},{c}\n" for n, c in labels))
    return np_path, e_path, l_path


# -------------------------------------------------------------------- loading

def test_load_infers_relations(tmp_path):
    files = write_csvs(tmp_path,
                       nodes=[(1, "A", [0.1, 0.2, 0.3]), (2, "P", [1, 2, 3])],
                       edges=[(1, 2, "writes")],
                       labels=[(2, 0)])
    g = load_graph(*files, d_in=3)
    assert g.schema.relations == (RelationType("A", "P"),)
    assert g.labels == {2: 0}


def test_load_pads_features(tmp_path):
    files = write_csvs(tmp_path,
                       nodes=[(1, "A", [1, 2, 3]), (2, "P", [4, 5, 6])],
                       edges=[(1, 2, "w")], labels=[])
    g = load_graph(*files, d_in=5)
    assert g.features.shape == (2, 5)
    assert np.array_equal(g.features[0], [1, 2, 3, 0, 0])


def test_load_truncates_features(tmp_path):
    files = write_csvs(tmp_path,
                       nodes=[(1, "A", [1, 2, 3]), (2, "P", [4, 5, 6])],
                       edges=[(1, 2, "w")], labels=[])
    g = load_graph(*files, d_in=2)
    assert g.features.shape == (2, 2)


def test_load_unknown_edge_node_names_row(tmp_path):
    files = write_csvs(tmp_path,
                       nodes=[(1, "A", [0, 0, 0]), (2, "P", [0, 0, 0])],
                       edges=[(1, 2, "w"), (1, 99, "w")], labels=[])
    with pytest.raises(IngestionError, match="row 3"):
        load_graph(*files, d_in=3)


def test_load_duplicate_node_id(tmp_path):
    files = write_csvs(tmp_path,
                       nodes=[(1, "A", [0, 0, 0]), (1, "P", [0, 0, 0])],
                       edges=[], labels=[])
    with pytest.raises(IngestionError, match="duplicate"):
        load_graph(*files, d_in=3)


def test_load_rejects_homogeneous(tmp_path):
    files = write_csvs(tmp_path,
                       nodes=[(1, "A", [0, 0, 0]), (2, "A", [0, 0, 0])],
                       edges=[(1, 2, "e")], labels=[])
    with pytest.raises(IngestionError, match="heterogeneous"):
        load_graph(*files, d_in=3)


def test_save_load_roundtrip(tmp_path):
    g = make_graph([(1, "A"), (2, "P"), (3, "S")],
                   [(1, 2, "w"), (2, 3, "about")], labels={2: 1})
    save_graph(g, tmp_path / "g")
    g2 = load_graph(tmp_path / "g" / "nodes.csv", tmp_path / "g" / "edges.csv",
                    tmp_path / "g" / "labels.csv", d_in=3)
    assert g2.node_ids == g.node_ids
    assert g2.schema == g.schema
    assert np.array_equal(g2.features, g.features)
    assert g2.labels == g.labels


# -------------------------------------------------------- relation adjacency

def test_relation_adjacency_two_edges():
    g = make_graph([(1, "A"), (2, "A"), (3, "P")],
                   [(1, 3, "w"), (2, 3, "w")])
    mats = relation_adjacencies(g)
    a = mats[RelationType("A", "P")]
    assert a.sum() == 2
    assert a[g.index_of(1), g.index_of(3)] == 1
    assert a[g.index_of(2), g.index_of(3)] == 1


def test_relation_with_no_edges_is_zero():
    g = HeteroGraph([1, 2], ["A", "P"], np.zeros((2, 2)), [], {},
                    relations=[RelationType("A", "P")], edge_type_names=["w"])
    mats = relation_adjacencies(g)
    assert np.array_equal(mats[RelationType("A", "P")], np.zeros((2, 2)))


def test_relation_adjacency_matches_edge_scan_oracle():
    rng = np.random.default_rng(0)
    for trial in range(10):
        types = ["A", "P", "S"]
        specs = [(i, types[rng.integers(0, 3)]) for i in range(10)]
        seen = set()
        edges = []
        for _ in range(15):
            s, d = rng.integers(0, 10, size=2)
            if s != d and (int(s), int(d)) not in seen:
                seen.add((int(s), int(d)))
                edges.append((int(s), int(d), "e"))
        g = make_graph(specs, edges)
        mats = relation_adjacencies(g)
        # oracle: brute-force scan over every pair and every edge
        for r, mat in mats.items():
            for m in range(10):
                for n in range(10):
                    expect = any(
                        g.index_of(s) == m and g.index_of(d) == n
                        and g.node_types[m] == r.src_type
                        and g.node_types[n] == r.dst_type
                        for s, d, _ in edges)
                    assert mat[m, n] == (1.0 if expect else 0.0)
        total = sum(mat.sum() for mat in mats.values())
        assert total == len(edges)


# ------------------------------------------------------------------ subgraphs

def test_khop_path():
    g = make_graph([(1, "A"), (2, "B"), (3, "A"), (4, "B")],
                   [(1, 2, "e"), (2, 3, "e"), (3, 4, "e")])
    sub = khop_subgraph(g, 1, 2)
    assert sorted(sub.node_ids) == [1, 2, 3]
    assert sub.node_ids[sub.target_index] == 1


def test_khop_isolated_node():
    g = make_graph([(1, "A"), (2, "B")], [])
    sub = khop_subgraph(g, 1, 2)
    assert sub.node_ids == [1]
    assert np.array_equal(sub.a_union, np.ones((1, 1)))


def test_khop_matches_bfs_oracle_and_monotone():
    rng = np.random.default_rng(1)
    for trial in range(10):
        n = 30
        types = ["A", "B", "C"]
        specs = [(i, types[i % 3]) for i in range(n)]
        edges = []
        for _ in range(45):
            s, d = rng.integers(0, n, size=2)
            if s != d:
                edges.append((int(s), int(d), "e"))
        g = make_graph(specs, edges)
        target = int(rng.integers(0, n))
        prev = None
        for k in (1, 2, 3):
            sub = khop_subgraph(g, target, k)
            expect = bfs_nodes(n, [(s, d) for s, d, _ in edges], target, k)
            assert set(sub.node_ids) == expect
            if prev is not None:
                assert prev <= set(sub.node_ids)
            prev = set(sub.node_ids)


def test_khop_union_symmetric_unit_diagonal():
    g = make_graph([(1, "A"), (2, "B"), (3, "A")],
                   [(1, 2, "e"), (3, 2, "e")])
    sub = khop_subgraph(g, 2, 1)
    assert np.array_equal(sub.a_union, sub.a_union.T)
    assert np.all(np.diag(sub.a_union) == 1)


def test_khop_local_relation_edges_map_to_parent():
    g = make_graph([(1, "A"), (2, "P"), (3, "S"), (4, "A")],
                   [(1, 2, "w"), (4, 2, "w"), (2, 3, "s")])
    sub = khop_subgraph(g, 2, 1)
    a_ap = sub.rel_adj[RelationType("A", "P")]
    li = {nid: i for i, nid in enumerate(sub.node_ids)}
    assert a_ap[li[1], li[2]] == 1
    assert a_ap[li[4], li[2]] == 1
    assert a_ap.sum() == 2


# ------------------------------------------------------------------ partition

def test_partition_example():
    sa = Schema(("A", "P", "S"), ("e1", "e2"),
                (RelationType("A", "P"), RelationType("P", "S")))
    sb = Schema(("A", "P", "V"), ("e1", "e3"),
                (RelationType("A", "P"), RelationType("P", "V")))
    part = partition_relations(sa, sb)
    assert part.common == (RelationType("A", "P"),)
    assert part.unique_a == (RelationType("P", "S"),)
    assert part.unique_b == (RelationType("P", "V"),)


def test_partition_identical_schemas():
    s = Schema(("A", "P"), ("e",), (RelationType("A", "P"),))
    part = partition_relations(s, s)
    assert part.common == s.relations
    assert part.unique_a == () and part.unique_b == ()


def test_partition_matches_set_oracle_and_symmetry():
    rng = np.random.default_rng(2)
    type_pool = ["A", "B", "C", "D", "E"]
    for trial in range(20):
        def rand_schema():
            rels = set()
            for _ in range(rng.integers(1, 6)):
                i, j = rng.integers(0, 5, size=2)
                rels.add(RelationType(type_pool[i], type_pool[j]))
            rels = tuple(sorted(rels))
            ntypes = tuple(sorted({r.src_type for r in rels} | {r.dst_type for r in rels}))
            return Schema(ntypes, ("e",), rels)
        sa, sb = rand_schema(), rand_schema()
        part = partition_relations(sa, sb)
        set_a, set_b = set(sa.relations), set(sb.relations)
        assert set(part.common) == set_a & set_b
        assert set(part.unique_a) == set_a - set_b
        assert set(part.unique_b) == set_b - set_a
        assert not (set(part.common) & set(part.unique_a))
        assert not (set(part.common) & set(part.unique_b))
        swapped = partition_relations(sb, sa)
        assert swapped.common == part.common
        assert swapped.unique_a == part.unique_b
        assert swapped.unique_b == part.unique_a


# ------------------------------------------------------------------- induced

def test_induced_subgraph_keeps_types_and_schema():
    g = make_graph([(1, "A"), (2, "P"), (3, "P"), (4, "S")],
                   [(1, 2, "w"), (1, 3, "w"), (3, 4, "s")], labels={2: 0, 3: 1})
    sub = induced_subgraph(g, [1, 2, 4])
    assert sub.node_ids == [1, 2, 4]
    assert sub.labels == {2: 0}
    assert (1, 2, "w") in sub.edges and len(sub.edges) == 1
    # relation (P, S) survives in the schema: both endpoint types remain
    assert RelationType("P", "S") in sub.schema.relations
