import numpy as np
import pytest
from hypothesis import given, strategies as st

from graphcond.graph import (CSR, Graph, GraphFormatError, covering_radius, feature_transform,
                             induced_subgraph, kcenter_select, load_graph, normalize_adjacency,
                             save_graph, sbm_generate, split_class_il)

from conftest import path_graph


def _dense_sym(a):
    a = a + np.eye(len(a))
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    return a * dinv[:, None] * dinv[None, :]


def test_normalize_single_edge():
    out = normalize_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]]), "sym")
    np.testing.assert_allclose(out, 0.5)


def test_normalize_empty_graph_is_identity():
    np.testing.assert_array_equal(normalize_adjacency(np.zeros((3, 3)), "sym"), np.eye(3))


def test_normalize_path_matches_dense_oracle():
    g = path_graph(4)
    sparse = normalize_adjacency(g, "sym").to_dense()
    np.testing.assert_allclose(sparse, _dense_sym(g.dense_adjacency()), atol=1e-12)


def test_normalize_row_mode_rows_sum_to_one():
    g = path_graph(5)
    out = normalize_adjacency(g.adjacency, "row").to_dense()
    np.testing.assert_allclose(out.sum(axis=1), 1.0)


def test_normalize_rejects_negative_and_nonsquare():
    with pytest.raises(ValueError):
        normalize_adjacency(np.array([[0.0, -1.0], [-1.0, 0.0]]))
    with pytest.raises(ValueError):
        normalize_adjacency(np.zeros((2, 3)))


@given(st.integers(2, 12), st.floats(0.05, 0.9), st.integers(0, 10_000))
def test_sym_normalization_symmetric_with_unit_spectral_radius(n, p, seed):
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, 1) * rng.uniform(0.1, 2.0, (n, n))
    out = normalize_adjacency(upper + upper.T, "sym")
    assert np.max(np.abs(out - out.T)) < 1e-12
    v = rng.standard_normal(n)
    for _ in range(500):
        v = out @ v
        v /= np.linalg.norm(v)
    assert abs(v @ out @ v) <= 1 + 1e-9


def test_feature_transform_row_normalize():
    g = path_graph(3, d=3)
    x = np.array([[2.0, 2.0, 0.0], [0.0, 0.0, 0.0], [1.0, -3.0, 0.0]])
    g = Graph(g.indptr, g.indices, g.weights, x, g.labels, g.train_mask, g.val_mask, g.test_mask)
    out = feature_transform(g, "row_normalize").features
    np.testing.assert_allclose(out[0], [0.5, 0.5, 0.0])
    np.testing.assert_array_equal(out[1], 0.0)
    np.testing.assert_allclose(out[2], [0.25, -0.75, 0.0])


def test_feature_transform_standardize():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((10, 4)) * 3 + 1
    x[:, 3] = 7.0
    labels = np.zeros(10, dtype=int)
    train = np.zeros(10, dtype=bool)
    train[:7] = True
    none = np.zeros(10, dtype=bool)
    g = Graph.from_edges(10, [], x, labels, train, ~train, none)
    out = feature_transform(g, "standardize").features
    tr = out[train]
    assert np.all(np.abs(tr[:, :3].mean(axis=0)) < 1e-12)
    assert np.all(np.abs(tr[:, :3].std(axis=0) - 1.0) < 1e-12)
    np.testing.assert_array_equal(out[:, 3], 0.0)
    assert g.features is not out


def test_sbm_two_triangles():
    g = sbm_generate([3, 3], 1.0, 0.0, 2, 1.0, seed=0)
    a = g.dense_adjacency()
    block = np.ones((3, 3)) - np.eye(3)
    np.testing.assert_array_equal(a, np.block([[block, np.zeros((3, 3))], [np.zeros((3, 3)), block]]))


def test_sbm_edge_counts_within_three_sigma():
    g = sbm_generate([50, 50], 0.2, 0.02, 4, 1.0, seed=11)
    a = g.dense_adjacency()
    within = (np.triu(a[:50, :50], 1).sum() + np.triu(a[50:, 50:], 1).sum())
    across = a[:50, 50:].sum()
    n_in, n_out = 2 * 50 * 49 / 2, 50 * 50
    assert abs(within - n_in * 0.2) <= 3 * np.sqrt(n_in * 0.2 * 0.8)
    assert abs(across - n_out * 0.02) <= 3 * np.sqrt(n_out * 0.02 * 0.98)


def test_sbm_deterministic_and_split():
    a = sbm_generate([30, 40], 0.3, 0.05, 5, 2.0, seed=9)
    b = sbm_generate([30, 40], 0.3, 0.05, 5, 2.0, seed=9)
    for field in ("indptr", "indices", "weights", "features", "labels", "train_mask"):
        assert getattr(a, field).tobytes() == getattr(b, field).tobytes()
    for c, size in enumerate([30, 40]):
        members = a.labels == c
        assert a.train_mask[members].sum() == round(0.6 * size)
        assert a.val_mask[members].sum() == round(0.2 * size)


def test_sbm_degenerate_probabilities_allowed():
    g = sbm_generate([10, 10], 0.1, 0.1, 3, 1.0, seed=0)
    assert g.n == 20


def test_graph_rejects_asymmetric_and_self_loops():
    x, y = np.zeros((3, 1)), np.zeros(3, dtype=int)
    m = np.zeros(3, dtype=bool)
    with pytest.raises(GraphFormatError):
        Graph.from_edges(3, [(0, 1)], x, y, m, m, m)
    with pytest.raises(GraphFormatError):
        Graph.from_edges(3, [(1, 1)], x, y, m, m, m)


def test_graph_rejects_overlapping_masks_and_missing_labels():
    x = np.zeros((3, 1))
    t = np.array([True, False, False])
    with pytest.raises(GraphFormatError):
        Graph.from_edges(3, [], x, np.zeros(3, dtype=int), t, t, ~t)
    with pytest.raises(GraphFormatError):
        Graph.from_edges(3, [], x, np.array([-1, 0, 0]), t, ~t, np.zeros(3, bool))


def test_inductive_training_view_hides_other_nodes():
    g = sbm_generate([20, 20], 0.3, 0.05, 4, 2.0, seed=1, setting="inductive")
    view = g.training_view()
    assert view.n == g.train_mask.sum()
    assert view.train_mask.all()
    sub, mask = g.eval_view("test")
    assert sub.n == g.test_mask.sum() and mask.all()


def test_kcenter_hand_example():
    assert sorted(kcenter_select(np.array([[0.0], [1.0], [10.0]]), 2).tolist()) == [1, 2]


def test_kcenter_full_budget_and_duplicates():
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((7, 3))
    assert sorted(kcenter_select(pts, 7).tolist()) == list(range(7))
    dup = np.ones((4, 2))
    assert kcenter_select(dup, 1).tolist() == [0]
    assert sorted(kcenter_select(dup, 4).tolist()) == [0, 1, 2, 3]


def test_kcenter_per_class_and_errors():
    pts = np.arange(10, dtype=float)[:, None]
    labels = np.array([0] * 5 + [1] * 5)
    sel = kcenter_select(pts, 2, per_class=labels)
    assert len(sel) == 4
    assert set(labels[sel[:2]]) == {0} and set(labels[sel[2:]]) == {1}
    with pytest.raises(ValueError):
        kcenter_select(pts, 6, per_class=labels)


@given(st.integers(0, 10_000), st.integers(2, 25))
def test_kcenter_distinct_and_radius_monotone(seed, m):
    pts = np.random.default_rng(seed).standard_normal((m, 3))
    radii = []
    for b in range(1, m + 1):
        sel = kcenter_select(pts, b)
        assert len(set(sel.tolist())) == b
        radii.append(covering_radius(pts, sel))
    assert all(r2 <= r1 + 1e-12 for r1, r2 in zip(radii, radii[1:]))


def test_induced_subgraph_cases(small_sbm):
    tri = sbm_generate([3], 1.0, 0.0, 2, 1.0, seed=0)
    assert induced_subgraph(tri, [0, 2]).num_edges == 1
    full = induced_subgraph(small_sbm, np.arange(small_sbm.n))
    np.testing.assert_array_equal(full.indptr, small_sbm.indptr)
    np.testing.assert_array_equal(full.indices, small_sbm.indices)
    rng = np.random.default_rng(4)
    sel = rng.choice(small_sbm.n, 25, replace=False)
    sub = induced_subgraph(small_sbm, sel)
    np.testing.assert_array_equal(sub.dense_adjacency(), small_sbm.dense_adjacency()[np.ix_(sel, sel)])
    np.testing.assert_array_equal(sub.labels, small_sbm.labels[sel])
    with pytest.raises(ValueError):
        induced_subgraph(small_sbm, [0, 0])
    with pytest.raises(IndexError):
        induced_subgraph(small_sbm, [small_sbm.n])


@pytest.mark.parametrize("blocks,expected", [
    ([5] * 6, [{0, 1}, {2, 3}, {4, 5}]),
    ([5] * 7, [{0, 1}, {2, 3}, {4, 5}]),
    ([5] * 2, [{0, 1}]),
])
def test_split_class_il(blocks, expected):
    g = sbm_generate(blocks, 0.5, 0.1, 3, 1.0, seed=2)
    tasks = split_class_il(g, 2)
    assert [set(np.unique(t.labels).tolist()) for t in tasks] == expected
    sizes = sum(t.n for t in tasks)
    dropped = sum(blocks[len(expected) * 2:])
    assert sizes + dropped == g.n
    if len(blocks) == 2:
        np.testing.assert_array_equal(tasks[0].dense_adjacency(), g.dense_adjacency())


def test_save_load_round_trip(tmp_path, small_sbm):
    save_graph(small_sbm, tmp_path / "g")
    back = load_graph(tmp_path / "g")
    for field in ("indptr", "indices", "weights", "features", "labels", "train_mask", "val_mask",
                  "test_mask"):
        np.testing.assert_array_equal(getattr(back, field), getattr(small_sbm, field))
    assert (back.setting, back.num_classes) == (small_sbm.setting, small_sbm.num_classes)


def test_load_accepts_cora_shaped_meta_and_csv(tmp_path):
    n, d = 2708, 1433
    base = tmp_path / "cora"
    base.mkdir()
    (base / "meta").write_text(f"n={n}\nd={d}\nnum_classes=7\nsetting=transductive\n")
    np.zeros(n * d, dtype="<f4").tofile(base / "features.bin")
    (np.arange(n) % 7).astype("<i4").tofile(base / "labels.bin")
    np.array([[0, 1], [1, 0]], dtype="<u4").tofile(base / "edges.bin")
    masks = np.zeros((n, 3), dtype=int)
    masks[:140, 0] = 1
    np.savetxt(base / "masks.csv", masks, fmt="%d", delimiter=",")
    g = load_graph(base)
    assert (g.n, g.d, g.num_classes, g.num_edges) == (2708, 1433, 7, 1)
    assert g.train_mask.sum() == 140


def test_load_rejects_bad_inputs(tmp_path, small_sbm):
    save_graph(small_sbm, tmp_path / "g")
    np.array([[0, 1]], dtype="<u4").tofile(tmp_path / "g" / "edges.bin")
    with pytest.raises(GraphFormatError, match="asymmetric"):
        load_graph(tmp_path / "g")
    save_graph(small_sbm, tmp_path / "h")
    (tmp_path / "h" / "meta").write_text("n 60\n")
    with pytest.raises(GraphFormatError):
        load_graph(tmp_path / "h")
    save_graph(small_sbm, tmp_path / "k")
    np.zeros(5, dtype="<i4").tofile(tmp_path / "k" / "labels.bin")
    with pytest.raises(GraphFormatError, match="labels"):
        load_graph(tmp_path / "k")


def test_csr_transpose_and_dot():
    rng = np.random.default_rng(0)
    dense = (rng.random((5, 4)) < 0.4) * rng.standard_normal((5, 4))
    rows, cols = np.nonzero(dense)
    from graphcond.graph import _csr_from_coo
    csr = CSR(*_csr_from_coo(5, rows, cols, dense[rows, cols]), (5, 4))
    np.testing.assert_allclose(csr.to_dense(), dense)
    np.testing.assert_allclose(csr.T.to_dense(), dense.T)
    v = rng.standard_normal((4, 2))
    np.testing.assert_allclose(csr.dot(v), dense @ v)
