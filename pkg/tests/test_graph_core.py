import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igsd.errors import ConfigError, FormatError
from igsd.graph_core import (
    Graph,
    GraphDataset,
    SplitSpec,
    batch_iter,
    make_folds,
    parse_tu_dataset,
    split_semi,
    write_tu_dataset,
)


def write_fixture(root, name="TOY", indicator=(1, 1, 1, 2, 2),
                  edges=((1, 2), (2, 1), (2, 3), (3, 2), (3, 1), (1, 3), (4, 5), (5, 4)),
                  labels=(1, -1), node_labels=None):
    root.mkdir(parents=True, exist_ok=True)
    (root / f"{name}_A.txt").write_text("".join(f"{u}, {v}\n" for u, v in edges))
    (root / f"{name}_graph_indicator.txt").write_text("".join(f"{i}\n" for i in indicator))
    (root / f"{name}_graph_labels.txt").write_text("".join(f"{y}\n" for y in labels))
    if node_labels is not None:
        (root / f"{name}_node_labels.txt").write_text("".join(f"{y}\n" for y in node_labels))
    return root


class TestParse:
    def test_hand_traced_fixture(self, tmp_path):
        ds = parse_tu_dataset(write_fixture(tmp_path), "TOY")
        assert len(ds) == 2
        assert [g.node_count for g in ds.graphs] == [3, 2]
        assert ds.num_classes == 2
        # labels [1, -1] remap in sorted order: -1 -> 0, 1 -> 1
        assert ds.labels.tolist() == [1, 0]
        assert ds.graphs[0].num_edges == 3
        assert ds.graphs[1].edges.tolist() == [[0, 1], [1, 0]]
        ds.validate()

    def test_degree_features_without_node_labels(self, tmp_path):
        ds = parse_tu_dataset(write_fixture(tmp_path), "TOY")
        assert ds.featurization == "degree"
        # triangle nodes have degree 2, the pair has degree 1; cap = max degree = 2
        assert ds.feature_dim == 3
        np.testing.assert_array_equal(ds.graphs[0].node_features, np.tile([0, 0, 1.0], (3, 1)))
        np.testing.assert_array_equal(ds.graphs[1].node_features, np.tile([0, 1.0, 0], (2, 1)))

    def test_degree_cap(self, tmp_path):
        star = [(1, k) for k in range(2, 7)]
        root = write_fixture(tmp_path, indicator=[1] * 6, edges=star, labels=[1])
        ds = parse_tu_dataset(root, "TOY", max_degree=3)
        assert ds.feature_dim == 4
        assert ds.graphs[0].node_features[0].tolist() == [0, 0, 0, 1]

    def test_one_directional_edges_symmetrized(self, tmp_path):
        root = write_fixture(tmp_path, edges=((1, 2), (2, 3), (3, 1), (4, 5)))
        ds = parse_tu_dataset(root, "TOY")
        assert ds.graphs[0].num_edges == 3
        ds.validate()

    def test_single_node_no_edges(self, tmp_path):
        root = write_fixture(tmp_path, indicator=[1], edges=(), labels=[1])
        ds = parse_tu_dataset(root, "TOY")
        assert len(ds) == 1
        assert ds.graphs[0].node_count == 1
        assert ds.graphs[0].num_edges == 0

    def test_node_labels_one_hot(self, tmp_path):
        root = write_fixture(tmp_path, node_labels=[0, 2, 2, 5, 0])
        ds = parse_tu_dataset(root, "TOY")
        assert ds.feature_dim == 3
        assert ds.graphs[1].node_features.tolist() == [[0, 0, 1], [1, 0, 0]]

    def test_missing_file(self, tmp_path):
        root = write_fixture(tmp_path)
        (root / "TOY_graph_labels.txt").unlink()
        with pytest.raises(IOError):
            parse_tu_dataset(root, "TOY")

    def test_edge_crossing_graphs(self, tmp_path):
        root = write_fixture(tmp_path, edges=((1, 2), (3, 4)))
        with pytest.raises(FormatError):
            parse_tu_dataset(root, "TOY")

    def test_edge_outside_nodes(self, tmp_path):
        root = write_fixture(tmp_path, edges=((1, 9),))
        with pytest.raises(FormatError):
            parse_tu_dataset(root, "TOY")

    def test_non_integer_token(self, tmp_path):
        root = write_fixture(tmp_path)
        (root / "TOY_A.txt").write_text("1, 2\n2, x\n")
        with pytest.raises(FormatError):
            parse_tu_dataset(root, "TOY")

    def test_mutag_statistics(self, mutag):
        assert len(mutag) == 188
        assert mutag.num_classes == 2
        avg = np.mean([g.node_count for g in mutag.graphs])
        assert avg == pytest.approx(17.9, abs=0.05)
        mutag.validate()

    def test_round_trip(self, tmp_path, mutag):
        write_tu_dataset(mutag, tmp_path, "MUTAG")
        again = parse_tu_dataset(tmp_path, "MUTAG")
        assert len(again) == len(mutag)
        assert again.num_classes == mutag.num_classes
        for a, b in zip(mutag.graphs, again.graphs):
            assert a.node_count == b.node_count
            assert a.label == b.label
            assert set(map(tuple, a.edges.tolist())) == set(map(tuple, b.edges.tolist()))
            np.testing.assert_array_equal(a.node_features, b.node_features)


class TestGraph:
    def test_validate_rejects_asymmetric(self):
        g = Graph(2, np.array([[0, 1]]), np.array([1.0]), np.zeros((2, 1)))
        with pytest.raises(FormatError):
            g.validate()

    def test_validate_rejects_duplicates(self):
        g = Graph(2, np.array([[0, 1], [1, 0], [0, 1]]), np.ones(3), np.zeros((2, 1)))
        with pytest.raises(FormatError):
            g.validate()

    def test_without_labels(self, mutag):
        stripped = mutag.without_labels()
        assert all(g.label is None for g in stripped.graphs)
        assert mutag.has_labels


def labeled_ds(labels):
    graphs = [Graph(1, np.zeros((0, 2)), np.zeros(0), np.ones((1, 1)), int(y)) for y in labels]
    return GraphDataset(graphs, int(max(labels)) + 1, 1)


class TestSplits:
    def test_five_percent(self):
        ds = labeled_ds(np.arange(100) % 2)
        lab, unl = split_semi(ds, SplitSpec(0.05, seed=7))
        assert len(lab) == 5 and len(unl) == 95
        assert set(np.unique(ds.labels[lab])) == {0, 1}
        assert not set(lab) & set(unl)

    def test_full_fraction(self):
        ds = labeled_ds(np.arange(20) % 2)
        lab, unl = split_semi(ds, SplitSpec(1.0))
        assert len(lab) == 20 and len(unl) == 0

    def test_deterministic(self):
        ds = labeled_ds(np.arange(100) % 3)
        a = split_semi(ds, SplitSpec(0.1, seed=3))
        b = split_semi(ds, SplitSpec(0.1, seed=3))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_too_small(self):
        ds = labeled_ds(np.arange(20) % 3)
        with pytest.raises(ConfigError):
            split_semi(ds, SplitSpec(0.05))

    @given(st.lists(st.integers(0, 3), min_size=10, max_size=80), st.floats(0.05, 1.0),
           st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_stratified_property(self, labels, fraction, seed):
        labels = np.array(labels)
        _, labels = np.unique(labels, return_inverse=True)
        ds = labeled_ds(labels)
        if round(fraction * len(labels)) < len(np.unique(labels)):
            with pytest.raises(ConfigError):
                split_semi(ds, SplitSpec(fraction, seed=seed))
            return
        lab, unl = split_semi(ds, SplitSpec(fraction, seed=seed))
        assert len(lab) == round(fraction * len(labels))
        for c in np.unique(labels):
            assert np.sum(labels[lab] == c) >= 1
        assert sorted(np.concatenate([lab, unl]).tolist()) == list(range(len(labels)))

    def test_leave_one_out(self):
        ds = labeled_ds(np.arange(10) % 2)
        folds = make_folds(ds, 10, seed=0)
        assert all(len(test) == 1 for _, test in folds)

    def test_mutag_fold_sizes(self, mutag):
        folds = make_folds(mutag, 10, seed=1)
        assert {len(t) for _, t in folds} <= {18, 19}
        assert sorted(np.concatenate([t for _, t in folds]).tolist()) == list(range(188))

    def test_too_many_folds(self):
        with pytest.raises(ConfigError):
            make_folds(labeled_ds([0, 1, 0]), 4)

    @given(st.integers(2, 60), st.integers(2, 12), st.integers(0, 1000))
    @settings(max_examples=60, deadline=None)
    def test_partition_property(self, n, k, seed):
        if k > n:
            return
        labels = np.random.default_rng(seed).integers(0, 3, size=n)
        folds = make_folds(labels, k, seed)
        tests = [set(t.tolist()) for _, t in folds]
        for i in range(k):
            for j in range(i + 1, k):
                assert not tests[i] & tests[j]
        assert set().union(*tests) == set(range(n))
        sizes = [len(t) for t in tests]
        assert max(sizes) - min(sizes) <= 1
        for train, test in folds:
            assert not set(train.tolist()) & set(test.tolist())


class TestBatching:
    def test_sizes(self):
        sizes = [len(b) for b in batch_iter(range(10), 4, shuffle=True)]
        assert sizes == [4, 4, 2]

    def test_order_preserved(self):
        out = np.concatenate(list(batch_iter(range(10), 3, shuffle=False)))
        assert out.tolist() == list(range(10))

    def test_same_seed(self):
        a = [b.tolist() for b in batch_iter(range(50), 8, seed=4)]
        b = [b.tolist() for b in batch_iter(range(50), 8, seed=4)]
        assert a == b

    def test_each_index_once(self):
        out = np.concatenate(list(batch_iter(range(37), 5, seed=9)))
        assert sorted(out.tolist()) == list(range(37))

    def test_bad_batch_size(self):
        with pytest.raises(ConfigError):
            list(batch_iter(range(5), 0))
