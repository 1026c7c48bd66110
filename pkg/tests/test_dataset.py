import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ndcp.dataset import (
    Dataset,
    PartitionSpec,
    SplitSpec,
    load_csv,
    load_query_csv,
    make_two_gaussians,
    partition,
    train_test_split,
    write_csv,
)
from ndcp.errors import (
    DegenerateSplit,
    EmptyFile,
    InfeasiblePartition,
    MalformedRow,
    MissingColumn,
    NonBinaryLabel,
)


def test_labels_mapped_lexicographically(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("x,cls\n1.0,a\n2.0,b\n3.0,a\n")
    d = load_csv(f, "cls")
    assert d.labels.tolist() == [0, 1, 0]
    assert d.features[:, 0].tolist() == [1.0, 2.0, 3.0]


def test_onehot_adds_indicator_columns(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("num,colour,y\n1,red,p\n2,green,n\n3,blue,p\n4,red,n\n")
    plain = load_csv(f, "y", "ordinal")
    onehot = load_csv(f, "y", "onehot")
    assert plain.p == 2
    assert onehot.p == plain.p + 2
    assert onehot.feature_names == ("num", "colour=blue", "colour=green", "colour=red")
    assert onehot.features[:, 1:].sum(axis=1).tolist() == [1, 1, 1, 1]
    # ordinal codes follow sorted level order
    assert plain.features[:, 1].tolist() == [2.0, 1.0, 0.0, 2.0]


def test_missing_values_dropped(tmp_path, caplog):
    f = tmp_path / "d.csv"
    f.write_text("a,b,y\n1,2,0\n?,3,1\n4,,1\n5,6,1\n")
    d = load_csv(f, "y")
    assert d.n == 2
    assert "dropped 2" in caplog.text


@pytest.mark.parametrize("text,exc", [
    ("", EmptyFile),
    ("a,y\n", EmptyFile),
    ("a,b\n1,0\n", MissingColumn),
    ("a,y\n1,0\n2,0\n", NonBinaryLabel),
    ("a,y\n1,0\n2,1\n3,2\n", NonBinaryLabel),
])
def test_load_errors(tmp_path, text, exc):
    f = tmp_path / "d.csv"
    f.write_text(text)
    with pytest.raises(exc):
        load_csv(f, "y")


def test_malformed_row_reports_index(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("a,b,y\n1,2,0\n3,4,1\n5,1\n")
    with pytest.raises(MalformedRow) as info:
        load_csv(f, "y")
    assert info.value.row_index == 2


def test_query_encoding_matches_training(tmp_path):
    train = tmp_path / "t.csv"
    train.write_text("num,colour,y\n1,red,1\n2,green,0\n")
    q = tmp_path / "q.csv"
    q.write_text("colour,num\ngreen,7\npurple,8\n")
    d = load_csv(train, "y")
    X = load_query_csv(q, d.encoder)
    assert X.tolist() == [[7.0, 1.0, 0.0], [8.0, 0.0, 0.0]]


def test_write_csv_round_trip(tmp_path, gauss200):
    f = tmp_path / "g.csv"
    write_csv(f, gauss200)
    back = load_csv(f, "label")
    np.testing.assert_array_equal(back.features, gauss200.features)
    np.testing.assert_array_equal(back.labels, gauss200.labels)


def test_dataset_is_immutable(tiny):
    with pytest.raises(ValueError):
        tiny.features[0, 0] = 9.0


def test_split_sizes_and_determinism(tiny):
    d = make_two_gaussians(10, seed=0)
    tr, te = train_test_split(d, SplitSpec(0.8, 3))
    assert (tr.n, te.n) == (8, 2)
    tr2, te2 = train_test_split(d, SplitSpec(0.8, 3))
    assert tr.row_ids.tolist() == tr2.row_ids.tolist()
    assert te.row_ids.tolist() == te2.row_ids.tolist()


def test_split_degenerate():
    d = make_two_gaussians(3, seed=0)
    with pytest.raises(DegenerateSplit):
        train_test_split(d, SplitSpec(0.1, 0))


def test_split_is_partition_of_rows_over_random_draws():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(5, 300))
        seed = int(rng.integers(0, 2**63))
        d = make_two_gaussians(n, seed=1)
        tr, te = train_test_split(d, SplitSpec(0.8, seed))
        a, b = set(tr.row_ids.tolist()), set(te.row_ids.tolist())
        assert a | b == set(range(n))
        assert not a & b


def test_partition_pooled_identity(gauss200):
    (only,) = partition(gauss200, PartitionSpec("pooled", 1))
    assert only is gauss200


@pytest.mark.parametrize("n,sizes", [(10, [5, 5]), (11, [6, 5])])
def test_equal_partition_sizes(n, sizes):
    parts = partition(make_two_gaussians(n, seed=0), PartitionSpec("equal", 2, seed=4))
    assert [p.n for p in parts] == sizes


def test_random_partition_invariants_over_1000_draws():
    d = make_two_gaussians(100, seed=0)
    for seed in range(1000):
        parts = partition(d, PartitionSpec("random", 4, min_size=5, seed=seed))
        sizes = [p.n for p in parts]
        assert sum(sizes) == 100
        assert min(sizes) >= 5
        ids = np.concatenate([p.row_ids for p in parts])
        assert sorted(ids.tolist()) == list(range(100))


def test_random_sizes_cover_composition_space_uniformly():
    # n=4, k=2, min 1: compositions (1,3),(2,2),(3,1) each with probability 1/3
    d = make_two_gaussians(4, seed=0)
    counts = {}
    for seed in range(3000):
        key = tuple(p.n for p in partition(d, PartitionSpec("random", 2, min_size=1, seed=seed)))
        counts[key] = counts.get(key, 0) + 1
    assert set(counts) == {(1, 3), (2, 2), (3, 1)}
    assert all(abs(c / 3000 - 1 / 3) < 0.04 for c in counts.values())


def test_infeasible_partition():
    d = make_two_gaussians(30, seed=0)
    with pytest.raises(InfeasiblePartition):
        partition(d, PartitionSpec("random", 4, min_size=10))
    with pytest.raises(InfeasiblePartition):
        partition(make_two_gaussians(3, seed=0), PartitionSpec("equal", 4))
    with pytest.raises(ValueError):
        PartitionSpec("pooled", 2)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 120), k=st.integers(1, 8), seed=st.integers(0, 2**64 - 1),
       scheme=st.sampled_from(["equal", "random"]))
def test_partition_properties(n, k, seed, scheme):
    d = make_two_gaussians(n, seed=2)
    spec = PartitionSpec(scheme, k, min_size=2, seed=seed)
    if (scheme == "equal" and k > n) or (scheme == "random" and 2 * k > n):
        with pytest.raises(InfeasiblePartition):
            partition(d, spec)
        return
    parts = partition(d, spec)
    again = partition(d, spec)
    sizes = [p.n for p in parts]
    assert len(parts) == k
    assert sum(sizes) == n
    ids = [set(p.row_ids.tolist()) for p in parts]
    assert set().union(*ids) == set(range(n))
    assert sum(len(s) for s in ids) == n
    if scheme == "equal":
        assert max(sizes) - min(sizes) <= 1
        assert sizes == sorted(sizes, reverse=True)
    else:
        assert min(sizes) >= 2
    for a, b in zip(parts, again):
        np.testing.assert_array_equal(a.features, b.features)


def test_dataset_rejects_non_binary_labels():
    with pytest.raises(NonBinaryLabel):
        Dataset(np.zeros((2, 1)), np.array([0, 2]))
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1)), np.array([0, 1, 1]))


def test_spambase_shape_if_available():
    """Spambase with a header row added: 4601 rows, 57 features."""
    import os

    path = os.environ.get("NDCP_SPAMBASE")
    if not path:
        pytest.skip("set NDCP_SPAMBASE to a headed spambase CSV to run")
    d = load_csv(path, os.environ.get("NDCP_SPAMBASE_LABEL", "spam"))
    assert (d.n, d.p) == (4601, 57)
