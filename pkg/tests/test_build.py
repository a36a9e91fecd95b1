import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import split_sides, walk_tree
from geraf.build import (
    approximate_diameter,
    build_forest,
    build_tree,
    compute_variances,
    default_jobs,
    perturbed_split_value,
    quickselect,
    quickselect_median,
    split_points,
    top_t_dimensions,
    tree_seeds,
)
from geraf.core import Dataset, ForestParams, UsageError


def test_variances_hand_value():
    ds = Dataset([[1, 2], [3, 4], [5, 6]])
    # two-pass: mean (3, 4), squared deviations sum 8 per column, / (n - 1)
    np.testing.assert_allclose(compute_variances(ds), [4.0, 4.0], rtol=1e-15)


def test_variances_single_point_is_zero():
    np.testing.assert_array_equal(compute_variances(Dataset([[1.0, -3.0, 2.0]])), [0, 0, 0])


def test_variances_constant_column_is_zero(rng):
    X = rng.standard_normal((50, 3))
    X[:, 1] = 2.5
    v = compute_variances(Dataset(X))
    assert v[1] == 0.0
    assert v[0] > 0


def test_top_t_dimensions_order_and_ties():
    assert top_t_dimensions([1.0, 5.0, 5.0, 2.0], 2).tolist() == [1, 2]
    assert top_t_dimensions([1.0, 5.0, 5.0, 2.0], 3).tolist() == [1, 2, 3]
    with pytest.raises(UsageError):
        top_t_dimensions([1.0, 2.0], 3)


def test_quickselect_hand_value():
    rng = np.random.default_rng(0)
    assert quickselect_median(np.array([4, 1, 3, 2]), rng) == 3
    assert quickselect_median(np.array([7]), rng) == 7
    assert quickselect(np.array([5, 5, 5, 1]), 0, rng) == 1


def test_quickselect_rejects_bad_input():
    rng = np.random.default_rng(0)
    with pytest.raises(UsageError):
        quickselect_median(np.array([]), rng)
    with pytest.raises(UsageError):
        quickselect(np.array([1, 2]), 2, rng)


@settings(max_examples=150, deadline=None)
@given(arrays(np.float32, st.integers(1, 400), elements=st.integers(-20, 20).map(float)), st.data())
def test_quickselect_matches_sort(values, data):
    rank = data.draw(st.integers(0, values.size - 1))
    seed = data.draw(st.integers(0, 2**32 - 1))
    assert quickselect(values, rank, np.random.default_rng(seed)) == np.sort(values)[rank]


def test_approximate_diameter_within_factor_two(rng):
    X = rng.standard_normal((200, 6))
    ds = Dataset(X)
    P = ds.points.astype(np.float64)
    exact = np.sqrt(((P[:, None, :] - P[None, :, :]) ** 2).sum(-1).max())
    est = approximate_diameter(np.arange(200), ds, rng=rng)
    assert exact / 2 - 1e-9 <= est <= exact + 1e-9
    assert approximate_diameter(np.array([4]), ds) == 0.0


def test_perturbed_split_value_bounds(rng):
    for _ in range(200):
        v = perturbed_split_value(1.0, 2.0, 16, rng)
        assert 1.0 - 1.5 <= v <= 1.0 + 1.5
    assert perturbed_split_value(3.0, 0.0, 4, rng) == 3.0


def test_split_points_value_and_fallback():
    ds = Dataset([[0.0], [1.0], [2.0], [3.0]])
    left, right = split_points(np.arange(4), ds, None, 0, 2.0)
    assert left.tolist() == [0, 1] and right.tolist() == [2, 3]
    # nothing below the value: split by position instead of leaving a side empty
    left, right = split_points(np.array([3, 2, 1, 0]), ds, None, 0, -5.0)
    assert left.tolist() == [3, 2] and right.tolist() == [1, 0]


def test_tree_structure_and_balance(rng):
    ds = Dataset(rng.standard_normal((1000, 10)))
    top = top_t_dimensions(compute_variances(ds), 4)
    tree = build_tree(ds, top, ForestParams(t=4, p=10), 99)
    leaves = walk_tree(tree, ds.n, 10, top, balanced=True)
    assert len(leaves) == tree.n_leaves
    for lo, hi, value in split_sides(tree, ds):
        assert lo.max() <= value <= hi.min()


def test_tree_balanced_with_heavy_ties():
    X = np.zeros((257, 3))
    X[::3, 0] = 1.0
    ds = Dataset(X)
    tree = build_tree(ds, np.array([0, 1]), ForestParams(t=2, p=4), 1)
    walk_tree(tree, ds.n, 4, [0, 1], balanced=True)


def test_tree_small_input_is_one_leaf():
    ds = Dataset(np.arange(10.0).reshape(5, 2))
    tree = build_tree(ds, np.array([1]), ForestParams(t=1, p=5), 0)
    assert tree.n_nodes == 1 and tree.n_leaves == 1
    assert sorted(tree.leaf_points(0).tolist()) == [0, 1, 2, 3, 4]


def test_tree_depends_only_on_seed(rng):
    ds = Dataset(rng.standard_normal((500, 8)))
    P = ForestParams(t=3, p=8, use_rotation=True, use_split_perturbation=True)
    top = np.array([0, 1, 2])
    assert build_tree(ds, top, P, 5) == build_tree(ds, top, P, 5)
    assert build_tree(ds, top, P, 5) != build_tree(ds, top, P, 6)


def test_no_shuffle_no_randomization_is_reproducible_across_seeds(rng):
    # with t = 1 and no randomization factors, the seed only feeds quickselect
    ds = Dataset(rng.standard_normal((300, 4)))
    P = ForestParams(t=1, p=16, use_shuffling=False)
    a = build_tree(ds, np.array([2]), P, 1)
    b = build_tree(ds, np.array([2]), P, 2)
    assert np.array_equal(a.dims, b.dims) and np.array_equal(a.values, b.values)
    assert np.array_equal(a.indices, b.indices)


def test_forest_uses_top_dims_and_seeds(rng):
    X = rng.standard_normal((400, 6))
    X[:, 4] *= 10
    X[:, 1] *= 5
    ds = Dataset(X)
    forest = build_forest(ds, ForestParams(m=3, t=2, p=16), n_jobs=1)
    assert forest.top_dims.tolist() == [4, 1]
    assert [t.tree_seed for t in forest.trees] == tree_seeds(0, 3)
    assert len(set(tree_seeds(0, 8))) == 8
    for tree in forest.trees:
        walk_tree(tree, ds.n, 16, forest.top_dims, balanced=True)


def test_forest_same_for_any_worker_count(rng):
    ds = Dataset(rng.standard_normal((2000, 16)))
    P = ForestParams(m=4, t=4, p=8, use_rotation=True, seed=11)
    assert build_forest(ds, P, n_jobs=1) == build_forest(ds, P, n_jobs=2)


def test_forest_rejects_t_above_d(small_dataset):
    with pytest.raises(UsageError):
        build_forest(small_dataset, ForestParams(t=13), n_jobs=1)


def test_default_jobs_env(monkeypatch):
    monkeypatch.setenv("GERAF_THREADS", "3")
    assert default_jobs() == 3
    monkeypatch.setenv("GERAF_THREADS", "lots")
    with pytest.raises(UsageError):
        default_jobs()
    monkeypatch.delenv("GERAF_THREADS")
    assert default_jobs() >= 1


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(1, 300), d=st.integers(1, 12), p=st.integers(1, 40), seed=st.integers(0, 2**32),
    rotation=st.booleans(), perturb=st.booleans(), shuffle=st.booleans(),
)
def test_tree_partition_property(n, d, p, seed, rotation, perturb, shuffle):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.standard_normal((n, d)).round(1))
    t = int(rng.integers(1, d + 1))
    P = ForestParams(t=t, p=p, use_rotation=rotation, use_split_perturbation=perturb, use_shuffling=shuffle)
    top = top_t_dimensions(compute_variances(ds), t)
    walk_tree(build_tree(ds, top, P, seed), n, p, top, balanced=not perturb)
