import numpy as np
import pytest
from hypothesis import given, strategies as st

from gkcm.exceptions import ConfigError, DimensionError, TooFewSamplesError
from gkcm.kernels import KernelSpec, gram, median_gaussian, rff_features
from gkcm.okforest import (
    ForestSpec, best_split, fit_forest, forest_weight_matrix, forest_weights, forest_weights_many,
    gram_factor, node_variance,
)

import oracles


def test_node_variance_examples():
    x = np.array([[0.0], [2.0], [2.0]])
    K = x @ x.T
    assert node_variance(K, [1]) == 0.0
    assert node_variance(K, [1, 2]) == 0.0
    assert node_variance(K, [0, 1]) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        node_variance(K, [])


@given(st.integers(1, 15), st.integers(0, 10_000))
def test_node_variance_nonnegative(m, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(20, 2))
    K = gram(median_gaussian(x), x)
    S = rng.choice(20, size=m, replace=False)
    assert node_variance(K, S) >= -1e-10


def test_best_split_constant_features():
    z = np.ones((5, 2))
    assert best_split(np.eye(5), np.arange(5), z, [0, 1]) is None


def test_best_split_hand_example():
    z = np.array([[0.0], [1.0], [10.0], [11.0]])
    x = np.array([[0.0], [0.0], [5.0], [5.0]])
    split = best_split(x @ x.T, np.arange(4), z, [0])
    feature, threshold = split
    assert feature == 0 and 1 < threshold < 10
    assert split.reduction == pytest.approx(6.25)


def _random_instance(rng, integer):
    n, d = 12, 3
    if integer:
        z = rng.integers(0, 4, size=(n, d)).astype(float)
        x = rng.integers(-2, 3, size=(n, 2)).astype(float)
        K = x @ x.T
    else:
        z = rng.normal(size=(n, d))
        x = rng.normal(size=(n, 2))
        K = oracles.gauss_gram(x, 1.0)
    S = np.sort(rng.choice(n, size=int(rng.integers(2, n + 1)), replace=False))
    feats = np.sort(rng.choice(d, size=int(rng.integers(1, d + 1)), replace=False))
    return K, S, z, feats


@pytest.mark.parametrize("integer", [False, True])
@pytest.mark.parametrize("mns", [1, 2])
def test_best_split_matches_enumeration(integer, mns):
    rng = np.random.default_rng(100 + mns + 10 * integer)
    for _ in range(100):
        K, S, z, feats = _random_instance(rng, integer)
        got = best_split(K, S, z, feats, min_node_size=mns)
        ref = oracles.brute_force_split(K, S, z, feats, min_node_size=mns)
        if ref is None:
            assert got is None
            continue
        assert (got.feature, got.threshold) == ref[:2]
        assert got.reduction == pytest.approx(ref[2], abs=1e-10)
        assert got.reduction >= -1e-12


def _check_tree(tree, mns, z):
    # leaves partition the bag
    seen = np.concatenate([tree.leaf_members(v) for v in tree.leaves()])
    np.testing.assert_array_equal(np.sort(seen), tree.bag)
    for v in tree.leaves():
        members = tree.leaf_members(v)
        assert len(members) >= mns
        # every member of a leaf routes to that leaf
        assert np.all(tree.apply(z[members]) == v)


def test_tree_structure_invariants(rng):
    z = rng.normal(size=(80, 3))
    x = z[:, :1] + 0.5 * rng.normal(size=(80, 1))
    K = gram(median_gaussian(x), x)
    forest = fit_forest(z, K, ForestSpec(num_trees=5, min_node_size=4, seed=1))
    for tree in forest.trees:
        _check_tree(tree, 4, z)
    assert len(forest.trees) == 5


def test_default_spec_resolution():
    spec = ForestSpec().resolve(7)
    assert (spec.num_trees, spec.mtry, spec.min_node_size, spec.subsample_fraction) == (700, 7, 5, 0.5)
    with pytest.raises(ConfigError):
        ForestSpec(mtry=8).resolve(7)
    with pytest.raises(ConfigError):
        ForestSpec(subsample_fraction=0).resolve(2)
    with pytest.raises(ConfigError):
        ForestSpec(split_mode="hist").resolve(2)


def test_fit_validation(rng):
    z = rng.normal(size=(10, 2))
    with pytest.raises(DimensionError):
        fit_forest(z, np.eye(9))
    with pytest.raises(TooFewSamplesError):
        fit_forest(z[:1], np.eye(1))


def test_large_min_node_size_gives_single_leaves(rng):
    n = 20
    z = rng.normal(size=(n, 2))
    K = np.eye(n)
    forest = fit_forest(z, K, ForestSpec(num_trees=7, min_node_size=n, seed=3))
    assert all(t.num_nodes == 1 for t in forest.trees)
    W = forest_weight_matrix(forest)
    expected = np.zeros(n)
    for t in forest.trees:
        expected[t.bag] += 1.0 / t.bag.size / len(forest.trees)
    np.testing.assert_allclose(W, np.tile(expected, (n, 1)), atol=1e-15)

    full = fit_forest(z, K, ForestSpec(num_trees=3, min_node_size=n, subsample_fraction=1.0))
    np.testing.assert_allclose(forest_weight_matrix(full), np.full((n, n), 1.0 / n), atol=1e-15)
    np.testing.assert_allclose(forest_weights(full, [9.0, -9.0]), np.full(n, 1.0 / n), atol=1e-15)


def test_same_seed_same_forest(rng):
    z = rng.normal(size=(50, 2))
    K = gram(median_gaussian(z[:, :1]), z[:, :1])
    spec = ForestSpec(num_trees=10, mtry=1, seed=42)
    a, b = fit_forest(z, K, spec), fit_forest(z, K, spec)
    for ta, tb in zip(a.trees, b.trees):
        for name in ("feature", "threshold", "left", "right", "members", "bag"):
            np.testing.assert_array_equal(getattr(ta, name), getattr(tb, name))
    c = fit_forest(z, K, ForestSpec(num_trees=10, mtry=1, seed=43))
    assert any(not np.array_equal(ta.bag, tc.bag) for ta, tc in zip(a.trees, c.trees))


@given(st.integers(0, 10_000), st.sampled_from([1, 2, 5]), st.booleans(), st.booleans())
def test_weights_are_probability_vectors(seed, mns, replace, route_all):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(30, 2))
    x = rng.normal(size=(30, 1))
    spec = ForestSpec(num_trees=4, min_node_size=mns, with_replacement=replace,
                      route_all_points=route_all, seed=seed)
    forest = fit_forest(z, gram(median_gaussian(x), x), spec)
    W = forest_weights_many(forest, rng.normal(size=(10, 2)) * 3)
    assert W.min() >= 0 and W.max() <= 1
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)
    Wt = forest_weight_matrix(forest)
    np.testing.assert_allclose(Wt.sum(axis=1), 1.0, atol=1e-12)
    for i in range(0, 30, 7):
        np.testing.assert_array_equal(Wt[i], forest_weights(forest, z[i]))


def test_out_of_bag_points_get_no_weight(rng):
    z = rng.normal(size=(40, 2))
    forest = fit_forest(z, np.eye(40), ForestSpec(num_trees=1, seed=5))
    w = forest_weights(forest, z[0])
    outside = np.setdiff1d(np.arange(40), forest.trees[0].bag)
    assert np.all(w[outside] == 0)


def test_weights_are_local():
    rng = np.random.default_rng(11)
    n = 20
    z = rng.normal(size=(n, 2))
    x = z[:, :1] ** 2 + 0.1 * rng.normal(size=(n, 1))
    forest = fit_forest(z, gram(median_gaussian(x), x), ForestSpec(num_trees=50, min_node_size=1, seed=2))
    wins = total = 0
    for i in range(n):
        for tree in forest.trees:
            if i not in tree.bag:
                continue
            total += 1
            leaf = tree.apply(z[i])[0]
            members = tree.leaf_members(leaf)
            per = np.zeros(n)
            np.add.at(per, members, 1.0 / members.size)
            wins += per[i] >= np.delete(per, i).max(initial=0.0)
    assert wins > total / 2


def test_rff_and_exact_root_splits_agree():
    agree = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(60, 2))
        x = np.column_stack([z[:, 0] + 0.6 * z[:, 1] ** 2 + 0.5 * rng.normal(size=60)])
        ls = median_gaussian(x).lengthscales
        spec = ForestSpec(num_trees=1, min_node_size=5, subsample_fraction=1.0, seed=seed)
        exact = fit_forest(z, gram(KernelSpec("gaussian", ls), x), spec)
        feats = rff_features(KernelSpec("rff_gaussian", ls, 4096, seed), x)
        approx = fit_forest(z, feats, ForestSpec(num_trees=1, min_node_size=5, subsample_fraction=1.0,
                                                 split_mode="rff", rff_features=4096, seed=seed))
        agree += exact.trees[0].feature[0] == approx.trees[0].feature[0]
    assert agree >= 40


def test_gram_factor_reconstructs_low_rank(rng):
    F0 = rng.normal(size=(100, 6))
    K = F0 @ F0.T
    F = gram_factor(K, 25)
    assert F.shape[1] == 6
    np.testing.assert_allclose(F @ F.T, K, atol=1e-10 * np.abs(K).max())
    assert gram_factor(np.eye(100), 25) is None


@pytest.mark.parametrize("kind", ["linear", "rbf"])
def test_low_rank_route_matches_gram_route(rng, kind):
    n = 200
    z = rng.normal(size=(n, 3))
    x = z[:, :1] - z[:, 1:2] + 0.5 * rng.normal(size=(n, 1))
    K = x @ x.T if kind == "linear" else gram(median_gaussian(x), x)
    assert gram_factor(K, n // 4) is not None
    spec = ForestSpec(num_trees=8, mtry=2, seed=9)
    a = forest_weight_matrix(fit_forest(z, K, spec))
    b = forest_weight_matrix(fit_forest(z, K, spec, low_rank=False))
    np.testing.assert_array_equal(a, b)


def test_sample_keys_make_weights_permutation_equivariant(rng):
    n = 40
    z = rng.normal(size=(n, 2))
    x = z[:, :1] + 0.3 * rng.normal(size=(n, 1))
    K = gram(median_gaussian(x), x)
    keys = rng.integers(0, 2 ** 62, size=n)
    perm = rng.permutation(n)
    spec = ForestSpec(num_trees=20, seed=4)
    query = np.array([0.1, -0.2])
    w = forest_weights(fit_forest(z, K, spec, sample_keys=keys), query)
    wp = forest_weights(fit_forest(z[perm], K[np.ix_(perm, perm)], spec, sample_keys=keys[perm]), query)
    np.testing.assert_allclose(wp, w[perm], atol=1e-15)
    with pytest.raises(ConfigError):
        fit_forest(z, K, ForestSpec(num_trees=2, with_replacement=True), sample_keys=keys)
