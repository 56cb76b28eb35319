import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peerbench.data import Dataset
from peerbench.exceptions import DataError, NumericError
from peerbench.forest import (BenchmarkForest, derive_seeds, fit_forest, oob_error, oob_predict,
                              predict, prob_always_in_bag)
from peerbench.serialization import forest_from_bytes, forest_to_bytes, load_forest, save_forest
from peerbench.synth import oracle_piecewise_mean


def _route(tree, x):
    node = 0
    while tree.left[node] != -1:
        node = tree.left[node] if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
    return node


@pytest.fixture(scope="module")
def step_1d():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, 200)
    y = (x > 0).astype(float)
    return x[:, None], y


@pytest.fixture(scope="module")
def linear_data():
    rng = np.random.default_rng(1)
    X = rng.uniform(size=(200, 3))
    f = 2 * X[:, 0] + X[:, 1]
    return X, f + rng.normal(0, 0.2, 200), f


def _hand_forest(values):
    """Forest of stumps-free single-leaf trees predicting the given constants."""
    f = BenchmarkForest(n_tree=len(values))
    t = len(values)
    f._set_state(np.full((t, 1), -1, np.int32), np.zeros((t, 1)), np.full((t, 1), -1, np.int32),
                 np.full((t, 1), -1, np.int32), np.asarray(values, float)[:, None],
                 np.ones(t, np.int64), np.ones((t, 2), np.int32), np.zeros(t, np.uint64))
    f.n_features_in_ = 1
    f.m_try_ = 1
    f.seed_ = 0
    return f


def test_hand_built_predictions():
    assert predict(_hand_forest([3.2]), [0.7]) == 3.2
    assert predict(_hand_forest([1.0, 3.0]), [0.0]) == 2.0


def test_constant_response():
    X = np.random.default_rng(2).normal(size=(30, 2))
    f = fit_forest((X, np.full(30, 4.5)), n_tree=10, seed=1)
    np.testing.assert_array_equal(f.predict(X), 4.5)
    assert all(t.n_nodes == 1 for t in f.estimators_)
    acc = oob_error(f, (X, np.full(30, 4.5)))
    assert acc["rmse"] == 0.0
    assert acc["r_squared"] is None and "zero variance" in acc["r_squared_reason"]


def test_step_matches_piecewise_oracle(step_1d):
    X, y = step_1d
    f = fit_forest((X, y), m_try=1, seed=0)
    oracle = oracle_piecewise_mean(X[:, 0], y, [0.0])
    away = np.abs(X[:, 0]) > 0.1
    assert np.max(np.abs(f.predict(X)[away] - oracle[away])) < 0.05
    assert oob_error(f, (X, y))["r_squared"] > 0.9


def test_linear_correlation_with_truth(linear_data):
    X, y, f_true = linear_data
    f = fit_forest((X, y), n_tree=100, m_try=2, seed=3)
    assert np.corrcoef(f.predict(X), f_true)[0, 1] > 0.9


def test_pure_noise_r2_small():
    rng = np.random.default_rng(4)
    X, y = rng.uniform(size=(200, 3)), rng.normal(size=200)
    assert abs(oob_error(fit_forest((X, y), n_tree=100, seed=0), (X, y))["r_squared"]) < 0.15


def test_prediction_is_mean_of_trees(linear_data):
    X, y, _ = linear_data
    f = fit_forest((X, y), n_tree=40, seed=5)
    P = np.stack([t.predict(X) for t in f.estimators_])
    np.testing.assert_allclose(f.predict(X), P.mean(axis=0), atol=1e-12, rtol=0)
    assert f.in_bag_counts_.sum(axis=1).tolist() == [200] * 40


def test_leaves_are_inbag_means(linear_data):
    X, y, _ = linear_data
    f = fit_forest((X[:60], y[:60]), n_tree=5, seed=6)
    for tree in f.estimators_:
        leaf = np.array([_route(tree, x) for x in X[:60]])
        w = tree.in_bag_counts
        for node in np.unique(leaf[w > 0]):
            m = (leaf == node) & (w > 0)
            assert tree.value[node] == pytest.approx(np.average(y[:60][m], weights=w[m]), abs=1e-12)
        reachable = {0}
        for k in range(tree.n_nodes):
            if tree.left[k] != -1:
                reachable |= {int(tree.left[k]), int(tree.right[k])}
        assert reachable == set(range(tree.n_nodes))


def test_memorises_injective_covariate():
    x = np.linspace(0, 1, 50)
    y = np.sin(7 * x)
    f = fit_forest((x[:, None], y), m_try=1, min_node_size=1, n_tree=10, seed=0)
    for tree in f.estimators_:
        bag = tree.in_bag_counts > 0
        np.testing.assert_array_equal(tree.predict(x[:, None])[bag], y[bag])


def test_oob_exclusion(linear_data):
    X, y, _ = linear_data
    f = fit_forest((X[:50], y[:50]), n_tree=30, seed=7)
    P = f.tree_predictions(X[:50])
    expect = np.array([P[f.in_bag_counts_[:, i] == 0, i].mean() for i in range(50)])
    np.testing.assert_allclose(f.oob_predict(X[:50]), expect, atol=1e-12)


def test_oob_missing_entries():
    X = np.random.default_rng(8).normal(size=(40, 2))
    y = X[:, 0]
    single = fit_forest((X, y), n_tree=1, seed=0)
    pred = oob_predict(single, (X, y))
    np.testing.assert_array_equal(np.isnan(pred), single.in_bag_counts_[0] > 0)
    big = fit_forest((X, y), n_tree=60, seed=0)
    assert prob_always_in_bag(40, 60) < 1e-10
    assert not np.isnan(oob_predict(big, (X, y))).any()


def test_prob_always_in_bag_value():
    assert prob_always_in_bag(100, 1) == pytest.approx(1 - 0.99**100)


def test_validation_errors():
    with pytest.raises(DataError):
        BenchmarkForest().fit(np.zeros((1, 2)), [1.0])
    with pytest.raises(ValueError, match="m_try"):
        BenchmarkForest(m_try=5).fit(np.zeros((5, 2)), np.arange(5.0))
    f = fit_forest((np.arange(10.0)[:, None], np.arange(10.0)), n_tree=3)
    with pytest.raises(DataError, match="expected 1"):
        predict(f, [1.0, 2.0])
    with pytest.raises(NumericError):
        oob_error(_hand_forest([1.0]), (np.zeros((2, 1)), np.array([0.0, 1.0])))


def test_determinism_and_seed_independence(linear_data):
    X, y, _ = linear_data
    a = fit_forest((X, y), n_tree=20, seed=11)
    b = fit_forest((X, y), n_tree=20, seed=11)
    c = fit_forest((X, y), n_tree=20, seed=12)
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()
    np.testing.assert_array_equal(derive_seeds(11, 20), a.tree_seeds_)
    # a tree depends only on its own derived seed
    longer = fit_forest((X, y), n_tree=25, seed=11)
    np.testing.assert_array_equal(longer.value_[:20, :a.value_.shape[1]][a.left_ != -2],
                                  a.value_[a.left_ != -2])


def test_sklearn_api(linear_data):
    X, y, _ = linear_data
    f = BenchmarkForest(n_tree=10, random_state=0)
    assert f.get_params() == {"m_try": None, "n_tree": 10, "min_node_size": 5, "random_state": 0}
    assert f.fit(X, y).m_try_ == 3
    assert -1 <= f.score(X, y) <= 1


def test_serialization_roundtrip(tmp_path, linear_data):
    X, y, _ = linear_data
    f = fit_forest((X, y), n_tree=15, seed=13)
    buf = forest_to_bytes(f)
    g = forest_from_bytes(buf)
    assert forest_to_bytes(g) == buf
    np.testing.assert_array_equal(g.predict(X), f.predict(X))
    np.testing.assert_array_equal(g.oob_prediction_, f.oob_prediction_)
    save_forest(f, tmp_path / "f.pbf")
    assert load_forest(tmp_path / "f.pbf").fingerprint() == f.fingerprint()
    with pytest.raises(DataError, match="magic"):
        forest_from_bytes(b"NOTAFOREST" + buf[10:])
    with pytest.raises(DataError, match="truncated"):
        forest_from_bytes(buf[:-8])


@settings(max_examples=15, deadline=None)
@given(st.integers(5, 40), st.integers(1, 4), st.integers(0, 2**31))
def test_forest_mean_property(n, n_tree, seed):
    rng = np.random.default_rng(seed)
    X, y = rng.normal(size=(n, 2)), rng.normal(size=n)
    f = fit_forest((X, y), n_tree=n_tree, seed=seed, min_node_size=1)
    np.testing.assert_allclose(f.predict(X), f.tree_predictions(X).mean(axis=0), atol=1e-12)
    oob = f.oob_predict(X)
    assert np.all(np.isnan(oob) == (f.in_bag_counts_ > 0).all(axis=0))


def test_dataset_input():
    d = Dataset.from_arrays(np.arange(20.0)[:, None], np.arange(20.0), peer_group=["A", "B"] * 10)
    assert fit_forest(d, n_tree=5).n_features_in_ == 2
