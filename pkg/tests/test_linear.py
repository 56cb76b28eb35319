import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peerbench.exceptions import DataError
from peerbench.forest import BenchmarkForest
from peerbench.linear import LinearBaseline, cv_compare, fit_ols, residual_trend


def _normal_equations(X, y):
    """Gauss-Jordan elimination with partial pivoting on [1 X]'[1 X] b = [1 X]'y."""
    A = np.column_stack([np.ones(len(y)), X])
    M = [list(r) + [v] for r, v in zip((A.T @ A).tolist(), (A.T @ y).tolist())]
    k = len(M)
    for c in range(k):
        piv = max(range(c, k), key=lambda r: abs(M[r][c]))
        M[c], M[piv] = M[piv], M[c]
        for r in range(k):
            if r != c:
                f = M[r][c] / M[c][c]
                M[r] = [a - f * b for a, b in zip(M[r], M[c])]
    return np.array([M[r][k] / M[r][r] for r in range(k)])


class TestOLS:
    def test_noiseless_line(self):
        x = np.linspace(-2, 3, 20)
        m = fit_ols((x[:, None], 2 * x + 1))
        assert m.coef_[0] == pytest.approx(2, abs=1e-8)
        assert m.intercept_ == pytest.approx(1, abs=1e-8)

    def test_constant_response(self):
        x = np.random.default_rng(0).normal(size=(15, 2))
        m = fit_ols((x, np.full(15, 3.3)))
        np.testing.assert_allclose(m.coef_, 0, atol=1e-12)
        assert m.intercept_ == pytest.approx(3.3)

    def test_against_normal_equations(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(60, 4))
        y = X @ [0.5, -1.0, 2.0, 0.0] + rng.normal(size=60)
        m = fit_ols((X, y))
        b = _normal_equations(X, y)
        assert m.intercept_ == pytest.approx(b[0], abs=1e-6)
        np.testing.assert_allclose(m.coef_, b[1:], atol=1e-6)

    def test_rank_deficient_dropped(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=30)
        X = np.column_stack([a, 2 * a, rng.normal(size=30)])
        with pytest.warns(RuntimeWarning, match="rank-deficient"):
            m = LinearBaseline().fit(X, a + X[:, 2])
        assert m.rank_ == 2 and m.dropped_.size == 1
        np.testing.assert_allclose(m.predict(X), a + X[:, 2], atol=1e-10)

    def test_errors(self):
        with pytest.raises(DataError):
            LinearBaseline().fit(np.zeros((1, 1)), [0.0])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(5, 40), st.integers(1, 4), st.integers(0, 2**31))
    def test_residuals_orthogonal(self, n, p, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, p)) * rng.uniform(0.1, 10, p)
        y = rng.normal(size=n)
        if n <= p + 1:
            return
        m = LinearBaseline().fit(X, y)
        r = y - m.predict(X)
        scale = np.abs(X).max() * np.abs(y).max()
        assert np.all(np.abs(X.T @ r) < 1e-8 * n * scale)
        assert abs(r.sum()) < 1e-8 * n * np.abs(y).max()


@pytest.fixture(scope="module")
def small_linear():
    rng = np.random.default_rng(3)
    X = rng.uniform(size=(60, 2))
    return X, X[:, 0] + rng.normal(0, 0.3, 60)


class TestCompare:
    def test_self_comparison(self, small_linear):
        f = BenchmarkForest(n_tree=20)
        res = cv_compare(small_linear, f, f, B_boot=200, seed=1)
        np.testing.assert_array_equal(res.diff, 0.0)
        assert res.names == ("BenchmarkForest_a", "BenchmarkForest_b")

    def test_swap_negates(self, small_linear):
        f = BenchmarkForest(n_tree=20)
        a = cv_compare(small_linear, LinearBaseline(), f, B_boot=200, seed=4)
        b = cv_compare(small_linear, f, LinearBaseline(), B_boot=200, seed=4)
        np.testing.assert_array_equal(a.diff, -b.diff)
        np.testing.assert_array_equal(a.fold_rmse, b.fold_rmse[::-1])

    def test_result_structure(self, small_linear):
        res = cv_compare(small_linear, model_b=BenchmarkForest(n_tree=20), B_boot=100, seed=5)
        assert res.fold_rmse.shape == (2, 10)
        assert res.oof_pred.shape == (2, 60)
        d = res.to_dict()
        assert set(d) >= {"cv_rmse", "rmse_difference", "r_squared_gap_absolute"}
        assert d["rmse_difference"]["mean"] == res.diff_mean
        assert "LinearBaseline" in res.summary_table()
        assert res.diff_sd > 0

    def test_step_forest_beats_linear(self, step_cohort):
        res = cv_compare(step_cohort.data, model_b=BenchmarkForest(n_tree=100), B_boot=500, seed=0)
        assert res.rmse[1] < res.rmse[0]
        assert np.mean(res.diff > 0) >= 0.95
        assert res.b_better

    def test_bad_bootstrap_size(self, small_linear):
        with pytest.raises(DataError):
            cv_compare(small_linear, B_boot=1)


class TestResidualTrend:
    def test_zero_residuals(self):
        x = np.linspace(0, 1, 30)
        t = residual_trend(np.zeros(30), x)
        np.testing.assert_array_equal(t.mean, 0.0)
        assert t.grid.size == 50 and t.bandwidth == 0.5

    def test_linear_residuals_reproduced(self):
        x = np.linspace(0, 1, 40)
        t = residual_trend(3 * x - 1, x)
        np.testing.assert_allclose(t.mean, 3 * t.grid - 1, atol=1e-10)

    def test_errors(self):
        with pytest.raises(DataError, match="at least 10"):
            residual_trend(np.zeros(9), np.arange(9.0))
        with pytest.raises(DataError, match="constant"):
            residual_trend(np.zeros(12), np.ones(12))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.floats(-100, 100))
    def test_shift_equivariance(self, seed, c):
        rng = np.random.default_rng(seed)
        x, r = rng.uniform(size=25), rng.normal(size=25)
        a, b = residual_trend(r, x), residual_trend(r + c, x)
        np.testing.assert_allclose(b.mean, a.mean + c, atol=1e-9 * (1 + abs(c)))
        np.testing.assert_allclose(b.se, a.se, atol=1e-9 * (1 + abs(c)))

    def test_step_signature(self, step_cohort):
        d = step_cohort.data
        lr = LinearBaseline().fit(d.X, d.y)
        t = residual_trend(d.y - lr.predict(d.X), d.X[:, 0])
        assert t.outside_band().any()
