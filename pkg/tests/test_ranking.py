import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peerbench.bootstrap import ReplicateMatrix, residual_summary
from peerbench.exceptions import DataError, InsufficientReplicatesError
from peerbench.ranking import (PANELS, NormalApprox, RankApproximation, approx_diagnostics, mvn_sample,
                               nearest_pd, pairwise_covariance, rank_distribution,
                               rank_uncertainty_explainers, sample_ranks)


def _matrix(R, groups=None):
    R = np.asarray(R, dtype=float)
    return ReplicateMatrix(R, ~np.isnan(R), 0, {}, [f"o{i}" for i in range(R.shape[1])],
                           None if groups is None else np.asarray(groups, dtype=object))


def _approx(mean, cov, groups=None):
    mean = np.asarray(mean, float)
    cov, rep = nearest_pd(np.asarray(cov, float))
    return NormalApprox(mean, cov, rep, [f"o{i}" for i in range(mean.size)],
                        None if groups is None else np.asarray(groups, dtype=object))


class TestPairwiseCovariance:
    def test_hand_built(self):
        R = [[1.0, 2.0, 0.5],
             [2.0, np.nan, 1.5],
             [3.0, 1.0, 2.5],
             [4.0, 3.0, 3.5]]
        cov, mean = pairwise_covariance(_matrix(R))
        # joint-present sets: (0,1) and (1,2) use rows {0,2,3}; (0,2) uses all four
        expect = np.array([[5 / 3, 0.5, 5 / 3],
                           [0.5, 1.0, 0.5],
                           [5 / 3, 0.5, 5 / 3]])
        np.testing.assert_allclose(cov, expect, atol=1e-12)
        np.testing.assert_allclose(mean, [2.5, 2.0, 2.0], atol=1e-12)

    def test_fully_present_equals_sample_cov(self):
        R = np.random.default_rng(0).normal(size=(50, 6))
        cov, _ = pairwise_covariance(_matrix(R))
        np.testing.assert_allclose(cov, np.cov(R, rowvar=False), atol=1e-12)

    def test_diagonal_matches_summary(self, step_replicates):
        cov, _ = pairwise_covariance(step_replicates)
        np.testing.assert_allclose(np.diag(cov), residual_summary(step_replicates).sd ** 2,
                                   atol=1e-12, rtol=0)

    def test_too_few_joint(self):
        R = np.array([[1.0, np.nan], [2.0, 1.0], [np.nan, 3.0]])
        with pytest.raises(InsufficientReplicatesError, match="joint"):
            pairwise_covariance(_matrix(R))


class TestNearestPD:
    def test_pd_passthrough(self):
        A = np.array([[2.0, 0.3], [0.3, 1.0]])
        out, rep = nearest_pd(A)
        np.testing.assert_allclose(out, A, atol=1e-12)
        assert not rep.repaired

    def test_diagonal_clip(self):
        out, rep = nearest_pd(np.diag([1.0, -0.5]))
        np.testing.assert_allclose(out, np.diag([1.0, 1e-8]), rtol=1e-5, atol=1e-14)
        assert rep.n_clipped == 1 and rep.min_eig_before == pytest.approx(-0.5)

    def test_two_by_two_hand(self):
        A = np.array([[1.0, 1.2], [1.2, 1.0]])
        out, rep = nearest_pd(A)
        lam = 2.2e-8
        expect = 0.5 * np.array([[2.2 + lam, 2.2 - lam], [2.2 - lam, 2.2 + lam]])
        np.testing.assert_allclose(out, expect, atol=1e-12)
        np.testing.assert_allclose(np.linalg.eigvalsh(out), [lam, 2.2], rtol=1e-5)
        assert rep.frobenius == pytest.approx(0.2, abs=1e-7)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 2**31))
    def test_idempotent_and_floor(self, n, seed):
        rng = np.random.default_rng(seed)
        M = rng.normal(size=(n, n))
        A = (M + M.T) / 2
        out, rep = nearest_pd(A) if np.linalg.eigvalsh(A)[-1] > 0 else nearest_pd(A + 2 * n * np.eye(n))
        w = np.linalg.eigvalsh(out)
        assert w[0] >= 1e-8 * w[-1]
        np.testing.assert_array_equal(out, out.T)
        again, rep2 = nearest_pd(out)
        np.testing.assert_allclose(again, out, atol=1e-12)
        assert not rep2.repaired

    def test_errors(self):
        with pytest.raises(DataError):
            nearest_pd(np.zeros((2, 3)))


class TestSampling:
    def test_moments(self):
        cov = np.array([[1.0, 0.6, 0.0], [0.6, 2.0, -0.4], [0.0, -0.4, 0.5]])
        ap = _approx([1.0, -2.0, 0.5], cov)
        Z = mvn_sample(ap, S=10_000, seed=1)
        sd = np.sqrt(np.diag(cov))
        assert np.all(np.abs(Z.mean(axis=0) - ap.mean) < 4 * sd / 100)
        # batch SE of each covariance element
        batches = np.stack([np.cov(b, rowvar=False) for b in np.split(Z, 20)])
        se = batches.std(axis=0, ddof=1) / np.sqrt(20)
        assert np.all(np.abs(np.cov(Z, rowvar=False) - cov) < 5 * se)

    def test_zero_covariance_uncorrelated(self):
        ap = _approx(np.zeros(4), np.eye(4))
        r = np.corrcoef(mvn_sample(ap, S=10_000, seed=2), rowvar=False)
        assert np.all(np.abs(r[np.triu_indices(4, 1)]) < 3 / 100)

    def test_seed_and_minimum(self):
        ap = _approx(np.zeros(3), np.eye(3))
        np.testing.assert_array_equal(mvn_sample(ap, 1000, 5), mvn_sample(ap, 1000, 5))
        with pytest.raises(DataError):
            mvn_sample(ap, S=999)


class TestRanks:
    def test_deterministic_ordering(self):
        samples = np.tile([0.3, -1.0, 2.0, 0.0], (1000, 1))
        rs = rank_distribution(samples)
        np.testing.assert_array_equal(rs.modal, [2, 4, 1, 3])
        np.testing.assert_array_equal(rs.width, 1)

    def test_ties_by_index(self):
        np.testing.assert_array_equal(sample_ranks([[1.0, 1.0, 2.0]]), [[2, 3, 1]])

    def test_exchangeable_pair(self):
        ap = _approx([0.0, 0.0], np.eye(2))
        rs = rank_distribution(mvn_sample(ap, 10_000, 3))
        p1 = rs.freq[:, 0] / rs.S
        np.testing.assert_allclose(p1, 0.5, atol=0.02)

    def test_modal_tie_goes_to_better_rank(self):
        samples = np.array([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(rank_distribution(samples).modal, [1, 1])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 15), st.integers(0, 2**31))
    def test_rank_properties(self, n, seed):
        V = np.random.default_rng(seed).normal(size=(200, n))
        R = sample_ranks(V)
        np.testing.assert_array_equal(np.sort(R, axis=1), np.tile(np.arange(1, n + 1), (200, 1)))
        rs = rank_distribution(V)
        assert np.all(rs.lo <= rs.hi)
        assert np.all((rs.mean >= 1) & (rs.mean <= n))
        assert rs.mean.sum() == pytest.approx(n * (n + 1) / 2)
        np.testing.assert_array_equal(rs.freq[np.arange(n), rs.modal - 1], rs.freq.max(axis=1))

    def test_extremes_narrower(self):
        mean = np.linspace(-2, 2, 21)
        rs = rank_distribution(mvn_sample(_approx(mean, 0.25 * np.eye(21)), 10_000, 4))
        from scipy.stats import spearmanr
        assert spearmanr(np.abs(mean), rs.width)[0] < 0

    def test_scoped_estimator(self, step_replicates):
        est = RankApproximation(S=2000, random_state=0).fit(step_replicates)
        for g in sorted(set(step_replicates.peer_group)):
            rs = est.rank(g)
            assert len(rs.org_ids) == rs.members.size
            assert rs.modal.max() <= rs.members.size
        assert est.rank().to_dict()["organisations"][0]["org_id"] == step_replicates.org_ids[0]


class TestDiagnostics:
    def test_panels_and_exact_means(self, step_replicates):
        ap = NormalApprox.from_replicates(step_replicates)
        Z = mvn_sample(ap, 2000, 0)
        rep = approx_diagnostics(ap, Z, step_replicates, max_pairs=300)
        assert set(rep.normal) == set(PANELS) == set(rep.bootstrap)
        np.testing.assert_array_equal(rep.normal["mean"], rep.bootstrap["mean"])
        assert rep.pairs.shape == (300, 2) and rep.joint_counts.shape == (300,)
        assert isinstance(rep.bias("sd"), float)
        assert len(rep.scatter_rows()) == 4 * 200 + 4 * 300

    def test_symmetric_pair(self):
        ap = _approx([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]])
        Z = mvn_sample(ap, 10_000, 6)
        R = np.random.default_rng(7).multivariate_normal([0, 0], [[1, 0.5], [0.5, 1]], 200)
        # mirrored rows make the joint replicate distribution exactly exchangeable
        rep = approx_diagnostics(ap, Z, _matrix(np.vstack([R, R[:, ::-1]])))
        assert rep.normal["pair_p_neg"][0] == pytest.approx(0.5, abs=0.02)
        assert rep.bootstrap["pair_p_neg"][0] == 0.5


class TestExplainers:
    def test_constant_covariates(self, step_replicates):
        est = RankApproximation(S=1000, random_state=0).fit(step_replicates)
        out = rank_uncertainty_explainers(est.rank(), residual_summary(step_replicates),
                                          np.ones((200, 2)), k=10)
        assert out["neighbour_distance"] == [0.0] * 200
        assert out["spearman_width_abs_mean"] < 0

    def test_small_scope_warns(self, step_replicates):
        est = RankApproximation(S=1000, random_state=0).fit(step_replicates)
        rs = rank_distribution(est.samples_, np.arange(5))
        with pytest.warns(RuntimeWarning):
            out = rank_uncertainty_explainers(rs, residual_summary(step_replicates), np.zeros((200, 1)))
        assert out["neighbour_distance"] is None
