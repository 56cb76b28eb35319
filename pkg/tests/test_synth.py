import json

import numpy as np
import pytest

from peerbench.bootstrap import oor_bootstrap, residual_summary
from peerbench.data import load_dataset
from peerbench.exceptions import DataError
from peerbench.forest import fit_forest
from peerbench.linear import LinearBaseline, cv_compare
from peerbench.ranking import RankApproximation
from peerbench.synth import (SCENARIOS, Scenario, descending_ranks, generate, oracle_piecewise_mean,
                             oracle_rank_ci, scenario_config, write_scenario)


@pytest.mark.parametrize("name", SCENARIOS)
def test_truth_identity_and_determinism(name):
    a = generate(Scenario(name, n=60, seed=3))
    b = generate(Scenario(name, n=60, seed=3))
    np.testing.assert_array_equal(a.data.X, b.data.X)
    np.testing.assert_array_equal(a.data.y, b.data.y)
    np.testing.assert_array_equal(a.truth.residual, a.data.y - a.truth.f)
    np.testing.assert_array_equal(a.truth.f, a.scenario.signal(a.raw_covariates))
    assert not np.array_equal(generate(Scenario(name, n=60, seed=4)).data.y, a.data.y)


def test_zero_noise():
    c = generate(Scenario("step", n=50, noise_sd=0.0))
    np.testing.assert_array_equal(c.truth.residual, 0.0)


def test_noise_defaults_scale_with_signal():
    for name in ("step", "linear", "plateau", "nonmonotone"):
        sc = Scenario(name)
        assert sc.noise_sd > 0 and np.isfinite(sc.signal_range)
    assert Scenario("step").noise_sd == pytest.approx(0.3 * Scenario("step").signal_range)


def test_mixed14_triple():
    c = generate(Scenario("mixed14", n=1000, seed=0))
    X = c.raw_covariates
    assert X.shape[1] == 14
    r = np.corrcoef(X[:, [4, 5, 6]], rowvar=False)[np.triu_indices(3, 1)]
    assert np.all(np.abs(r) >= 0.8)
    target = c.scenario.target_triple_correlation
    assert np.all(np.abs(r - target) < 0.05)
    other = np.corrcoef(X[:, [0, 1, 2, 3, 7, 8]], rowvar=False)[np.triu_indices(6, 1)]
    assert np.all(np.abs(other) < 0.1)


def test_lognormal_noise_centred():
    c = generate(Scenario("null", n=20000, noise="lognormal", noise_sd=0.5, peer_rule="none"))
    e = c.truth.residual
    assert abs(e.mean()) < 0.02 and abs(e.std() - 0.5) < 0.02
    assert np.mean(e) > np.median(e)


def test_null_scenario_r2():
    c = generate(Scenario("null", n=200, seed=1))
    res = cv_compare(c.data, LinearBaseline(), LinearBaseline(), B_boot=10, seed=0)
    assert np.all(res.r_squared < 0.1)


def test_peer_groups_and_ranks():
    c = generate(Scenario("linear", n=90, seed=2))
    assert sorted(set(c.data.peer_group)) == ["PG1", "PG2", "PG3"]
    assert c.data.p == 4 + 2
    for g in ("PG1", "PG2", "PG3"):
        idx = c.data.members(g)
        assert sorted(c.truth.peer_rank[idx]) == list(range(1, idx.size + 1))
    np.testing.assert_array_equal(descending_ranks([0.1, 3.0, -1.0, 3.0]), [3, 1, 4, 2])


def test_validation():
    with pytest.raises(DataError):
        Scenario("bogus")
    with pytest.raises(DataError):
        Scenario("mixed14", J=5)
    with pytest.raises(DataError):
        Scenario("step", noise_sd=-1)


class TestPiecewiseOracle:
    def test_one_segment(self):
        y = np.array([1.0, 2.0, 6.0])
        np.testing.assert_array_equal(oracle_piecewise_mean([0, 1, 2], y, []), 3.0)

    def test_two_segments(self):
        x = np.array([-1.0, -0.5, 0.5, 1.0])
        np.testing.assert_array_equal(oracle_piecewise_mean(x, (x > 0).astype(float), [0.0]),
                                      [0, 0, 1, 1])

    def test_matches_forest(self):
        c = generate(Scenario("step", n=200, J=3, noise_sd=0.0, seed=5))
        x = c.raw_covariates[:, 0]
        f = fit_forest(c.data, seed=0)
        away = np.abs(x - 0.5) > 0.05
        oracle = oracle_piecewise_mean(x, c.data.y, c.scenario.breakpoints)
        assert np.max(np.abs(f.predict(c.data.X)[away] - oracle[away])) < 0.05


class TestRankOracle:
    def test_zero_noise(self):
        o = oracle_rank_ci(np.array([0.3, -1.0, 2.0]), 0.0, B_mc=100)
        np.testing.assert_array_equal(o["lo"], o["hi"])
        np.testing.assert_array_equal(o["modal"], [2, 3, 1])

    def test_two_exchangeable(self):
        o = oracle_rank_ci(np.zeros(2), 1.0, B_mc=10_000, seed=1)
        np.testing.assert_allclose(o["p_rank1"], 0.5, atol=0.02)

    @pytest.mark.slow
    def test_agrees_with_ranking_engine(self):
        # the oracle perturbs the true residuals on the replicate scale
        for name, seed in (("step", 0), ("linear", 1)):
            c = generate(Scenario(name, n=60, seed=seed))
            rm = oor_bootstrap(c.data, n_tree=30, B=300, seed=seed)
            sd = residual_summary(rm).sd
            rs = RankApproximation(S=10_000, random_state=seed).fit(rm).rank()
            o = oracle_rank_ci(c.truth.residual, sd, B_mc=5000, seed=seed)
            d = np.concatenate([np.abs(rs.lo - o["lo"]), np.abs(rs.hi - o["hi"])])
            assert np.median(d) <= 0.1 * c.data.n


def test_write_scenario_roundtrip(tmp_path):
    c = generate(Scenario("step", n=30, seed=7, response="log"))
    paths = write_scenario(c, tmp_path)
    cfg = json.loads(paths["config"].read_text())
    assert cfg == {k: v for k, v in scenario_config(c).items()}
    d = load_dataset(paths["data"], cfg)
    np.testing.assert_allclose(d.y, c.data.y, atol=1e-12)
    np.testing.assert_array_equal(d.X, c.data.X)
    rows = paths["truth"].read_text().strip().splitlines()
    assert len(rows) == 31 and rows[0].startswith("org_id,f,residual,true_rank")
    assert json.loads((tmp_path / "scenario.json").read_text())["name"] == "step"
