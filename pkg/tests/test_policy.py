import numpy as np
import pytest
from scipy import stats

from mvictr.factor import LatentFactor
from mvictr.policy import (EmptyPoolError, covariance_cholesky, sample_mvn, select_greedy, select_random,
                           select_thompson)


def factor(mean, var):
    f = LatentFactor(mean, 1.0, 1.0)
    f.cov = var * np.eye(len(mean))
    return f


def frozen(mean):
    return factor(mean, 0.0)


class TestRandom:
    def test_singleton(self, rng):
        assert select_random([42], rng) == 42

    def test_empty(self, rng):
        with pytest.raises(EmptyPoolError):
            select_random([], rng)

    def test_uniform(self):
        rng = np.random.default_rng(0)
        pool = list(range(100))
        counts = np.bincount([select_random(pool, rng) for _ in range(100_000)], minlength=100)
        sigma = np.sqrt(1000 * 0.99)
        assert np.all(np.abs(counts - 1000) < 4 * sigma)

    def test_seeded(self):
        pool = list(range(10))
        a = [select_random(pool, np.random.default_rng(3)) for _ in range(5)]
        b = [select_random(pool, np.random.default_rng(3)) for _ in range(5)]
        assert a == b


class TestGreedy:
    def test_dominant(self, rng):
        u = frozen([1.0, 0.0])
        items = {1: frozen([0.1, 0.0]), 2: frozen([0.9, 0.0]), 3: frozen([0.0, 5.0])}
        assert all(select_greedy(u, items, [1, 2, 3], rng) == 2 for _ in range(20))

    def test_ties_uniform(self, rng):
        u = frozen([1.0, 1.0])
        items = {j: frozen([0.5, 0.5]) for j in range(4)}
        picks = np.bincount([select_greedy(u, items, list(range(4)), rng) for _ in range(8000)], minlength=4)
        assert np.all(np.abs(picks - 2000) < 4 * np.sqrt(8000 * 0.25 * 0.75))

    def test_empty(self, rng):
        with pytest.raises(EmptyPoolError):
            select_greedy(frozen([1.0]), {}, [], rng)


class TestThompson:
    def test_zero_covariance_equals_greedy(self, rng):
        u = frozen([0.3, -0.2, 0.5])
        items = {j: frozen(rng.normal(size=3)) for j in range(30)}
        pool = list(items)
        for _ in range(10):
            assert select_thompson(u, items, pool, rng) == select_greedy(u, items, pool, rng)

    def test_exchangeable_arms(self):
        rng = np.random.default_rng(1)
        u = factor([1.0, 0.5], 0.1)
        items = {0: factor([0.2, 0.2], 0.1), 1: factor([0.2, 0.2], 0.1)}
        n = 10_000
        a = sum(select_thompson(u, items, [0, 1], rng) == 0 for _ in range(n))
        assert abs(a - n / 2) < 3 * np.sqrt(n / 4)

    def test_pick_rate_matches_gaussian_comparison(self):
        # score_A - score_B ~ N(1, 0.02) when u = 1 exactly
        rng = np.random.default_rng(2)
        u = frozen([1.0])
        items = {"A": factor([1.0], 0.01), "B": factor([0.0], 0.01)}
        n = 20_000
        rate = np.mean([select_thompson(u, items, ["A", "B"], rng) == "A" for _ in range(n)])
        assert abs(rate - stats.norm.cdf(1.0 / np.sqrt(0.02))) < 0.02
        items = {"A": factor([0.1], 0.01), "B": factor([0.0], 0.01)}
        rate = np.mean([select_thompson(u, items, ["A", "B"], rng) == "A" for _ in range(n)])
        assert abs(rate - stats.norm.cdf(0.1 / np.sqrt(0.02))) < 0.02

    def test_pool_order_invariance(self):
        u = factor([0.4, 0.1], 0.05)
        items = {j: factor([0.1 * j, 0.05], 0.05) for j in range(5)}
        rates = []
        for pool in ([0, 1, 2, 3, 4], [4, 2, 0, 3, 1]):
            rng = np.random.default_rng(5)
            picks = [select_thompson(u, items, pool, rng) for _ in range(6000)]
            rates.append(np.bincount(picks, minlength=5) / 6000)
        np.testing.assert_allclose(rates[0], rates[1], atol=0.03)

    def test_non_spd_falls_back_to_mean(self, rng, caplog):
        bad = frozen([1.0, 0.0])
        bad.cov = np.array([[1.0, 2.0], [2.0, 1.0]])
        good = frozen([0.0, 0.0])
        assert select_thompson(frozen([1.0, 0.0]), {0: bad, 1: good}, [0, 1], rng) == 0
        assert "positive definite" in caplog.text


def test_mvn_sampler_moments():
    rng = np.random.default_rng(0)
    mean = np.array([0.5, -1.0, 2.0])
    A = rng.normal(size=(3, 3))
    cov = A @ A.T + 0.1 * np.eye(3)
    n = 100_000
    draws = sample_mvn(mean, covariance_cholesky(cov), rng, size=n)
    se = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * se)
    emp = np.cov(draws.T)
    se_cov = np.sqrt((cov ** 2 + np.outer(np.diag(cov), np.diag(cov))) / n)
    assert np.all(np.abs(emp - cov) < 4 * se_cov)


def test_cholesky_of_zero():
    np.testing.assert_array_equal(covariance_cholesky(np.zeros((2, 2))), np.zeros((2, 2)))
