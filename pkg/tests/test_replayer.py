import numpy as np
import pytest
from scipy import stats

from mvictr.agents import AgentConfig, AgentFactory, RandomAgent
from mvictr.dataset import InteractionEvent
from mvictr.replayer import derive_seed, replay, run_trials, welch_t_test

from oracles import t_pvalue_quadrature

POOL = list(range(100))


def log(n, seed=0, pool=POOL, p_pos=0.6):
    rng = np.random.default_rng(seed)
    out = []
    for t in range(n):
        rating = 5 if rng.random() < p_pos else 2
        out.append(InteractionEvent.from_rating(int(rng.integers(1, 50)), int(rng.choice(pool)), rating, t + 1))
    return out


class OracleAgent(RandomAgent):
    """Always recommends the item that is about to be logged."""

    def __init__(self, events):
        super().__init__()
        self._queue = iter(events)

    def recommend(self, user_id, user_bundle, pool, item_bundles, rng):
        return next(self._queue).item_id


class AuditedRandom(RandomAgent):
    def __init__(self):
        super().__init__()
        self.digests = []

    def recommend(self, *args):
        self.digests.append(self.state_digest())
        return super().recommend(*args)


class ExplodingAgent(RandomAgent):
    def recommend(self, user_id, *args):
        if self.impressions >= 1:
            raise RuntimeError("boom")
        return 7


def test_oracle_accepts_everything():
    events = log(500)
    r = replay(events, OracleAgent(events), POOL, rng_seed=0)
    assert r.impressions == len(events) and r.acceptance_rate == 1.0
    assert r.average_rating == pytest.approx(np.mean([e.reward for e in events]))


def test_uniform_acceptance_binomial():
    events = log(20_000, seed=1)
    r = replay(events, RandomAgent(), POOL, rng_seed=2)
    n, p = len(events), 1 / 100
    assert abs(r.impressions - n * p) < 4 * np.sqrt(n * p * (1 - p))
    assert r.impressions == len(r.rewards)
    assert r.acceptance_rate == r.impressions / r.events_consumed


def test_no_peeking():
    events = log(3000, seed=3)
    agent = AuditedRandom()
    r = replay(events, agent, POOL, rng_seed=4)
    accepted = {row[0] for row in r.trace if row[1]}
    for idx in range(1, len(events)):
        changed = agent.digests[idx] != agent.digests[idx - 1]
        assert changed == ((idx - 1) in accepted)


def test_accepted_rewards_unbiased():
    pool = list(range(10))
    events = log(30_000, seed=5, pool=pool, p_pos=0.35)
    r = replay(events, RandomAgent(), pool, rng_seed=6)
    base = np.mean([e.reward for e in events])
    ones = sum(r.rewards)
    observed = [r.impressions - ones, ones]
    expected = [r.impressions * (1 - base), r.impressions * base]
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_acceptances_uniform_over_timeline():
    events = log(30_000, seed=7, pool=list(range(20)))
    r = replay(events, RandomAgent(), list(range(20)), rng_seed=8)
    positions = np.array([row[0] for row in r.trace if row[1]]) / len(events)
    assert stats.kstest(positions, "uniform").pvalue > 0.01


def test_agent_error_keeps_partial_result():
    events = [InteractionEvent.from_rating(1, 7, 5, t + 1) for t in range(10)]
    r = replay(events, ExplodingAgent(), POOL, rng_seed=0)
    assert r.impressions == 1 and r.error.startswith("RuntimeError")


def test_trace_csv():
    events = log(50)
    r = replay(events, OracleAgent(events), POOL, rng_seed=0)
    lines = r.trace_csv().splitlines()
    assert lines[0] == "event_index,accepted,item,reward,running_average"
    assert len(lines) == 51


def test_empty_log():
    r = replay([], RandomAgent(), POOL)
    assert r.no_impressions and r.average_rating == 0.0


class TestTrials:
    def test_reproducible(self):
        events = log(3000, seed=9)
        f = AgentFactory(AgentConfig.default("icf"))
        a = run_trials(events, f, POOL, 3, 11)
        b = run_trials(events, f, POOL, 3, 11)
        assert a.averages == b.averages and a.impressions == b.impressions

    def test_parallel_matches_serial(self):
        events = log(3000, seed=9)
        f = AgentFactory(AgentConfig.default("icf"))
        assert run_trials(events, f, POOL, 3, 11, n_jobs=2).averages == run_trials(events, f, POOL, 3, 11).averages

    def test_all_positive_log(self):
        events = log(2000, seed=10, p_pos=1.0)
        for kind in ("random", "icf"):
            s = run_trials(events, AgentFactory(AgentConfig.default(kind)), POOL, 3, 0)
            assert s.averages == [1.0, 1.0, 1.0]

    def test_trial_seeds_distinct(self):
        states = {tuple(derive_seed(5, t).generate_state(2)) for t in range(10)}
        assert len(states) == 10

    def test_bad_trials(self):
        with pytest.raises(ValueError):
            run_trials([], RandomAgent, POOL, 0, 0)

    def test_summary_dict(self):
        s = run_trials(log(1500), RandomAgent, POOL, 2, 0, name="random")
        d = s.to_dict()
        assert d["name"] == "random" and len(d["averages"]) == 2


class TestWelch:
    def test_identical_samples(self):
        t, p = welch_t_test([1, 2, 3, 4], [1, 2, 3, 4])
        assert t == 0.0 and p == 1.0

    def test_against_quadrature(self):
        a, b = np.array([1, 2, 3, 4, 5.0]), np.array([2, 3, 4, 5, 6.0])
        va, vb = a.var(ddof=1) / 5, b.var(ddof=1) / 5
        t_ref = (a.mean() - b.mean()) / np.sqrt(va + vb)
        df = (va + vb) ** 2 / (va ** 2 / 4 + vb ** 2 / 4)
        t, p = welch_t_test(a, b)
        assert t == pytest.approx(t_ref, abs=1e-12)
        assert p == pytest.approx(t_pvalue_quadrature(t_ref, df), abs=1e-3)
        assert p == pytest.approx(0.3465935, abs=1e-6)

    def test_unequal_variances(self):
        a = [0.61, 0.64, 0.70, 0.58, 0.66, 0.63]
        b = [0.71, 0.52, 0.88, 0.79, 0.60, 0.95, 0.74]
        t, p = welch_t_test(a, b)
        ref = stats.ttest_ind(a, b, equal_var=False)
        assert t == pytest.approx(ref.statistic, abs=1e-12)
        assert p == pytest.approx(ref.pvalue, abs=1e-12)

    def test_extreme_separation(self):
        a = np.array([1.0, 1.1, 0.9, 1.05, 0.95])
        _, p = welch_t_test(a, a + 100)
        assert p < 1e-6

    def test_zero_variance(self):
        with pytest.raises(ValueError):
            welch_t_test([1, 1, 1], [2, 2, 2])

    def test_too_small(self):
        with pytest.raises(ValueError):
            welch_t_test([1], [1, 2])
