"""Rejection-sampling replay of a logged event stream, plus trial aggregation.

For each logged event the agent recommends one item for the logged user. A
match with the logged item is an impression: its reward is recorded and the
agent learns from it. Anything else is dropped without touching the agent.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import stdtr

from .dataset import InteractionEvent

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("event_index", "accepted", "item", "reward", "running_average")


@dataclass
class ReplayResult:
    impressions: int
    rewards: list[int]
    average_rating: float
    acceptance_rate: float
    events_consumed: int
    seed: int | None
    trace: list[tuple] = field(default_factory=list, repr=False)
    error: str | None = None

    @property
    def no_impressions(self) -> bool:
        return self.impressions == 0

    def trace_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for idx, accepted, item, reward, avg in self.trace:
            writer.writerow((idx, int(accepted), item, "" if reward is None else reward, repr(avg)))
        return buf.getvalue()


def _result(rewards, consumed, seed, trace, error=None) -> ReplayResult:
    n = len(rewards)
    return ReplayResult(
        impressions=n,
        rewards=list(rewards),
        average_rating=float(np.mean(rewards)) if n else 0.0,
        acceptance_rate=n / consumed if consumed else 0.0,
        events_consumed=consumed,
        seed=seed,
        trace=trace,
        error=error,
    )


def replay(test_events: Sequence[InteractionEvent], agent, pool: Sequence[int],
           user_bundles: Mapping | None = None, item_bundles: Mapping | None = None,
           rng_seed=None, keep_trace: bool = True) -> ReplayResult:
    """Replay ``test_events`` in order against ``agent``.

    An exception raised by the agent ends the trial; the partial result is
    returned with ``error`` set.
    """
    rng = np.random.default_rng(rng_seed)
    pool = list(pool)
    rewards: list[int] = []
    trace: list[tuple] = []
    total = 0
    consumed = 0
    for idx, event in enumerate(test_events):
        try:
            user_bundle = user_bundles.get(event.user_id) if user_bundles is not None else None
            choice = agent.recommend(event.user_id, user_bundle, pool, item_bundles, rng)
            consumed += 1
            accepted = choice == event.item_id
            if accepted:
                agent.observe(event.user_id, event.item_id, event.reward)
                rewards.append(event.reward)
                total += event.reward
        except Exception as exc:  # noqa: BLE001 - partial results are the contract
            logger.error("replay aborted at event %d: %s", idx, exc)
            return _result(rewards, consumed, _seed_repr(rng_seed), trace, error=f"{type(exc).__name__}: {exc}")
        if keep_trace:
            running = total / len(rewards) if rewards else 0.0
            trace.append((idx, accepted, choice, event.reward if accepted else None, running))
    return _result(rewards, consumed, _seed_repr(rng_seed), trace)


def _seed_repr(seed):
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1)[0])
    return seed


def derive_seed(base_seed: int, trial: int) -> np.random.SeedSequence:
    """Independent, reproducible stream for trial ``trial`` of ``base_seed``."""
    return np.random.SeedSequence(entropy=base_seed, spawn_key=(trial,))


@dataclass
class TrialSummary:
    name: str
    averages: list[float]
    impressions: list[int]
    results: list[ReplayResult] = field(default_factory=list, repr=False)

    @property
    def mean(self) -> float:
        return float(np.mean(self.averages))

    @property
    def sd(self) -> float:
        return float(np.std(self.averages, ddof=1)) if len(self.averages) > 1 else 0.0

    def compare(self, baseline: "TrialSummary") -> tuple[float, float]:
        return welch_t_test(self.averages, baseline.averages)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mean": self.mean,
            "sd": self.sd,
            "averages": self.averages,
            "impressions": self.impressions,
            "mean_impressions": float(np.mean(self.impressions)),
            "errors": [r.error for r in self.results if r.error],
        }


def _one_trial(args):
    factory, test_events, pool, user_bundles, item_bundles, seed, keep_trace = args
    return replay(test_events, factory(), pool, user_bundles, item_bundles, seed, keep_trace)


def run_trials(test_events, agent_factory: Callable[[], object], pool, n_trials: int,
               base_seed: int, user_bundles=None, item_bundles=None, name: str = "agent",
               n_jobs: int = 1, keep_trace: bool = True) -> TrialSummary:
    """Run ``n_trials`` replays, each with a fresh agent and its own derived seed.

    ``agent_factory`` must be picklable when ``n_jobs > 1``.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    jobs = [(agent_factory, test_events, pool, user_bundles, item_bundles,
             derive_seed(base_seed, t), keep_trace) for t in range(n_trials)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_one_trial, jobs))
    else:
        results = [_one_trial(j) for j in jobs]
    return TrialSummary(name, [r.average_rating for r in results], [r.impressions for r in results], results)


def welch_t_test(a, b) -> tuple[float, float]:
    """Two-sided Welch t-test: (t statistic, p-value)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 observations")
    va = a.var(ddof=1) / len(a)
    vb = b.var(ddof=1) / len(b)
    se2 = va + vb
    if se2 == 0:
        raise ValueError("both samples have zero variance; the t statistic is undefined")
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    p = 2.0 * stdtr(df, -abs(t))
    return float(t), float(min(1.0, p))
