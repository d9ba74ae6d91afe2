"""Interactive recommender agents: Random, ICF, CTR and MV-ICTR.

All agents share one interface consumed by the replayer::

    item = agent.recommend(user_id, user_bundle, pool, item_bundles, rng)
    agent.observe(user_id, item, reward)

Factors are created lazily the first time a user or item is met, centred on
the agent's prior rule:

=======  =========================  =========================
kind     user prior mean            item prior mean
=======  =========================  =========================
icf      0                          0
ctr      0                          item-only topic component
mvictr   RatingMatch chi (user)     RatingMatch chi (item)
=======  =========================  =========================
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .factor import FactorHyperparams, LatentFactor, prior_factor
from .policy import argmax_random_tie, select_random, thompson_scores

KINDS = ("random", "icf", "ctr", "mvictr")
SNAPSHOT_VERSION = 1

# Per-kind factor defaults; CTR follows the user/item precisions 0.01 / 100.
DEFAULT_HYPER = {
    "random": FactorHyperparams(),
    "icf": FactorHyperparams(),
    "ctr": FactorHyperparams(lambda_u=0.01, lambda_v=100.0),
    "mvictr": FactorHyperparams(),
}


@dataclass
class AgentConfig:
    kind: str
    hyper: FactorHyperparams = field(default_factory=FactorHyperparams)
    policy: str = "thompson"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}; expected one of {KINDS}")
        if self.policy not in ("thompson", "greedy"):
            raise ValueError(f"unknown policy {self.policy!r}")

    @classmethod
    def default(cls, kind: str, **overrides) -> "AgentConfig":
        return cls(kind, DEFAULT_HYPER[kind], **overrides)


class RandomAgent:
    kind = "random"

    def __init__(self, config: AgentConfig | None = None):
        self.config = config or AgentConfig("random")
        self.impressions = 0

    def recommend(self, user_id, user_bundle, pool, item_bundles, rng):
        return select_random(pool, rng)

    def observe(self, user_id, item_id, reward):
        self.impressions += 1

    def snapshot(self) -> dict:
        return {"format": "mvictr.agent", "version": SNAPSHOT_VERSION, "kind": self.kind,
                "impressions": self.impressions}

    def restore(self, data: Mapping) -> "RandomAgent":
        _check_snapshot(data, self.kind)
        self.impressions = int(data["impressions"])
        return self

    def state_digest(self) -> str:
        return hashlib.sha256(json.dumps(self.snapshot(), sort_keys=True).encode()).hexdigest()


class FactorAgent(RandomAgent):
    """Bandit over Gaussian user/item factors. Subclasses supply the priors."""

    kind = "icf"

    def __init__(self, config: AgentConfig | None = None):
        super().__init__(config or AgentConfig.default(self.kind))
        self.hyper = self.config.hyper
        self.users: dict[int, LatentFactor] = {}
        self.items: dict[int, LatentFactor] = {}
        self._pool: tuple | None = None

    # priors -------------------------------------------------------------------

    def user_prior(self, bundle):
        return None

    def item_prior(self, bundle):
        return None

    def _user(self, user_id, bundle) -> LatentFactor:
        f = self.users.get(user_id)
        if f is None:
            f = self.users[user_id] = prior_factor(self.user_prior(bundle), self.hyper, "user")
        return f

    def _item(self, item_id, bundle) -> LatentFactor:
        f = self.items.get(item_id)
        if f is None:
            f = self.items[item_id] = prior_factor(self.item_prior(bundle), self.hyper, "item")
        return f

    # pool cache -------------------------------------------------------------------

    def _pool_arrays(self, pool, item_bundles):
        key = tuple(pool)
        if key != self._pool:
            for j in key:
                self._item(j, item_bundles.get(j) if item_bundles is not None else None)
            self._pool = key
            self._row = {j: r for r, j in enumerate(key)}
            self._means = np.vstack([self.items[j].mean for j in key])
            self._chols = np.stack([self.items[j].cov_chol for j in key])
        return self._means, self._chols

    def _refresh_row(self, item_id):
        if self._pool is not None and item_id in self._row:
            r = self._row[item_id]
            self._means[r] = self.items[item_id].mean
            self._chols[r] = self.items[item_id].cov_chol

    # interface --------------------------------------------------------------------

    def recommend(self, user_id, user_bundle, pool, item_bundles, rng):
        if len(pool) == 0:
            raise ValueError("candidate pool is empty")
        u = self._user(user_id, user_bundle)
        means, chols = self._pool_arrays(pool, item_bundles)
        if self.config.policy == "greedy":
            scores = means @ u.mean
        else:
            scores = thompson_scores(u.mean, u.cov_chol, means, chols, rng)
        return self._pool[argmax_random_tie(scores, rng)]

    def observe(self, user_id, item_id, reward):
        u = self.users[user_id]
        v = self.items[item_id]
        c = self.hyper.confidence(reward)
        u_mean, v_mean = u.mean.copy(), v.mean.copy()
        u.observe(v_mean, reward, c)
        v.observe(u_mean, reward, c)
        self._refresh_row(item_id)
        self.impressions += 1

    def predict(self, user_id, item_id) -> float:
        return float(self.users[user_id].mean @ self.items[item_id].mean)

    def snapshot(self) -> dict:
        data = super().snapshot()
        data["hyper"] = asdict(self.hyper)
        data["policy"] = self.config.policy
        data["users"] = {str(k): f.to_dict() for k, f in sorted(self.users.items())}
        data["items"] = {str(k): f.to_dict() for k, f in sorted(self.items.items())}
        return data

    def state_digest(self) -> str:
        """Hash of the learned state; lazily created, unobserved priors are excluded."""
        learned = {
            "impressions": self.impressions,
            "users": {str(k): f.to_dict() for k, f in sorted(self.users.items()) if f.n_obs},
            "items": {str(k): f.to_dict() for k, f in sorted(self.items.items()) if f.n_obs},
        }
        return hashlib.sha256(json.dumps(learned, sort_keys=True).encode()).hexdigest()

    def restore(self, data: Mapping) -> "FactorAgent":
        super().restore(data)
        self.users = {int(k): LatentFactor.from_dict(v) for k, v in data["users"].items()}
        self.items = {int(k): LatentFactor.from_dict(v) for k, v in data["items"].items()}
        self._pool = None
        return self


class ICFAgent(FactorAgent):
    kind = "icf"


class CTRAgent(FactorAgent):
    """Item priors from an item-only topic model; users start at zero."""

    kind = "ctr"

    def __init__(self, lda_model, config: AgentConfig | None = None):
        if lda_model is None:
            raise ValueError("the ctr agent needs a trained item topic model")
        self.lda_model = lda_model
        super().__init__(config)

    def item_prior(self, bundle):
        if bundle is None:
            raise KeyError("ctr agent needs the feature bundle of every cold item")
        return self.lda_model.topic_component(bundle)


class MVICTRAgent(FactorAgent):
    """User and item priors from RatingMatch topic components."""

    kind = "mvictr"

    def __init__(self, rm_model, config: AgentConfig | None = None):
        if rm_model is None:
            raise ValueError("the mvictr agent needs a trained RatingMatch model")
        self.rm_model = rm_model
        super().__init__(config)

    def user_prior(self, bundle):
        if bundle is None:
            raise KeyError("mvictr agent needs the feature bundle of every cold user")
        return self.rm_model.topic_component(bundle)

    def item_prior(self, bundle):
        if bundle is None:
            raise KeyError("mvictr agent needs the feature bundle of every cold item")
        return self.rm_model.topic_component(bundle)


def make_agent(config: AgentConfig, rm_model=None, lda_model=None):
    if config.kind == "random":
        return RandomAgent(config)
    if config.kind == "icf":
        return ICFAgent(config)
    if config.kind == "ctr":
        return CTRAgent(lda_model, config)
    return MVICTRAgent(rm_model, config)


def _check_snapshot(data, kind):
    if data.get("format") != "mvictr.agent" or data.get("version") != SNAPSHOT_VERSION:
        raise ValueError("not a version-1 agent snapshot")
    if data.get("kind") != kind:
        raise ValueError(f"snapshot is for a {data.get('kind')!r} agent, not {kind!r}")


def save_snapshot(agent, path) -> None:
    Path(path).write_text(json.dumps(agent.snapshot(), sort_keys=True))


def load_snapshot(agent, path):
    return agent.restore(json.loads(Path(path).read_text()))


class AgentFactory:
    """Picklable zero-argument constructor for fresh agents (one per trial)."""

    def __init__(self, config: AgentConfig, rm_model=None, lda_model=None):
        self.config = config
        self.rm_model = rm_model
        self.lda_model = lda_model

    def __call__(self):
        return make_agent(self.config, self.rm_model, self.lda_model)
