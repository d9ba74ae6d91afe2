"""RatingMatch: multi-view clustering of rated user/item feature pairs.

Every training event is a positively rated (user, item) pair whose user and
item features are concatenated into one bag of categorical tokens. Events are
clustered with a collapsed Gibbs sampler; the rating-weighted count tables
then give every user or item, seen or unseen, a cluster-membership vector by
plugging its features in (:meth:`RatingMatch.transform`).

Restricting ``views`` to ``("item",)`` gives a plain topic model over item
feature tokens, which is what the CTR baseline uses.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numba import njit
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import Feature, FeatureBundle, FeatureSchema, VIEWS

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
NEGATIVE_TOL = 1e-9


class CountConsistencyError(RuntimeError):
    """Cluster counts went negative during a decrement."""


class NumericalError(FloatingPointError):
    pass


@dataclass
class RmCounts:
    """Rating-weighted count tables.

    ``cluster`` is n_k (length K); ``value`` holds n_k,x,v for every feature
    value laid out contiguously (K x sum V_x); ``feature`` holds the
    per-feature row sums sum_v n_k,x,v (K x F).
    """

    cluster: np.ndarray
    value: np.ndarray
    feature: np.ndarray

    @property
    def total_mass(self) -> float:
        return float(self.cluster.sum())

    def copy(self) -> "RmCounts":
        return RmCounts(self.cluster.copy(), self.value.copy(), self.feature.copy())


@dataclass
class EncodedEvents:
    """Events as a CSR token list; ``feat[t]`` is the feature index of token t."""

    ptr: np.ndarray
    tokens: np.ndarray
    feat: np.ndarray

    def __len__(self):
        return len(self.ptr) - 1


def encode_pairs(pairs, features: Sequence[Feature], offsets: np.ndarray) -> EncodedEvents:
    """Flatten (user_bundle, item_bundle) pairs into token arrays over ``features``."""
    ptr = [0]
    tokens, feat = [], []
    for pair in pairs:
        by_view = _pair_by_view(pair)
        for x, f in enumerate(features):
            bundle = by_view.get(f.view)
            if bundle is None:
                raise ValueError(f"event lacks a {f.view} bundle")
            for v in bundle.values[f.name]:
                if not 0 <= v < f.size:
                    raise ValueError(f"{f.name}: value index {v} out of range")
                tokens.append(offsets[x] + v)
                feat.append(x)
        if len(tokens) == ptr[-1]:
            raise ValueError("event carries no feature tokens")
        ptr.append(len(tokens))
    return EncodedEvents(np.asarray(ptr, np.int64), np.asarray(tokens, np.int64), np.asarray(feat, np.int64))


def _pair_by_view(pair) -> dict:
    if isinstance(pair, FeatureBundle):
        return {pair.view: pair}
    return {b.view: b for b in pair if b is not None}


def aggregate_counts(assignments, weights, enc: EncodedEvents, n_clusters, n_values, n_features) -> RmCounts:
    """Recount the tables from scratch for a given assignment vector."""
    counts = RmCounts(np.zeros(n_clusters), np.zeros((n_clusters, n_values)),
                      np.zeros((n_clusters, n_features)))
    for i, k in enumerate(assignments):
        w = weights[i]
        counts.cluster[k] += w
        s, e = enc.ptr[i], enc.ptr[i + 1]
        np.add.at(counts.value[k], enc.tokens[s:e], w)
        np.add.at(counts.feature[k], enc.feat[s:e], w)
    return counts


@njit(cache=True)
def _log_conditional(out, tokens, feat, s, e, n_k, n_kv, n_kx, alpha, beta, vbeta):
    for k in range(n_k.shape[0]):
        acc = np.log(n_k[k] + alpha)
        for t in range(s, e):
            x = feat[t]
            acc += np.log(n_kv[k, tokens[t]] + beta[x]) - np.log(n_kx[k, x] + vbeta[x])
        out[k] = acc


@njit(cache=True)
def _sweep_kernel(z, weights, ptr, tokens, feat, n_k, n_kv, n_kx, alpha, beta, vbeta, uniforms):
    K = n_k.shape[0]
    logp = np.empty(K)
    prob = np.empty(K)
    for i in range(z.shape[0]):
        w = weights[i]
        old = z[i]
        s = ptr[i]
        e = ptr[i + 1]
        n_k[old] -= w
        if n_k[old] < 0.0:
            if n_k[old] < -1e-9:
                return i
            n_k[old] = 0.0
        for t in range(s, e):
            n_kv[old, tokens[t]] -= w
            n_kx[old, feat[t]] -= w
            if n_kv[old, tokens[t]] < 0.0:
                if n_kv[old, tokens[t]] < -1e-9:
                    return i
                n_kv[old, tokens[t]] = 0.0
            if n_kx[old, feat[t]] < 0.0:
                if n_kx[old, feat[t]] < -1e-9:
                    return i
                n_kx[old, feat[t]] = 0.0
        _log_conditional(logp, tokens, feat, s, e, n_k, n_kv, n_kx, alpha, beta, vbeta)
        m = logp.max()
        total = 0.0
        for k in range(K):
            prob[k] = np.exp(logp[k] - m)
            total += prob[k]
        u = uniforms[i] * total
        new = K - 1
        run = 0.0
        for k in range(K):
            run += prob[k]
            if u < run:
                new = k
                break
        z[i] = new
        n_k[new] += w
        for t in range(s, e):
            n_kv[new, tokens[t]] += w
            n_kx[new, feat[t]] += w
    return -1


class RatingMatch(TransformerMixin, BaseEstimator):
    """Collapsed-Gibbs multi-view mixture over concatenated user/item features.

    Parameters
    ----------
    schema : FeatureSchema
        Frozen feature ontology shared by training and plug-in.
    n_clusters : int, default=3
        Number of clusters K; equals the latent dimension of the factor model.
    alpha : float, default=1.0
        Symmetric Dirichlet concentration over clusters.
    beta : float or dict, default=0.1
        Dirichlet concentration over each feature's values; a dict maps
        feature name to its own concentration.
    n_iter : int, default=1000
        Number of Gibbs sweeps.
    views : tuple of {"user", "item"}, default=("user", "item")
        Which views' features enter the model. ``("item",)`` is the LDA-style
        item topic model.
    perplexity_every : int, default=1
        Record training perplexity every this many sweeps (0 disables).
    average_last : int, default=1
        Point estimate from the mean of the count tables over the last this
        many sweeps; 1 keeps the final sample.
    random_state : int or None
        Seed of the sampler.

    Attributes
    ----------
    counts_ : RmCounts
    assignments_ : ndarray of shape (n_events,)
    perplexity_trace_ : list of (sweep, perplexity)
    cluster_trace_ : ndarray of shape (n_iter + 1, K)
        Cluster mass after initialization and after each sweep.
    """

    def __init__(self, schema=None, n_clusters=3, alpha=1.0, beta=0.1, n_iter=1000,
                 views=VIEWS, perplexity_every=1, average_last=1, random_state=None):
        self.schema = schema
        self.n_clusters = n_clusters
        self.alpha = alpha
        self.beta = beta
        self.n_iter = n_iter
        self.views = views
        self.perplexity_every = perplexity_every
        self.average_last = average_last
        self.random_state = random_state

    # -- setup ---------------------------------------------------------------------

    def _check_params(self):
        if not isinstance(self.schema, FeatureSchema):
            raise ValueError("schema must be a FeatureSchema")
        if int(self.n_clusters) < 1:
            raise ValueError("n_clusters must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not set(self.views) or not set(self.views) <= set(VIEWS):
            raise ValueError(f"views must be a non-empty subset of {VIEWS}")
        if int(self.n_iter) < 0:
            raise ValueError("n_iter must be >= 0")
        if int(self.average_last) < 1:
            raise ValueError("average_last must be >= 1")
        self.features_ = [f for f in self.schema.features if f.view in self.views]
        if isinstance(self.beta, Mapping):
            beta = [float(self.beta[f.name]) for f in self.features_]
        else:
            beta = [float(self.beta)] * len(self.features_)
        if any(not b > 0 for b in beta):
            raise ValueError("every beta must be positive")
        self.beta_ = np.asarray(beta)
        sizes = np.array([f.size for f in self.features_], dtype=np.int64)
        self.offsets_ = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.vbeta_ = sizes * self.beta_
        self.n_values_ = int(sizes.sum())

    def _encode(self, X) -> EncodedEvents:
        return encode_pairs(X, self.features_, self.offsets_)

    def initialize(self, X, sample_weight=None):
        """Assign every event a uniform-random cluster and aggregate counts."""
        self._check_params()
        if len(X) == 0:
            raise ValueError("RatingMatch needs at least one training event")
        self.enc_ = self._encode(X)
        n = len(self.enc_)
        if sample_weight is None:
            weights = np.ones(n)
        else:
            weights = np.asarray(sample_weight, dtype=float)
            if weights.shape != (n,) or np.any(weights < 0):
                raise ValueError("sample_weight must be a non-negative vector, one per event")
        self.weights_ = weights
        self.rng_ = np.random.default_rng(self.random_state)
        K = int(self.n_clusters)
        self.assignments_ = self.rng_.integers(0, K, size=n).astype(np.int64)
        self.counts_ = aggregate_counts(self.assignments_, weights, self.enc_, K,
                                        self.n_values_, len(self.features_))
        self.n_sweeps_ = 0
        return self

    # -- Gibbs machinery -----------------------------------------------------------

    def conditional(self, tokens, feat) -> np.ndarray:
        """Normalized cluster probabilities for one event given current counts.

        The caller removes the event from the counts beforehand when it is a
        training event being resampled.
        """
        c = self.counts_
        logp = np.empty(int(self.n_clusters))
        _log_conditional(logp, np.asarray(tokens, np.int64), np.asarray(feat, np.int64), 0,
                         len(tokens), c.cluster, c.value, c.feature, float(self.alpha),
                         self.beta_, self.vbeta_)
        if not np.all(np.isfinite(logp)):
            raise NumericalError(f"non-finite log conditional {logp}")
        p = np.exp(logp - logp.max())
        return p / p.sum()

    def event_conditional(self, i: int) -> np.ndarray:
        """Gibbs conditional of training event ``i`` with itself excluded."""
        s, e = self.enc_.ptr[i], self.enc_.ptr[i + 1]
        toks, feat = self.enc_.tokens[s:e], self.enc_.feat[s:e]
        self._move(i, self.assignments_[i], -1.0)
        try:
            return self.conditional(toks, feat)
        finally:
            self._move(i, self.assignments_[i], +1.0)

    def _move(self, i, k, sign):
        w = sign * self.weights_[i]
        s, e = self.enc_.ptr[i], self.enc_.ptr[i + 1]
        c = self.counts_
        c.cluster[k] += w
        np.add.at(c.value[k], self.enc_.tokens[s:e], w)
        np.add.at(c.feature[k], self.enc_.feat[s:e], w)

    def sweep(self) -> float:
        """One collapsed Gibbs pass over every training event.

        Returns the plug-in log-likelihood of the training events afterwards.
        """
        check_is_fitted(self, "counts_")
        c = self.counts_
        uniforms = self.rng_.random(len(self.enc_))
        bad = _sweep_kernel(self.assignments_, self.weights_, self.enc_.ptr, self.enc_.tokens,
                            self.enc_.feat, c.cluster, c.value, c.feature, float(self.alpha),
                            self.beta_, self.vbeta_, uniforms)
        if bad >= 0:
            raise CountConsistencyError(f"negative count while removing event {bad}")
        self.n_sweeps_ += 1
        return float(self._log_likelihood(self.enc_).sum())

    def fit(self, X, y=None, sample_weight=None):
        """Run ``n_iter`` sweeps from a random initialization.

        ``X`` is a sequence of (user_bundle, item_bundle) pairs; in item-only
        mode bare item bundles are accepted too.
        """
        self.initialize(X, sample_weight)
        K = int(self.n_clusters)
        self.perplexity_trace_ = [(0, self._perplexity(self.enc_))]
        self.cluster_trace_ = np.empty((int(self.n_iter) + 1, K))
        self.cluster_trace_[0] = self.counts_.cluster
        every = int(self.perplexity_every)
        last = int(self.n_iter)
        tail = min(int(self.average_last), max(last, 1))
        acc = None
        for it in range(1, last + 1):
            self.sweep()
            self.cluster_trace_[it] = self.counts_.cluster
            if (every and it % every == 0) or it == last:
                self.perplexity_trace_.append((it, self._perplexity(self.enc_)))
            if tail > 1 and it > last - tail:
                if acc is None:
                    acc = self.counts_.copy()
                else:
                    acc.cluster += self.counts_.cluster
                    acc.value += self.counts_.value
                    acc.feature += self.counts_.feature
        if acc is not None:
            self.counts_ = RmCounts(acc.cluster / tail, acc.value / tail, acc.feature / tail)
        logger.info("RatingMatch(K=%d, views=%s): %d sweeps, final perplexity %.4f",
                    K, tuple(self.views), last, self.perplexity_trace_[-1][1])
        return self

    # -- plug-in -------------------------------------------------------------------

    def _log_theta(self) -> np.ndarray:
        n = self.counts_.cluster + float(self.alpha)
        return np.log(n) - np.log(n.sum())

    def _log_phi_tokens(self, enc: EncodedEvents) -> np.ndarray:
        c = self.counts_
        num = np.log(c.value[:, enc.tokens] + self.beta_[enc.feat])
        den = np.log(c.feature[:, enc.feat] + self.vbeta_[enc.feat])
        return num - den

    def _log_joint(self, enc: EncodedEvents) -> np.ndarray:
        """log p(z=k) + log p(tokens | z=k): shape (n_events, K)."""
        per_token = self._log_phi_tokens(enc)
        per_event = np.add.reduceat(per_token, enc.ptr[:-1], axis=1) if per_token.size else \
            np.zeros((int(self.n_clusters), len(enc)))
        return (per_event + self._log_theta()[:, None]).T

    def _log_likelihood(self, enc: EncodedEvents) -> np.ndarray:
        return logsumexp(self._log_joint(enc), axis=1)

    def _perplexity(self, enc: EncodedEvents) -> float:
        ll = self._log_likelihood(enc)
        value = float(np.exp(-ll.mean()))
        if not np.isfinite(value):
            raise NumericalError("perplexity is not finite")
        return value

    def perplexity(self, X) -> float:
        """exp(-mean log p(f_i)) of event feature bundles under the plug-in model."""
        check_is_fitted(self, "counts_")
        if len(X) == 0:
            raise ValueError("perplexity needs at least one event")
        return self._perplexity(self._encode(X))

    def topic_component(self, bundle: FeatureBundle) -> np.ndarray:
        """Cluster membership probabilities of one user or item from its features."""
        check_is_fitted(self, "counts_")
        self.schema.validate(bundle)
        x_idx = [x for x, f in enumerate(self.features_) if f.view == bundle.view]
        toks, feat = [], []
        for x in x_idx:
            f = self.features_[x]
            for v in bundle.values[f.name]:
                toks.append(self.offsets_[x] + v)
                feat.append(x)
        logchi = self._log_theta().copy()
        if toks:
            enc = EncodedEvents(np.array([0, len(toks)]), np.asarray(toks, np.int64), np.asarray(feat, np.int64))
            logchi += self._log_phi_tokens(enc).sum(axis=1)
        chi = np.exp(logchi - logchi.max())
        return chi / chi.sum()

    def transform(self, X) -> np.ndarray:
        """Stack :meth:`topic_component` over a sequence of bundles: (n, K)."""
        return np.vstack([self.topic_component(b) for b in X]) if len(X) else \
            np.empty((0, int(self.n_clusters)))

    def value_counts(self, name: str) -> np.ndarray:
        """K x V_x block of the value counts for one feature."""
        x = [f.name for f in self.features_].index(name)
        return self.counts_.value[:, self.offsets_[x]:self.offsets_[x] + self.features_[x].size]

    def recount(self) -> RmCounts:
        return aggregate_counts(self.assignments_, self.weights_, self.enc_, int(self.n_clusters),
                                self.n_values_, len(self.features_))

    # -- persistence ---------------------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "counts_")
        beta = self.beta if not isinstance(self.beta, Mapping) else dict(self.beta)
        return {
            "format": "mvictr.ratingmatch",
            "version": FORMAT_VERSION,
            "params": {
                "n_clusters": int(self.n_clusters), "alpha": float(self.alpha), "beta": beta,
                "n_iter": int(self.n_iter), "views": list(self.views),
                "perplexity_every": int(self.perplexity_every),
                "average_last": int(self.average_last), "random_state": self.random_state,
            },
            "schema": self.schema.to_dict(),
            "schema_sha256": self.schema.digest(),
            "counts": {
                "cluster": self.counts_.cluster.tolist(),
                "value": self.counts_.value.tolist(),
                "feature": self.counts_.feature.tolist(),
            },
            "assignments": self.assignments_.tolist(),
            "perplexity_trace": [[int(i), float(p)] for i, p in getattr(self, "perplexity_trace_", [])],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "RatingMatch":
        if data.get("format") != "mvictr.ratingmatch" or data.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-1 RatingMatch model")
        schema = FeatureSchema.from_dict(data["schema"])
        if schema.digest() != data["schema_sha256"]:
            raise ValueError("schema hash mismatch")
        params = dict(data["params"])
        params["views"] = tuple(params["views"])
        model = cls(schema=schema, **params)
        model._check_params()
        c = data["counts"]
        model.counts_ = RmCounts(np.asarray(c["cluster"], float), np.asarray(c["value"], float),
                                 np.asarray(c["feature"], float))
        model.assignments_ = np.asarray(data["assignments"], np.int64)
        model.perplexity_trace_ = [(int(i), float(p)) for i, p in data.get("perplexity_trace", [])]
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "RatingMatch":
        return cls.from_dict(json.loads(Path(path).read_text()))


def match_clusters(true_z, found_z, n_clusters: int) -> float:
    """Fraction of agreement under the best relabelling of ``found_z``."""
    from scipy.optimize import linear_sum_assignment

    true_z = np.asarray(true_z)
    found_z = np.asarray(found_z)
    confusion = np.zeros((n_clusters, n_clusters))
    np.add.at(confusion, (true_z, found_z), 1)
    rows, cols = linear_sum_assignment(-confusion)
    return float(confusion[rows, cols].sum() / len(true_z))
