"""Synthetic worlds drawn from the RatingMatch generative process.

Used as ground truth for the Gibbs sampler: draw a global cluster
distribution and per-cluster feature-value distributions, then draw events
cluster-first.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .dataset import FeatureBundle, FeatureSchema, InteractionEvent, VIEWS, write_events_csv


@dataclass
class SyntheticWorld:
    schema: FeatureSchema
    n_clusters: int
    theta: np.ndarray
    phi: dict  # feature name -> (K, V_x) row-stochastic matrix


def sample_world(schema: FeatureSchema, n_clusters: int, alpha: float, beta, rng_seed=None) -> SyntheticWorld:
    """theta ~ Dirichlet(alpha 1_K); phi[x][k] ~ Dirichlet(beta_x 1_Vx)."""
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    betas = {f.name: float(beta[f.name] if isinstance(beta, Mapping) else beta) for f in schema.features}
    if any(not b > 0 for b in betas.values()):
        raise ValueError("every beta must be positive")
    rng = np.random.default_rng(rng_seed)
    theta = rng.dirichlet(np.full(n_clusters, float(alpha)))
    phi = {f.name: rng.dirichlet(np.full(f.size, betas[f.name]), size=n_clusters) for f in schema.features}
    return SyntheticWorld(schema, n_clusters, theta, phi)


def _draw_values(rng, probs, n_values):
    support = int(np.count_nonzero(probs))
    n = min(n_values, support)
    picked = rng.choice(len(probs), size=n, replace=False, p=probs / probs.sum())
    return tuple(sorted(int(v) for v in picked))


def sample_events(world: SyntheticWorld, n_events: int, rng_seed=None, n_multi: int = 2):
    """Draw ``n_events`` (user_bundle, item_bundle) pairs and their true clusters.

    Each event gets fresh entity ids (its index). Multi-valued features take
    ``n_multi`` distinct values, fewer if the cluster's distribution has
    smaller support.
    """
    if n_events < 0:
        raise ValueError("n_events must be >= 0")
    rng = np.random.default_rng(rng_seed)
    z = rng.choice(world.n_clusters, size=n_events, p=world.theta)
    pairs = []
    for i, k in enumerate(z):
        bundles = []
        for view in VIEWS:
            values = {}
            for f in world.schema.view_features(view):
                probs = world.phi[f.name][k]
                if f.multi_valued:
                    values[f.name] = _draw_values(rng, probs, n_multi)
                else:
                    values[f.name] = (int(rng.choice(f.size, p=probs / probs.sum())),)
            bundles.append(FeatureBundle(i, view, values))
        pairs.append(tuple(bundles))
    return pairs, z.astype(np.int64)


def dump_events(path, pairs) -> None:
    """Write synthetic events in the dataset events-CSV layout (all positive, train split)."""
    events = [InteractionEvent(i, i, 5, 1, i + 1) for i in range(len(pairs))]
    write_events_csv(path, events, [])
