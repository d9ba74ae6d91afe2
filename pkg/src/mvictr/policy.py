"""Arm-selection policies over candidate item factors."""
from __future__ import annotations

import logging
from typing import Mapping, Sequence

import numpy as np

from .factor import LatentFactor

logger = logging.getLogger(__name__)


class EmptyPoolError(ValueError):
    pass


def _check_pool(pool):
    if len(pool) == 0:
        raise EmptyPoolError("candidate pool is empty")


def covariance_cholesky(cov) -> np.ndarray:
    """Lower Cholesky factor; zero for a zero matrix or (with a warning) a non-SPD one."""
    cov = np.asarray(cov, dtype=float)
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        logger.warning("covariance is not positive definite; sampling falls back to the mean")
        return np.zeros_like(cov)


def sample_mvn(mean, chol, rng, size=None) -> np.ndarray:
    """Draw from N(mean, chol chol^T)."""
    mean = np.asarray(mean, dtype=float)
    shape = mean.shape if size is None else (size,) + mean.shape
    z = rng.standard_normal(shape)
    return mean + z @ np.asarray(chol).T


def argmax_random_tie(scores, rng) -> int:
    scores = np.asarray(scores)
    best = np.flatnonzero(scores == scores.max())
    if len(best) == 1:
        return int(best[0])
    return int(best[rng.integers(len(best))])


def select_random(pool: Sequence[int], rng) -> int:
    _check_pool(pool)
    return pool[int(rng.integers(len(pool)))]


def select_greedy(u: LatentFactor, items: Mapping[int, LatentFactor], pool: Sequence[int], rng) -> int:
    """argmax over the pool of u.mean . v.mean; ties resolved uniformly at random."""
    _check_pool(pool)
    means = np.vstack([items[j].mean for j in pool])
    return pool[argmax_random_tie(means @ u.mean, rng)]


def thompson_scores(u_mean, u_chol, item_means, item_chols, rng) -> np.ndarray:
    """Sampled rewards for every arm from one user draw and one draw per arm.

    ``item_means`` is (P, d) and ``item_chols`` (P, d, d).
    """
    u_tilde = u_mean + u_chol @ rng.standard_normal(u_mean.shape[0])
    noise = rng.standard_normal(item_means.shape)
    v_tilde = item_means + np.einsum("pij,pj->pi", item_chols, noise)
    return v_tilde @ u_tilde


def select_thompson(u: LatentFactor, items: Mapping[int, LatentFactor], pool: Sequence[int], rng) -> int:
    """Sample the user and every arm from their posteriors; act greedily on the sample."""
    _check_pool(pool)
    means = np.vstack([items[j].mean for j in pool])
    chols = np.stack([covariance_cholesky(items[j].cov) for j in pool])
    scores = thompson_scores(u.mean, covariance_cholesky(u.cov), means, chols, rng)
    return pool[argmax_random_tie(scores, rng)]
