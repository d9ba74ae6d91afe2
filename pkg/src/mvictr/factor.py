"""Latent factors with Gaussian priors and closed-form posterior updates.

A factor (user u_i or item v_j) has prior N(prior_mean, (sigma2/lam) I). After
observations (x_t, r_t, c_t) of the other side's mean, the posterior is

    A    = G + lam I,      G = sum_t c_t x_t x_t^T,   m = sum_t c_t r_t x_t
    mean = A^{-1} (m + lam prior_mean)
    cov  = sigma2 A^{-1}
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve


@dataclass(frozen=True)
class FactorHyperparams:
    d: int = 3
    lambda_u: float = 1.0
    lambda_v: float = 1.0
    sigma2: float = 1e-4
    conf_a: float = 1.0
    conf_b: float = 0.01
    unit_confidence: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        for name in ("lambda_u", "lambda_v", "sigma2", "conf_a", "conf_b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.conf_a > self.conf_b:
            raise ValueError("conf_a must exceed conf_b")

    def precision(self, side: str) -> float:
        if side == "user":
            return self.lambda_u
        if side == "item":
            return self.lambda_v
        raise ValueError(f"unknown side {side!r}")

    def confidence(self, reward) -> float:
        if self.unit_confidence:
            return 1.0
        return self.conf_a if reward >= 1 else self.conf_b


class LatentFactor:
    """Posterior state of one user or item vector."""

    def __init__(self, prior_mean, lam: float, sigma2: float):
        self.prior_mean = np.array(prior_mean, dtype=float)
        if self.prior_mean.ndim != 1:
            raise ValueError("prior_mean must be a vector")
        if not lam > 0 or not sigma2 > 0:
            raise ValueError("lam and sigma2 must be positive")
        self.lam = float(lam)
        self.sigma2 = float(sigma2)
        d = self.d
        self.gram = np.zeros((d, d))
        self.moment = np.zeros(d)
        self.n_obs = 0
        self.mean = self.prior_mean.copy()
        self.cov = (self.sigma2 / self.lam) * np.eye(d)
        self.cov_chol = np.sqrt(self.sigma2 / self.lam) * np.eye(d)

    @property
    def d(self) -> int:
        return self.prior_mean.shape[0]

    def observe(self, other_mean, reward: float, confidence: float = 1.0) -> "LatentFactor":
        if not confidence > 0:
            raise ValueError("confidence must be positive")
        x = np.asarray(other_mean, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"expected a length-{self.d} vector, got shape {x.shape}")
        self.gram += confidence * np.outer(x, x)
        self.moment += confidence * reward * x
        self.n_obs += 1
        self._refresh()
        return self

    def _refresh(self):
        d = self.d
        A = self.gram + self.lam * np.eye(d)
        A = 0.5 * (A + A.T)
        factor = cho_factor(A, lower=True)
        self.mean = cho_solve(factor, self.moment + self.lam * self.prior_mean)
        inv = cho_solve(factor, np.eye(d))
        self.cov = self.sigma2 * 0.5 * (inv + inv.T)
        self.cov_chol = np.linalg.cholesky(self.cov)

    def offset(self) -> np.ndarray:
        """Deviation of the posterior mean from the prior mean."""
        return self.mean - self.prior_mean

    def to_dict(self) -> dict:
        return {
            "prior_mean": self.prior_mean.tolist(), "lam": self.lam, "sigma2": self.sigma2,
            "gram": self.gram.tolist(), "moment": self.moment.tolist(), "n_obs": self.n_obs,
        }

    @classmethod
    def from_dict(cls, data) -> "LatentFactor":
        f = cls(data["prior_mean"], data["lam"], data["sigma2"])
        f.gram = np.asarray(data["gram"], dtype=float)
        f.moment = np.asarray(data["moment"], dtype=float)
        f.n_obs = int(data["n_obs"])
        if f.n_obs:
            f._refresh()
        return f


def prior_factor(chi, hyper: FactorHyperparams, side: str) -> LatentFactor:
    """Fresh factor centred on ``chi`` (or on zero when ``chi`` is None)."""
    mean = np.zeros(hyper.d) if chi is None else np.asarray(chi, dtype=float)
    if mean.shape != (hyper.d,):
        raise ValueError(f"prior mean must have length {hyper.d}")
    return LatentFactor(mean, hyper.precision(side), hyper.sigma2)


def predict(u: LatentFactor, v: LatentFactor) -> float:
    if u.d != v.d:
        raise ValueError("factor dimensions differ")
    return float(u.mean @ v.mean)
