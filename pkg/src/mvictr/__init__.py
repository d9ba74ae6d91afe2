"""Multi-view interactive collaborative topic regression (MV-ICTR).

RatingMatch clusters the features of positively rated user/item pairs; the
resulting topic components centre the Gaussian priors of an interactive
matrix-factorization bandit.
"""
from .agents import AgentConfig, AgentFactory, make_agent
from .dataset import (
    FeatureBundle, FeatureSchema, InteractionEvent, chronological_split, cold_start_stats,
    filter_top_items, load_movielens,
)
from .factor import FactorHyperparams, LatentFactor, predict, prior_factor
from .ratingmatch import RatingMatch
from .replayer import replay, run_trials, welch_t_test

__version__ = "0.1.0"

__all__ = [
    "AgentConfig", "AgentFactory", "FactorHyperparams", "FeatureBundle", "FeatureSchema",
    "InteractionEvent", "LatentFactor", "RatingMatch", "chronological_split", "cold_start_stats",
    "filter_top_items", "load_movielens", "make_agent", "predict", "prior_factor", "replay",
    "run_trials", "welch_t_test",
]
