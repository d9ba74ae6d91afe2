"""Experiment configuration: flat ``key = value`` files, env overrides, CLI overrides.

Precedence, lowest first: built-in defaults, config file, ``MVICTR_<KEY>``
environment variables, command-line flags.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .agents import KINDS
from .factor import FactorHyperparams

ENV_PREFIX = "MVICTR_"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    data_dir: str = "data/ml-100k"
    out_dir: str = "runs/default"
    n_clusters: int = 3
    alpha: float = 1.0  # our default
    beta: float = 0.1  # our default
    iterations: int = 1000
    perplexity_every: int = 10
    average_last: int = 1
    rm_seed: int = 0
    lambda_u: float = 1.0
    lambda_v: float = 1.0
    sigma2: float = 0.01
    conf_a: float = 1.0  # our default
    conf_b: float = 0.01  # our default
    unit_confidence: bool = False
    ctr_lambda_u: float = 0.01
    ctr_lambda_v: float = 100.0
    n_top_items: int = 100
    split_fraction: float = 0.5
    n_trials: int = 10
    base_seed: int = 0
    agents: str = "random,icf,ctr,mvictr"
    threads: int = 1

    def validate(self) -> "ExperimentConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.n_clusters >= 1, "n_clusters must be >= 1")
        need(self.alpha > 0 and self.beta > 0, "alpha and beta must be positive")
        need(self.iterations >= 1, "iterations must be >= 1")
        need(self.perplexity_every >= 0, "perplexity_every must be >= 0")
        need(1 <= self.average_last <= self.iterations, "average_last must lie in [1, iterations]")
        need(self.n_top_items >= 1, "n_top_items must be >= 1")
        need(0 < self.split_fraction < 1, "split_fraction must lie in (0, 1)")
        need(self.n_trials >= 1, "n_trials must be >= 1")
        need(self.threads >= 1, "threads must be >= 1")
        unknown = set(self.agent_list) - set(KINDS)
        need(not unknown, f"unknown agents {sorted(unknown)}; choose from {KINDS}")
        need(len(self.agent_list) >= 1, "at least one agent is required")
        try:
            self.factor_hyper("mvictr")
            self.factor_hyper("ctr")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    @property
    def agent_list(self) -> list[str]:
        return [a.strip() for a in self.agents.split(",") if a.strip()]

    def factor_hyper(self, kind: str) -> FactorHyperparams:
        lu, lv = (self.ctr_lambda_u, self.ctr_lambda_v) if kind == "ctr" else (self.lambda_u, self.lambda_v)
        return FactorHyperparams(d=self.n_clusters, lambda_u=lu, lambda_v=lv, sigma2=self.sigma2,
                                 conf_a=self.conf_a, conf_b=self.conf_b,
                                 unit_confidence=self.unit_confidence)

    def to_dict(self) -> dict:
        return asdict(self)

    def update(self, values: dict, source: str) -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(self)}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"{source}: unknown key {key!r}")
            setattr(self, key, _coerce(raw, types[key], key, source))
        return self


def _coerce(raw, type_name, key, source):
    if not isinstance(raw, str):
        return raw
    try:
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
        if type_name == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"{source}: {key} expects {type_name}, got {raw!r}") from None
    return raw.strip()


def parse_config_text(text: str, source: str = "config") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    names = {f.name for f in fields(ExperimentConfig)}
    out = {}
    for var, value in environ.items():
        if var.startswith(ENV_PREFIX):
            key = var[len(ENV_PREFIX):].lower()
            if key in names:
                out[key] = value
    return out


def resolve_config(path=None, overrides=None, environ=None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file {p} not found")
        cfg.update(parse_config_text(p.read_text(), str(p)), str(p))
    cfg.update(env_overrides(environ), "environment")
    cfg.update({k: v for k, v in (overrides or {}).items() if v is not None}, "command line")
    return cfg.validate()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
