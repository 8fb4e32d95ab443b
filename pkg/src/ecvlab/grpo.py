"""Group rollouts, group-standardized advantages and the GRPO / ECVGPO update step."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .policy import (
    FactoredPolicy,
    Rollout,
    apply_gradient_ascent,
    log_softmax,
    sample_rollout,
    surrogate_gradient,
)


@dataclass
class TrainConfig:
    rollouts: int = 8
    temperature: float = 1.0
    iterations: int = 1
    beta: float = 0.04
    clip_eps: float = 0.2
    lr: float = 0.1
    steps: int = 200
    queries_per_batch: int = 4
    reshape: bool = False
    r0: float = 10.0
    l0: float = 25.0
    delta: float = math.inf
    granularity: str = "sequence"
    std_floor: float = 1e-8
    seed: int = 0

    def validate(self) -> "TrainConfig":
        checks = [
            ("rollouts", self.rollouts >= 2, "must be >= 2"),
            ("temperature", self.temperature > 0, "must be > 0"),
            ("iterations", self.iterations >= 1, "must be >= 1"),
            ("beta", self.beta >= 0, "must be >= 0"),
            ("clip_eps", 0 < self.clip_eps < 1, "must lie in (0, 1)"),
            ("lr", self.lr >= 0, "must be >= 0"),
            ("steps", self.steps >= 0, "must be >= 0"),
            ("queries_per_batch", self.queries_per_batch >= 1, "must be >= 1"),
            ("l0", self.l0 > 1, "must be > 1"),
            ("r0", not self.reshape or abs(self.r0) > 1, "|r0| must be > 1"),
            ("delta", self.delta > 0, "must be > 0"),
            ("granularity", self.granularity in ("sequence", "token"), "must be 'sequence' or 'token'"),
            ("std_floor", self.std_floor >= 0, "must be >= 0"),
            ("seed", self.seed >= 0, "must be >= 0"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(key, f"{msg} (got {getattr(self, key)!r})")
        return self

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class ConfigError(ValueError):
    """Invalid configuration value; ``key`` names the offending setting."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message


@dataclass
class RolloutGroup:
    query: int
    rollouts: list[Rollout]
    reward_mean: float = 0.0
    reward_std: float = 0.0
    r_std: float = 0.0
    token_level: bool = False
    gate_open: bool = False

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.total_reward for r in self.rollouts])

    @property
    def advantages(self) -> np.ndarray:
        return np.array([r.advantage for r in self.rollouts])


def standardize_advantages(rewards: Sequence[float], std_floor: float = 1e-8) -> np.ndarray:
    """(r - mean) / population std, or all zeros when the spread is at or below ``std_floor``."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError(f"need at least 2 rewards, got {r.size}")
    std = r.std()
    if std <= std_floor:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def reward_std_gate(rewards: Sequence[float]) -> float:
    """sqrt(sum_i (r_i - mean)^2) -- no 1/N normalization."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError(f"need at least 2 rewards, got {r.size}")
    return float(np.sqrt(np.sum((r - r.mean()) ** 2)))


def kl_to_reference(policy: FactoredPolicy, reference: FactoredPolicy, query: int) -> float:
    """Sum over positions of KL(pi(.|q,t) || ref(.|q,t))."""
    if policy.logits.shape != reference.logits.shape:
        raise ValueError(f"policy shape {policy.logits.shape} != reference shape {reference.logits.shape}")
    logp = log_softmax(policy.logits[query])
    logr = log_softmax(reference.logits[query])
    p = np.exp(logp)
    kl = np.sum(p * (logp - logr))
    if not np.isfinite(kl):
        raise ValueError("KL to reference is not finite")
    return float(max(kl, 0.0))


def rollout_rng(seed: int, step: int, query: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, step, query, rollout index)."""
    return np.random.default_rng([seed, step, query, index])


def collect_group(policy: FactoredPolicy, query: int, env, config: TrainConfig, step: int = 0) -> RolloutGroup:
    """Sample ``config.rollouts`` answers for ``query`` and standardize their rewards."""
    if policy.temperature != config.temperature:
        policy = policy.with_temperature(config.temperature)
    rollouts = []
    for i in range(config.rollouts):
        rng = rollout_rng(config.seed, step, query, i)
        ro = sample_rollout(policy, query, rng)
        ro.reward = env.score(query, ro.tokens, rng)
        rollouts.append(ro)
    rewards = np.array([r.total_reward for r in rollouts])
    adv = standardize_advantages(rewards, config.std_floor)
    for ro, a in zip(rollouts, adv):
        ro.advantage = float(a)
    return RolloutGroup(
        query=query,
        rollouts=rollouts,
        reward_mean=float(rewards.mean()),
        reward_std=float(rewards.std()),
        r_std=reward_std_gate(rewards),
    )


def batch_queries(step: int, n_queries: int, per_batch: int) -> list[int]:
    """Queries visited at ``step``: a deterministic cyclic walk over the query set."""
    per_batch = min(per_batch, n_queries)
    return [(step * per_batch + j) % n_queries for j in range(per_batch)]


def reshape_params(config: TrainConfig):
    from .ecvgpo import ReshapeParams

    return ReshapeParams(r0=config.r0, l0=config.l0, delta=config.delta, granularity=config.granularity)


def update_policy(
    policy: FactoredPolicy,
    reference: Optional[FactoredPolicy],
    groups: Sequence[RolloutGroup],
    config: TrainConfig,
) -> FactoredPolicy:
    """Run ``config.iterations`` ascent steps on the batch objective (mean over groups)."""
    current = policy
    for _ in range(config.iterations):
        grad = np.zeros_like(current.logits)
        for g in groups:
            grad += surrogate_gradient(current, g, config, reference)
        grad /= len(groups)
        current = apply_gradient_ascent(current, grad, config.lr)
    return current


def train_step(policy: FactoredPolicy, reference: FactoredPolicy, env, config: TrainConfig, step: int = 0):
    """One GRPO (or ECVGPO, when ``config.reshape``) step.

    Returns ``(updated_policy, record, groups)``; the record describes the policy
    that sampled this step's rollouts.
    """
    from .harness.telemetry import make_record

    config.validate()
    queries = batch_queries(step, env.n_queries, config.queries_per_batch)
    old = policy.with_temperature(config.temperature)
    groups = [collect_group(old, q, env, config, step) for q in queries]
    if config.reshape:
        from .ecvgpo import reshape_group

        params = reshape_params(config)
        groups = [reshape_group(g, params) for g in groups]
    record = make_record(step, old, reference, env, groups)
    updated = update_policy(old, reference, groups, config)
    return updated, record, groups
