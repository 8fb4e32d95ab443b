"""Finite-difference checks of the clipped-surrogate gradient on random instances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ecvgpo import ReshapeParams, reshape_group
from .grpo import RolloutGroup, TrainConfig, reward_std_gate, standardize_advantages
from .policy import FactoredPolicy, sample_rollout, surrogate_gradient, surrogate_objective


@dataclass(frozen=True)
class GradCheck:
    max_rel_error: float
    instances: int


def random_case(rng: np.random.Generator, beta: float, reshape: bool, granularity: str = "sequence",
                max_vocab: int = 8, max_len: int = 11):
    """Random policy / old snapshot / reference and a standardized (optionally reshaped) group."""
    Q = int(rng.integers(1, 4))
    L = int(rng.integers(1, max_len + 1))
    V = int(rng.integers(2, max_vocab + 1))
    N = int(rng.integers(2, 9))
    old = FactoredPolicy(rng.standard_normal((Q, L, V)))
    # current policy drifts off the sampling snapshot so the clip is exercised
    current = FactoredPolicy(old.logits + 0.3 * rng.standard_normal((Q, L, V)) / np.sqrt(L))
    reference = FactoredPolicy(rng.standard_normal((Q, L, V)))
    q = int(rng.integers(Q))
    rollouts = [sample_rollout(old, q, rng) for _ in range(N)]
    rewards = rng.uniform(0, 2, size=N)
    for ro, a in zip(rollouts, standardize_advantages(rewards)):
        ro.advantage = float(a)
    group = RolloutGroup(q, rollouts, float(rewards.mean()), float(rewards.std()), reward_std_gate(rewards))
    if reshape:
        r0 = float(rng.choice([-50.0, -3.0, 2.0, 10.0]))
        group = reshape_group(group, ReshapeParams(r0=r0, l0=25.0, delta=np.inf, granularity=granularity))
    cfg = TrainConfig(beta=beta, clip_eps=0.2, reshape=reshape, granularity=granularity)
    return current, group, reference, cfg


def finite_difference(current, group, reference, cfg, h: float = 1e-5) -> np.ndarray:
    base = current.logits
    grad = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        plus = base.copy()
        minus = base.copy()
        plus[idx] += h
        minus[idx] -= h
        fp = surrogate_objective(current.with_logits(plus), group, reference, cfg.beta, cfg.clip_eps, cfg.reshape)
        fm = surrogate_objective(current.with_logits(minus), group, reference, cfg.beta, cfg.clip_eps, cfg.reshape)
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |analytic - numeric| / max(max |analytic|, max |numeric|, floor).

    The floor keeps fully clipped (zero) gradients from dividing round-off by zero.
    """
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_case(current, group, reference, cfg, h: float = 1e-5) -> float:
    analytic = surrogate_gradient(current, group, cfg, reference)
    return relative_error(analytic, finite_difference(current, group, reference, cfg, h))


def run_gradcheck(instances: int, rng: np.random.Generator, h: float = 1e-5) -> GradCheck:
    """Cycle through GRPO / ECVGPO (sequence and token) objectives with beta in {0, 0.04}."""
    variants = [
        (0.0, False, "sequence"), (0.04, False, "sequence"),
        (0.0, True, "sequence"), (0.04, True, "sequence"),
        (0.0, True, "token"), (0.04, True, "token"),
    ]
    worst = 0.0
    for k in range(instances):
        beta, reshape, gran = variants[k % len(variants)]
        worst = max(worst, check_case(*random_case(rng, beta, reshape, gran), h=h))
    return GradCheck(max_rel_error=worst, instances=instances)
