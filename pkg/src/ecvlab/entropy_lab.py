"""Entropy-change forecasts for tabular softmax policies and entropy diagnostics.

Under a vanilla policy-gradient step with centered advantages the logits of state
``s`` move by ``eta * pi(a|s) * A(s, a)``, and to first order in ``eta``::

    H_next(s) - H(s) ~= -eta * Cov_{a~pi}( log pi(a|s), pi(a|s) * A(s, a) )

This module evaluates the right-hand side, the exact left-hand side, and the
near-optimal answer counts that explain why the covariance stays positive for
grounding-style rewards.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .policy import FactoredPolicy, Rollout, TabularPolicy, entropy_table
from .rewards import NUMERIC

CENTERING_TOL = 1e-6


@dataclass(frozen=True)
class EntropyForecast:
    state: int
    entropy_before: float
    entropy_after: float
    predicted_change: float
    eta: float

    @property
    def exact_change(self) -> float:
        return self.entropy_after - self.entropy_before

    @property
    def abs_error(self) -> float:
        return abs(self.exact_change - self.predicted_change)


def _check_centered(p: np.ndarray, adv: np.ndarray) -> None:
    mean = float(p @ adv)
    if abs(mean) > CENTERING_TOL:
        raise ValueError(f"advantages are not centered under the policy (E_pi[A] = {mean:.3g})")


def center_advantages(policy: TabularPolicy, state: int, advantages) -> np.ndarray:
    p = policy.probs()[state]
    adv = np.asarray(advantages, dtype=np.float64)
    return adv - p @ adv


def predict_entropy_change(policy: TabularPolicy, state: int, advantages, eta: float) -> float:
    """-eta * Cov_{a~pi}(log pi(a|s), pi(a|s) A(s,a)), from pre-update quantities."""
    logp = policy.log_probs()[state]
    p = np.exp(logp)
    adv = np.asarray(advantages, dtype=np.float64)
    if adv.shape != p.shape:
        raise ValueError(f"expected {p.shape[0]} advantages, got {adv.shape}")
    _check_centered(p, adv)
    y = p * adv
    cov = np.sum(p * (logp - p @ logp) * (y - p @ y))
    return float(-eta * cov)


def vpg_logit_update(policy: TabularPolicy, state: int, advantages, eta: float) -> TabularPolicy:
    """theta[s, a] += eta * pi(a|s) * A(s, a); other states untouched."""
    p = policy.probs()[state]
    adv = np.asarray(advantages, dtype=np.float64)
    _check_centered(p, adv)
    logits = policy.logits.copy()
    logits[state] += eta * p * adv
    return policy.with_logits(logits)


def forecast(policy: TabularPolicy, state: int, advantages, eta: float) -> EntropyForecast:
    before = policy.entropy(state)
    predicted = predict_entropy_change(policy, state, advantages, eta)
    after = vpg_logit_update(policy, state, advantages, eta).entropy(state)
    return EntropyForecast(state, before, after, predicted, eta)


@dataclass(frozen=True)
class TheoremReport:
    instances: int
    eta: float
    max_error: float
    mean_error: float
    max_error_half: float
    mean_error_half: float

    @property
    def decay_ratio(self) -> float:
        if self.mean_error_half == 0.0:
            return float("nan")
        return self.mean_error / self.mean_error_half

    def as_dict(self) -> dict:
        return {
            "instances": self.instances,
            "eta": self.eta,
            "max_error": self.max_error,
            "mean_error": self.mean_error,
            "max_error_half": self.max_error_half,
            "mean_error_half": self.mean_error_half,
            "decay_ratio": self.decay_ratio,
        }


def random_instance(rng: np.random.Generator, max_actions: int = 10, adv_bound: float = 10.0):
    """Standard-normal logits and uniform advantages, centered under pi and kept within the bound."""
    k = int(rng.integers(2, max_actions + 1))
    policy = TabularPolicy(rng.standard_normal((1, k)))
    adv = center_advantages(policy, 0, rng.uniform(-adv_bound, adv_bound, size=k))
    peak = np.max(np.abs(adv))
    if peak > adv_bound:
        adv *= adv_bound / peak
    return policy, adv


def verify_theorem(instances: int, eta: float, rng: np.random.Generator, max_actions: int = 10) -> TheoremReport:
    """Compare exact and predicted entropy change at ``eta`` and ``eta / 2``."""
    if instances < 10:
        raise ValueError(f"need at least 10 instances, got {instances}")
    errs, errs_half = [], []
    for _ in range(instances):
        policy, adv = random_instance(rng, max_actions)
        errs.append(forecast(policy, 0, adv, eta).abs_error)
        errs_half.append(forecast(policy, 0, adv, eta / 2).abs_error)
    errs = np.array(errs)
    errs_half = np.array(errs_half)
    return TheoremReport(
        instances=instances,
        eta=eta,
        max_error=float(errs.max()),
        mean_error=float(errs.mean()),
        max_error_half=float(errs_half.max()),
        mean_error_half=float(errs_half.mean()),
    )


# --- degeneracy of near-optimal answers ------------------------------------------


@dataclass(frozen=True)
class DegeneracyReport:
    delta_adv: float
    near_optimal: np.ndarray
    best_reward: float
    mean_advantage: float
    max_advantage: float
    mean_probability: float

    @property
    def M(self) -> int:
        return len(self.near_optimal)

    @property
    def bound(self) -> float:
        return 1.0 / self.M


def degeneracy_report(
    env,
    policy: FactoredPolicy,
    query: int,
    delta_adv: float = 0.1,
    cap: int = 10**6,
    sample: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> DegeneracyReport:
    """Near-optimal answer set ``{a : R_best - R(a) <= delta_adv}`` for one query.

    Rewards are expectations over the environment's annotation noise. Advantages
    are measured in reward units against the policy-weighted mean reward of the
    candidate set. With ``sample=True`` an oversized answer space is subsampled
    uniformly (without replacement) down to ``cap`` candidates.
    """
    if not delta_adv >= 0:
        raise ValueError(f"delta_adv must be >= 0, got {delta_adv}")
    cands = env.answer_candidates()
    if len(cands) > cap:
        if not sample:
            raise ValueError(f"answer space has {len(cands)} candidates (> cap {cap}); pass sample=True")
        rng = rng or np.random.default_rng(0)
        cands = cands[np.sort(rng.choice(len(cands), size=cap, replace=False))]
    rewards = env.candidate_rewards(query, cands)
    logp = env.candidate_logprobs(policy, query, cands)
    p = np.exp(logp)
    baseline = float(p @ rewards / p.sum()) if p.sum() > 0 else float(rewards.mean())
    adv = rewards - baseline
    best = float(rewards.max())
    mask = rewards >= best - delta_adv - 1e-12
    return DegeneracyReport(
        delta_adv=delta_adv,
        near_optimal=cands[mask],
        best_reward=best,
        mean_advantage=float(adv[mask].mean()),
        max_advantage=float(adv.max()),
        mean_probability=float(p[mask].mean()),
    )


# --- token-level diagnostics --------------------------------------------------------


@dataclass(frozen=True)
class HighEntropyReport:
    factor: float
    mean_entropy: float
    flags: np.ndarray
    counts: dict

    @property
    def total(self) -> int:
        return int(self.flags.sum())


def high_entropy_token_report(
    policy: FactoredPolicy, factor: float = 2.0, slot_classes: Optional[Sequence[str]] = None
) -> HighEntropyReport:
    """Flag positions whose entropy is at least ``factor`` times the mean token entropy."""
    if not factor > 0:
        raise ValueError(f"factor must be positive, got {factor}")
    ent = entropy_table(policy)
    mean = float(ent.mean())
    flags = ent >= factor * mean if mean > 0 else np.zeros(ent.shape, dtype=bool)
    counts: dict = {}
    if slot_classes is not None:
        if len(slot_classes) != ent.shape[1]:
            raise ValueError("one slot class per position required")
        for t, cls in enumerate(slot_classes):
            counts[cls] = counts.get(cls, 0) + int(flags[:, t].sum())
    return HighEntropyReport(factor=factor, mean_entropy=mean, flags=flags, counts=counts)


def token_class_probability(rollouts: Sequence[Rollout], token_classes: Sequence[str]):
    """(mean prob of numeric tokens, mean prob of other tokens) over positive-advantage rollouts.

    Returns None when no rollout has a positive advantage or a class is absent.
    """
    pos = [r for r in rollouts if r.advantage > 0]
    if not pos:
        return None
    classes = np.asarray(token_classes)
    tokens = np.concatenate([r.tokens for r in pos])
    probs = np.exp(np.concatenate([r.old_logprobs for r in pos]))
    numeric = classes[tokens] == NUMERIC
    if not numeric.any() or numeric.all():
        return None
    return float(probs[numeric].mean()), float(probs[~numeric].mean())
