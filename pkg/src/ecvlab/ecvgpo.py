"""Self-information advantage reshaping (ECVGPO) and its covariance reading."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .policy import Rollout


@dataclass(frozen=True)
class ReshapeParams:
    r0: float
    l0: float = 25.0
    delta: float = float("inf")
    granularity: str = "sequence"

    def __post_init__(self):
        if not abs(self.r0) > 1:
            raise ValueError(f"|r0| must exceed 1, got {self.r0}")
        if not self.l0 > 1:
            raise ValueError(f"l0 must exceed 1, got {self.l0}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.granularity not in ("sequence", "token"):
            raise ValueError(f"granularity must be 'sequence' or 'token', got {self.granularity!r}")


def self_information_token(rollout: Rollout, t: int) -> float:
    if not 0 <= t < len(rollout.old_logprobs):
        raise IndexError(f"position {t} out of range for length {len(rollout.old_logprobs)}")
    return float(-rollout.old_logprobs[t])


def self_information_sequence(rollout: Rollout) -> float:
    """Mean negative log-probability of the rollout's tokens."""
    if len(rollout.old_logprobs) == 0:
        raise ValueError("empty sequence has no self-information")
    return float(-np.mean(rollout.old_logprobs))


def reshape_advantage(A: float, S: float, params: ReshapeParams, r_std: float) -> float:
    """Shrink (r0 > 0) or boost (r0 < 0) a positive advantage by S / r0, floored at A / l0.

    Non-positive advantages and closed gates (``r_std >= delta``) pass through.
    """
    if A > 0 and r_std < params.delta:
        return max(A / params.l0, A - S / params.r0)
    return A


def reshape_group(group, params: ReshapeParams):
    """Return a copy of ``group`` with ``reshaped`` advantages filled in on every rollout."""
    gate_open = group.r_std < params.delta
    token_level = params.granularity == "token"
    new_rollouts = []
    for ro in group.rollouts:
        L = len(ro.tokens)
        if token_level:
            vals = [reshape_advantage(ro.advantage, self_information_token(ro, t), params, group.r_std) for t in range(L)]
            reshaped = np.array(vals)
        else:
            a = reshape_advantage(ro.advantage, self_information_sequence(ro), params, group.r_std)
            reshaped = np.full(L, a)
        new_rollouts.append(dataclasses.replace(ro, reshaped=reshaped))
    return dataclasses.replace(group, rollouts=new_rollouts, token_level=token_level, gate_open=gate_open)


@dataclass(frozen=True)
class CovarianceTerms:
    total: float
    base: float
    entropy_term: float


def covariance_diagnostic(rollouts: Sequence[Rollout], k: float) -> CovarianceTerms:
    """Cov(log pi, pi * (A - k log pi)) split into its advantage and self-information parts.

    Covariances are plug-in (1/n) estimates over the sampled rollouts, using
    sequence probabilities under the sampling snapshot.
    """
    if len(rollouts) < 2:
        raise ValueError("covariance needs at least 2 samples")
    logp = np.array([float(np.sum(r.old_logprobs)) for r in rollouts])
    adv = np.array([r.advantage for r in rollouts])
    p = np.exp(logp)

    def cov(x, y):
        return float(np.mean((x - x.mean()) * (y - y.mean())))

    base = cov(logp, p * adv)
    ent = cov(logp, p * logp)
    return CovarianceTerms(total=base - k * ent, base=base, entropy_term=ent)


def covariance_total_direct(rollouts: Sequence[Rollout], k: float) -> float:
    """Same quantity as ``covariance_diagnostic(...).total``, evaluated without the split."""
    logp = np.array([float(np.sum(r.old_logprobs)) for r in rollouts])
    adv = np.array([r.advantage for r in rollouts])
    y = np.exp(logp) * (adv - k * logp)
    return float(np.mean((logp - logp.mean()) * (y - y.mean())))
