"""Softmax token policies: sampling, scoring, exact entropies and the clipped-surrogate gradient.

Two policy shapes are supported:

* ``TabularPolicy`` -- logits ``[state, action]``, one softmax per state.
* ``FactoredPolicy`` -- logits ``[query, position, token]``. Every position is an
  independent softmax, so ``pi(o | q) = prod_t pi(o_t | q, t)``. This keeps entropy,
  KL and gradients exact while still producing multi-token answers.

Scoring (log-probabilities, entropy, KL, gradients) is always done at temperature 1;
temperature only changes how tokens are sampled.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def _entropy_from_logp(logp: np.ndarray) -> np.ndarray:
    p = np.exp(logp)
    return -np.sum(p * logp, axis=-1)


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Single-step softmax policy, ``logits[s, a]``."""

    logits: np.ndarray

    def __post_init__(self):
        arr = np.array(self.logits, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"tabular logits must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("logits must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "logits", arr)

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    def log_probs(self) -> np.ndarray:
        return log_softmax(self.logits)

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())

    def entropy(self, state: int) -> float:
        return float(_entropy_from_logp(self.log_probs()[state]))

    def with_logits(self, logits: np.ndarray) -> "TabularPolicy":
        return TabularPolicy(logits)

    def as_factored(self) -> "FactoredPolicy":
        """View each state as a query with a single decoding position."""
        return FactoredPolicy(self.logits[:, None, :])


@dataclass(frozen=True, eq=False)
class FactoredPolicy:
    """Position-factored token policy, ``logits[q, t, v]``."""

    logits: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        arr = np.array(self.logits, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"factored logits must be 3-D (Q, L, V), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("logits must be finite")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        arr.setflags(write=False)
        object.__setattr__(self, "logits", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.logits.shape  # type: ignore[return-value]

    def log_probs(self) -> np.ndarray:
        """Scoring log-probabilities (temperature 1), shape (Q, L, V)."""
        return log_softmax(self.logits)

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())

    def sampling_log_probs(self, query: int) -> np.ndarray:
        return log_softmax(self.logits[query] / self.temperature)

    def with_logits(self, logits: np.ndarray) -> "FactoredPolicy":
        return FactoredPolicy(logits, self.temperature)

    def with_temperature(self, temperature: float) -> "FactoredPolicy":
        return FactoredPolicy(self.logits, temperature)


@dataclass
class Rollout:
    """One sampled answer for one query.

    ``old_logprobs`` are the per-token log-probabilities under the sampling
    snapshot, scored at temperature 1. ``reshaped`` holds per-token advantages
    after ECVGPO reshaping (None means "use ``advantage``").
    """

    query: int
    tokens: np.ndarray
    old_logprobs: np.ndarray
    logprobs: Optional[np.ndarray] = None
    reward: Optional[object] = None
    advantage: float = 0.0
    reshaped: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def total_reward(self) -> float:
        return float(self.reward.total) if self.reward is not None else 0.0


def sample_rollout(policy: FactoredPolicy, query: int, rng: np.random.Generator) -> Rollout:
    """Draw one token per position from ``softmax(logits / temperature)``."""
    samp_logp = policy.sampling_log_probs(query)
    cdf = np.cumsum(np.exp(samp_logp), axis=-1)
    u = rng.random(cdf.shape[0])
    tokens = np.minimum((cdf < (u * cdf[:, -1])[:, None]).sum(axis=-1), cdf.shape[1] - 1)
    score_logp = log_softmax(policy.logits[query])
    lp = score_logp[np.arange(len(tokens)), tokens]
    return Rollout(query=query, tokens=tokens.astype(np.int64), old_logprobs=lp, logprobs=lp.copy())


def token_logprobs(policy: FactoredPolicy, query: int, tokens: Sequence[int]) -> np.ndarray:
    logp = log_softmax(policy.logits[query])
    tokens = np.asarray(tokens, dtype=np.int64)
    return logp[np.arange(len(tokens)), tokens]


def sequence_logprob(policy: FactoredPolicy, rollout: Rollout) -> float:
    return float(token_logprobs(policy, rollout.query, rollout.tokens).sum())


def token_entropy(policy: FactoredPolicy, query: int, position: int) -> float:
    return float(_entropy_from_logp(log_softmax(policy.logits[query, position])))


def entropy_table(policy: FactoredPolicy) -> np.ndarray:
    """Token entropy for every (query, position), shape (Q, L)."""
    return _entropy_from_logp(policy.log_probs())


def exact_policy_entropy(policy: FactoredPolicy) -> float:
    """Mean token entropy over all query-position pairs."""
    return float(entropy_table(policy).mean())


def sampled_policy_entropy(rollouts: Sequence[Rollout]) -> float:
    if not rollouts:
        raise ValueError("need at least one rollout")
    lp = np.concatenate([r.old_logprobs for r in rollouts])
    return float(-lp.mean())


# --- clipped surrogate --------------------------------------------------------


def _check_surrogate_args(policy, group, reference, clip_eps):
    if not 0.0 < clip_eps < 1.0:
        raise ValueError(f"clip epsilon must lie in (0, 1), got {clip_eps}")
    if reference is not None and reference.logits.shape != policy.logits.shape:
        raise ValueError(f"policy shape {policy.logits.shape} != reference shape {reference.logits.shape}")
    if not group.rollouts:
        raise ValueError("empty rollout group")
    L = policy.logits.shape[1]
    for r in group.rollouts:
        if len(r.tokens) != L:
            raise ValueError(f"rollout length {len(r.tokens)} does not match policy length {L}")


def advantage_table(group, use_reshaped: bool) -> tuple[np.ndarray, bool]:
    """(N, L) advantages and whether they vary per token."""
    rows = []
    token_level = bool(use_reshaped and getattr(group, "token_level", False))
    for r in group.rollouts:
        if use_reshaped and r.reshaped is not None:
            rows.append(np.asarray(r.reshaped, dtype=np.float64))
        else:
            rows.append(np.full(len(r.tokens), float(r.advantage)))
    return np.vstack(rows), token_level


def _kl_terms(policy: FactoredPolicy, reference: FactoredPolicy, query: int):
    logp = log_softmax(policy.logits[query])
    logr = log_softmax(reference.logits[query])
    p = np.exp(logp)
    diff = logp - logr
    kl = np.sum(p * diff, axis=-1)
    return p, diff, kl


def _ratios(policy, group, adv, token_level):
    q = group.query
    tokens = np.vstack([r.tokens for r in group.rollouts])
    old = np.vstack([r.old_logprobs for r in group.rollouts])
    logp = log_softmax(policy.logits[q])
    cur = logp[np.arange(tokens.shape[1])[None, :], tokens]
    if token_level:
        ratio = np.exp(cur - old)
    else:
        ratio = np.exp(cur.sum(axis=1) - old.sum(axis=1))
        adv = adv[:, 0]
    return tokens, logp, ratio, adv


def surrogate_objective(
    policy: FactoredPolicy,
    group,
    reference: Optional[FactoredPolicy],
    beta: float,
    clip_eps: float,
    use_reshaped: bool = False,
) -> float:
    """(1/N) sum_i min(rho_i A_i, clip(rho_i) A_i) - beta * KL(pi || ref) for one query."""
    _check_surrogate_args(policy, group, reference, clip_eps)
    adv, token_level = advantage_table(group, use_reshaped)
    _, _, ratio, adv = _ratios(policy, group, adv, token_level)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    surr = np.minimum(ratio * adv, clipped * adv)
    value = surr.sum() / len(group.rollouts)
    if beta:
        if reference is None:
            raise ValueError("beta > 0 requires a reference policy")
        value -= beta * _kl_terms(policy, reference, group.query)[2].sum()
    return float(value)


def surrogate_gradient(policy: FactoredPolicy, group, config, reference: Optional[FactoredPolicy] = None) -> np.ndarray:
    """Exact gradient of :func:`surrogate_objective` with respect to ``policy.logits``.

    ``config`` supplies ``beta``, ``clip_eps`` and ``reshape`` (whether to use the
    reshaped advantages). Only the group's query row is non-zero.
    """
    beta = config.beta
    clip_eps = config.clip_eps
    use_reshaped = bool(getattr(config, "reshape", False))
    _check_surrogate_args(policy, group, reference, clip_eps)
    adv, token_level = advantage_table(group, use_reshaped)
    tokens, logp, ratio, adv = _ratios(policy, group, adv, token_level)
    n, L = tokens.shape
    q = group.query

    # the clipped branch is constant in theta; gradient flows only through rho * A
    frozen = ((ratio > 1.0 + clip_eps) & (adv > 0)) | ((ratio < 1.0 - clip_eps) & (adv < 0))
    coef = np.where(frozen, 0.0, ratio * adv) / n
    if not token_level:
        coef = np.repeat(coef[:, None], L, axis=1)

    p = np.exp(logp)
    grad_q = np.zeros_like(logp)
    np.add.at(grad_q, (np.broadcast_to(np.arange(L), tokens.shape), tokens), coef)
    grad_q -= coef.sum(axis=0)[:, None] * p

    if beta:
        if reference is None:
            raise ValueError("beta > 0 requires a reference policy")
        pk, diff, kl = _kl_terms(policy, reference, q)
        grad_q -= beta * pk * (diff - kl[:, None])

    grad = np.zeros_like(policy.logits)
    grad[q] = grad_q
    return grad


def apply_gradient_ascent(policy, gradient: np.ndarray, eta: float):
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != policy.logits.shape:
        raise ValueError(f"gradient shape {gradient.shape} != logits shape {policy.logits.shape}")
    return policy.with_logits(policy.logits + eta * gradient)


# --- snapshots ------------------------------------------------------------------


def dumps_policy(policy: FactoredPolicy) -> str:
    """Text snapshot: ``policy v1 Q L V`` then one line of V logits per (q, t)."""
    Q, L, V = policy.logits.shape
    buf = io.StringIO()
    buf.write(f"policy v1 {Q} {L} {V}\n")
    for q in range(Q):
        for t in range(L):
            buf.write(" ".join(repr(float(x)) for x in policy.logits[q, t]))
            buf.write("\n")
    return buf.getvalue()


def loads_policy(text: str, temperature: float = 1.0) -> FactoredPolicy:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty policy snapshot")
    head = lines[0].split()
    if len(head) != 5 or head[0] != "policy" or head[1] != "v1":
        raise ValueError(f"bad snapshot header: {lines[0]!r}")
    Q, L, V = (int(x) for x in head[2:])
    rows = lines[1:]
    if len(rows) != Q * L:
        raise ValueError(f"expected {Q * L} logit rows, found {len(rows)}")
    logits = np.empty((Q, L, V))
    for k, row in enumerate(rows):
        vals = row.split()
        if len(vals) != V:
            raise ValueError(f"row {k + 1}: expected {V} values, found {len(vals)}")
        logits[k // L, k % L] = [float(v) for v in vals]
    return FactoredPolicy(logits, temperature)


def save_policy(policy: FactoredPolicy, path) -> None:
    Path(path).write_text(dumps_policy(policy))


def load_policy(path, temperature: float = 1.0) -> FactoredPolicy:
    return loads_policy(Path(path).read_text(), temperature)
