"""Synthetic environments for the two reward regimes.

* ``GroundingEnv`` -- emit a box in the answer template; reward is format + IoU
  against a ground truth that is jittered per episode (annotation noise).
* ``ReasoningEnv`` -- same vocabulary and template, but reward 1 only for the
  exact target sequence.
* ``NumericBanditEnv`` -- one-step choice of an integer with the linearly
  decaying reward ``max(0, 1 - lam * |a - target|)``.

All sequence environments share the 11-token template::

    <think> noun </think> <answer> { x1 y1 x2 y2 } </answer>
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import BoundingBox, iou_arrays
from .policy import FactoredPolicy, log_softmax
from .rewards import (
    ANSWER_CLOSE,
    ANSWER_OPEN,
    BRACE_CLOSE,
    BRACE_OPEN,
    NOUN,
    NUMERIC,
    STRUCTURAL,
    THINK_CLOSE,
    THINK_OPEN,
    RewardBreakdown,
    Vocabulary,
    accuracy_reward,
    extract_box,
    format_reward,
    numeric_decay_reward,
)

TEMPLATE_SLOTS = (
    STRUCTURAL, NOUN, STRUCTURAL, STRUCTURAL, STRUCTURAL,
    NUMERIC, NUMERIC, NUMERIC, NUMERIC,
    STRUCTURAL, STRUCTURAL,
)
ANSWER_POSITIONS = (5, 6, 7, 8)
TEMPLATE_LENGTH = len(TEMPLATE_SLOTS)


@dataclass(frozen=True)
class PriorSpec:
    """Shape of the warm-start logits that stand in for a pretrained model.

    Structural slots get ``structural`` on the template tag. The think slot gets
    ``class_bonus`` on every noun plus ``noun`` on the query's noun. Answer slots get
    ``class_bonus`` on every number minus ``slope * |v - hint|``.
    """

    structural: float = 6.5
    noun: float = 1.5
    class_bonus: float = 5.0
    slope: float = 2.0


@dataclass(frozen=True)
class EvalResult:
    mean_score: float
    exact_match: float


class SequenceEnv:
    """Shared template, vocabulary and warm-start prior of the sequence environments."""

    kind = "sequence"

    def __init__(self, grid: int, n_nouns: int):
        self.grid = grid
        self.vocab = Vocabulary(n_nouns=n_nouns, max_number=grid)
        self.seq_len = TEMPLATE_LENGTH
        self.slot_classes = list(TEMPLATE_SLOTS)
        self.answer_positions = ANSWER_POSITIONS

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def token_classes(self) -> list[str]:
        return self.vocab.classes

    @property
    def n_queries(self) -> int:
        raise NotImplementedError

    def reference_completion(self, query: int) -> list[int]:
        raise NotImplementedError

    def _completion(self, noun: int, numbers: Sequence[int]) -> list[int]:
        toks = [THINK_OPEN, f"noun_{noun}", THINK_CLOSE, ANSWER_OPEN, BRACE_OPEN,
                *(str(v) for v in numbers), BRACE_CLOSE, ANSWER_CLOSE]
        return self.vocab.ids(toks)

    def initial_policy(self, prior: Optional[PriorSpec] = None, temperature: float = 1.0) -> FactoredPolicy:
        prior = prior or PriorSpec()
        V = self.vocab_size
        nouns = np.array(self.vocab.members(NOUN))
        numbers = np.arange(self.grid + 1)
        number_ids = np.array([self.vocab.number(v) for v in numbers])
        logits = np.zeros((self.n_queries, self.seq_len, V))
        for q in range(self.n_queries):
            ref = self.reference_completion(q)
            for t, cls in enumerate(self.slot_classes):
                if cls == STRUCTURAL:
                    logits[q, t, ref[t]] += prior.structural
                elif cls == NOUN:
                    logits[q, t, nouns] += prior.class_bonus
                    logits[q, t, ref[t]] += prior.noun
                else:
                    hint = int(self.vocab.tokens[ref[t]])
                    logits[q, t, number_ids] += prior.class_bonus - prior.slope * np.abs(numbers - hint)
        return FactoredPolicy(logits, temperature)

    def answer_candidates(self) -> np.ndarray:
        """Every combination of numbers in the four answer slots, shape (K, 4)."""
        n = self.grid + 1
        return np.array(list(itertools.product(range(n), repeat=4)), dtype=np.int64)

    def candidate_logprobs(self, policy: FactoredPolicy, query: int, candidates: np.ndarray) -> np.ndarray:
        """log pi of the answer-slot numbers of each candidate (other slots ignored)."""
        logp = log_softmax(policy.logits[query])
        ids = np.array([self.vocab.number(v) for v in range(self.grid + 1)])
        out = np.zeros(len(candidates))
        for j, t in enumerate(self.answer_positions):
            out += logp[t, ids[candidates[:, j]]]
        return out

    def greedy_tokens(self, policy: FactoredPolicy, query: int) -> np.ndarray:
        return np.argmax(policy.logits[query], axis=-1)


@dataclass(frozen=True)
class GroundingQuery:
    box: BoundingBox
    noun: int


class GroundingEnv(SequenceEnv):
    kind = "grounding"

    def __init__(
        self,
        grid: int = 16,
        n_queries: int = 8,
        jitter: int = 1,
        n_nouns: int = 8,
        min_side: int = 4,
        seed: int = 0,
        queries: Optional[Sequence[GroundingQuery]] = None,
    ):
        super().__init__(grid, n_nouns)
        if jitter < 0:
            raise ValueError(f"jitter must be >= 0, got {jitter}")
        if not 1 <= min_side <= grid:
            raise ValueError(f"min_side must lie in [1, grid], got {min_side}")
        self.jitter = jitter
        if queries is None:
            rng = np.random.default_rng([seed, 0x6E7])
            queries = [self._random_query(rng, min_side) for _ in range(n_queries)]
        if not queries:
            raise ValueError("grounding environment needs at least one query")
        for qu in queries:
            if not qu.box.within(grid):
                raise ValueError(f"query box {qu.box.as_tuple()} outside grid {grid}")
        self.queries = list(queries)
        self._jittered = [self._valid_jitters(qu.box) for qu in self.queries]

    def _random_query(self, rng, min_side):
        G = self.grid
        w = int(rng.integers(min_side, G + 1))
        h = int(rng.integers(min_side, G + 1))
        x1 = int(rng.integers(0, G - w + 1))
        y1 = int(rng.integers(0, G - h + 1))
        return GroundingQuery(BoundingBox(x1, y1, x1 + w, y1 + h), int(rng.integers(self.vocab.n_nouns)))

    def _valid_jitters(self, box: BoundingBox) -> np.ndarray:
        j = self.jitter
        base = np.array(box.as_tuple())
        out = []
        for d in itertools.product(range(-j, j + 1), repeat=4):
            b = base + d
            if BoundingBox.maybe(*b, grid=self.grid) is not None:
                out.append(b)
        return np.array(out, dtype=np.int64)

    @property
    def n_queries(self) -> int:
        return len(self.queries)

    def reference_completion(self, query: int) -> list[int]:
        qu = self.queries[query]
        return self._completion(qu.noun, qu.box.as_tuple())

    def jittered_boxes(self, query: int) -> np.ndarray:
        """All ground-truth boxes the annotation noise can produce (uniformly likely)."""
        return self._jittered[query]

    def sample_gt(self, query: int, rng: np.random.Generator) -> BoundingBox:
        boxes = self._jittered[query]
        return BoundingBox(*(int(v) for v in boxes[rng.integers(len(boxes))]))

    def score(self, query: int, tokens, rng: np.random.Generator) -> RewardBreakdown:
        return grounding_reward(self, query, tokens, rng)

    def clean_score(self, query: int, tokens) -> float:
        box = extract_box(self.vocab.decode(tokens), self.grid)
        return accuracy_reward(box, self.queries[query].box)

    def candidate_rewards(self, query: int, candidates: np.ndarray, noisy: bool = True) -> np.ndarray:
        """Total reward (format + IoU) of each answer candidate, averaged over annotation noise."""
        valid = (candidates[:, 0] < candidates[:, 2]) & (candidates[:, 1] < candidates[:, 3])
        gts = self._jittered[query] if noisy else np.array([self.queries[query].box.as_tuple()])
        acc = np.zeros(len(candidates))
        vc = candidates[valid]
        acc_valid = np.zeros(len(vc))
        for gt in gts:
            acc_valid += iou_arrays(vc, gt[None, :])
        acc[valid] = acc_valid / len(gts)
        return 1.0 + acc

    def expected_clean_score(self, policy: FactoredPolicy, query: int) -> float:
        """Exact expected clean IoU of a temperature-1 sample from ``policy``."""
        logp = log_softmax(policy.logits[query])
        p = np.exp(logp)
        ref = self.reference_completion(query)
        structural = set(self.vocab.members(STRUCTURAL))
        fmt = 1.0
        for t, cls in enumerate(self.slot_classes):
            if cls == STRUCTURAL:
                fmt *= p[t, ref[t]]
            elif cls == NOUN:
                fmt *= sum(p[t, v] for v in range(self.vocab_size) if v not in structural)
        ids = np.array([self.vocab.number(v) for v in range(self.grid + 1)])
        n = self.grid + 1
        px1, py1, px2, py2 = (p[t, ids] for t in self.answer_positions)
        x1, y1, x2, y2 = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        weights = px1[:, None, None, None] * py1[None, :, None, None] * px2[None, None, :, None] * py2[None, None, None, :]
        boxes = np.stack([x1, y1, x2, y2], axis=-1)
        valid = (x1 < x2) & (y1 < y2)
        gt = np.array(self.queries[query].box.as_tuple())
        scores = np.zeros(valid.shape)
        scores[valid] = iou_arrays(boxes[valid], gt[None, :])
        return float(fmt * np.sum(weights * scores))


class ReasoningEnv(SequenceEnv):
    kind = "reasoning"

    def __init__(
        self,
        grid: int = 16,
        n_queries: int = 8,
        n_nouns: int = 8,
        seed: int = 0,
        targets: Optional[Sequence[Sequence[int]]] = None,
    ):
        super().__init__(grid, n_nouns)
        if targets is None:
            rng = np.random.default_rng([seed, 0x2EA])
            targets = [
                self._completion(int(rng.integers(n_nouns)), rng.integers(0, grid + 1, size=4))
                for _ in range(n_queries)
            ]
        if not targets:
            raise ValueError("reasoning environment needs at least one target sequence")
        for tgt in targets:
            if len(tgt) != self.seq_len or not all(0 <= int(v) < self.vocab_size for v in tgt):
                raise ValueError(f"target {list(tgt)} is not a length-{self.seq_len} sequence over the vocabulary")
        self.targets = [np.asarray(t, dtype=np.int64) for t in targets]

    @property
    def n_queries(self) -> int:
        return len(self.targets)

    def reference_completion(self, query: int) -> list[int]:
        return [int(v) for v in self.targets[query]]

    def score(self, query: int, tokens, rng: Optional[np.random.Generator] = None) -> RewardBreakdown:
        return reasoning_reward_env(self, query, tokens)

    def clean_score(self, query: int, tokens) -> float:
        return float(np.array_equal(np.asarray(tokens), self.targets[query]))

    def candidate_rewards(self, query: int, candidates: np.ndarray, noisy: bool = True) -> np.ndarray:
        target = [int(self.vocab.tokens[self.targets[query][t]]) for t in self.answer_positions]
        return np.all(candidates == np.array(target)[None, :], axis=1).astype(np.float64)

    def expected_clean_score(self, policy: FactoredPolicy, query: int) -> float:
        logp = log_softmax(policy.logits[query])
        return float(np.exp(logp[np.arange(self.seq_len), self.targets[query]].sum()))


class NumericBanditEnv:
    """One query, one position; token ``a`` is the integer answer ``a``."""

    kind = "numeric"

    def __init__(self, max_action: int = 40, target: int = 20, lam: float = 0.05):
        if not 0 <= target <= max_action:
            raise ValueError(f"target {target} outside [0, {max_action}]")
        if not lam > 0:
            raise ValueError(f"decay rate must be positive, got {lam}")
        self.max_action = max_action
        self.target = target
        self.lam = lam
        self.seq_len = 1
        self.vocab_size = max_action + 1
        self.slot_classes = [NUMERIC]
        self.token_classes = [NUMERIC] * self.vocab_size
        self.answer_positions = (0,)

    @property
    def n_queries(self) -> int:
        return 1

    def reference_completion(self, query: int) -> list[int]:
        return [self.target]

    def initial_policy(self, prior=None, temperature: float = 1.0) -> FactoredPolicy:
        return FactoredPolicy(np.zeros((1, 1, self.vocab_size)), temperature)

    def score(self, query: int, tokens, rng=None) -> RewardBreakdown:
        return RewardBreakdown(accuracy=numeric_reward_env(self, int(tokens[0])), format=0)

    def clean_score(self, query: int, tokens) -> float:
        return numeric_reward_env(self, int(tokens[0]))

    def answer_candidates(self) -> np.ndarray:
        return np.arange(self.vocab_size)[:, None]

    def candidate_rewards(self, query: int, candidates: np.ndarray, noisy: bool = True) -> np.ndarray:
        return np.array([numeric_reward_env(self, int(a)) for a in candidates[:, 0]])

    def candidate_logprobs(self, policy: FactoredPolicy, query: int, candidates: np.ndarray) -> np.ndarray:
        return log_softmax(policy.logits[query, 0])[candidates[:, 0]]

    def greedy_tokens(self, policy: FactoredPolicy, query: int) -> np.ndarray:
        return np.argmax(policy.logits[query], axis=-1)

    def expected_clean_score(self, policy: FactoredPolicy, query: int) -> float:
        p = np.exp(log_softmax(policy.logits[query, 0]))
        r = self.candidate_rewards(query, self.answer_candidates())
        return float(p @ r)


def grounding_reward(env: GroundingEnv, query: int, tokens, rng: np.random.Generator) -> RewardBreakdown:
    """Format reward plus IoU against a freshly jittered ground-truth box."""
    gt = env.sample_gt(query, rng)
    strings = env.vocab.decode(tokens)
    fmt = format_reward(strings)
    acc = accuracy_reward(extract_box(strings, env.grid), gt)
    return RewardBreakdown(accuracy=acc, format=fmt)


def reasoning_reward_env(env: ReasoningEnv, query: int, tokens) -> RewardBreakdown:
    hit = np.array_equal(np.asarray(tokens, dtype=np.int64), env.targets[query])
    return RewardBreakdown(accuracy=float(hit), format=0)


def numeric_reward_env(env: NumericBanditEnv, action: int) -> float:
    if not 0 <= action <= env.max_action:
        raise ValueError(f"action {action} outside [0, {env.max_action}]")
    return numeric_decay_reward(action, env.target, env.lam)


def evaluate_policy(env, policy: FactoredPolicy, eval_mode: str = "greedy") -> EvalResult:
    """Score ``policy`` against clean ground truth.

    ``greedy`` decodes the argmax token at every position; ``expected`` returns the
    exact expected clean score of a temperature-1 sample.
    """
    scores, hits = [], []
    for q in range(env.n_queries):
        if eval_mode == "greedy":
            toks = env.greedy_tokens(policy, q)
            scores.append(env.clean_score(q, toks))
            hits.append(float(list(toks) == env.reference_completion(q)))
        elif eval_mode == "expected":
            scores.append(env.expected_clean_score(policy, q))
            logp = log_softmax(policy.logits[q])
            ref = env.reference_completion(q)
            hits.append(float(np.exp(logp[np.arange(len(ref)), ref].sum())))
        else:
            raise ValueError(f"unknown eval mode {eval_mode!r}")
    return EvalResult(mean_score=float(np.mean(scores)), exact_match=float(np.mean(hits)))
