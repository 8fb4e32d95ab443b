"""Verifiable rewards: IoU accuracy, template format check, binary and decaying numeric rewards."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .geometry import BoundingBox, iou

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
ANSWER_OPEN = "<answer>"
ANSWER_CLOSE = "</answer>"
BRACE_OPEN = "{"
BRACE_CLOSE = "}"

STRUCTURAL_TAGS = (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, BRACE_OPEN, BRACE_CLOSE, ANSWER_CLOSE)

STRUCTURAL = "structural"
NOUN = "noun"
NUMERIC = "numeric"


def is_numeric_token(tok: str) -> bool:
    return tok.isdigit()


@dataclass(frozen=True)
class RewardBreakdown:
    accuracy: float
    format: int

    def __post_init__(self):
        if self.format not in (0, 1):
            raise ValueError(f"format reward must be 0 or 1, got {self.format}")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy reward out of [0, 1]: {self.accuracy}")

    @property
    def total(self) -> float:
        return self.accuracy + self.format


class Vocabulary:
    """Token strings with a structural / noun / numeric partition.

    Numeric tokens are the decimal strings ``"0" .. str(max_number)``.
    """

    def __init__(self, n_nouns: int, max_number: int):
        if n_nouns < 1 or max_number < 1:
            raise ValueError("vocabulary needs at least one noun and numbers 0..1")
        self.n_nouns = n_nouns
        self.max_number = max_number
        self.tokens: list[str] = (
            list(STRUCTURAL_TAGS)
            + [f"noun_{k}" for k in range(n_nouns)]
            + [str(v) for v in range(max_number + 1)]
        )
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        self.classes: list[str] = [self.classify(tok) for tok in self.tokens]

    def __len__(self) -> int:
        return len(self.tokens)

    @staticmethod
    def classify(tok: str) -> str:
        if tok in STRUCTURAL_TAGS:
            return STRUCTURAL
        if is_numeric_token(tok):
            return NUMERIC
        return NOUN

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.index[t] for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.tokens[int(i)] for i in ids]

    def noun(self, k: int) -> int:
        return self.index[f"noun_{k}"]

    def number(self, v: int) -> int:
        return self.index[str(v)]

    def members(self, cls: str) -> list[int]:
        return [i for i, c in enumerate(self.classes) if c == cls]


def _answer_numbers(tokens: Sequence[str]) -> Optional[list[int]]:
    """Return the four answer-slot numbers if ``tokens`` matches the template, else None."""
    toks = list(tokens)
    if len(toks) < 10 or toks[0] != THINK_OPEN:
        return None
    try:
        close = toks.index(THINK_CLOSE)
    except ValueError:
        return None
    if any(t in STRUCTURAL_TAGS for t in toks[1:close]):
        return None
    tail = toks[close + 1:]
    if len(tail) != 8:
        return None
    if tail[0] != ANSWER_OPEN or tail[1] != BRACE_OPEN or tail[6] != BRACE_CLOSE or tail[7] != ANSWER_CLOSE:
        return None
    nums = tail[2:6]
    if not all(is_numeric_token(t) for t in nums):
        return None
    return [int(t) for t in nums]


def format_reward(tokens: Sequence[str]) -> int:
    """1 iff ``<think> ... </think> <answer> { n n n n } </answer>``, else 0."""
    return int(_answer_numbers(tokens) is not None)


def extract_box(tokens: Sequence[str], grid: int) -> Optional[BoundingBox]:
    nums = _answer_numbers(tokens)
    if nums is None:
        return None
    return BoundingBox.maybe(*nums, grid=grid)


def accuracy_reward(predicted: Optional[BoundingBox], gt: BoundingBox) -> float:
    if predicted is None:
        return 0.0
    return iou(predicted, gt)


def reasoning_reward(answer: int, target: int) -> int:
    return int(answer == target)


def numeric_decay_reward(answer: int, target: int, lam: float) -> float:
    """max(0, 1 - lam * |answer - target|)."""
    if not lam > 0:
        raise ValueError(f"decay rate must be positive, got {lam}")
    return max(0.0, 1.0 - lam * abs(answer - target))
