"""Per-step telemetry records and their CSV encoding."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..entropy_lab import high_entropy_token_report, token_class_probability
from ..envs import evaluate_policy
from ..grpo import kl_to_reference
from ..policy import exact_policy_entropy, sampled_policy_entropy


@dataclass
class StepRecord:
    step: int
    entropy_exact: float
    entropy_sampled: float
    reward_mean: float
    reward_std: float
    r_std: float
    gate_open_frac: float
    self_info_positive: float
    kl_ref: float
    n_positive: int
    p_numeric: float
    p_other: float
    high_entropy_count: int
    eval_score: float


COLUMNS = [f.name for f in fields(StepRecord)]
INT_COLUMNS = {"step", "n_positive", "high_entropy_count"}


def make_record(step: int, policy, reference, env, groups) -> StepRecord:
    """Summarize the policy that sampled ``groups`` and the groups themselves.

    Token-class probabilities and the positive-sample self-information are 0.0
    when no rollout in the step has a positive advantage (``n_positive`` = 0).
    """
    rollouts = [r for g in groups for r in g.rollouts]
    positive = [r for r in rollouts if r.advantage > 0]
    split = token_class_probability(rollouts, env.token_classes)
    p_num, p_other = split if split is not None else (0.0, 0.0)
    self_info = float(np.mean([-np.mean(r.old_logprobs) for r in positive])) if positive else 0.0
    return StepRecord(
        step=step,
        entropy_exact=exact_policy_entropy(policy),
        entropy_sampled=sampled_policy_entropy(rollouts),
        reward_mean=float(np.mean([g.reward_mean for g in groups])),
        reward_std=float(np.mean([g.reward_std for g in groups])),
        r_std=float(np.mean([g.r_std for g in groups])),
        gate_open_frac=float(np.mean([g.gate_open for g in groups])),
        self_info_positive=self_info,
        kl_ref=float(np.mean([kl_to_reference(policy, reference, g.query) for g in groups])),
        n_positive=len(positive),
        p_numeric=p_num,
        p_other=p_other,
        high_entropy_count=high_entropy_token_report(policy, 2.0, env.slot_classes).total,
        eval_score=evaluate_policy(env, policy).mean_score,
    )


def format_value(name: str, value) -> str:
    if name in INT_COLUMNS:
        return str(int(value))
    return format(float(value), ".17g")


def records_to_csv(records) -> str:
    buf = io.StringIO()
    buf.write(",".join(COLUMNS) + "\n")
    for rec in records:
        row = asdict(rec)
        for name in COLUMNS:
            if name not in INT_COLUMNS and not math.isfinite(row[name]):
                raise ValueError(f"step {rec.step}: non-finite {name}")
        buf.write(",".join(format_value(n, row[n]) for n in COLUMNS) + "\n")
    return buf.getvalue()


def write_csv(records, path) -> None:
    Path(path).write_text(records_to_csv(records))


def read_csv(path, required=COLUMNS) -> dict[str, np.ndarray]:
    """Load a telemetry CSV into column arrays; missing columns raise ``KeyError``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty telemetry file") from None
        rows = [row for row in reader if row]
    for name in required:
        if name not in header:
            raise KeyError(f"{path}: missing column {name!r}")
    data = {}
    for j, name in enumerate(header):
        data[name] = np.array([float(row[j]) for row in rows], dtype=np.float64)
    return data
