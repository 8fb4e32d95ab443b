"""Experiment drivers behind the CLI subcommands.

Every run is a pure function of its config and seed: rollout streams are keyed
by ``(seed, step, query, rollout index)``, so arms and seeds can be run in any
order (or in parallel) without changing a single output byte. Arms of a
comparison share seeds, giving paired runs.
"""

from __future__ import annotations

import copy
import json
import math
import shutil
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..entropy_lab import verify_theorem
from ..grpo import train_step
from ..policy import save_policy
from .config import ExperimentConfig
from .telemetry import StepRecord, write_csv


def prepare_out(out: Path, overwrite: bool) -> Path:
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise FileExistsError(f"output directory {out} is not empty (pass --overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def train(cfg: ExperimentConfig, seed: int, checkpoint=None):
    """Run ``cfg.train.steps`` steps; returns ``(records, final_policy, initial_policy)``."""
    tcfg = replace(cfg.train, seed=seed).validate()
    env = cfg.env.build()
    policy = env.initial_policy(cfg.env.prior(), tcfg.temperature)
    reference = policy
    records: list[StepRecord] = []
    for step in range(tcfg.steps):
        if checkpoint is not None:
            checkpoint(step, policy)
        policy, rec, _ = train_step(policy, reference, env, tcfg, step)
        records.append(rec)
    return records, policy, reference


def run_training(cfg: ExperimentConfig, seed: int, out, overwrite: bool = False) -> list[StepRecord]:
    """Write ``telemetry.csv``, periodic snapshots and ``policy_final.txt`` under ``out``."""
    cfg.validate()
    out = prepare_out(Path(out), overwrite)
    snaps = out / "snapshots"
    snaps.mkdir()
    every = cfg.experiment.checkpoint_every

    def checkpoint(step, policy):
        if step % every == 0:
            save_policy(policy, snaps / f"step_{step:05d}.txt")

    (out / "config.txt").write_text(cfg.dumps())
    records, final, initial = train(cfg, seed, checkpoint)
    if not records:
        save_policy(initial, snaps / "step_00000.txt")
    write_csv(records, out / "telemetry.csv")
    save_policy(final, out / "policy_final.txt")
    return records


@dataclass(frozen=True)
class ArmSummary:
    name: str
    final_entropies: list
    initial_entropy: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.final_entropies))

    @property
    def stderr(self) -> float:
        n = len(self.final_entropies)
        return float(np.std(self.final_entropies, ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    def as_dict(self) -> dict:
        return {
            "arm": self.name,
            "final_entropies": self.final_entropies,
            "final_mean": self.mean,
            "final_stderr": self.stderr,
            "initial_entropy": self.initial_entropy,
        }


def final_window(records: Sequence[StepRecord], column: str = "entropy_exact", frac: float = 0.1) -> float:
    """Mean of ``column`` over the last ``frac`` of steps (at least one step)."""
    if not records:
        raise ValueError("no steps recorded")
    w = max(1, int(round(len(records) * frac)))
    return float(np.mean([getattr(r, column) for r in records[-w:]]))


def _run_arm(name, cfg, seeds, out, overwrite):
    finals, initial, runs = [], float("nan"), {}
    for seed in seeds:
        target = None if out is None else Path(out) / name / f"seed_{seed}"
        if target is None:
            records = train(cfg, seed)[0]
        else:
            records = run_training(cfg, seed, target, overwrite)
        runs[seed] = records
        finals.append(final_window(records))
        initial = records[0].entropy_exact
    return ArmSummary(name, finals, initial), runs


def _arm_config(base: ExperimentConfig, **changes) -> ExperimentConfig:
    cfg = copy.deepcopy(base)
    for section, values in changes.items():
        setattr(cfg, section, replace(getattr(cfg, section), **values))
    return cfg.validate()


def _write_summary(out, payload) -> None:
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "summary.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_compare_rewards(cfg: ExperimentConfig, out=None, overwrite: bool = False, arms=("reasoning", "grounding")):
    """Paired entropy curves for the binary-reward and the IoU-reward regimes.

    Returns ``(summaries, runs)`` keyed by arm name.
    """
    cfg.validate()
    seeds = cfg.experiment.seeds
    if len(seeds) < 2:
        raise ValueError("compare-rewards needs at least 2 seeds")
    if out is not None:
        prepare_out(Path(out), overwrite)
    summaries, runs = {}, {}
    for kind in arms:
        arm_cfg = _arm_config(cfg, env={"kind": kind})
        summaries[kind], runs[kind] = _run_arm(kind, arm_cfg, seeds, out, overwrite)
    payload = {"seeds": list(seeds), "arms": [s.as_dict() for s in summaries.values()]}
    if "reasoning" in summaries and "grounding" in summaries:
        r, g = summaries["reasoning"], summaries["grounding"]
        payload["grounding_over_reasoning"] = g.mean / r.mean if r.mean > 0 else float("inf")
        payload["reasoning_final_over_initial"] = r.mean / r.initial_entropy
    _write_summary(out, payload)
    return summaries, runs


def arm_name(r0: Optional[float]) -> str:
    return "off" if r0 is None else f"r0_{r0:g}"


def sweep_verdict(summaries: dict) -> Optional[dict]:
    """Check entropy(r0 > 0) < entropy(off) < entropy(r0 < 0), each gap above the combined stderr.

    Uses the positive and negative arms closest to the identity (largest |r0|).
    Returns None unless the sweep has an "off" arm and arms of both signs.
    """
    pos = [r0 for r0 in summaries if r0 is not None and r0 > 0]
    neg = [r0 for r0 in summaries if r0 is not None and r0 < 0]
    if None not in summaries or not pos or not neg:
        return None
    p, o, n = summaries[min(pos)], summaries[None], summaries[max(neg)]
    gap_lo = o.mean - p.mean
    gap_hi = n.mean - o.mean
    se_lo = math.hypot(o.stderr, p.stderr)
    se_hi = math.hypot(n.stderr, o.stderr)
    return {
        "order": [p.name, o.name, n.name],
        "means": [p.mean, o.mean, n.mean],
        "gap_low": gap_lo,
        "gap_high": gap_hi,
        "stderr_low": se_lo,
        "stderr_high": se_hi,
        "ordered": bool(gap_lo > se_lo and gap_hi > se_hi),
    }


def run_sweep_r0(cfg: ExperimentConfig, out=None, overwrite: bool = False, r0_values=None):
    """One arm per r0 value (None = plain GRPO) on the same seeds.

    Returns ``(summaries keyed by r0, verdict or None, runs keyed by r0)``.
    """
    cfg.validate()
    r0_values = list(cfg.experiment.r0_values if r0_values is None else r0_values)
    for r0 in r0_values:
        if r0 is not None and not abs(r0) > 1:
            raise ValueError(f"invalid r0 {r0}: |r0| must exceed 1")
    if out is not None:
        prepare_out(Path(out), overwrite)
    summaries, runs = {}, {}
    for r0 in r0_values:
        train_changes = {"reshape": False} if r0 is None else {"reshape": True, "r0": float(r0)}
        arm_cfg = _arm_config(cfg, train=train_changes)
        summaries[r0], runs[r0] = _run_arm(arm_name(r0), arm_cfg, cfg.experiment.seeds, out, overwrite)
    verdict = sweep_verdict(summaries)
    _write_summary(out, {
        "seeds": list(cfg.experiment.seeds),
        "arms": [s.as_dict() for s in summaries.values()],
        "verdict": verdict,
    })
    return summaries, verdict, runs


def run_verify_theorem(cfg: ExperimentConfig, seed: int = 0, out=None, overwrite: bool = False):
    ex = cfg.experiment
    report = verify_theorem(ex.instances, ex.eta, np.random.default_rng([seed, 0x7E0]))
    if out is not None:
        prepare_out(Path(out), overwrite)
        (Path(out) / "theorem.json").write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
    return report
