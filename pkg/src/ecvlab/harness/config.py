"""Experiment configuration: named presets plus a ``key = value`` file with sections.

Example::

    [experiment]
    preset = grounding
    seeds = 0..4

    [train]
    lr = 1.0
    steps = 320

    [env]
    jitter = 1

Values from the file override the preset. Unknown sections or keys are errors.
``inf`` is accepted for ``delta``; ``off`` is accepted for ``r0`` (disables reshaping).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from ..envs import GroundingEnv, NumericBanditEnv, PriorSpec, ReasoningEnv
from ..grpo import ConfigError, TrainConfig

ENV_KINDS = ("grounding", "reasoning", "numeric")


@dataclass
class EnvConfig:
    kind: str = "grounding"
    grid: int = 16
    queries: int = 8
    jitter: int = 1
    nouns: int = 8
    min_side: int = 4
    seed: int = 0
    prior_structural: float = PriorSpec.structural
    prior_noun: float = PriorSpec.noun
    prior_class_bonus: float = PriorSpec.class_bonus
    prior_slope: float = PriorSpec.slope
    max_action: int = 40
    target: int = 20
    decay: float = 0.05

    def validate(self) -> "EnvConfig":
        checks = [
            ("kind", self.kind in ENV_KINDS, f"must be one of {', '.join(ENV_KINDS)}"),
            ("grid", self.grid >= 1, "must be >= 1"),
            ("queries", self.queries >= 1, "must be >= 1"),
            ("jitter", self.jitter >= 0, "must be >= 0"),
            ("nouns", self.nouns >= 1, "must be >= 1"),
            ("min_side", 1 <= self.min_side <= self.grid, "must lie in [1, grid]"),
            ("seed", self.seed >= 0, "must be >= 0"),
            ("max_action", self.max_action >= 1, "must be >= 1"),
            ("target", 0 <= self.target <= self.max_action, "must lie in [0, max_action]"),
            ("decay", self.decay > 0, "must be > 0"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(f"env.{key}", f"{msg} (got {getattr(self, key)!r})")
        return self

    def prior(self) -> PriorSpec:
        return PriorSpec(self.prior_structural, self.prior_noun, self.prior_class_bonus, self.prior_slope)

    def build(self):
        self.validate()
        if self.kind == "grounding":
            return GroundingEnv(grid=self.grid, n_queries=self.queries, jitter=self.jitter,
                                n_nouns=self.nouns, min_side=self.min_side, seed=self.seed)
        if self.kind == "reasoning":
            return ReasoningEnv(grid=self.grid, n_queries=self.queries, n_nouns=self.nouns, seed=self.seed)
        return NumericBanditEnv(max_action=self.max_action, target=self.target, lam=self.decay)


@dataclass
class ExperimentSettings:
    preset: str = "default"
    seeds: list = field(default_factory=lambda: [0])
    r0_values: list = field(default_factory=lambda: [10.0, None, -50.0])
    checkpoint_every: int = 50
    delta_adv: float = 0.1
    instances: int = 200
    eta: float = 1e-3
    out: str = ""


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)

    def validate(self) -> "ExperimentConfig":
        self.train.validate()
        self.env.validate()
        ex = self.experiment
        if ex.checkpoint_every < 1:
            raise ConfigError("experiment.checkpoint_every", "must be >= 1")
        if not ex.seeds:
            raise ConfigError("experiment.seeds", "need at least one seed")
        if any(s < 0 for s in ex.seeds):
            raise ConfigError("experiment.seeds", "seeds must be >= 0")
        for r0 in ex.r0_values:
            if r0 is not None and not abs(r0) > 1:
                raise ConfigError("experiment.r0_values", f"|r0| must be > 1 (got {r0})")
        if ex.instances < 10:
            raise ConfigError("experiment.instances", "must be >= 10")
        if not ex.eta >= 0:
            raise ConfigError("experiment.eta", "must be >= 0")
        return self

    def dumps(self) -> str:
        """Canonical text rendering; parsing it back yields an equal config."""
        lines = ["[experiment]"]
        ex = self.experiment
        lines.append(f"preset = {ex.preset}")
        lines.append(f"seeds = {', '.join(str(s) for s in ex.seeds)}")
        lines.append(f"r0_values = {', '.join(_render(v) for v in ex.r0_values)}")
        for key in ("checkpoint_every", "delta_adv", "instances", "eta"):
            lines.append(f"{key} = {_render(getattr(ex, key))}")
        if ex.out:
            lines.append(f"out = {ex.out}")
        for section, obj in (("train", self.train), ("env", self.env)):
            lines.append("")
            lines.append(f"[{section}]")
            for f in fields(obj):
                lines.append(f"{f.name} = {_render(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"


def _render(value) -> str:
    if value is None:
        return "off"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


# --- presets ------------------------------------------------------------------------

# lr = 1e-6 targets billion-parameter models; kept for reference, stalls a tabular run.
LARGE_MODEL_TRAIN = dict(rollouts=8, temperature=1.0, iterations=1, beta=0.04, lr=1e-6, queries_per_batch=4, l0=25.0)

TOY_TRAIN = dict(rollouts=8, temperature=1.0, iterations=1, beta=0.04, lr=1.0, steps=320, queries_per_batch=4)

PRESETS: dict[str, dict] = {
    "default": {},
    "large-model": {"train": LARGE_MODEL_TRAIN},
    "grounding": {"train": TOY_TRAIN, "env": {"kind": "grounding"}},
    "reasoning": {"train": TOY_TRAIN, "env": {"kind": "reasoning"}},
    "compare": {"train": TOY_TRAIN, "experiment": {"seeds": [0, 1, 2, 3, 4]}},
    "sweep-r0": {
        "train": dict(TOY_TRAIN, granularity="token"),
        "env": {"kind": "grounding"},
        "experiment": {"seeds": [0, 1, 2, 3, 4], "r0_values": [10.0, None, -50.0]},
    },
    "numeric": {"train": dict(TOY_TRAIN, queries_per_batch=1), "env": {"kind": "numeric"}},
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError("experiment.preset", f"unknown preset {name!r} (known: {', '.join(PRESETS)})")
    spec = PRESETS[name]
    cfg = ExperimentConfig()
    cfg.train = replace(cfg.train, **spec.get("train", {}))
    cfg.env = replace(cfg.env, **spec.get("env", {}))
    cfg.experiment = replace(cfg.experiment, preset=name, **spec.get("experiment", {}))
    return cfg


# --- parsing ------------------------------------------------------------------------


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0..4"`` (inclusive) or ``"1, 5, 9"``."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo_i, hi_i = int(lo), int(hi)
            if hi_i < lo_i:
                raise ValueError
            return list(range(lo_i, hi_i + 1))
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError("experiment.seeds", f"cannot parse seed list {text!r}") from None


def _parse_r0(tok: str):
    tok = tok.strip().lower()
    if tok in ("off", "none"):
        return None
    return float(tok)


def _coerce(key: str, raw: str, current):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {type(current).__name__}") from None


def parse_text(text: str) -> ExperimentConfig:
    sections: dict[str, dict[str, tuple[int, str]]] = {}
    current: Optional[str] = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            if current not in ("train", "env", "experiment"):
                raise ConfigError(current, f"line {lineno}: unknown section [{current}]")
            sections.setdefault(current, {})
            continue
        if current is None:
            raise ConfigError("<top>", f"line {lineno}: key outside any section")
        if "=" not in stripped:
            raise ConfigError(current, f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in stripped.split("=", 1))
        if key in sections[current]:
            raise ConfigError(f"{current}.{key}", f"line {lineno}: duplicate key")
        sections[current][key] = (lineno, value)

    ex_items = sections.get("experiment", {})
    name = ex_items["preset"][1] if "preset" in ex_items else "default"
    cfg = preset(name)

    for key, (_, value) in sections.get("train", {}).items():
        full = f"train.{key}"
        if key not in TrainConfig.keys():
            raise ConfigError(full, "unknown key")
        if key == "r0" and value.strip().lower() in ("off", "none"):
            cfg.train.reshape = False
            continue
        setattr(cfg.train, key, _coerce(full, value, getattr(cfg.train, key)))
        if key == "r0" and "reshape" not in sections.get("train", {}):
            cfg.train.reshape = True

    env_keys = [f.name for f in fields(EnvConfig)]
    for key, (_, value) in sections.get("env", {}).items():
        full = f"env.{key}"
        if key not in env_keys:
            raise ConfigError(full, "unknown key")
        setattr(cfg.env, key, _coerce(full, value, getattr(cfg.env, key)))

    ex_keys = [f.name for f in fields(ExperimentSettings)]
    for key, (_, value) in ex_items.items():
        full = f"experiment.{key}"
        if key not in ex_keys:
            raise ConfigError(full, "unknown key")
        if key == "preset":
            continue
        if key == "seeds":
            cfg.experiment.seeds = parse_seeds(value)
        elif key == "r0_values":
            try:
                cfg.experiment.r0_values = [_parse_r0(tok) for tok in value.split(",") if tok.strip()]
            except ValueError:
                raise ConfigError(full, f"cannot parse {value!r}") from None
        else:
            setattr(cfg.experiment, key, _coerce(full, value, getattr(cfg.experiment, key)))
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("--config", f"no such file: {path}")
    return parse_text(p.read_text())
