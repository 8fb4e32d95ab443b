import math
import re

import numpy as np
import pytest

from ecvlab.entropy_lab import token_class_probability
from ecvlab.grpo import ConfigError
from ecvlab.harness import experiments
from ecvlab.harness.cli import main
from ecvlab.harness.config import parse_seeds, parse_text, preset
from ecvlab.harness.report import LEFT, PLOT_H, PLOT_W, TOP, emit_report, render_svg
from ecvlab.harness.telemetry import COLUMNS, read_csv
from ecvlab.policy import exact_policy_entropy, load_policy

SMALL = """
[experiment]
preset = grounding
checkpoint_every = 4

[train]
steps = 12
"""


def small_cfg(extra=""):
    return parse_text(SMALL + extra)


# --- config ---------------------------------------------------------------------------


def test_parse_sections_and_presets():
    cfg = small_cfg()
    assert cfg.train.steps == 12 and cfg.train.lr == 1.0
    assert cfg.env.kind == "grounding"
    assert cfg.experiment.checkpoint_every == 4
    again = parse_text(cfg.dumps())
    assert again.dumps() == cfg.dumps()
    assert preset("default").train.lr == 0.1
    assert preset("large-model").train.lr == 1e-6
    assert preset("sweep-r0").experiment.r0_values == [10.0, None, -50.0]


def test_r0_key_toggles_reshape():
    assert parse_text("[train]\nr0 = -50\n").train.reshape is True
    assert parse_text("[train]\nr0 = -50\nreshape = false\n").train.reshape is False
    assert parse_text("[train]\nr0 = off\n").train.reshape is False
    cfg = parse_text("[experiment]\nr0_values = 10, off, -50\nseeds = 0..2\n")
    assert cfg.experiment.r0_values == [10.0, None, -50.0]
    assert cfg.experiment.seeds == [0, 1, 2]


@pytest.mark.parametrize("text,key", [
    ("[train]\nlearning_rate = 1\n", "train.learning_rate"),
    ("[env]\ngird = 8\n", "env.gird"),
    ("[bogus]\n", "bogus"),
    ("[train]\nrollouts = 1\n", "rollouts"),
    ("[train]\nlr = fast\n", "train.lr"),
    ("[env]\nmin_side = 40\n", "env.min_side"),
    ("[experiment]\npreset = nope\n", "experiment.preset"),
    ("[experiment]\nr0_values = 0.5\n", "experiment.r0_values"),
    ("[train]\nsteps = 1\nsteps = 2\n", "train.steps"),
    ("steps = 3\n", "<top>"),
])
def test_config_errors_name_key(text, key):
    with pytest.raises(ConfigError) as err:
        parse_text(text)
    assert err.value.key == key


def test_parse_seeds():
    assert parse_seeds("0..4") == [0, 1, 2, 3, 4]
    assert parse_seeds("1, 3") == [1, 3]
    assert parse_seeds("7") == [7]
    with pytest.raises(ConfigError):
        parse_seeds("4..1")


# --- training runs ----------------------------------------------------------------------


def test_zero_steps(tmp_path):
    cfg = small_cfg()
    cfg.train.steps = 0
    records = experiments.run_training(cfg, 0, tmp_path / "r")
    assert records == []
    assert (tmp_path / "r" / "telemetry.csv").read_text() == ",".join(COLUMNS) + "\n"
    snap = load_policy(tmp_path / "r" / "snapshots" / "step_00000.txt")
    init = cfg.env.build().initial_policy(cfg.env.prior())
    assert snap.logits.tobytes() == init.logits.tobytes()


def test_run_is_byte_deterministic(tmp_path):
    cfg = small_cfg()
    experiments.run_training(cfg, 3, tmp_path / "a")
    experiments.run_training(cfg, 3, tmp_path / "b")
    for name in ("telemetry.csv", "policy_final.txt", "config.txt", "snapshots/step_00008.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    experiments.run_training(cfg, 4, tmp_path / "c")
    assert (tmp_path / "a" / "telemetry.csv").read_bytes() != (tmp_path / "c" / "telemetry.csv").read_bytes()


def test_refuses_nonempty_out(tmp_path):
    cfg = small_cfg()
    experiments.run_training(cfg, 0, tmp_path / "a")
    with pytest.raises(FileExistsError):
        experiments.run_training(cfg, 0, tmp_path / "a")
    experiments.run_training(cfg, 0, tmp_path / "a", overwrite=True)


def test_telemetry_matches_snapshots(tmp_path):
    cfg = small_cfg()
    cfg.train.reshape, cfg.train.r0 = True, -50.0
    experiments.run_training(cfg, 1, tmp_path)
    data = read_csv(tmp_path / "telemetry.csv")
    assert len(data["step"]) == 12
    assert all(np.all(np.isfinite(data[c])) for c in COLUMNS)
    for k in (0, 4, 8):
        pol = load_policy(tmp_path / "snapshots" / f"step_{k:05d}.txt")
        assert abs(exact_policy_entropy(pol) - data["entropy_exact"][k]) <= 1e-10
    assert data["kl_ref"][0] == 0.0
    assert data["gate_open_frac"][0] == 1.0


def test_record_class_split_consistent():
    cfg = small_cfg()
    env = cfg.env.build()
    from ecvlab.grpo import train_step

    pol = env.initial_policy(cfg.env.prior())
    _, rec, groups = train_step(pol, pol, env, cfg.train, 0)
    split = token_class_probability([r for g in groups for r in g.rollouts], env.token_classes)
    assert rec.n_positive == sum(r.advantage > 0 for g in groups for r in g.rollouts)
    if split is not None:
        assert (rec.p_numeric, rec.p_other) == split


def test_default_beta_run_finite():
    cfg = preset("default")
    cfg.train.steps = 15
    records = experiments.train(cfg, 0)[0]
    assert len(records) == 15
    assert all(math.isfinite(r.entropy_exact) for r in records)


def test_compare_arm_order_and_pairing(tmp_path):
    cfg = small_cfg()
    cfg.experiment.seeds = [0, 1]
    s1, r1 = experiments.run_compare_rewards(cfg, tmp_path / "x", arms=("reasoning", "grounding"))
    s2, r2 = experiments.run_compare_rewards(cfg, None, arms=("grounding", "reasoning"))
    for arm in ("reasoning", "grounding"):
        assert s1[arm].final_entropies == s2[arm].final_entropies
    # an arm equals a plain training run with the same env and seed
    solo = experiments.train(cfg, 1)[0]
    assert [r.entropy_exact for r in solo] == [r.entropy_exact for r in r1["grounding"][1]]
    assert (tmp_path / "x" / "summary.json").is_file()
    with pytest.raises(ValueError):
        cfg.experiment.seeds = [0]
        experiments.run_compare_rewards(cfg, None)


def test_sweep_single_off_arm():
    cfg = small_cfg()
    cfg.experiment.seeds = [0, 1]
    summaries, verdict, runs = experiments.run_sweep_r0(cfg, None, r0_values=[None])
    assert verdict is None
    plain = experiments.train(cfg, 0)[0]
    assert [r.entropy_exact for r in runs[None][0]] == [r.entropy_exact for r in plain]


def test_sweep_arm_order_independent():
    cfg = small_cfg()
    cfg.experiment.seeds = [0, 1]
    a = experiments.run_sweep_r0(cfg, None, r0_values=[10.0, None, -50.0])[0]
    b = experiments.run_sweep_r0(cfg, None, r0_values=[-50.0, 10.0, None])[0]
    for r0 in (10.0, None, -50.0):
        assert a[r0].final_entropies == b[r0].final_entropies
    with pytest.raises(ValueError):
        experiments.run_sweep_r0(cfg, None, r0_values=[1.0])


def test_sweep_verdict_logic():
    S = experiments.ArmSummary
    ok = {10.0: S("p", [0.1, 0.12], 1.0), None: S("o", [0.3, 0.31], 1.0), -50.0: S("n", [0.5, 0.52], 1.0)}
    assert experiments.sweep_verdict(ok)["ordered"] is True
    noisy = {10.0: S("p", [0.1, 0.5], 1.0), None: S("o", [0.3, 0.31], 1.0), -50.0: S("n", [0.5, 0.52], 1.0)}
    assert experiments.sweep_verdict(noisy)["ordered"] is False


# --- report -------------------------------------------------------------------------------


def _write_csv(path, steps, values):
    lines = ["step,entropy_exact"] + [f"{int(s)},{float(v)!r}" for s, v in zip(steps, values)]
    path.write_text("\n".join(lines) + "\n")


def test_svg_affine_mapping(tmp_path):
    steps = np.arange(10)
    values = np.array([0.5, 0.9, 0.1, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 0.0])
    _write_csv(tmp_path / "t.csv", steps, values)
    emit_report([tmp_path / "t.csv"], tmp_path / "out", columns=("entropy_exact",), labels=["run"])
    svg = (tmp_path / "out" / "entropy_exact.svg").read_text()
    pts = re.search(r'points="([^"]+)"', svg).group(1).split()
    xy = np.array([[float(v) for v in p.split(",")] for p in pts])
    # 10 steps -> smoothing window 1, raw values are drawn
    want_x = LEFT + steps / 9 * PLOT_W
    want_y = TOP + (0.9 - values) / 0.9 * PLOT_H
    np.testing.assert_allclose(xy[:, 0], want_x, atol=5e-4)
    np.testing.assert_allclose(xy[:, 1], want_y, atol=5e-4)
    assert "window 1 step" in svg


def test_svg_smoothing_disclosed():
    y = np.sin(np.arange(200) / 7.0)
    svg = render_svg("x", [("a", np.arange(200), y)])
    assert "window 10 step" in svg and "5%" in svg


def test_empty_report(tmp_path):
    (tmp_path / "e.csv").write_text(",".join(COLUMNS) + "\n")
    emit_report([tmp_path / "e.csv"], tmp_path / "out", labels=["empty"])
    svg = (tmp_path / "out" / "entropy_exact.svg").read_text()
    assert "<polyline" not in svg and "<svg" in svg
    assert (tmp_path / "out" / "summary.txt").read_text() == "empty: no steps\n"


def test_report_byte_identical(tmp_path):
    cfg = small_cfg()
    experiments.run_training(cfg, 0, tmp_path / "run")
    emit_report([tmp_path / "run" / "telemetry.csv"], tmp_path / "r1")
    emit_report([tmp_path / "run" / "telemetry.csv"], tmp_path / "r2")
    for f in sorted((tmp_path / "r1").iterdir()):
        assert f.read_bytes() == (tmp_path / "r2" / f.name).read_bytes()


def test_report_missing_column(tmp_path):
    (tmp_path / "bad.csv").write_text("step,foo\n0,1\n")
    with pytest.raises(KeyError):
        emit_report([tmp_path / "bad.csv"], tmp_path / "out")


# --- CLI ------------------------------------------------------------------------------------


def test_cli_train_and_report(tmp_path, capsys):
    conf = tmp_path / "c.txt"
    conf.write_text(SMALL)
    assert main(["train", "--config", str(conf), "--seed", "2", "--out", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "telemetry.csv").is_file()
    assert main(["train", "--config", str(conf), "--seed", "2", "--out", str(tmp_path / "run")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error key=") and "not empty" in err
    assert main(["report", str(tmp_path / "run" / "telemetry.csv"), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "summary.txt").is_file()


def test_cli_error_codes(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("[train]\nlearnrate = 3\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "error key=train.learnrate" in capsys.readouterr().err
    assert main(["train", "--preset", "nope", "--out", str(tmp_path / "o")]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.txt")]) == 2
    assert main(["report", str(tmp_path / "none.csv"), "--out", str(tmp_path / "r")]) == 1
    assert main(["train", "--preset", "default", "--seed", "-1", "--out", str(tmp_path / "o")]) == 2


def test_cli_verify_and_gradcheck(tmp_path, capsys):
    assert main(["verify-theorem", "--out", str(tmp_path / "v")]) == 0
    assert '"decay_ratio"' in capsys.readouterr().out
    assert (tmp_path / "v" / "theorem.json").is_file()
    assert main(["gradcheck", "--instances", "6"]) == 0
    assert "max_rel_error" in capsys.readouterr().out
