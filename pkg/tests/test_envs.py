import itertools

import numpy as np
import pytest

from ecvlab.envs import (
    ANSWER_POSITIONS, GroundingEnv, GroundingQuery, NumericBanditEnv, ReasoningEnv, evaluate_policy,
    grounding_reward, numeric_reward_env, reasoning_reward_env,
)
from ecvlab.geometry import BoundingBox, iou
from ecvlab.policy import FactoredPolicy


def oracle_policy(env):
    logits = np.zeros((env.n_queries, env.seq_len, env.vocab_size))
    for q in range(env.n_queries):
        logits[q, np.arange(env.seq_len), env.reference_completion(q)] = 50.0
    return FactoredPolicy(logits)


def test_template_shape():
    env = GroundingEnv(seed=0)
    assert env.seq_len == 11 and env.grid == 16 and env.jitter == 1 and env.n_queries == 8
    toks = env.vocab.decode(env.reference_completion(0))
    assert toks[0] == "<think>" and toks[-1] == "</answer>"
    assert [int(toks[t]) for t in ANSWER_POSITIONS] == list(env.queries[0].box.as_tuple())


def test_grounding_reward_exact_without_jitter():
    env = GroundingEnv(jitter=0, seed=1)
    toks = env.reference_completion(3)
    for s in range(5):
        r = grounding_reward(env, 3, toks, np.random.default_rng(s))
        assert (r.accuracy, r.format, r.total) == (1.0, 1, 2.0)
    broken = list(toks)
    broken[-1] = broken[0]
    r = grounding_reward(env, 3, broken, np.random.default_rng(0))
    assert (r.accuracy, r.format) == (0.0, 0)


def test_jitter_set_matches_enumeration():
    box = BoundingBox(0, 3, 2, 16)
    env = GroundingEnv(grid=16, jitter=1, queries=[GroundingQuery(box, 0)])
    want = set()
    for d in itertools.product((-1, 0, 1), repeat=4):
        c = (box.x1 + d[0], box.y1 + d[1], box.x2 + d[2], box.y2 + d[3])
        if 0 <= c[0] < c[2] <= 16 and 0 <= c[1] < c[3] <= 16:
            want.add(c)
    got = {tuple(int(v) for v in b) for b in env.jittered_boxes(0)}
    assert got == want
    assert len(want) < 81  # the grid edge removes some offsets


def test_jittered_reward_distribution():
    env = GroundingEnv(jitter=1, seed=2)
    q = 1
    gts = [BoundingBox(*map(int, b)) for b in env.jittered_boxes(q)]
    clean = env.queries[q].box
    values = {iou(clean, g) for g in gts}
    rng = np.random.default_rng(0)
    draws = [grounding_reward(env, q, env.reference_completion(q), rng).accuracy for _ in range(4000)]
    assert set(draws) <= values
    assert 0.0 < min(draws) and max(draws) == 1.0
    want = np.mean([iou(clean, g) for g in gts])
    se = np.std(draws) / np.sqrt(len(draws))
    assert abs(np.mean(draws) - want) <= 4 * se
    cand = np.array([clean.as_tuple()])
    assert env.candidate_rewards(q, cand)[0] == pytest.approx(1.0 + want, abs=1e-12)


def test_sampled_gt_always_valid():
    env = GroundingEnv(grid=16, jitter=3, min_side=1, seed=5)
    rng = np.random.default_rng(1)
    for q in range(env.n_queries):
        for _ in range(50):
            assert env.sample_gt(q, rng).within(16)


def test_reasoning_env():
    env = ReasoningEnv(seed=3)
    tgt = env.reference_completion(2)
    assert reasoning_reward_env(env, 2, tgt).total == 1.0
    off = list(tgt)
    off[ANSWER_POSITIONS[1]] = env.vocab.number((int(env.vocab.tokens[off[ANSWER_POSITIONS[1]]]) + 1) % 17)
    assert reasoning_reward_env(env, 2, off).total == 0.0
    with pytest.raises(ValueError):
        ReasoningEnv(targets=[])
    rng = np.random.default_rng(0)
    vals = {env.score(0, rng.integers(env.vocab_size, size=11)).total for _ in range(100)}
    assert vals <= {0.0, 1.0}


def test_numeric_env():
    env = NumericBanditEnv()
    assert numeric_reward_env(env, 20) == 1.0
    assert numeric_reward_env(env, 10) == pytest.approx(0.5, abs=1e-15)
    assert numeric_reward_env(env, 40) == 0.0
    assert numeric_reward_env(env, 30) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        numeric_reward_env(env, 41)
    with pytest.raises(ValueError):
        NumericBanditEnv(lam=0.0)


def _uniform_box_mean_iou(gt: BoundingBox, grid: int) -> float:
    total = 0.0
    for c in itertools.product(range(grid + 1), repeat=4):
        if c[0] < c[2] and c[1] < c[3]:
            total += iou(BoundingBox(*c), gt)
    return total / (grid + 1) ** 4


def test_expected_eval_uniform_guess():
    env = GroundingEnv(grid=16, n_queries=2, seed=6)
    oracle = oracle_policy(env)
    logits = oracle.logits.copy()
    number_ids = env.vocab.members("numeric")
    for t in ANSWER_POSITIONS:
        logits[:, t, :] = -50.0
        logits[:, t, number_ids] = 0.0
    pol = FactoredPolicy(logits)
    for q in range(2):
        want = _uniform_box_mean_iou(env.queries[q].box, 16)
        assert env.expected_clean_score(pol, q) == pytest.approx(want, rel=1e-9)
    # fully uniform: format probability times the same mean
    flat = FactoredPolicy(np.zeros_like(logits))
    V = env.vocab_size
    fmt = (1 / V) ** 6 * (V - 6) / V * (17 / V) ** 4
    want = _uniform_box_mean_iou(env.queries[0].box, 16)
    assert env.expected_clean_score(flat, 0) == pytest.approx(fmt * want, rel=1e-9)


def test_evaluate_policy_oracle_and_determinism():
    for env in (GroundingEnv(seed=0), ReasoningEnv(seed=0)):
        pol = oracle_policy(env)
        res = evaluate_policy(env, pol)
        assert res.mean_score == 1.0 and res.exact_match == 1.0
        assert evaluate_policy(env, pol, "expected").mean_score == pytest.approx(1.0, abs=1e-12)
        assert evaluate_policy(env, pol) == evaluate_policy(env, pol)
    with pytest.raises(ValueError):
        evaluate_policy(ReasoningEnv(), oracle_policy(ReasoningEnv()), "sampled")


def test_warm_start_identical_structure():
    g, r = GroundingEnv(seed=0), ReasoningEnv(seed=0)
    assert g.vocab.tokens == r.vocab.tokens
    pg, pr = g.initial_policy(), r.initial_policy()
    assert pg.logits.shape == pr.logits.shape
    # same prior scale in both regimes: sorted logits per slot agree
    np.testing.assert_allclose(np.sort(pg.logits[0], axis=-1)[:, -3:].max(axis=-1),
                               np.sort(pr.logits[0], axis=-1)[:, -3:].max(axis=-1))


def test_bad_env_args():
    with pytest.raises(ValueError):
        GroundingEnv(jitter=-1)
    with pytest.raises(ValueError):
        GroundingEnv(grid=8, min_side=9)
    with pytest.raises(ValueError):
        GroundingEnv(grid=8, queries=[GroundingQuery(BoundingBox(0, 0, 9, 2), 0)])
