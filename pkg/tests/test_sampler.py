import itertools
import math

import numpy as np
import pytest

from conftest import SYM, scripted_snapshot
from dispolab.errors import BatchStarvationError, ConfigurationError, ContractViolation
from dispolab.policy import FeatureMap, init_params, log_prob, snapshot
from dispolab.sampler import (SampleLimits, fill_effective_batch, generate_rollout, rollout_group,
                              truncate_on_repetition)
from dispolab.tasks import VOCAB, make_task, task_stream

V = VOCAB.size
TASK = make_task("ADD_MOD", (1, 1), 10)  # answer "2"
PERFECT = scripted_snapshot({"2": 60.0})
COIN = scripted_snapshot({"2": 60.0, "3": 60.0})  # 50% per-response accuracy


@pytest.mark.parametrize("tail,n,thr,expected", [
    ("ABABABAB", 2, 4, True),
    ("ABCD", 1, 2, False),
    ("ABCD", 2, 2, False),
    ("AAAA", 1, 4, True),
    ("AAA", 1, 4, False),
    ("CABABABAB", 2, 4, True),
    ("ABABABA", 2, 4, False),
])
def test_truncate_on_repetition_examples(tail, n, thr, expected):
    assert truncate_on_repetition(list(tail), n, thr) is expected


def test_truncate_on_repetition_contract():
    with pytest.raises(ContractViolation):
        truncate_on_repetition([1, 2], 0, 4)


def test_limits_validation():
    with pytest.raises(ConfigurationError):
        SampleLimits(soft_limit=10, hard_limit=10)


def test_perfect_policy_group_is_filtered():
    group = rollout_group(TASK, PERFECT, 8, SampleLimits(), np.random.default_rng(0))
    assert [VOCAB.decode(ro.tokens) for ro in group.rollouts] == ["A2E"] * 8
    assert not group.kept and group.advantage_set.degenerate


def test_mixed_group_is_kept_with_normalized_advantages():
    group = rollout_group(TASK, COIN, 16, SampleLimits(), np.random.default_rng(1))
    base = [ro.reward.base_reward for ro in group.rollouts]
    assert group.kept and 1 in base and -1 in base
    adv = group.advantage_set.advantages
    assert abs(adv.mean()) < 1e-12 and abs(adv.std() - 1) < 1e-12


def test_uniform_policy_mostly_filtered():
    uniform = snapshot(init_params(V, 8, FeatureMap.ONE_HOT_PAIRS))
    limits = SampleLimits()
    # chance of "<no A/E prefix> A d E" under the uniform policy
    p = sum(((V - 2) / V) ** L for L in range(limits.hard_limit - 2)) / V ** 3
    keep = 1 - (1 - p) ** 16 - p ** 16
    rng = np.random.default_rng(5)
    tasks = task_stream(0, "ADD_MOD", 10)
    kept = sum(rollout_group(next(tasks), uniform, 16, limits, rng).kept for _ in range(100))
    assert kept <= 100 * keep + 5 * math.sqrt(100 * keep * (1 - keep))


def test_kept_groups_have_both_outcomes():
    rng = np.random.default_rng(3)
    for _ in range(40):
        group = rollout_group(TASK, COIN, 4, SampleLimits(), rng)
        base = {ro.reward.base_reward for ro in group.rollouts}
        assert group.kept == (base == {-1, 1})


def test_ref_log_probs_reproduce_exactly():
    rng = np.random.default_rng(11)
    params = init_params(V, 3, "ONE_HOT_PAIRS", init="gaussian", scale=1.0, seed=4)
    ref = snapshot(params)
    for _ in range(10):
        ro = generate_rollout(TASK, ref, SampleLimits(), rng)
        context = list(TASK.question)
        for t, tok in enumerate(ro.tokens):
            assert log_prob(ref, context, tok) == ro.ref_log_probs[t]
            context.append(tok)


def test_rollout_respects_hard_limit_and_flags():
    rng = np.random.default_rng(2)
    params = init_params(V, 1)
    params.weights[0, SYM["E"]] = -100.0  # never stop
    limits = SampleLimits(soft_limit=4, hard_limit=9, rep_window=4, rep_threshold=8)
    ro = generate_rollout(TASK, snapshot(params), limits, rng)
    assert ro.length == 9 and ro.reward.truncated and ro.reward.base_reward == -1
    assert ro.reward.shaped_reward == -1.0


def test_rollout_stops_on_repetition():
    params = init_params(V, 1)
    params.weights[0, SYM["7"]] = 100.0
    limits = SampleLimits(soft_limit=4, hard_limit=24, rep_window=1, rep_threshold=5)
    ro = generate_rollout(TASK, snapshot(params), limits, np.random.default_rng(0))
    assert VOCAB.decode(ro.tokens) == "77777"
    assert ro.reward.repetition_truncated and not ro.reward.truncated


def test_rollout_is_deterministic_given_seed():
    ref = snapshot(init_params(V, 4, init="gaussian", scale=0.5, seed=1))
    a = generate_rollout(TASK, ref, SampleLimits(), np.random.default_rng(9))
    b = generate_rollout(TASK, ref, SampleLimits(), np.random.default_rng(9))
    assert a.tokens == b.tokens and a.ref_log_probs.tobytes() == b.ref_log_probs.tobytes()


def test_fill_with_perfect_policy_starves():
    with pytest.raises(BatchStarvationError) as info:
        fill_effective_batch(itertools.repeat(TASK), PERFECT, 4, 2, 6, SampleLimits(),
                             np.random.default_rng(0))
    err = info.value
    assert err.partial == [] and err.attempts == 6 and err.filtered == 6


def test_fill_rejects_zero_target():
    with pytest.raises(ContractViolation):
        fill_effective_batch(itertools.repeat(TASK), COIN, 4, 0, 10, SampleLimits(),
                             np.random.default_rng(0))


@pytest.mark.parametrize("G,target", [(4, 2000), (16, 200)])
def test_filtration_rate_matches_analytic_expectation(G, target):
    q = 2 * 0.5 ** G  # probability that a group is all-same
    fill = fill_effective_batch(itertools.repeat(TASK), COIN, G, target, 10 * target, SampleLimits(),
                                np.random.default_rng(G))
    assert len(fill.groups) == target and fill.attempts == target + fill.filtered
    # filtered count is negative binomial: mean target*q/(1-q), variance target*q/(1-q)^2
    mean, sd = target * q / (1 - q), math.sqrt(target * q) / (1 - q)
    assert abs(fill.filtered - mean) <= 5 * sd + 1
    assert fill.attempts / target == pytest.approx(1 / (1 - q), abs=5 * sd / target + 1 / target)


def test_fill_is_deterministic():
    def run():
        fill = fill_effective_batch(task_stream(3, "ADD_MOD", 10), COIN, 4, 5, 50, SampleLimits(),
                                    np.random.default_rng(8))
        return [(g.task, [ro.tokens for ro in g.rollouts]) for g in fill.groups], fill.filtered
    assert run() == run()
