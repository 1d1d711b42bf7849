"""Group rollouts under the frozen reference policy, with dynamic-sampling filtration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import BatchStarvationError, ContractViolation, ConfigurationError
from .objectives import AdvantageSet, compute_advantages
from .policy import PolicySnapshot, distribution_from_features, sample_from
from .tasks import VOCAB, RewardOutcome, Task, Vocab, shape_reward, verify


@dataclass(frozen=True)
class SampleLimits:
    soft_limit: int = 12
    hard_limit: int = 24
    rep_window: int = 4
    rep_threshold: int = 8

    def __post_init__(self):
        if not 0 < self.soft_limit < self.hard_limit:
            raise ConfigurationError("need 0 < soft_limit < hard_limit")
        if self.rep_window < 1 or self.rep_threshold < 2:
            raise ConfigurationError("need rep_window >= 1 and rep_threshold >= 2")


@dataclass
class Rollout:
    task_id: int
    tokens: tuple[int, ...]
    ref_log_probs: np.ndarray
    reward: RewardOutcome
    features: list = field(repr=False, default_factory=list)
    ref_entropies: np.ndarray = field(repr=False, default=None)
    live_log_probs: np.ndarray | None = None

    @property
    def length(self) -> int:
        return len(self.tokens)

    def to_record(self, task: Task, vocab: Vocab = VOCAB) -> dict:
        return {
            "task": task.question_text(vocab),
            "tokens": vocab.decode(self.tokens),
            "base_reward": self.reward.base_reward,
            "shaped_reward": self.reward.shaped_reward,
            "truncated": self.reward.truncated,
            "repetition_truncated": self.reward.repetition_truncated,
        }


@dataclass
class GroupBatch:
    task: Task
    rollouts: list[Rollout]
    advantage_set: AdvantageSet
    kept: bool


def truncate_on_repetition(tokens: Sequence[int], window_n: int = 4, repeat_threshold: int = 8) -> bool:
    """True iff the last ``window_n``-gram repeats ``repeat_threshold`` times back-to-back at the tail."""
    if window_n < 1 or repeat_threshold < 2:
        raise ContractViolation("need window_n >= 1 and repeat_threshold >= 2")
    span = window_n * repeat_threshold
    if len(tokens) < span:
        return False
    tail = list(tokens[-span:])
    gram = tail[-window_n:]
    return all(tail[i:i + window_n] == gram for i in range(0, span, window_n))


def generate_rollout(task: Task, snapshot: PolicySnapshot, limits: SampleLimits,
                     rng: np.random.Generator, vocab: Vocab = VOCAB, task_id: int = 0) -> Rollout:
    context = list(task.question)
    tokens: list[int] = []
    ref_lps, ents, feats = [], [], []
    truncated = rep_truncated = False
    while True:
        f = snapshot.features(context)
        dist = distribution_from_features(snapshot.weights, f)
        token = sample_from(dist, rng)
        feats.append(f)
        ref_lps.append(float(dist.log_probs[token]))
        ents.append(dist.entropy)
        tokens.append(token)
        context.append(token)
        if token == vocab.eos_id:
            break
        if len(tokens) == limits.hard_limit:
            truncated = True
            break
        if truncate_on_repetition(tokens, limits.rep_window, limits.rep_threshold):
            rep_truncated = True
            break
    base = verify(tokens, task, vocab)
    reward = shape_reward(base, len(tokens), limits.soft_limit, limits.hard_limit, truncated, rep_truncated)
    return Rollout(task_id, tuple(tokens), np.array(ref_lps), reward, feats, np.array(ents))


def rollout_group(task: Task, snapshot: PolicySnapshot, G: int, limits: SampleLimits,
                  rng: np.random.Generator, vocab: Vocab = VOCAB, task_id: int = 0) -> GroupBatch:
    """Sample ``G`` responses and decide whether the group survives filtration.

    The all-same test uses base (correctness) rewards; advantages use shaped
    rewards.  A dropped group carries a degenerate advantage set.
    """
    if G < 2:
        raise ContractViolation(f"group size must be >= 2, got {G}")
    rollouts = [generate_rollout(task, snapshot, limits, rng, vocab, task_id) for _ in range(G)]
    base = [ro.reward.base_reward for ro in rollouts]
    adv = compute_advantages([ro.reward.shaped_reward for ro in rollouts])
    if len(set(base)) == 1 and not adv.degenerate:
        adv = AdvantageSet(adv.rewards, adv.mean, adv.std, None, True)
    return GroupBatch(task, rollouts, adv, not adv.degenerate)


@dataclass
class BatchFill:
    groups: list[GroupBatch]
    attempts: int
    filtered: int


def fill_effective_batch(tasks: Iterator[Task], snapshot: PolicySnapshot, G: int, target_groups: int,
                         max_attempts: int, limits: SampleLimits, rng: np.random.Generator,
                         vocab: Vocab = VOCAB) -> BatchFill:
    """Draw fresh tasks until ``target_groups`` informative groups are collected.

    Each attempt gets its own child generator seeded from ``rng`` in attempt
    order, so the result does not depend on how groups might be scheduled.
    """
    if target_groups < 1:
        raise ContractViolation("target_groups must be >= 1")
    if max_attempts < target_groups:
        raise ContractViolation("max_attempts must be >= target_groups")
    kept: list[GroupBatch] = []
    attempts = filtered = 0
    while len(kept) < target_groups:
        if attempts >= max_attempts:
            raise BatchStarvationError(
                f"only {len(kept)}/{target_groups} informative groups after {attempts} attempts",
                kept, attempts, filtered)
        task = next(tasks)
        child = np.random.default_rng(int(rng.integers(0, 2**63)))
        group = rollout_group(task, snapshot, G, limits, child, vocab, task_id=attempts)
        attempts += 1
        if group.kept:
            kept.append(group)
        else:
            filtered += 1
    return BatchFill(kept, attempts, filtered)
