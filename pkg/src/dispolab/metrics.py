"""Per-update training records, Avg@k evaluation and checkpoint selection."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractViolation
from .objectives import Regime, TokenUpdateRecord
from .policy import PolicyParams, PolicySnapshot, snapshot
from .sampler import GroupBatch, SampleLimits, generate_rollout
from .tasks import VOCAB, Task, Vocab

REGIMES = (Regime.R1_AMP_POS, Regime.R2_SUP_POS, Regime.R3_AMP_NEG, Regime.R4_SUP_NEG)


@dataclass
class StepMetrics:
    update_index: int
    rollout_round: int
    train_accuracy: float
    mean_token_entropy: float
    mean_response_length: float
    regime_counts: dict
    neutral_count: int
    n_tokens: int
    gated_count: int
    grad_norm_pre_clip: float
    grad_norm_post_clip: float
    groups_filtered: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_update(cls, update_index: int, rollout_round: int, groups: Sequence[GroupBatch],
                    records: Sequence[TokenUpdateRecord], pre: float, post: float,
                    groups_filtered: int) -> "StepMetrics":
        rollouts = [ro for g in groups for ro in g.rollouts]
        counts = {reg.value: 0 for reg in REGIMES}
        neutral = gated = 0
        for rec in records:
            if rec.regime is Regime.NEUTRAL:
                neutral += 1
            else:
                counts[rec.regime.value] += 1
            gated += rec.gradient_gated
        return cls(
            update_index=update_index,
            rollout_round=rollout_round,
            train_accuracy=float(np.mean([ro.reward.base_reward == 1 for ro in rollouts])),
            mean_token_entropy=float(np.mean([rec.entropy for rec in records])),
            mean_response_length=float(np.mean([ro.length for ro in rollouts])),
            regime_counts=counts,
            neutral_count=neutral,
            n_tokens=len(records),
            gated_count=gated,
            grad_norm_pre_clip=pre,
            grad_norm_post_clip=post,
            groups_filtered=groups_filtered,
        )


@dataclass
class EvalReport:
    k: int
    per_task_accuracy: list = field(repr=False)
    avg_at_k: float
    mean_entropy: float
    mean_length: float
    best_so_far: bool = False
    update_index: int = -1

    def to_row(self) -> dict:
        return {"update_index": self.update_index, "k": self.k, "avg_at_k": self.avg_at_k,
                "mean_entropy": self.mean_entropy, "mean_length": self.mean_length,
                "best_so_far": self.best_so_far}


def evaluate(params: PolicyParams | PolicySnapshot, eval_tasks: Sequence[Task], k: int,
             rng: np.random.Generator, limits: SampleLimits = SampleLimits(),
             vocab: Vocab = VOCAB) -> EvalReport:
    """Avg@k with entropy and length measured on the same ``k`` completions per task."""
    if k < 1:
        raise ContractViolation("k must be >= 1")
    if not eval_tasks:
        raise ContractViolation("need at least one evaluation task")
    frozen = params if isinstance(params, PolicySnapshot) else snapshot(params)
    per_task, entropies, lengths = [], [], []
    for j, task in enumerate(eval_tasks):
        correct = 0
        for _ in range(k):
            ro = generate_rollout(task, frozen, limits, rng, vocab, task_id=j)
            correct += ro.reward.base_reward == 1
            entropies.append(ro.ref_entropies)
            lengths.append(ro.length)
        per_task.append(correct / k)
    return EvalReport(
        k=k,
        per_task_accuracy=per_task,
        avg_at_k=float(np.mean(per_task)),
        mean_entropy=float(np.concatenate(entropies).mean()),
        mean_length=float(np.mean(lengths)),
    )


def select_best_checkpoint(history: Sequence[EvalReport | float]) -> int:
    """Index of the highest Avg@k; the earliest wins ties."""
    if not history:
        raise ContractViolation("history must be non-empty")
    scores = [h.avg_at_k if isinstance(h, EvalReport) else float(h) for h in history]
    return int(np.argmax(scores))
