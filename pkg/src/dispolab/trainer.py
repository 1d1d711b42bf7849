"""Off-policy training loop: snapshot, fill a batch, several micro-batch updates, AdamW."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from .config import ExperimentConfig
from .errors import BatchStarvationError, ConfigurationError, ContractViolation, NumericalError
from .metrics import EvalReport, StepMetrics, evaluate, select_best_checkpoint
from .objectives import ClipConfig, accumulate_gradient
from .policy import PolicyParams, init_params, snapshot
from .sampler import BatchFill, SampleLimits, fill_effective_batch
from .tasks import VOCAB, Task, TaskKind, Vocab, task_stream

logger = logging.getLogger(__name__)

TRAIN_NAMESPACE, EVAL_NAMESPACE = 0, 1


@dataclass(frozen=True)
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.95
    epsilon: float = 1e-15
    weight_decay: float = 0.1

    @classmethod
    def zeros_like(cls, params: PolicyParams, **hyper) -> "OptimizerState":
        return cls(np.zeros_like(params.weights), np.zeros_like(params.weights), 0, **hyper)


def apply_adamw_step(state: OptimizerState, params: PolicyParams,
                     gradient: np.ndarray) -> tuple[OptimizerState, PolicyParams]:
    """One AdamW step along ``+gradient`` (the objective is maximized).

    Weight decay is decoupled: ``w <- w * (1 - lr * wd) + lr * m_hat / (sqrt(v_hat) + eps)``.
    """
    if gradient.shape != params.weights.shape:
        raise ContractViolation(f"gradient shape {gradient.shape} != weights {params.weights.shape}")
    if not np.all(np.isfinite(gradient)):
        raise NumericalError("non-finite gradient passed to the optimizer")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * gradient
    v = state.beta2 * state.second_moment + (1 - state.beta2) * gradient * gradient
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    lr = state.learning_rate
    weights = params.weights * (1 - lr * state.weight_decay) + lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    if not np.all(np.isfinite(weights)):
        raise NumericalError("optimizer produced non-finite weights", {"step": t})
    new_params = PolicyParams(params.vocab_size, params.context_window, params.feature_map, weights)
    return replace(state, first_moment=m, second_moment=v, step_count=t), new_params


def clip_grad_norm(gradient: np.ndarray, max_norm: float) -> tuple[np.ndarray, float, float]:
    """Rescale to global L2 norm ``max_norm`` if larger; returns (clipped, pre, post)."""
    pre = float(np.linalg.norm(gradient))
    if pre > max_norm:
        gradient = gradient * (max_norm / pre)
    return gradient, pre, float(np.linalg.norm(gradient))


@dataclass(frozen=True)
class TrainSchedule:
    mini_batch_groups: int = 32
    micro_batch_groups: int = 2
    total_rollout_rounds: int = 125
    grad_clip_norm: float = 1.0
    eval_every: int = 25

    def __post_init__(self):
        if self.micro_batch_groups < 1 or self.mini_batch_groups % self.micro_batch_groups:
            raise ConfigurationError("micro_batch_groups must divide mini_batch_groups")

    @property
    def updates_per_rollout(self) -> int:
        return self.mini_batch_groups // self.micro_batch_groups


@dataclass
class TrainEnv:
    """Everything the sampler needs: task source, group size, limits, attempt budget."""

    tasks: Iterator[Task]
    group_size: int = 16
    limits: SampleLimits = SampleLimits()
    max_attempts: int = 320
    vocab: Vocab = VOCAB


@dataclass
class RoundResult:
    params: PolicyParams
    optimizer: OptimizerState
    metrics: list[StepMetrics]
    fill: BatchFill
    records: list = field(default_factory=list, repr=False)


def train_round(live: PolicyParams, optimizer: OptimizerState, schedule: TrainSchedule,
                cfg: ClipConfig, env: TrainEnv, rng: np.random.Generator,
                rollout_round: int = 0, update_offset: int = 0,
                keep_records: bool = False) -> RoundResult:
    """Collect one mini-batch under a fresh snapshot and apply its micro-batch updates."""
    ref = snapshot(live)
    fill = fill_effective_batch(env.tasks, ref, env.group_size, schedule.mini_batch_groups,
                                env.max_attempts, env.limits, rng, env.vocab)
    metrics, all_records = [], []
    step = schedule.micro_batch_groups
    for u, start in enumerate(range(0, schedule.mini_batch_groups, step)):
        micro = fill.groups[start:start + step]
        grad, records = accumulate_gradient(micro, cfg, live)
        update_index = update_offset + u
        if not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite gradient", {
                "update_index": update_index, "rollout_round": rollout_round,
                "n_nonfinite": int(np.sum(~np.isfinite(grad)))})
        grad, pre, post = clip_grad_norm(grad, schedule.grad_clip_norm)
        optimizer, live = apply_adamw_step(optimizer, live, grad)
        metrics.append(StepMetrics.from_update(update_index, rollout_round, micro, records,
                                               pre, post, fill.filtered))
        if keep_records:
            all_records.append(records)
    return RoundResult(live, optimizer, metrics, fill, all_records)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    metrics: list[StepMetrics]
    evals: list[EvalReport]
    params: PolicyParams
    best_params: PolicyParams | None
    best_index: int | None

    @property
    def best_eval(self) -> EvalReport | None:
        return None if self.best_index is None else self.evals[self.best_index]


def eval_task_set(config: ExperimentConfig, vocab: Vocab = VOCAB) -> list[Task]:
    stream = task_stream(config.seed, config.task_kind, config.modulus, EVAL_NAMESPACE, vocab)
    return [next(stream) for _ in range(config.eval_tasks)]


def run_experiment(config: ExperimentConfig, vocab: Vocab = VOCAB, evaluate_runs: bool = True,
                   progress: bool = False,
                   on_round: Callable[[int, RoundResult], None] | None = None,
                   keep_records: bool = False) -> ExperimentResult:
    """Train for ``config.rollout_rounds`` rounds; deterministic given ``config.seed``.

    Batch starvation propagates; the raised error carries the completed rounds as ``exc.result``.

    ``on_round(round_index, result)`` is called after every round, e.g. to dump rollouts;
    with ``keep_records`` the result also carries the per-token update records.
    """
    kind = TaskKind.parse(config.task_kind)
    params = init_params(vocab.size, config.context_window, config.feature_map,
                         config.init, config.init_scale, config.seed)
    optimizer = OptimizerState.zeros_like(
        params, learning_rate=config.learning_rate, beta1=config.beta1, beta2=config.beta2,
        epsilon=config.adam_eps, weight_decay=config.weight_decay)
    schedule = TrainSchedule(config.mini_batch_groups, config.micro_batch_groups,
                             config.rollout_rounds, config.grad_clip_norm, config.eval_every)
    env = TrainEnv(task_stream(config.seed, kind, config.modulus, TRAIN_NAMESPACE, vocab),
                   config.group_size, config.limits(), config.attempts_budget, vocab)
    cfg = config.clip_config()
    rng = np.random.default_rng([config.seed, 2])
    eval_tasks = eval_task_set(config, vocab) if evaluate_runs else []

    metrics: list[StepMetrics] = []
    evals: list[EvalReport] = []
    best_params, best_index = None, None
    for rnd in range(config.rollout_rounds):
        try:
            result = train_round(params, optimizer, schedule, cfg, env, rng, rnd, len(metrics), keep_records)
        except BatchStarvationError as exc:
            # completed rounds stay available to the caller
            exc.result = ExperimentResult(config, metrics, evals, params, best_params, best_index)
            exc.rollout_round = rnd
            raise
        params, optimizer = result.params, result.optimizer
        metrics.extend(result.metrics)
        if on_round is not None:
            on_round(rnd, result)
        if progress:
            acc = np.mean([m.train_accuracy for m in result.metrics])
            logger.info("round %d: train_accuracy=%.3f filtered=%d", rnd, acc, result.fill.filtered)
        last = rnd == config.rollout_rounds - 1
        if evaluate_runs and ((rnd + 1) % config.eval_every == 0 or last):
            report = evaluate(params, eval_tasks, config.eval_k,
                              np.random.default_rng([config.seed, 3, rnd]), config.limits(), vocab)
            report.update_index = len(metrics) - 1
            evals.append(report)
            best_index = select_best_checkpoint(evals)
            report.best_so_far = best_index == len(evals) - 1
            if report.best_so_far:
                best_params = params.copy()
    return ExperimentResult(config, metrics, evals, params, best_params, best_index)
