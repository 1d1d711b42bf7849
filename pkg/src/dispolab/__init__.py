"""Desk-scale RLVR laboratory for decoupled importance-sampling clipping."""

from .config import ABLATION_GRID, PRESETS, ExperimentConfig, resolve_config
from .errors import (BatchStarvationError, ConfigurationError, ContractViolation,
                     DispoLabError, NumericalError)
from .metrics import EvalReport, StepMetrics, evaluate, select_best_checkpoint
from .outputs import emit_outputs, plot_metrics, write_profiles_csv
from .objectives import (AdvantageSet, Algorithm, ClipConfig, Normalization, Regime,
                         TokenUpdateRecord, accumulate_gradient, classify_regime, clip_ratio,
                         compute_advantages, decoupled_ratio, effective_multiplier,
                         profile_gradient_weight)
from .policy import (FeatureMap, PolicyParams, PolicySnapshot, TokenDistribution, grad_log_prob,
                     init_params, load_checkpoint, log_prob, sample_token, save_checkpoint,
                     snapshot, token_entropy)
from .sampler import (BatchFill, GroupBatch, Rollout, SampleLimits, fill_effective_batch,
                      rollout_group, truncate_on_repetition)
from .tasks import (VOCAB, RewardOutcome, Task, TaskKind, Vocab, generate_task, make_task,
                    shape_reward, verify)
from .trainer import (OptimizerState, TrainEnv, TrainSchedule, apply_adamw_step, clip_grad_norm,
                      run_experiment, train_round)

__version__ = "0.1.0"
