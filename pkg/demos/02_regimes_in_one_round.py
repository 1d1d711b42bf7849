"""One rollout round seen token by token: where the four update regimes come from.

The first update after a snapshot sees r = 1 everywhere.  Each later update
in the same round moves the live policy away from the snapshot, so tokens
start landing in R1..R4.

    python3 demos/02_regimes_in_one_round.py
"""

import numpy as np

from dispolab import ClipConfig, ExperimentConfig, init_params
from dispolab.metrics import REGIMES
from dispolab.tasks import task_stream
from dispolab.trainer import OptimizerState, TrainEnv, TrainSchedule, train_round

config = ExperimentConfig.from_preset("dispo-paper")
live = init_params(15, config.context_window, config.feature_map)
optimizer = OptimizerState.zeros_like(live, learning_rate=config.learning_rate,
                                      weight_decay=config.weight_decay)
env = TrainEnv(task_stream(0, "ADD_MOD", 10), config.group_size, config.limits(), config.max_attempts)
schedule = TrainSchedule(config.mini_batch_groups, config.micro_batch_groups)

result = train_round(live, optimizer, schedule, config.clip_config(), env,
                     np.random.default_rng(0), keep_records=True)
print(f"kept {len(result.fill.groups)} groups after {result.fill.attempts} attempts "
      f"({result.fill.filtered} all-same groups filtered)")
print(f"{'update':>6} {'neutral':>8} " + " ".join(f"{r.value:>11}" for r in REGIMES) + "   max|log r|")
for m, records in zip(result.metrics, result.records):
    drift = max(abs(np.log(rec.ratio)) for rec in records)
    counts = " ".join(f"{m.regime_counts[r.value]:>11}" for r in REGIMES)
    print(f"{m.update_index:>6} {m.neutral_count:>8} {counts}   {drift:.2e}")

# the same round under a one-update schedule never leaves NEUTRAL
flat = train_round(live, optimizer, TrainSchedule(32, 32), ClipConfig.dispo(), env,
                   np.random.default_rng(0))
print("single-update schedule regime counts:", flat.metrics[0].regime_counts)
