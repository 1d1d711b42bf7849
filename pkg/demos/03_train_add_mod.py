"""Train the desk DISPO preset on (a+b) mod 10 and write the run artifacts.

Takes roughly a minute or two on one core.

    python3 demos/03_train_add_mod.py [output_dir] [preset]
"""

import logging
import sys

import numpy as np

from dispolab import ExperimentConfig, emit_outputs, run_experiment

logging.basicConfig(level=logging.INFO, format="%(message)s")
out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/train"
preset = sys.argv[2] if len(sys.argv) > 2 else "dispo-paper"

config = ExperimentConfig.from_preset(preset, output_dir=out)
result = run_experiment(config, progress=True)
files = emit_outputs(result, out)

U = config.updates_per_rollout
acc = [np.mean([m.train_accuracy for m in result.metrics[i:i + U]])
       for i in range(0, len(result.metrics), U)]
print(f"train accuracy by round: first {acc[0]:.3f}, best {max(acc):.3f}, last {acc[-1]:.3f}")
for report in result.evals:
    print(f"update {report.update_index:5d}: Avg@{report.k} = {report.avg_at_k:.3f}  "
          f"entropy {report.mean_entropy:.3f}  length {report.mean_length:.2f}"
          f"{'  <- best' if report.best_so_far else ''}")
print("artifacts:", ", ".join(sorted(p.name for p in files.values())))
