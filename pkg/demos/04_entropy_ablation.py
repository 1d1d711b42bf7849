"""Compare token entropy of the online-SFT baseline with the Regime 1 and Regime 2 presets.

Every preset trains only on correct responses; they differ in how the
importance ratio of those tokens is clipped.  Prints the mean entropy over
the final third of training for each seed.  Expect several minutes.

    python3 demos/04_entropy_ablation.py [rounds] [n_seeds]
"""

import sys

import numpy as np

from dispolab import ExperimentConfig, run_experiment

rounds = int(sys.argv[1]) if len(sys.argv) > 1 else 60
n_seeds = int(sys.argv[2]) if len(sys.argv) > 2 else 3
presets = ("online-sft", "plus-regime1-0.28", "plus-regime2-0.2")


def final_third_entropy(metrics):
    tail = metrics[len(metrics) - len(metrics) // 3:]
    return float(np.mean([m.mean_token_entropy for m in tail]))


print(f"{'seed':>4} " + " ".join(f"{p:>18}" for p in presets))
for seed in range(n_seeds):
    row = []
    for preset in presets:
        config = ExperimentConfig.from_preset(preset, seed=seed, rollout_rounds=rounds)
        row.append(final_third_entropy(run_experiment(config, evaluate_runs=False).metrics))
    print(f"{seed:>4} " + " ".join(f"{h:>18.4f}" for h in row))
