"""How each objective scales a token's gradient as its importance ratio drifts.

Prints a small table of effective multipliers and writes the full profile
CSV plus one SVG panel per advantage sign.

    python3 demos/01_gradient_weights.py [output_dir]
"""

import sys
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from dispolab import ClipConfig, effective_multiplier, profile_gradient_weight
from dispolab.outputs import PROFILE_CONFIGS, write_profiles_csv

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# a few hand-picked ratios, positive and negative advantage
dapo = ClipConfig.dapo(0.2, 0.28)
cispo = ClipConfig.cispo(0.2, 0.28)
dispo = ClipConfig.dispo(0.2, 10.0, 1.0, 100.0)
print(f"{'r':>5} {'A':>3} | {'DAPO':>12} {'CISPO':>6} {'DISPO':>6}")
for r in (0.5, 0.8, 1.0, 1.28, 1.5, 12.0):
    for adv in (1.0, -1.0):
        m_dapo, gated = effective_multiplier(r, adv, dapo)
        row = f"{m_dapo:.2f}{' (gated)' if gated else '':>8}"
        print(f"{r:5.2f} {adv:+3.0f} | {row:>12} {effective_multiplier(r, adv, cispo)[0]:6.2f} "
              f"{effective_multiplier(r, adv, dispo)[0]:6.2f}")

path = write_profiles_csv(out / "profiles.csv")
print("wrote", path)

grid = np.linspace(0.05, 3.0, 400)
fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharey=True)
for ax, sign in zip(axes, (1, -1)):
    for cfg in PROFILE_CONFIGS:
        ax.plot(grid, profile_gradient_weight(cfg, sign, grid), label=cfg.algorithm.value)
    ax.set_title(f"advantage {'> 0' if sign > 0 else '< 0'}")
    ax.set_xlabel("importance ratio r")
axes[0].set_ylabel("effective multiplier")
axes[1].legend(fontsize="small")
fig.tight_layout()
fig.savefig(out / "profiles.svg", metadata={"Date": None})
print("wrote", out / "profiles.svg")
