"""Run artifacts: metrics JSONL, evaluation CSV, gradient-weight profiles, plots, checkpoints."""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation
from .metrics import EvalReport, StepMetrics
from .objectives import ClipConfig, TokenUpdateRecord, effective_multiplier
from .policy import save_checkpoint
from .sampler import GroupBatch
from .tasks import VOCAB, Vocab

# r = 0.05, 0.10, ..., 12.0: reaches past every default clip bound
PROFILE_GRID = np.arange(1, 241) / 20
# CISPO uses the DAPO window here so its plateau shows on the grid
PROFILE_CONFIGS = (
    ClipConfig.reinforce(),
    ClipConfig.grpo(0.2),
    ClipConfig.dapo(0.2, 0.28),
    ClipConfig.cispo(0.2, 0.28),
    ClipConfig.dispo(0.2, 10.0, 1.0, 100.0),
)
PROFILE_COLUMNS = ("algorithm", "advantage_sign", "r", "multiplier", "gated")
EVAL_COLUMNS = ("update_index", "k", "avg_at_k", "mean_entropy", "mean_length", "best_so_far")
SMOOTHING_WINDOW = 16


def _open_for_write(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_metrics_jsonl(metrics: Sequence[StepMetrics], path: str | Path) -> Path:
    path = Path(path)
    with _open_for_write(path) as fh:
        for m in metrics:
            fh.write(json.dumps(m.to_dict(), sort_keys=True) + "\n")
    return path


def read_metrics_jsonl(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_eval_csv(evals: Sequence[EvalReport], path: str | Path) -> Path:
    path = Path(path)
    with _open_for_write(path) as fh:
        writer = csv.DictWriter(fh, EVAL_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for report in evals:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in report.to_row().items()})
    return path


def profile_rows(configs: Iterable[ClipConfig] = PROFILE_CONFIGS,
                 grid: Sequence[float] = PROFILE_GRID) -> list[dict]:
    """One row per (algorithm, advantage sign, r)."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0):
        raise ContractViolation("profile grid must be a non-empty 1-D array of positive ratios")
    rows = []
    for cfg in configs:
        for sign in (1, -1):
            for r in grid:
                m, gated = effective_multiplier(float(r), float(sign), cfg)
                rows.append({"algorithm": cfg.algorithm.value, "advantage_sign": sign,
                             "r": float(r), "multiplier": m, "gated": gated})
    return rows


def write_profiles_csv(path: str | Path, configs: Iterable[ClipConfig] = PROFILE_CONFIGS,
                       grid: Sequence[float] = PROFILE_GRID) -> Path:
    """Floats are written with ``repr`` so they parse back to the identical double."""
    path = Path(path)
    rows = profile_rows(configs, grid)
    with _open_for_write(path) as fh:
        writer = csv.DictWriter(fh, PROFILE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "r": repr(row["r"]), "multiplier": repr(row["multiplier"]),
                             "gated": int(row["gated"])})
    return path


def write_rollout_dump(groups: Sequence[GroupBatch], rollout_round: int, fh, vocab: Vocab = VOCAB) -> None:
    """Append one JSON line per rollout of the kept groups."""
    for g, group in enumerate(groups):
        for ro in group.rollouts:
            record = {"rollout_round": rollout_round, "group": g, **ro.to_record(group.task, vocab)}
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def write_regime_log(records_per_update: Sequence[Sequence[TokenUpdateRecord]], first_update: int,
                     fh, every: int = 1) -> None:
    """Append every ``every``-th per-token update record as one JSON line."""
    if every < 1:
        raise ContractViolation("regime log sampling interval must be >= 1")
    for u, records in enumerate(records_per_update):
        for rec in records[::every]:
            row = dataclasses.asdict(rec)
            row["regime"] = rec.regime.value
            fh.write(json.dumps({"update_index": first_update + u, **row}, sort_keys=True) + "\n")


def _moving_average(values: np.ndarray, window: int) -> np.ndarray:
    if values.size < window:
        return values
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def plot_metrics(metrics_jsonl: str | Path, out_dir: str | Path,
                 window: int = SMOOTHING_WINDOW) -> list[Path]:
    """Static SVG curves of accuracy, entropy and length, rebuilt from the JSONL alone."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    records = read_metrics_jsonl(metrics_jsonl)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    x = np.array([r["update_index"] for r in records])
    paths = []
    series = (("train_accuracy", "train accuracy"), ("mean_token_entropy", "mean token entropy (nats)"),
              ("mean_response_length", "mean response length (tokens)"))
    with plt.rc_context({"svg.hashsalt": "dispolab", "svg.fonttype": "none"}):
        for key, label in series:
            y = np.array([r[key] for r in records], dtype=float)
            fig, ax = plt.subplots(figsize=(6, 3.5))
            ax.plot(x, y, lw=0.6, alpha=0.35, label="per update")
            smooth = _moving_average(y, window)
            if smooth is not y:
                ax.plot(x[window - 1:], smooth, lw=1.5, label=f"moving average ({window})")
            ax.set_xlabel("update index")
            ax.set_ylabel(label)
            ax.legend(loc="best", fontsize="small")
            fig.tight_layout()
            path = out_dir / f"{key}.svg"
            try:
                fig.savefig(path, format="svg", metadata={
                    "Date": None, "Description": f"raw per-update values; moving average window {window}"})
            except OSError as exc:
                raise OSError(f"cannot write {path}: {exc}") from exc
            finally:
                plt.close(fig)
            paths.append(path)
    return paths


def emit_outputs(result, output_dir: str | Path, plots: bool = True) -> dict[str, Path]:
    """Write every artifact of a finished run into ``output_dir``."""
    out = Path(output_dir)
    files = {
        "metrics": write_metrics_jsonl(result.metrics, out / "metrics.jsonl"),
        "eval": write_eval_csv(result.evals, out / "eval.csv"),
        "profiles": write_profiles_csv(out / "profiles.csv"),
    }
    config_path = out / "config.toml"
    with _open_for_write(config_path) as fh:
        fh.write(result.config.to_toml())
    files["config"] = config_path
    files["checkpoint"] = out / "final.ckpt"
    save_checkpoint(result.params, files["checkpoint"])
    if result.best_params is not None:
        files["best_checkpoint"] = out / "best.ckpt"
        save_checkpoint(result.best_params, files["best_checkpoint"])
    if plots and result.metrics:
        for path in plot_metrics(files["metrics"], out):
            files[path.stem] = path
    return files
