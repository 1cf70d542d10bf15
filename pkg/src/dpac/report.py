"""Figures for sweep summaries and error trajectories, rendered to image files."""
from __future__ import annotations

import math
import os
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiments import Summary  # noqa: E402


def _valid(summaries: Sequence[Summary]) -> list[Summary]:
    return [s for s in summaries if s.error is None and math.isfinite(s.mse_mean)]


def plot_sweep(summaries: Sequence[Summary], path: str, network: bool = False) -> str:
    """Measured error with 3-SE bars against the theory curve, one series per algorithm.

    Rows without a parameter value (baselines in g/h sweeps) are drawn as
    horizontal reference lines.
    """
    rows = _valid(summaries)
    fig, ax = plt.subplots(figsize=(6, 4))
    param = next((s.param_name for s in rows if s.param_name), "")
    for k, alg in enumerate(dict.fromkeys(s.algorithm for s in rows)):
        series = [s for s in rows if s.algorithm == alg]
        mean = [s.network_error_mean if network else s.mse_mean for s in series]
        se = [s.network_error_se if network else s.mse_se for s in series]
        theory = [s.network_error_theory if network else s.mse_theory for s in series]
        if series[0].param_value is None:
            ax.axhline(mean[0], ls=":", color=f"C{k}", label=f"{alg} (measured)")
            continue
        x = [s.param_value for s in series]
        line = ax.errorbar(x, mean, yerr=3 * np.nan_to_num(se), fmt="o", capsize=3, color=f"C{k}",
                           label=f"{alg} (measured)")
        ax.plot(x, theory, "-", color=line[0].get_color(), alpha=0.6, label=f"{alg} (theory)")
    if param in ("epsilon", "n"):
        ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(param or "parameter")
    ax.set_ylabel("network squared error" if network else "mean-square error per node")
    ax.legend(fontsize=7)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_error_boxes(summaries: Sequence[Summary], path: str) -> str:
    """Distribution of per-trial mean-square errors for every row."""
    rows = [s for s in _valid(summaries) if s.errors]
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(rows) + 2), 4))
    if rows:
        labels = [s.algorithm if s.param_value is None else f"{s.algorithm}\n{s.param_name}={s.param_value:g}"
                  for s in rows]
        ax.boxplot([np.asarray(s.errors) for s in rows], showfliers=False)
        ax.set_xticks(range(1, len(rows) + 1), labels, fontsize=6)
    ax.set_yscale("log")
    ax.set_ylabel("per-trial mean-square error")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_trajectories(curves: Mapping[str, np.ndarray], path: str) -> str:
    """Trial-averaged per-node squared error against iteration count."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, curve in curves.items():
        ax.semilogy(np.arange(len(curve)), curve, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean-square error per node")
    ax.legend(fontsize=7)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_figures(summaries: Sequence[Summary], outdir: str, prefix: str = "sweep") -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    paths = [plot_sweep(summaries, os.path.join(outdir, f"{prefix}_mse.png")),
             plot_error_boxes(summaries, os.path.join(outdir, f"{prefix}_errors.png"))]
    if any(s.param_name == "n" for s in summaries):
        paths.append(plot_sweep(summaries, os.path.join(outdir, f"{prefix}_network.png"), network=True))
    return paths
