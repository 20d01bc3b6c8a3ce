"""Optional report figures rendered next to the CSV / JSON outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_window_sweep(lengths, frobenius, frobenius_projected=None, path="sweep.png"):
    """Normalized drift error against data length."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(lengths, frobenius, "o-", label="full A")
    if frobenius_projected is not None:
        ax.plot(lengths, frobenius_projected, "s--", label="diagonal projection")
    ax.set_xlabel("PMU data length (s)")
    ax.set_ylabel(r"$\|A-\hat A\|_F / \|A\|_F$")
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_relative_errors(names, rel_errors, path="errors.png"):
    """Bar chart of per-parameter relative errors in percent."""
    fig, ax = plt.subplots(figsize=(max(5, 0.35 * len(names)), 3.5))
    ax.bar(np.arange(len(names)), 100 * np.asarray(rel_errors))
    ax.set_xticks(np.arange(len(names)), names, rotation=90)
    ax.axhline(0, color="k", lw=0.8)
    ax.set_ylabel("error (%)")
    return _save(fig, path)


def plot_tracking(times, estimates, truth_times, truth_values, name, path, band=0.05):
    """Streaming estimate of one time constant and its relative error.

    ``truth_times``/``truth_values`` describe the piecewise-constant true
    value: ``truth_values[i]`` holds from ``truth_times[i]`` on.
    """
    times = np.asarray(times, dtype=float)
    est = np.asarray(estimates, dtype=float)
    idx = np.searchsorted(truth_times, times, side="right") - 1
    true = np.asarray(truth_values, dtype=float)[np.clip(idx, 0, None)]
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6, 5))
    ax1.plot(times, est, label=f"estimated {name}")
    ax1.step(times, true, where="post", color="k", label=f"actual {name}")
    ax1.fill_between(times, true * (1 - band), true * (1 + band), step="post",
                     color="k", alpha=0.1)
    ax1.set_ylabel("time constant (s)")
    ax1.legend()
    ax2.plot(times, 100 * (est - true) / true)
    ax2.axhline(100 * band, color="k", ls=":")
    ax2.axhline(-100 * band, color="k", ls=":")
    ax2.set_xlabel("time (s)")
    ax2.set_ylabel("error (%)")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
    return _save(fig, path)
