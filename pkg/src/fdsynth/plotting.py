"""Report figures written to files (never shown interactively)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .simulate import RunResult  # noqa: E402


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_delay_profile(
    path: Path,
    event: str,
    delays: Sequence[float],
    values: Sequence[float],
    *,
    chosen: float,
    declared: float,
    val_upper: float,
) -> Path:
    """Expected reward as a function of one event's delay (others fixed)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(delays, values, lw=1.5, label="expected reward")
    ax.axvline(chosen, color="C2", ls="--", label=f"synthesized {chosen:.4g}")
    ax.axvline(declared, color="C3", ls=":", label=f"declared {declared:.4g}")
    ax.axhline(val_upper, color="0.5", lw=0.8, label="value at declared delays")
    ax.set_xlabel(f"delay of {event}")
    ax.set_ylabel("expected total reward")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_trace(path: Path, run: RunResult) -> Path:
    """Cumulative reward over time along one simulated run."""
    times, totals = [0.0], [0.0]
    for st in run.steps:
        times.append(times[-1] + st.dwell)
        totals.append(totals[-1] + st.reward)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.step(times, totals, where="post")
    ax.set_xlabel("time")
    ax.set_ylabel("accumulated reward")
    ax.set_title("reached target" if run.reached_target else "truncated run")
    return _save(fig, path)


def plot_bench(path: Path, counts: Mapping[str, int], conservation: Sequence[float], bound: float) -> Path:
    """Product counts per strategy and probability lost along the sweep."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.8))
    names = list(counts)
    a1.bar(names, [counts[k] for k in names], color=["C0", "C1", "C2", "C4"][: len(names)])
    a1.set_yscale("log")
    a1.set_ylabel("vector-matrix products")
    steps = range(1, len(conservation) + 1)
    a2.plot(steps, conservation, lw=1, label="1 - mass")
    a2.plot(steps, [i * bound for i in steps], lw=1, ls="--", label="i * per-step bound")
    a2.set_xlabel("grid step i")
    a2.set_ylabel("probability lost")
    a2.legend(fontsize=8)
    return _save(fig, path)
