"""Figure rendering for run reports.

Figures are written next to the CSV outputs; PNG metadata is stripped so
re-running a command reproduces byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KW = dict(dpi=110, metadata={"Software": ""})


def _mark_period_boundaries(ax, records):
    starts = [r.epoch for i, r in enumerate(records)
              if i > 0 and r.period != records[i - 1].period]
    for x in starts:
        ax.axvline(x - 0.5, color="grey", lw=0.8, ls=":")


def save_training_curves(log, path, title: str = "") -> None:
    """Loss curve with period boundaries; mAP points on a twin axis."""
    records = log.records
    epochs = [r.epoch for r in records]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [r.loss for r in records], color="tab:blue", label="train loss")
    _mark_period_boundaries(ax, records)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    evals = [(r.epoch, r.mean_ap) for r in records if r.mean_ap is not None]
    if evals:
        ax2 = ax.twinx()
        ax2.plot(*zip(*evals), color="tab:red", marker="o", ms=3, lw=1, label="mAP")
        ax2.set_ylabel("mAP")
        ax2.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_strategy_comparison(logs: dict[str, object], path) -> None:
    """Overlayed loss curves (left) and mAP trajectories (right) per strategy."""
    fig, (ax_loss, ax_map) = plt.subplots(1, 2, figsize=(11, 4))
    for name, log in logs.items():
        records = log.records
        ax_loss.plot([r.epoch for r in records], [r.loss for r in records],
                     label=name, lw=1.2)
        evals = [(r.epoch, r.mean_ap) for r in records if r.mean_ap is not None]
        if evals:
            ax_map.plot(*zip(*evals), marker="o", ms=3, lw=1.2, label=name)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_loss.legend()
    ax_map.set_xlabel("epoch")
    ax_map.set_ylabel("mAP")
    ax_map.set_ylim(0, 1)
    ax_map.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_cmc_curve(report, path, max_rank: int | None = None) -> None:
    ranks = sorted(report.cmc)
    if max_rank:
        ranks = [k for k in ranks if k <= max_rank]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(ranks, [report.cmc[k] for k in ranks], marker="o", ms=3)
    ax.set_xlabel("rank k")
    ax.set_ylabel("CMC(k)")
    ax.set_ylim(0, 1.02)
    ax.set_title(f"mAP {report.mean_ap:.4f}")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
