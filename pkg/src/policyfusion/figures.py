"""Optional report figures: bar charts rendered next to the CSV output.

The report JSON/CSV stays the source of truth; these renderings are a CLI
convenience and replot nothing that is not already in the report.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def _bar(ax, labels, values, title, ylabel, errs=None):
    x = range(len(labels))
    ax.bar(x, values, yerr=errs, capsize=3, color="#4878a8")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_title(title, fontsize=10)
    ax.set_ylabel(ylabel)


def render_report_figures(report: dict, out_dir) -> list:
    """Write one PNG per metric family present in the report; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    configs = report["configurations"]
    written = []

    norm_configs = [c for c in configs if c["normalized"]]
    if norm_configs:
        channels = sorted({ch for c in norm_configs for ch in c["normalized"]})
        fig, axes = plt.subplots(1, len(channels),
                                 figsize=(4.2 * len(channels), 3.2))
        axes = [axes] if len(channels) == 1 else list(axes)
        for ax, ch in zip(axes, channels):
            _bar(ax, [c["config_id"] for c in norm_configs],
                 [c["normalized"].get(ch, 0.0) for c in norm_configs],
                 f"normalized {ch}", "reward / specialist")
        fig.tight_layout()
        path = os.path.join(out_dir, "normalized_rewards.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    h2h_configs = [c for c in configs if "win_rate" in c]
    if h2h_configs:
        fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * len(h2h_configs)), 3.2))
        errs = [[c["win_rate"] - c["ci_low"] for c in h2h_configs],
                [c["ci_high"] - c["win_rate"] for c in h2h_configs]]
        _bar(ax, [c["config_id"] for c in h2h_configs],
             [c["win_rate"] for c in h2h_configs],
             "head-to-head win rate (95% CI)", "win rate", errs)
        ax.axhline(0.5, color="gray", linestyle=":", linewidth=1)
        fig.tight_layout()
        path = os.path.join(out_dir, "win_rates.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    style_configs = [c for c in configs if c["style"]]
    if style_configs:
        keys = ("melee_share", "ranged_share", "loot_per_episode")
        fig, axes = plt.subplots(1, len(keys), figsize=(4.2 * len(keys), 3.2))
        for ax, key in zip(axes, keys):
            _bar(ax, [c["config_id"] for c in style_configs],
                 [c["style"].get(key, 0.0) for c in style_configs],
                 key.replace("_", " "), key.replace("_", " "))
        fig.tight_layout()
        path = os.path.join(out_dir, "style_stats.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
