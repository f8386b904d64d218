"""Report figures. Rendered off-screen with byte-stable PNG output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "hybridtod",
}
VARIANT_ORDER = ("base", "hybrid", "unstructured")
COLORS = ("#33658a", "#f6ae2d", "#86bbd8", "#f26419", "#758e4f")


def save(fig, path) -> Path:
    # no Software/date tags so the same data gives the same bytes
    path = Path(path)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def slot_placement_figure(stats_json: dict, path, title: str | None = None) -> Path:
    """Per domain, structured vs FAQ-held value counts for each slot type."""
    slot_types = stats_json["slot_types"]
    doms = [d for d in slot_types if slot_types[d]]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, max(len(doms), 1), figsize=(3.2 * max(len(doms), 1), 3.2), squeeze=False)
        for ax, dom in zip(axes[0], doms):
            slots = list(slot_types[dom])
            s = np.array([slot_types[dom][k]["structured"] for k in slots])
            u = np.array([slot_types[dom][k]["unstructured"] for k in slots])
            y = np.arange(len(slots))
            ax.barh(y, s, color=COLORS[0], label="structured")
            ax.barh(y, u, left=s, color=COLORS[1], label="FAQ")
            ax.set_yticks(y, slots)
            ax.invert_yaxis()
            ax.set_title(dom)
            ax.set_xlabel("slot-values")
        if doms:
            axes[0][0].legend(loc="lower right", frameon=False)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return save(fig, path)


def variant_comparison_figure(comparison: dict, path) -> Path:
    """Grouped bars of mean slot-values and mean FAQs per entity, per variant."""
    doms = list(comparison)
    seen = {v for d in doms for v in comparison[d]}
    variants = [v for v in VARIANT_ORDER if v in seen] + sorted(seen - set(VARIANT_ORDER))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7.0, 3.0))
        x = np.arange(len(doms))
        width = 0.8 / max(len(variants), 1)
        for ax, key, label in zip(
            axes, ("mean_structured_slot_values", "mean_faqs"), ("slot-values / entity", "FAQs / entity")
        ):
            for i, v in enumerate(variants):
                vals = [comparison[d].get(v, {}).get(key, 0.0) for d in doms]
                ax.bar(x + (i - (len(variants) - 1) / 2) * width, vals, width, color=COLORS[i % len(COLORS)], label=v)
            ax.set_xticks(x, doms)
            ax.set_ylabel(label)
        axes[0].legend(frameon=False)
        fig.tight_layout()
        return save(fig, path)


def metrics_figure(row: dict, path, title: str | None = None) -> Path:
    """Bar chart of one report row (all values on a 0..100 scale)."""
    names = list(row)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 2.8))
        bars = ax.bar(names, [row[n] for n in names], color=COLORS[0])
        for b, n in zip(bars, names):
            ax.annotate(f"{row[n]:.1f}", (b.get_x() + b.get_width() / 2, b.get_height()), ha="center", va="bottom")
        ax.set_ylim(0, 105)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return save(fig, path)


def cut_profile_figure(fractions: dict, path) -> Path:
    """Moved fraction per slot type, with the half-way line for reference."""
    slots = list(fractions)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 0.3 * max(len(slots), 4) + 1))
        y = np.arange(len(slots))
        ax.barh(y, [fractions[s]["fraction"] for s in slots], color=COLORS[3])
        ax.axvline(0.5, color="0.4", lw=0.8, ls="--")
        ax.set_yticks(y, slots)
        ax.invert_yaxis()
        ax.set_xlim(0, 1)
        ax.set_xlabel("fraction moved to FAQs")
        fig.tight_layout()
        return save(fig, path)
