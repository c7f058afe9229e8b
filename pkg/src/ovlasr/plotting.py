"""PNG figures for the evaluation report."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_report(rows, stats, out_dir) -> list[Path]:
    d = Path(out_dir)
    paths = []

    fig, ax = plt.subplots(1, 2, figsize=(10, 3.6))
    if stats.histogram:
        lo = [h[0] for h in stats.histogram]
        ax[0].bar(lo, [h[2] for h in stats.histogram], width=stats.bin_width_s, align="edge",
                  color="#4477aa", edgecolor="white")
        ax2 = ax[0].twinx()
        ax2.plot([c[0] for c in stats.cumulative], [100 * c[1] for c in stats.cumulative],
                 color="#cc6677", marker=".")
        ax2.set_ylabel("overlap time in longer overlaps (%)")
        ax2.set_ylim(0, 100)
    ax[0].set_xlabel("overlap duration (s)")
    ax[0].set_ylabel("count")
    card = sorted(stats.by_cardinality)
    ax[1].bar([str(n) for n in card], [stats.by_cardinality[n] for n in card], color="#228833")
    ax[1].set_xlabel("simultaneous speakers")
    ax[1].set_ylabel("time (s)")
    fig.tight_layout()
    p = d / "fig2.png"
    fig.savefig(p, dpi=100)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(6, 3.6))
    sc_rows = [r for r in rows if set(r.wer) != {"*"}]
    for m in ("MEAN", "MEDIAN", "MEDOID", "LAST"):
        pts = [(r.n, r.wer[m]) for r in sc_rows if m in r.wer and r.model.startswith("SI+SC")]
        if pts:
            ax.plot(*zip(*sorted(pts)), marker="o", label=m)
    for r in rows:
        if set(r.wer) == {"*"}:
            ax.axhline(r.wer["*"], color="grey", linestyle="--", label=r.model)
    ax.set_xlabel("N (recent speakers)")
    ax.set_ylabel("WER (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    p = d / "table1.png"
    fig.savefig(p, dpi=100)
    plt.close(fig)
    paths.append(p)
    return paths
