"""PNG figures written next to the CSV outputs of ``run`` and ``compare``.

Uses the non-interactive Agg backend; nothing is ever shown on screen.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "figure.dpi": 110,
}


def _save(fig, path) -> str:
    fig.tight_layout()
    tmp = f"{path}.tmp.png"
    fig.savefig(tmp)
    plt.close(fig)
    os.replace(tmp, path)
    return os.fspath(path)


def plot_run(runlog, out_dir) -> list[str]:
    """Training curves and the final norm histogram of a single run."""
    written = []
    it = np.asarray(runlog.column("iter"))
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(2, 2, figsize=(8, 5.5))
        panels = [
            ("loss", "metric loss", False),
            ("sec_loss", "weighted penalty", False),
            ("norm_var", "batch norm variance", True),
            ("dtheta_mean", "mean direction change (rad)", True),
        ]
        for ax, (col, title, logy) in zip(axes.flat, panels):
            y = np.asarray(runlog.column(col), dtype=float)
            if logy and np.all(y > 0):
                ax.set_yscale("log")
            ax.plot(it, y, lw=1)
            ax.set_title(title)
            ax.set_xlabel("iteration")
        written.append(_save(fig, os.path.join(out_dir, "curves.png")))

        if runlog.final_norms:
            fig, ax = plt.subplots(figsize=(4.5, 3.2))
            ax.hist(runlog.final_norms, bins=20, color="0.35")
            ax.set_xlabel("embedding norm")
            ax.set_ylabel("count")
            written.append(_save(fig, os.path.join(out_dir, "norms_hist.png")))

        if runlog.metrics:
            fig, ax = plt.subplots(figsize=(4.5, 3.2))
            mit = [m.iter for m in runlog.metrics]
            if runlog.metrics[0].recall:
                ax.plot(mit, [m.recall[0] for m in runlog.metrics], marker="o", label="R@1")
            ax.plot(mit, [np.nan if m.nmi is None else m.nmi for m in runlog.metrics], marker="s", label="NMI")
            ax.set_xlabel("iteration")
            ax.set_ylim(0, 1.02)
            ax.legend(frameon=False)
            written.append(_save(fig, os.path.join(out_dir, "metrics.png")))
    return written


def plot_compare(logs: dict, out_dir) -> list[str]:
    """Overlay norm variance and Recall@1 of each variant."""
    written = []
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.5))
        for name, lg in logs.items():
            ax.plot(lg.column("iter"), lg.column("norm_var"), lw=1, label=name)
        if all(v > 0 for lg in logs.values() for v in lg.column("norm_var")):
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("batch norm variance")
        ax.legend(frameon=False)
        written.append(_save(fig, os.path.join(out_dir, "compare_norm_var.png")))

        if any(lg.metrics and lg.metrics[0].recall for lg in logs.values()):
            fig, ax = plt.subplots(figsize=(5.5, 3.5))
            for name, lg in logs.items():
                if lg.metrics and lg.metrics[0].recall:
                    ax.plot([m.iter for m in lg.metrics], [m.recall[0] for m in lg.metrics],
                            marker="o", label=name)
            ax.set_xlabel("iteration")
            ax.set_ylabel("Recall@1")
            ax.legend(frameon=False)
            written.append(_save(fig, os.path.join(out_dir, "compare_recall.png")))
    return written
