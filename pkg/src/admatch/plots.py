"""Figure rendering for protocol outputs. Figures land next to the
delimited report files; everything draws through the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_rows(names: list[str], roc: list[float], pr: list[float], path: Path, title: str) -> None:
    fig, ax = plt.subplots(figsize=(8, 0.45 * len(names) + 1.5))
    y = range(len(names))
    ax.barh([i + 0.2 for i in y], roc, height=0.38, label="ROC AUC", color="#3465a4")
    ax.barh([i - 0.2 for i in y], pr, height=0.38, label="PR AUC", color="#f57900")
    ax.set_yticks(list(y))
    ax.set_yticklabels(names)
    ax.invert_yaxis()
    ax.set_xlim(0.5, 1.0)
    ax.set_xlabel("AUC")
    ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_curves(
    curves: dict[str, tuple[list[float], list[float]]],
    xlabel: str,
    path: Path,
    title: str,
) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for label, (xs, ys) in curves.items():
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("ROC AUC")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_protocol(result, reports_dir: Path) -> None:
    """One figure per protocol: bars for named rows, curves for numeric axes."""
    reports_dir = Path(reports_dir)
    numeric_sweeps = [
        s for s in result.sweeps if s.cells and not isinstance(s.cells[0][0], str)
    ]
    if numeric_sweeps:
        curves = {}
        for sweep in numeric_sweeps:
            branch = sweep.cells[0][1].tags.get("branch", sweep.axis)
            xs = [float(v) for v, _ in sweep.cells]
            ys = [r.roc_auc for _, r in sweep.cells]
            curves[str(branch)] = (xs, ys)
        plot_curves(
            curves,
            xlabel=numeric_sweeps[0].axis,
            path=reports_dir / f"{result.name}.png",
            title=result.name,
        )
    elif result.rows:
        plot_rows(
            [name for name, _ in result.rows],
            [r.roc_auc for _, r in result.rows],
            [r.pr_auc for _, r in result.rows],
            path=reports_dir / f"{result.name}.png",
            title=result.name,
        )
