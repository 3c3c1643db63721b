"""Rendering of evaluation results: CSV tables, text summaries, figures.

The CSV carries full precision for downstream tooling; the text summary is
the human-oriented view (metrics rounded, one column per model); figures are
rendered to PNG next to the delimited output.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvalReport, P_AT_THRESHOLDS_MM

_CSV_COLUMNS = ("n", "rmse_mm", "mae_mm", "medae_mm", "r2",
                *(f"p_at_{int(m)}" for m in P_AT_THRESHOLDS_MM), "runtime_s")


def _fmt(v: float) -> str:
    return "%.17g" % v


def write_eval_csv(report: EvalReport, path) -> None:
    """Per-fold rows plus 'mean' and 'ci95' aggregate rows per model."""
    lines = ["model,fold," + ",".join(_CSV_COLUMNS)]
    for name in report.models:
        for f, ms in enumerate(report.fold_metrics[name]):
            values = [ms.value(k) if k != "n" else ms.n for k in _CSV_COLUMNS]
            lines.append(f"{name},{f}," + ",".join(_fmt(v) for v in values))
        agg = report.aggregates[name]
        total_n = sum(ms.n for ms in report.fold_metrics[name])
        means = [total_n if k == "n" else agg[k][0] for k in _CSV_COLUMNS]
        halves = [0 if k == "n" else agg[k][1] for k in _CSV_COLUMNS]
        lines.append(f"{name},mean," + ",".join(_fmt(v) for v in means))
        lines.append(f"{name},ci95," + ",".join(_fmt(v) for v in halves))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_TEXT_ROWS = (
    ("RMSE (mm)", "rmse_mm", 1),
    ("MAE (mm)", "mae_mm", 1),
    ("MedAE (mm)", "medae_mm", 1),
    ("R2", "r2", 3),
    *((f"P@{int(m)} mm", f"p_at_{int(m)}", 3) for m in P_AT_THRESHOLDS_MM),
)


def format_eval_text(report: EvalReport) -> str:
    """Human-readable metric table, one column per model."""
    names = report.models
    width = 18
    out = [
        f"Spatially blocked cross-validation: {report.n_folds} folds, "
        f"{report.grid_size:g} m grid, seed {report.seed}",
        "",
        "Metric".ljust(20) + "".join(n.upper().ljust(width) for n in names),
    ]
    for label, key, digits in _TEXT_ROWS:
        cells = []
        for name in names:
            mean, half = report.aggregates[name][key]
            cells.append(f"{mean:.{digits}f} +/- {half:.{digits}f}".ljust(width))
        out.append(label.ljust(20) + "".join(cells))
    cells = []
    for name in names:
        mean, _ = report.aggregates[name]["runtime_s"]
        cells.append(f"{mean:.1f}".ljust(width))
    out.append("Runtime / fold (s)".ljust(20) + "".join(cells))
    out.append("")
    for name in names:
        sizes = ", ".join(str(ms.n) for ms in report.fold_metrics[name])
        out.append(f"{name.upper()} held-out fold sizes: {sizes}")
    return "\n".join(out) + "\n"


def render_eval_figures(report: EvalReport, prefix) -> list[Path]:
    """PNG figures next to the CSV: per-fold metrics and P@m curves."""
    prefix = Path(prefix)
    paths = []
    names = report.models
    folds = np.arange(report.n_folds)
    bar_w = 0.8 / len(names)

    fig, axes = plt.subplots(2, 2, figsize=(9, 6.5))
    panels = (("rmse_mm", "RMSE (mm)"), ("mae_mm", "MAE (mm)"),
              ("r2", "R$^2$"), ("runtime_s", "runtime per fold (s)"))
    for ax, (key, label) in zip(axes.ravel(), panels):
        for i, name in enumerate(names):
            values = [ms.value(key) for ms in report.fold_metrics[name]]
            ax.bar(folds + (i - (len(names) - 1) / 2) * bar_w, values,
                   width=bar_w, label=name.upper())
        ax.set_xlabel("fold")
        ax.set_ylabel(label)
        ax.set_xticks(folds)
        ax.grid(axis="y", alpha=0.3)
    axes[0, 0].legend(frameon=False)
    fig.suptitle("Cross-validation metrics per fold")
    fig.tight_layout()
    out = prefix.with_name(prefix.name + "_metrics.png")
    fig.savefig(out, dpi=140)
    plt.close(fig)
    paths.append(out)

    fig, ax = plt.subplots(figsize=(6, 4.2))
    ms_x = list(P_AT_THRESHOLDS_MM)
    for name in names:
        means = [report.aggregates[name][f"p_at_{int(m)}"][0] for m in ms_x]
        halves = [report.aggregates[name][f"p_at_{int(m)}"][1] for m in ms_x]
        ax.errorbar(ms_x, means, yerr=halves, marker="o", capsize=3, label=name.upper())
    ax.set_xlabel("error tolerance m (mm)")
    ax.set_ylabel("fraction within tolerance")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    fig.suptitle("Tolerance-aligned accuracy P@m")
    fig.tight_layout()
    out = prefix.with_name(prefix.name + "_p_at.png")
    fig.savefig(out, dpi=140)
    plt.close(fig)
    paths.append(out)
    return paths


def write_importance_csv(feature_names, deltas_by_fold: np.ndarray, path) -> None:
    """Permutation results as ``feature,fold,delta_rmse_mm`` rows."""
    deltas_by_fold = np.atleast_2d(deltas_by_fold)
    lines = ["feature,fold,delta_rmse_mm"]
    for j, name in enumerate(feature_names):
        for f in range(deltas_by_fold.shape[1]):
            lines.append(f"{name},{f}," + _fmt(deltas_by_fold[j, f]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_importance_figure(feature_names, deltas_by_fold: np.ndarray, path,
                             title: str = "Permutation importance",
                             top: int = 20) -> Path:
    """Horizontal bar chart of mean delta-RMSE per feature (top-N)."""
    deltas_by_fold = np.atleast_2d(deltas_by_fold)
    mean = deltas_by_fold.mean(axis=1)
    spread = deltas_by_fold.std(axis=1) if deltas_by_fold.shape[1] > 1 else None
    order = np.argsort(mean)[::-1][:top][::-1]

    fig, ax = plt.subplots(figsize=(6.5, 0.32 * len(order) + 1.2))
    ax.barh(np.arange(len(order)), mean[order],
            xerr=None if spread is None else spread[order], capsize=2)
    ax.set_yticks(np.arange(len(order)))
    ax.set_yticklabels([feature_names[j] for j in order], fontsize=8)
    ax.set_xlabel("increase in held-out RMSE (mm) when shuffled")
    ax.grid(axis="x", alpha=0.3)
    fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=140)
    plt.close(fig)
    return path
