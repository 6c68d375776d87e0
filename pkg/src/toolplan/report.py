"""Results rendering: delimited tables, aligned text, and figures.

Takes the EvalReport rows produced by the harness and writes a CSV, an
aligned plain-text table, and matplotlib PNGs next to them.
"""

from __future__ import annotations

import csv
import os
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .corpus import STRATEGIES
from .harness import EvalReport

COLUMNS = ("Action", "Plan") + tuple(s.capitalize() for s in STRATEGIES)


def _row_values(report: EvalReport) -> list:
    vals = [report.action_prediction_accuracy, report.plan_execution_accuracy]
    vals += [report.generalization.get(s) for s in STRATEGIES]
    return vals


def _fmt(v: Optional[float]) -> str:
    return "-" if v is None else f"{v:.3f}"


def results_csv(rows: Sequence[EvalReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("Model",) + COLUMNS)
        for r in rows:
            writer.writerow([r.name] + [_fmt(v) for v in _row_values(r)])


def results_text(rows: Sequence[EvalReport]) -> str:
    """Aligned text table, one row per model variant."""
    header = ["Model"] + list(COLUMNS)
    body = [[r.name] + [_fmt(v) for v in _row_values(r)] for r in rows]
    widths = [
        max(len(line[i]) for line in [header] + body)
        for i in range(len(header))
    ]
    sep = "  "
    out = [sep.join(h.ljust(w) for h, w in zip(header, widths))]
    out.append(sep.join("-" * w for w in widths))
    for line in body:
        out.append(sep.join(c.ljust(w) for c, w in zip(line, widths)))
    return "\n".join(out) + "\n"


def loss_figure(rows: Sequence[EvalReport], path) -> None:
    """Training loss curves, one line per variant."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for r in rows:
        if r.train is None:
            continue
        ax1.plot(r.train.train_loss_curve, label=r.name)
        if r.train.val_accuracy_curve:
            ax2.plot(r.train.val_accuracy_curve, label=r.name)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax1.set_title("Training loss")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("val action accuracy")
    ax2.set_title("Validation accuracy")
    ax1.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def accuracy_figure(rows: Sequence[EvalReport], path) -> None:
    """Grouped bars: plan and action accuracy per model variant."""
    names = [r.name for r in rows]
    plan = [r.plan_execution_accuracy for r in rows]
    action = [r.action_prediction_accuracy for r in rows]
    x = range(len(names))
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.bar([i - 0.2 for i in x], plan, width=0.4, label="plan execution")
    ax.bar([i + 0.2 for i in x], action, width=0.4, label="action prediction")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1)
    ax.set_ylabel("accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(rows: Sequence[EvalReport], out_dir) -> dict:
    """Write results.csv, results.txt, and the figures; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "csv": os.path.join(out_dir, "results.csv"),
        "text": os.path.join(out_dir, "results.txt"),
        "loss_png": os.path.join(out_dir, "loss_curves.png"),
        "accuracy_png": os.path.join(out_dir, "accuracy.png"),
    }
    results_csv(rows, paths["csv"])
    with open(paths["text"], "w", encoding="utf-8") as fh:
        fh.write(results_text(rows))
    loss_figure(rows, paths["loss_png"])
    accuracy_figure(rows, paths["accuracy_png"])
    return paths
