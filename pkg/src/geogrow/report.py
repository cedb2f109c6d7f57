"""Report rendering: delimited tables plus matplotlib figures.

Every experiment artifact is written twice: a plot-ready CSV for downstream
tooling and a rendered PNG for eyeballs. File contents are deterministic
(sorted keys, no timestamps), so identical runs produce identical bytes.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .experiments import AblationReport, ExperimentReport, RadiusReport  # noqa: E402

_BAR_COLORS = ("#2b6cb0", "#c05621", "#2f855a", "#6b46c1", "#b83280", "#718096")


def write_json(obj: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


# ----------------------------------------------------------- main experiment

def write_scores_csv(report: ExperimentReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["city", "aggregation", "method", "seed", "f1",
                         "epochs_run", "best_epoch"])
        for s in sorted(report.scores, key=lambda s: (s.aggregation, s.method, s.seed)):
            writer.writerow([report.city, s.aggregation, s.method, s.seed,
                             f"{s.f1:.6f}", s.epochs_run, s.best_epoch])


def write_matrix_csv(report: ExperimentReport, path: str | Path) -> None:
    """Aggregation x method matrix of mean F1 (the headline results table)."""
    mean = report.mean_f1()
    aggs = sorted({a for a, _ in mean})
    methods = sorted({m for _, m in mean})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["aggregation"] + methods)
        for a in aggs:
            writer.writerow([a] + [f"{mean.get((a, m), float('nan')):.6f}"
                                   for m in methods])


def figure_matrix(report: ExperimentReport, path: str | Path) -> None:
    mean = report.mean_f1()
    aggs = sorted({a for a, _ in mean})
    methods = sorted({m for _, m in mean})
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(1, len(methods))
    for j, m in enumerate(methods):
        xs = [i + j * width for i in range(len(aggs))]
        ys = [mean.get((a, m), 0.0) for a in aggs]
        ax.bar(xs, ys, width=width, label=m, color=_BAR_COLORS[j % len(_BAR_COLORS)])
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(aggs))])
    ax.set_xticklabels(aggs)
    ax.set_xlabel("aggregation")
    ax.set_ylabel("mean accident-class F1")
    ax.set_title(f"{report.city}: F1 by aggregation and method "
                 f"({len(report.seeds)} runs)")
    ax.legend()
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# --------------------------------------------------------------- radius study

def write_radius_csv(report: RadiusReport, path: str | Path) -> None:
    aggs = sorted(report.mean_f1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["radius_m", "test_samples"] + [f"f1_{a}" for a in aggs])
        for r in report.radii_m:
            writer.writerow([r, report.sample_counts[r]]
                            + [f"{report.mean_f1[a][r]:.6f}" for a in aggs])


def figure_radius(report: RadiusReport, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for j, (agg, by_r) in enumerate(sorted(report.mean_f1.items())):
        radii = sorted(by_r)
        ax.plot(radii, [by_r[r] for r in radii], marker="o", label=agg,
                color=_BAR_COLORS[j % len(_BAR_COLORS)])
    ax.set_xlabel("radius from city center (m)")
    ax.set_ylabel("mean accident-class F1")
    ax.set_title(f"{report.city}: F1 vs evaluation radius")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ------------------------------------------------------------------ ablation

def write_ablation_csv(report: AblationReport, path: str | Path) -> None:
    ratios = report.ratios()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature_group", "f1", "ratio_to_full"])
        writer.writerow(["all", f"{report.full_f1:.6f}", "1.000000"])
        for group in sorted(report.group_f1):
            writer.writerow([group, f"{report.group_f1[group]:.6f}",
                             f"{ratios[group]:.6f}"])


def figure_ablation(report: AblationReport, path: str | Path) -> None:
    groups = ["all"] + sorted(report.group_f1)
    values = [report.full_f1] + [report.group_f1[g] for g in groups[1:]]
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(groups, values,
                  color=[_BAR_COLORS[i % len(_BAR_COLORS)] for i in range(len(groups))])
    for bar, value in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, value + 0.01, f"{value:.2f}",
                ha="center", fontsize=9)
    ax.set_ylabel("mean accident-class F1")
    ax.set_title(f"{report.city}: single-feature-group models ({report.aggregation})")
    ax.set_ylim(0, max(1.0, max(values) + 0.1))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------- train log

def write_train_log_csv(log, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "improved"])
        for entry in log:
            writer.writerow([entry.epoch, f"{entry.train_loss:.8f}",
                             f"{entry.val_loss:.8f}", int(entry.improved)])
