"""Report rendering: metric files, training-log files, and figures.

Every machine-readable document is JSON with sorted keys and the wall-clock
timestamp segregated into its own field, so two runs of the same seed can
be compared byte for byte after dropping that one field. Figures land next
to the delimited output as PNGs.
"""

from __future__ import annotations

import json
import os
import time

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import MetricsReport


def timestamped(doc: dict) -> dict:
    out = dict(doc)
    out["timestamp"] = time.time()
    return out


def write_json(doc: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_metrics_outputs(
    report: MetricsReport,
    out_dir: str,
    stem: str = "metrics",
    figures: bool = True,
    extra: dict | None = None,
) -> dict:
    """Write {stem}.json/.txt/.tsv (and .png) under out_dir; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    doc = report.to_json_dict()
    if extra:
        doc.update(extra)
    paths = {
        "json": os.path.join(out_dir, f"{stem}.json"),
        "table": os.path.join(out_dir, f"{stem}.txt"),
        "tsv": os.path.join(out_dir, f"{stem}.tsv"),
    }
    write_json(timestamped(doc), paths["json"])
    with open(paths["table"], "w") as fh:
        fh.write(report.format_table() + "\n")
    with open(paths["tsv"], "w") as fh:
        fh.write(report.to_tsv())
    if figures:
        paths["figure"] = os.path.join(out_dir, f"{stem}.png")
        _plot_metrics(report, paths["figure"])
    return paths


def _plot_metrics(report: MetricsReport, path: str) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4), sharey=True)
    width = 0.35
    for ax, metric, title in zip(axes, ("hr", "ndcg"), ("HR@k", "NDCG@k")):
        xs = range(len(report.ks))
        for off, t in ((0.0, "purchase"), (width, "click")):
            vals = [report.values[t][metric][k] for k in report.ks]
            ax.bar([x + off for x in xs], vals, width=width, label=t)
        ax.set_xticks([x + width / 2 for x in xs])
        ax.set_xticklabels([f"@{k}" for k in report.ks])
        ax.set_title(title)
        ax.grid(axis="y", alpha=0.3)
    axes[0].set_ylabel("score")
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_curves(log: list[dict], path: str) -> None:
    """Loss components and the validation metric over training steps."""
    train = [r for r in log if r.get("event") == "train"]
    vals = [r for r in log if r.get("event") == "validation"]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    if train:
        steps = [r["step"] for r in train]
        for key in ("L_s", "L_p", "L_n"):
            axes[0].plot(steps, [r[key] for r in train], label=key)
        axes[0].legend()
    axes[0].set_title("training losses")
    axes[0].set_xlabel("step")
    axes[0].grid(alpha=0.3)
    if vals:
        steps = [r["step"] for r in vals]
        axes[1].plot(steps, [r["val_purchase_ndcg10"] for r in vals], marker="o")
    axes[1].set_title("validation purchase NDCG@10")
    axes[1].set_xlabel("step")
    axes[1].grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def append_jsonl(record: dict, path: str) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
