"""Figures for run logs, rendered headless to PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .report import METHOD_NAMES, granularity_tag  # noqa: E402


def _label(summary: dict, idx: int) -> str:
    method = METHOD_NAMES.get(summary.get("method", "none"), str(summary.get("method")))
    return f"{summary.get('run', idx)}: {method} ({granularity_tag(summary.get('granularity'))})"


def _split_runs(events: list[dict]) -> list[tuple[list, dict]]:
    """Group epoch events with the summary that closes them."""
    runs, current = [], []
    for e in events:
        if e.get("type") == "epoch":
            current.append(e)
        elif e.get("type") == "summary":
            runs.append((current, e))
            current = []
    return runs


def plot_training_curves(events: list[dict], path) -> Path:
    fig, (ax_acc, ax_cost) = plt.subplots(1, 2, figsize=(10, 3.8))
    for idx, (epochs, summary) in enumerate(_split_runs(events)):
        xs = [e["epoch"] for e in epochs]
        key = "val_accuracy" if epochs and "val_accuracy" in epochs[0] else "accuracy"
        ax_acc.plot(xs, [e.get(key) for e in epochs], label=_label(summary, idx))
        ax_cost.plot(xs, [e.get("ebops") for e in epochs], label=_label(summary, idx))
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("validation accuracy")
    ax_cost.set_xlabel("epoch")
    ax_cost.set_ylabel("EBOPs")
    ax_cost.set_yscale("log")
    ax_acc.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_accuracy_vs_ebops(summaries: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.8))
    for idx, s in enumerate(summaries):
        if s.get("accuracy") is None or s.get("ebops") is None:
            continue
        ax.scatter(s["ebops"], 100 * s["accuracy"], s=30)
        ax.annotate(_label(s, idx), (s["ebops"], 100 * s["accuracy"]), fontsize=7,
                    xytext=(3, 3), textcoords="offset points")
    ax.set_xscale("log")
    ax.set_xlabel("EBOPs")
    ax.set_ylabel("accuracy (%)")
    fig.tight_layout()
    return _save(fig, path)


def plot_layer_sparsity(summaries: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.8))
    layers = []
    for s in summaries:
        for name in s.get("layer_sparsity") or {}:
            if name not in layers:
                layers.append(name)
    width = 0.8 / max(len(summaries), 1)
    for idx, s in enumerate(summaries):
        per = s.get("layer_sparsity") or {}
        xs = [j + idx * width for j in range(len(layers))]
        ax.bar(xs, [100 * per.get(n, 0.0) for n in layers], width=width, label=_label(s, idx))
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(layers))])
    ax.set_xticklabels(layers)
    ax.set_ylabel("sparsity (%)")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
