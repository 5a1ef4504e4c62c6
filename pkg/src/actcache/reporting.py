"""CSV report writers and the matplotlib figures rendered alongside them.

Every report command emits RFC-4180 CSV (header row, '.' decimal) as the
canonical output; figures are a convenience rendering of the same rows and
can be suppressed. Timing-derived panels are advisory and excluded from
reproducibility guarantees.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence


def write_csv(path, fieldnames: Sequence[str], rows: Sequence[dict]) -> Path:
    target = Path(path)
    with open(target, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return target


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def figure_path_for(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def profile_figure(rows: Sequence[dict], path) -> Path:
    """Ratio and wall-clock cost against chunk size, one panel each."""
    plt = _pyplot()
    sizes = [int(r["chunk_size"]) for r in rows]
    ratios = [float(r["ratio"]) for r in rows]
    enc = [float(r["encode_s"]) for r in rows]
    dec = [float(r["decode_s_per_sample"]) for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(sizes, ratios, "o-")
    ax1.set_xscale("log", base=2)
    ax1.set_xlabel("chunk size")
    ax1.set_ylabel("compression ratio")
    ax1.set_title("ratio vs chunk size")
    ax1.grid(True, alpha=0.3)
    ax2.plot(sizes, enc, "o-", label="encode total (s)")
    ax2.plot(sizes, dec, "s--", label="decode per sample (s)")
    ax2.set_xscale("log", base=2)
    ax2.set_yscale("log")
    ax2.set_xlabel("chunk size")
    ax2.set_ylabel("seconds")
    ax2.set_title("time vs chunk size")
    ax2.legend()
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def bench_figure(rows: Sequence[dict], path) -> Path:
    """Ratio against tolerance (log-x) with timing overlays."""
    plt = _pyplot()
    taus = [float(r["tau"]) for r in rows]
    ratios = [float(r["ratio"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    positive = [(t, r) for t, r in zip(taus, ratios) if t > 0]
    zero = [r for t, r in zip(taus, ratios) if t == 0]
    if positive:
        ax.plot([t for t, _ in positive], [r for _, r in positive], "o-", label="lossy")
        ax.set_xscale("log")
    if zero:
        ax.axhline(zero[0], color="gray", linestyle=":", label="lossless")
    ax.set_xlabel("tolerance")
    ax.set_ylabel("compression ratio")
    ax.set_title("ratio vs tolerance")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def cost_figure(rows: Sequence[dict], path) -> Path:
    """Per-stage FLOPs bars and resident memory line."""
    plt = _pyplot()
    stage_rows = [r for r in rows if r["stage"] != "total"]
    names = [str(r["stage"]) for r in stage_rows]
    flops = [float(r["flops_total"]) for r in stage_rows]
    mem = [float(r["avg_mem"]) for r in stage_rows]
    fig, ax1 = plt.subplots(figsize=(6, 3.5))
    xs = range(len(names))
    ax1.bar(xs, flops, color="tab:blue", alpha=0.7)
    ax1.set_xticks(list(xs), names)
    ax1.set_xlabel("stage")
    ax1.set_ylabel("total FLOPs", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(xs, mem, "o-", color="tab:red")
    ax2.set_ylabel("resident memory", color="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def e2e_figure(rows: Sequence[dict], path) -> Path:
    """Grouped accuracy bars per seed for each training route."""
    plt = _pyplot()
    seed_rows = [r for r in rows if r["seed"] != "mean"]
    routes = ["acc_raw", "acc_compressed", "acc_naive_flip", "acc_sim_aug"]
    labels = ["raw", "compressed", "comp + naive flip", "comp + sim-aware aug"]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    width = 0.2
    for i, (route, label) in enumerate(zip(routes, labels)):
        xs = [j + (i - 1.5) * width for j in range(len(seed_rows))]
        ax.bar(xs, [float(r[route]) for r in seed_rows], width=width, label=label)
    ax.set_xticks(range(len(seed_rows)), [f"seed {r['seed']}" for r in seed_rows])
    ax.set_ylabel("probe accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
