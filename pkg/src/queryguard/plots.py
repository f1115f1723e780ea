"""Figure rendering for the CLI report paths.

Every report-producing subcommand writes a PNG next to its CSV unless
asked not to. Rendering is headless (Agg backend).
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .detector import Verdict


def plot_bound_curves(rows: Sequence[dict], path: str) -> None:
    """Flag-probability bounds (and Monte-Carlo estimates) against hash difference."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    thresholds = sorted({r["t"] for r in rows})
    multi = len(thresholds) > 1
    for t in thresholds:
        sub = [r for r in rows if r["t"] == t]
        ds = [r["d"] for r in sub]
        suffix = f" (t={t})" if multi else ""
        (line,) = ax.plot(ds, [r["q_upper"] for r in sub], label="upper bound" + suffix)
        ax.plot(
            ds,
            [r["q_lower"] for r in sub],
            label="lower bound" + suffix,
            color=line.get_color(),
            linestyle="--",
        )
        mc_rows = [r for r in sub if r.get("mc_estimate") is not None]
        if mc_rows:
            ax.errorbar(
                [r["d"] for r in mc_rows],
                [r["mc_estimate"] for r in mc_rows],
                yerr=[3 * r["mc_stderr"] for r in mc_rows],
                label="simulated (3 sigma)" + suffix,
                color=line.get_color(),
                marker="o",
                markersize=3,
                linestyle=":",
            )
    ax.set_xlabel("per-side hash difference")
    ax.set_ylabel("flag probability")
    ax.set_ylim(-0.03, 1.03)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_latency(rows: Sequence[dict], path: str) -> None:
    """Match-and-insert latency against stored fingerprint count."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    aggregate = [r for r in rows if r.get("thread") == "all"]
    plot_rows = aggregate or list(rows)
    ns = [r["n"] for r in plot_rows]
    ax.plot(ns, [r["mean_ms"] for r in plot_rows], marker="o", label="mean")
    ax.plot(ns, [r["p99_ms"] for r in plot_rows], marker="s", label="p99")
    ax.set_xscale("log")
    ax.set_xlabel("stored fingerprints")
    ax.set_ylabel("latency per query (ms)")
    ax.legend()
    ax.grid(True, alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_stream_overlap(verdicts: Sequence[Verdict], threshold: int, path: str) -> None:
    """Per-query max fingerprint overlap over time, benign vs attack."""
    fig, ax = plt.subplots(figsize=(7.2, 4.2))
    benign = [(v.record.timestamp, v.overlap) for v in verdicts if not v.record.is_attack]
    attack = [(v.record.timestamp, v.overlap) for v in verdicts if v.record.is_attack]
    if benign:
        ax.scatter(*zip(*benign), s=6, alpha=0.5, label="benign", color="tab:blue")
    if attack:
        ax.scatter(*zip(*attack), s=6, alpha=0.5, label="attack", color="tab:red")
    ax.axhline(threshold, color="black", linestyle="--", linewidth=1, label="threshold")
    ax.set_xlabel("query timestamp")
    ax.set_ylabel("max overlap with stored fingerprints")
    ax.legend(loc="center right")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
