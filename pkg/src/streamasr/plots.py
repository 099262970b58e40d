"""Render sweep results as dual-axis trade-off figures next to the CSV."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_sweep_figure(rows: list[dict], out_path) -> str:
    """Throughput on the left axis; RTF (streams sweep) or latency (chunk
    sweep) on the right. Returns the written path."""
    if not rows:
        raise ValueError("no sweep rows to plot")
    axis = rows[0]["axis"]
    xs = [row["value"] for row in rows]
    throughput = [row["throughput_audio_s_per_s"] for row in rows]

    fig, ax_left = plt.subplots(figsize=(6.0, 4.0))
    ax_left.plot(xs, throughput, marker="x", color="tab:red", label="throughput")
    ax_left.set_ylabel("throughput (audio s / s)")
    ax_left.set_xlabel("# concurrent streams" if axis == "streams" else "chunk size (ms)")

    ax_right = ax_left.twinx()
    if axis == "streams":
        right = [row["rtf"] for row in rows]
        ax_right.plot(xs, right, marker="o", color="tab:blue", label="RTF")
        ax_right.set_ylabel("RTF")
    else:
        right = [row["mean_latency_ms"] for row in rows]
        ax_right.plot(xs, right, marker="o", color="tab:blue", label="latency")
        ax_right.set_ylabel("user-perceived latency (ms)")

    lines = ax_left.get_lines() + ax_right.get_lines()
    ax_left.legend(lines, [ln.get_label() for ln in lines], loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return str(out_path)
