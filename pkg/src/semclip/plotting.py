"""Accuracy-vs-SNR and accuracy-vs-bandwidth figures from report rows."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiments import ALL_METHODS, summarize  # noqa: E402

STYLE = {
    "semclip": dict(color="tab:red", marker="o"),
    "semclip_no_tapl": dict(color="tab:orange", marker="s"),
    "semclip_no_af": dict(color="tab:purple", marker="^"),
    "clip_ft_direct": dict(color="tab:blue", marker="v"),
    "upper_bound": dict(color="0.4", linestyle="--", marker=""),
}


def _series(rows, metric):
    table = summarize(r for r in rows if r.metric == metric)
    out = {}
    for (method, _, x), (mean, std, _) in table.items():
        out.setdefault(method, []).append((x, mean, std))
    return {m: sorted(v) for m, v in sorted(out.items(), key=lambda kv: ALL_METHODS.index(kv[0]))}


def plot_snr(rows, path, metric: str = "top1") -> Path:
    series = _series(rows, metric)
    if not series:
        raise ValueError(f"no rows for metric {metric!r}")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for method, pts in series.items():
        x, y, e = zip(*pts)
        ax.errorbar(x, y, yerr=e, label=method, capsize=3, **STYLE.get(method, {}))
    ax.set_xlabel("channel SNR (dB)")
    ax.set_ylabel("top-1 accuracy" if metric == "top1" else metric)
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_bandwidth(rows, path) -> Path:
    rows = list(rows)
    if not rows:
        raise ValueError("no bandwidth rows")
    ratio = {r.channel_uses: r.bandwidth_ratio for r in rows}
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for method, pts in _series(rows, "top1").items():
        x = [ratio[p[0]] for p in pts]
        _, y, e = zip(*pts)
        ax.errorbar(x, y, yerr=e, label=method, capsize=3, **STYLE.get(method, {}))
    ax.set_xscale("log")
    ax.set_xlabel("bandwidth ratio L / (C W H)")
    ax.set_ylabel("top-1 accuracy")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def emit_plots(rows, out_dir, bandwidth_rows=None) -> list[Path]:
    """Render every figure the rows support into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    if not rows and not bandwidth_rows:
        raise ValueError("nothing to plot")
    paths = []
    for metric in sorted({r.metric for r in rows}):
        name = "accuracy_vs_snr.png" if metric == "top1" else "recall_vs_snr.png"
        paths.append(plot_snr(rows, out_dir / name, metric))
    if bandwidth_rows:
        paths.append(plot_bandwidth(bandwidth_rows, out_dir / "accuracy_vs_bandwidth.png"))
    return paths
