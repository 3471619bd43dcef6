"""Figures written by the CLI. Always rendered off-screen with the Agg backend."""

from __future__ import annotations

import io
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .datasets import atomic_write_bytes  # noqa: E402
from .geometry import lrp  # noqa: E402
from .simulator import RenderParams, TargetModel, render_hrrp  # noqa: E402

# fixed metadata keeps the PNG bytes identical across reruns
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120, metadata=_PNG_META)
    plt.close(fig)
    atomic_write_bytes(Path(path), buf.getvalue())
    return Path(path)


def lrp_vs_aspect(targets: list[TargetModel], params: RenderParams, path, n_angles: int = 180) -> Path:
    """Noiseless LRP over a full turn, one curve per target, with the |L cos| + |W sin| law dashed."""
    clean = RenderParams(params.n_bins, params.delta_r)
    phi = np.arange(n_angles) * 2 * math.pi / n_angles
    fig, ax = plt.subplots(figsize=(7, 4))
    for tgt in targets:
        vals = [lrp(render_hrrp(tgt, p, clean), clean.delta_r) for p in phi]
        (line,) = ax.plot(np.degrees(phi), vals, lw=1.2, label=f"class {tgt.class_id}")
        law = np.abs(tgt.length * np.cos(phi)) + np.abs(tgt.width * np.sin(phi))
        ax.plot(np.degrees(phi), law, ls="--", lw=0.8, color=line.get_color())
    ax.set_xlabel("aspect angle [deg]")
    ax.set_ylabel("LRP [m]")
    ax.set_xlim(0, 360)
    ax.set_xticks(range(0, 361, 90))
    if len(targets) <= 10:
        ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def kalman_error_vs_k(report_dict: dict, path) -> Path:
    """Mean and median error per context length, overall and over the worst decile."""
    k = report_dict["k"]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(k, report_dict["per_k_mean"], "o-", label="mean, all segments")
    ax.plot(k, report_dict["per_k_median"], "s--", label="median, all segments")
    ax.plot(k, report_dict["worst_decile_per_k_mean"], "^-", label="mean, worst 10%")
    ax.set_xlabel("context length k [samples]")
    ax.set_ylabel(f"wrapped aspect error [{report_dict['units']}]")
    ax.set_xticks(k)
    ax.set_ylim(bottom=0)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def results_bars(table: dict[str, dict[str, float]], path, ylabel: str = "test accuracy [%]") -> Path:
    """Grouped bars: one group per backbone, one bar per conditioning row."""
    rows = list(table)
    cols = sorted({c for r in rows for c in table[r]}, key=lambda c: ("mlp", "conv", "resnet").index(c)
                  if c in ("mlp", "conv", "resnet") else 99)
    x = np.arange(len(cols))
    w = 0.8 / max(len(rows), 1)
    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * len(cols), 4))
    for i, r in enumerate(rows):
        vals = [table[r].get(c, np.nan) for c in cols]
        ax.bar(x + (i - (len(rows) - 1) / 2) * w, vals, w, label=r)
    ax.set_xticks(x)
    ax.set_xticklabels(cols)
    ax.set_ylabel(ylabel)
    ax.set_ylim(0, 100)
    ax.grid(axis="y", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
