"""Matplotlib renderings written next to the delimited/JSON reports."""

from __future__ import annotations

from typing import List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .correlation import Click, LabelMask
from .features import STRIDE, FrameImage
from .pngio import label_palette


def overlay_frame(frame: FrameImage, mask: LabelMask, alpha: float = 0.55) -> np.ndarray:
    """Blend a feature-resolution mask (nearest-upsampled) onto the frame."""
    palette = label_palette(256)
    up = np.kron(mask.grid, np.ones((STRIDE, STRIDE), dtype=np.int32))
    up = up[: frame.height, : frame.width]
    colors = palette[np.clip(up, 0, 255)]
    out = frame.rgb.astype(np.float64)
    hit = up > 0
    out[hit] = (1 - alpha) * out[hit] + alpha * colors[hit]
    return out.astype(np.uint8)


def save_overlay_strip(
    path,
    frames: Sequence[FrameImage],
    masks: Sequence[LabelMask],
    clicks: Sequence[Click] = (),
) -> None:
    """One row of frames with mask overlays and click markers."""
    n = len(frames)
    fig, axes = plt.subplots(1, n, figsize=(2.2 * n, 2.6))
    if n == 1:
        axes = [axes]
    by_frame = {}
    for c in clicks:
        by_frame.setdefault(c.frame, []).append(c)
    for t, (ax, frame, mask) in enumerate(zip(axes, frames, masks)):
        ax.imshow(overlay_frame(frame, mask))
        for c in by_frame.get(t, []):
            ax.plot(c.x, c.y, "o", color="red", markersize=4)
        ax.set_title(f"t={t}", fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_iou_bars(path, report) -> None:
    """Per-instance IOU bars with the overall mean marked."""
    rows = report.per_instance
    fig, ax = plt.subplots(figsize=(max(3.5, 0.6 * len(rows) + 1.5), 3.0))
    if rows:
        labels = [str(r["id"]) for r in rows]
        values = [r["iou"] for r in rows]
        palette = label_palette(len(rows) + 1) / 255.0
        ax.bar(range(len(rows)), values, color=palette[1 : len(rows) + 1])
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.axhline(report.miou, color="black", linestyle="--", linewidth=1, label=f"mIOU={report.miou:.3f}")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("volume IOU")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_loss_curve(path, losses: Sequence[float]) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    ax.plot(range(len(losses)), losses)
    ax.set_xlabel("step")
    ax.set_ylabel("point CE loss")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
