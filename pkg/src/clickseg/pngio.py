"""PNG and PPM helpers: RGB frames and indexed label masks."""

from __future__ import annotations

import re
from pathlib import Path
from typing import List

import numpy as np
from PIL import Image

from .features import FrameImage

FRAME_PATTERN = re.compile(r"frame_(\d{6})\.(png|ppm)$")


def label_palette(n_labels: int = 256) -> np.ndarray:
    """Deterministic (n, 3) uint8 palette; label 0 is black."""
    base = np.array(
        [
            (0, 0, 0),
            (230, 70, 60),
            (70, 160, 230),
            (80, 200, 110),
            (235, 195, 50),
            (170, 90, 220),
            (240, 130, 40),
            (60, 210, 200),
            (220, 100, 170),
        ],
        dtype=np.uint8,
    )
    if n_labels <= len(base):
        return base[:n_labels]
    extra = []
    for i in range(len(base), n_labels):
        hue = (i * 0.61803398875) % 1.0
        extra.append(_hsv_to_rgb(hue, 0.75, 0.95))
    return np.vstack([base, np.array(extra, dtype=np.uint8)])


def _hsv_to_rgb(h: float, s: float, v: float) -> tuple:
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return tuple(int(round(255 * c)) for c in rgb)


def save_rgb_png(path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def load_rgb_image(path) -> FrameImage:
    with Image.open(path) as img:
        return FrameImage(np.asarray(img.convert("RGB"), dtype=np.uint8))


def save_indexed_png(path, grid: np.ndarray) -> None:
    """Store a label grid as an indexed PNG (pixel value == label id)."""
    grid = np.asarray(grid)
    if grid.min() < 0 or grid.max() > 255:
        raise ValueError("indexed PNG labels must be in [0, 255]")
    img = Image.fromarray(grid.astype(np.uint8), mode="P")
    img.putpalette(label_palette(256).flatten().tolist())
    img.save(path, format="PNG")


def load_indexed_png(path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode != "P":
            img = img.convert("P")
        return np.asarray(img, dtype=np.int32)


def load_frames_dir(directory) -> List[FrameImage]:
    """Load frame_%06d.png/.ppm files, requiring contiguous indices from 0."""
    directory = Path(directory)
    found = {}
    for entry in sorted(directory.iterdir()):
        m = FRAME_PATTERN.match(entry.name)
        if m:
            found[int(m.group(1))] = entry
    if not found:
        raise FileNotFoundError(f"no frame_%06d.png files in {directory}")
    frames = []
    for i in range(len(found)):
        if i not in found:
            raise ValueError(f"frame index {i} missing from {directory}")
        frames.append(load_rgb_image(found[i]))
    return frames
