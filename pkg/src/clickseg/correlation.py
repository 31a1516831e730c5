"""Embedding matrix assembly, correlation volumes, and mask decoding."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .features import STRIDE, FeatureMap
from .tensors import ContinuousPoint, Matrix2, Tensor3, bilinear_sample, channel_contract

BACKGROUND = 0


@dataclass(frozen=True)
class Click:
    """A single annotator click: image-pixel position plus the new instance id."""

    frame: int
    x: float
    y: float
    instance: int

    def __post_init__(self) -> None:
        if self.instance < 1:
            raise ValueError(f"instance ids start at 1, got {self.instance}")


@dataclass
class EmbeddingMatrix:
    """Stacked background + instance feature vectors; row 0 is background."""

    rows: Matrix2
    row_labels: List[int]

    def __post_init__(self) -> None:
        if len(self.row_labels) != self.rows.rows:
            raise ValueError("row_labels length must match matrix rows")
        if self.row_labels[0] != BACKGROUND:
            raise ValueError("row 0 must be the background embedding")
        if len(set(self.row_labels)) != len(self.row_labels):
            raise ValueError("duplicate labels in embedding matrix")


@dataclass
class CorrelationVolume:
    """Per-row compatibility scores on the feature grid."""

    scores: Tensor3
    row_labels: List[int]
    frame: Optional[int] = None

    def __post_init__(self) -> None:
        if len(self.row_labels) != self.scores.channels:
            raise ValueError("row_labels length must match score channels")


@dataclass
class LabelMask:
    """Feature-resolution label grid; 0 is background."""

    grid: np.ndarray

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=np.int32)
        if self.grid.ndim != 2:
            raise ValueError("LabelMask expects a 2D grid")

    def labels(self) -> Set[int]:
        return set(int(v) for v in np.unique(self.grid))


def click_to_feature_coords(c: Click, stride: int = STRIDE) -> ContinuousPoint:
    """Pixel-center-aligned mapping from image coordinates to the feature grid."""
    return ContinuousPoint(
        (c.x + 0.5) / stride - 0.5,
        (c.y + 0.5) / stride - 0.5,
    )


def extract_keypoint_embeddings(f: FeatureMap, clicks: Sequence[Click]) -> List[np.ndarray]:
    """One bilinear-sampled feature vector per click, order preserved."""
    out = []
    for c in clicks:
        if f.frame is not None and c.frame != f.frame:
            raise ValueError(f"click for instance {c.instance} is on frame {c.frame}, map is frame {f.frame}")
        if not (0 <= c.x < f.source_width and 0 <= c.y < f.source_height):
            raise ValueError(
                f"click for instance {c.instance} at ({c.x}, {c.y}) outside image "
                f"{f.source_width}x{f.source_height}"
            )
        out.append(bilinear_sample(f.values, click_to_feature_coords(c, f.stride)))
    return out


def assemble_embedding_matrix(
    background: np.ndarray, instances: Sequence[Tuple[int, np.ndarray]]
) -> EmbeddingMatrix:
    """Row 0 = background, then instance rows in the given order."""
    background = np.asarray(background)
    d = background.shape[0]
    labels = [BACKGROUND]
    rows = [background]
    for label, vec in instances:
        vec = np.asarray(vec)
        if label in labels:
            raise ValueError(f"duplicate instance label {label}")
        if vec.shape != (d,):
            raise ValueError(f"instance {label} vector has length {vec.shape}, expected ({d},)")
        labels.append(int(label))
        rows.append(vec)
    return EmbeddingMatrix(rows=Matrix2(np.stack(rows, axis=0)), row_labels=labels)


def correlate(e: EmbeddingMatrix, f: FeatureMap) -> CorrelationVolume:
    """Dot product of every embedding row with every feature pixel."""
    if e.rows.cols != f.channels:
        raise ValueError(f"embedding dim {e.rows.cols} vs feature channels {f.channels}")
    return CorrelationVolume(
        scores=channel_contract(e.rows, f.values),
        row_labels=list(e.row_labels),
        frame=f.frame,
    )


def decode_mask(c: CorrelationVolume, suppressed: Iterable[int] = ()) -> LabelMask:
    """Per-pixel argmax over non-suppressed rows; ties go to the lowest row."""
    suppressed = set(suppressed)
    if BACKGROUND in suppressed:
        raise ValueError("background row cannot be suppressed")
    unknown = suppressed - set(c.row_labels)
    if unknown:
        raise ValueError(f"cannot suppress unknown labels {sorted(unknown)}")
    keep = [i for i, lbl in enumerate(c.row_labels) if lbl not in suppressed]
    sub = c.scores.data[keep]
    winners = np.argmax(sub, axis=0)
    label_lut = np.array([c.row_labels[i] for i in keep], dtype=np.int32)
    return LabelMask(label_lut[winners])


def mask_area(m: LabelMask, label: int) -> int:
    """Number of grid cells carrying the given label."""
    return int(np.count_nonzero(m.grid == label))
