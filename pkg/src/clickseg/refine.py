"""Recurrent attention refinement of correlation volumes.

Each step: convert the volume to per-row probability masks (softmax across
rows), pool context-key channels under those masks into an attention matrix
(row-wise softmax over channels), then add the attention-weighted context
values back onto the volume as a residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .correlation import CorrelationVolume
from .features import FeatureMap, FrameImage
from .tensors import (
    Tensor3,
    channel_contract_arrays,
    pixel_contract_arrays,
    softmax_axis0_array,
)


@dataclass
class ChannelMap:
    """Per-pixel affine channel mixer: out = [in +] W @ in + b."""

    weight: np.ndarray
    bias: np.ndarray
    residual: bool = True

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        d = self.bias.shape[0]
        if self.weight.shape != (d, d):
            raise ValueError(f"weight {self.weight.shape} does not match bias length {d}")

    @classmethod
    def identity(cls, dim: int) -> "ChannelMap":
        """Zero mixer with residual pass-through: acts as the identity."""
        return cls(np.zeros((dim, dim)), np.zeros(dim), residual=True)

    @classmethod
    def zero(cls, dim: int) -> "ChannelMap":
        """Maps everything to zero (no residual)."""
        return cls(np.zeros((dim, dim)), np.zeros(dim), residual=False)

    @property
    def dim(self) -> int:
        return self.bias.shape[0]


@dataclass
class RefinementConfig:
    """Number of refinement steps plus the key/value channel maps."""

    steps: int
    key_map: ChannelMap
    value_map: ChannelMap

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be >= 0")

    @classmethod
    def default(cls, dim: int, steps: int = 5) -> "RefinementConfig":
        """Untrained defaults: identity keys, zero values (refinement is a no-op)."""
        return cls(steps=steps, key_map=ChannelMap.identity(dim), value_map=ChannelMap.zero(dim))


def compute_context(
    frame: FrameImage, provider: Callable, frame_index: Optional[int] = None
) -> FeatureMap:
    """Context features from the target frame alone (no reference-frame mixing)."""
    return provider(frame, frame_index)


def apply_channel_map(f: FeatureMap, m: ChannelMap) -> FeatureMap:
    if m.dim != f.channels:
        raise ValueError(f"channel map dim {m.dim} vs feature channels {f.channels}")
    dt = f.values.data.dtype
    mixed = channel_contract_arrays(m.weight.astype(dt), f.values.data)
    mixed += m.bias.astype(dt)[:, None, None]
    if m.residual:
        mixed = f.values.data + mixed
    return FeatureMap(
        values=Tensor3(mixed),
        stride=f.stride,
        pad_bottom=f.pad_bottom,
        pad_right=f.pad_right,
        frame=f.frame,
    )


def refine_step(
    c_prev: CorrelationVolume, f_key: FeatureMap, f_value: FeatureMap
) -> CorrelationVolume:
    """One attention update: C + softmax-pooled(value) residual."""
    scores = c_prev.scores.data
    if f_key.values.data.shape[1:] != scores.shape[1:]:
        raise ValueError("key grid does not match volume grid")
    if f_value.values.data.shape != f_key.values.data.shape:
        raise ValueError("key/value shapes differ")
    s = softmax_axis0_array(scores)
    raw = pixel_contract_arrays(s, f_key.values.data)
    shifted = raw - raw.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    attention = e / e.sum(axis=1, keepdims=True)
    residual = channel_contract_arrays(attention, f_value.values.data)
    return CorrelationVolume(
        scores=Tensor3(scores + residual),
        row_labels=list(c_prev.row_labels),
        frame=c_prev.frame,
    )


def refine(
    c0: CorrelationVolume, f_context: FeatureMap, cfg: RefinementConfig
) -> List[CorrelationVolume]:
    """Apply cfg.steps refinement steps; returns all intermediates in order.

    Keys and values are projected once per frame (they do not depend on the
    step index). An empty list means refinement is disabled and callers
    should fall back to the initial volume.
    """
    if cfg.steps == 0:
        return []
    f_key = apply_channel_map(f_context, cfg.key_map)
    f_value = apply_channel_map(f_context, cfg.value_map)
    out: List[CorrelationVolume] = []
    current = c0
    for _ in range(cfg.steps):
        current = refine_step(current, f_key, f_value)
        out.append(current)
    return out
