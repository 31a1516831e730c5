"""Trainable parameter bundle and its VCPB binary serialization."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .features import FeatureConfig
from .refine import ChannelMap

VCPB_MAGIC = b"VCPB"
VCPB_VERSION = 1

# Score assigned by the default background row. Embeddings sampled from
# handcrafted features score roughly |colour|^2 + position kernel + bias on
# their own object and clearly less elsewhere; a flat prior between those
# bands keeps untrained decoding sane. Calibrated on the synthetic
# validation suite.
DEFAULT_BACKGROUND_BIAS = 4.25


@dataclass
class TrainableParams:
    """Everything gradient descent may touch.

    background: global embedding for "none of the instances" (row 0 of E).
    key_map / value_map: channel mixers applied to context features.
    channel_scales: per-channel multipliers inside the feature provider.
    """

    background: np.ndarray
    key_map: ChannelMap
    value_map: ChannelMap
    channel_scales: np.ndarray

    def __post_init__(self) -> None:
        self.background = np.asarray(self.background, dtype=np.float64)
        self.channel_scales = np.asarray(self.channel_scales, dtype=np.float64)
        d = self.background.shape[0]
        if self.channel_scales.shape != (d,):
            raise ValueError("channel_scales length must match background length")
        if self.key_map.dim != d or self.value_map.dim != d:
            raise ValueError("channel map dims must match background length")

    @property
    def dim(self) -> int:
        return self.background.shape[0]

    @classmethod
    def default(cls, cfg: FeatureConfig, background_bias: float = DEFAULT_BACKGROUND_BIAS) -> "TrainableParams":
        """Untrained defaults: flat background prior, identity keys, zero values."""
        d = cfg.channel_dim
        background = np.zeros(d)
        background[-1] = background_bias  # bias channel is last
        return cls(
            background=background,
            key_map=ChannelMap.identity(d),
            value_map=ChannelMap.zero(d),
            channel_scales=np.ones(d),
        )

    @classmethod
    def zeros(cls, cfg: FeatureConfig) -> "TrainableParams":
        """All-zero background variant (kept for corner-case tests)."""
        d = cfg.channel_dim
        return cls(
            background=np.zeros(d),
            key_map=ChannelMap.identity(d),
            value_map=ChannelMap.zero(d),
            channel_scales=np.ones(d),
        )

    def copy(self) -> "TrainableParams":
        return TrainableParams(
            background=self.background.copy(),
            key_map=ChannelMap(self.key_map.weight.copy(), self.key_map.bias.copy(), self.key_map.residual),
            value_map=ChannelMap(self.value_map.weight.copy(), self.value_map.bias.copy(), self.value_map.residual),
            channel_scales=self.channel_scales.copy(),
        )


class ParamFileError(ValueError):
    pass


def save_params(params: TrainableParams, path) -> None:
    """VCPB: magic, u32 version, u32 D, then f64 LE fields (maps carry a u32 flag)."""
    d = params.dim
    with open(path, "wb") as fh:
        fh.write(VCPB_MAGIC)
        fh.write(struct.pack("<II", VCPB_VERSION, d))
        fh.write(params.background.astype("<f8").tobytes())
        for cmap in (params.key_map, params.value_map):
            fh.write(cmap.weight.astype("<f8").tobytes(order="C"))
            fh.write(cmap.bias.astype("<f8").tobytes())
            fh.write(struct.pack("<I", 1 if cmap.residual else 0))
        fh.write(params.channel_scales.astype("<f8").tobytes())


def load_params(path) -> TrainableParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != VCPB_MAGIC:
        raise ParamFileError("bad magic in parameter bundle")
    version, d = struct.unpack_from("<II", blob, 4)
    if version != VCPB_VERSION:
        raise ParamFileError(f"unsupported parameter bundle version {version}")
    expected = 12 + 8 * d + 2 * (8 * d * d + 8 * d + 4) + 8 * d
    if len(blob) != expected:
        raise ParamFileError(f"parameter bundle is {len(blob)} bytes, expected {expected}")
    off = 12

    def take_f64(count: int) -> np.ndarray:
        nonlocal off
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).copy()
        off += 8 * count
        return arr

    background = take_f64(d)
    maps = []
    for _ in range(2):
        w = take_f64(d * d).reshape(d, d)
        b = take_f64(d)
        (flag,) = struct.unpack_from("<I", blob, off)
        off += 4
        maps.append(ChannelMap(w, b, residual=bool(flag)))
    scales = take_f64(d)
    return TrainableParams(
        background=background, key_map=maps[0], value_map=maps[1], channel_scales=scales
    )
