"""Per-frame feature providers standing in for a learned backbone.

Two providers exist: a deterministic handcrafted extractor (pooled RGB +
sinusoidal position encodings + optional gradient magnitude + bias, each
channel under a trainable scale) and a loader for externally exported
feature files in the VCFM binary format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tensors import Tensor3, current_dtype

STRIDE = 4

VCFM_MAGIC = b"VCFM"
VCFM_VERSION = 1
_MAX_ELEMENTS = 1 << 31


class FeatureFileError(ValueError):
    """Raised on malformed VCFM files; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


@dataclass
class FrameImage:
    """8-bit RGB frame, shape (height, width, 3)."""

    rgb: np.ndarray

    def __post_init__(self) -> None:
        self.rgb = np.asarray(self.rgb, dtype=np.uint8)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError(f"FrameImage expects (H, W, 3), got {self.rgb.shape}")

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


@dataclass
class FeatureMap:
    """Feature tensor on the stride-4 grid, with replication-pad metadata."""

    values: Tensor3
    stride: int = STRIDE
    pad_bottom: int = 0
    pad_right: int = 0
    frame: Optional[int] = None

    @property
    def channels(self) -> int:
        return self.values.channels

    @property
    def grid_height(self) -> int:
        return self.values.height

    @property
    def grid_width(self) -> int:
        return self.values.width

    @property
    def source_height(self) -> int:
        return self.grid_height * self.stride - self.pad_bottom

    @property
    def source_width(self) -> int:
        return self.grid_width * self.stride - self.pad_right


@dataclass
class FeatureConfig:
    """Handcrafted-extractor knobs.

    Channel layout: 3 pooled RGB, then per frequency k the quadruple
    (sin x, cos x, sin y, cos y), then the optional gradient-magnitude
    channel, then a constant bias channel. Frequencies follow a geometric
    ladder freq_base * 2**k with amplitudes amp_decay**k, so the lowest
    frequency has unit amplitude.
    """

    position_frequencies: int = 4
    include_gradient_channel: bool = True
    channel_scales: Optional[np.ndarray] = None
    freq_base: float = 0.125
    amp_decay: float = 0.5

    @property
    def channel_dim(self) -> int:
        return 3 + 4 * self.position_frequencies + int(self.include_gradient_channel) + 1

    def scales(self) -> np.ndarray:
        if self.channel_scales is None:
            return np.ones(self.channel_dim, dtype=np.float64)
        scales = np.asarray(self.channel_scales, dtype=np.float64)
        if scales.shape != (self.channel_dim,):
            raise ValueError(f"channel_scales must have length {self.channel_dim}")
        return scales

    def with_scales(self, scales: Sequence[float]) -> "FeatureConfig":
        return FeatureConfig(
            position_frequencies=self.position_frequencies,
            include_gradient_channel=self.include_gradient_channel,
            channel_scales=np.asarray(scales, dtype=np.float64),
            freq_base=self.freq_base,
            amp_decay=self.amp_decay,
        )


def _pad_to_stride(rgb: np.ndarray) -> tuple[np.ndarray, int, int]:
    h, w = rgb.shape[:2]
    pad_b = (-h) % STRIDE
    pad_r = (-w) % STRIDE
    if pad_b or pad_r:
        rgb = np.pad(rgb, ((0, pad_b), (0, pad_r), (0, 0)), mode="edge")
    return rgb, pad_b, pad_r


def _pool4(channel: np.ndarray) -> np.ndarray:
    h, w = channel.shape
    return channel.reshape(h // STRIDE, STRIDE, w // STRIDE, STRIDE).mean(axis=(1, 3))


def handcrafted_base(frame: FrameImage, cfg: FeatureConfig) -> np.ndarray:
    """Unscaled feature stack as float64, shape (D, Hf, Wf)."""
    if frame.height < STRIDE or frame.width < STRIDE:
        raise ValueError(
            f"frame {frame.width}x{frame.height} smaller than feature stride {STRIDE}"
        )
    rgb, _, _ = _pad_to_stride(frame.rgb)
    norm = rgb.astype(np.float64) / 255.0
    channels = [_pool4(norm[:, :, c]) for c in range(3)]

    hf, wf = channels[0].shape
    xs = np.arange(wf, dtype=np.float64) / max(wf - 1, 1)
    ys = np.arange(hf, dtype=np.float64) / max(hf - 1, 1)
    xg = np.broadcast_to(xs[None, :], (hf, wf))
    yg = np.broadcast_to(ys[:, None], (hf, wf))
    for k in range(cfg.position_frequencies):
        freq = cfg.freq_base * (2.0**k)
        amp = cfg.amp_decay**k
        phase_x = 2.0 * np.pi * freq * xg
        phase_y = 2.0 * np.pi * freq * yg
        channels.append(amp * np.sin(phase_x))
        channels.append(amp * np.cos(phase_x))
        channels.append(amp * np.sin(phase_y))
        channels.append(amp * np.cos(phase_y))

    if cfg.include_gradient_channel:
        lum = 0.299 * norm[:, :, 0] + 0.587 * norm[:, :, 1] + 0.114 * norm[:, :, 2]
        gy, gx = np.gradient(lum)
        channels.append(_pool4(np.hypot(gx, gy)))

    channels.append(np.ones((hf, wf), dtype=np.float64))
    return np.stack(channels, axis=0)


def handcrafted_features(frame: FrameImage, cfg: FeatureConfig, frame_index: Optional[int] = None) -> FeatureMap:
    """Deterministic handcrafted feature map with channel scales applied."""
    base = handcrafted_base(frame, cfg)
    dt = current_dtype()
    scaled = base.astype(dt) * cfg.scales().astype(dt)[:, None, None]
    _, pad_b, pad_r = _pad_to_stride(frame.rgb)
    return FeatureMap(
        values=Tensor3(scaled), pad_bottom=pad_b, pad_right=pad_r, frame=frame_index
    )


class HandcraftedProvider:
    """Callable provider: FrameImage -> FeatureMap for the handcrafted extractor."""

    def __init__(self, cfg: FeatureConfig):
        self.cfg = cfg

    def __call__(self, frame: FrameImage, frame_index: Optional[int] = None) -> FeatureMap:
        return handcrafted_features(frame, self.cfg, frame_index)


# ---------------------------------------------------------------------------
# VCFM feature files
# ---------------------------------------------------------------------------


def save_feature_file(fmap: FeatureMap, path) -> None:
    """Write the map as VCFM: magic, u32 version, u32 D/H/W, f32 LE payload."""
    data = fmap.values.data.astype("<f4")
    d, h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(VCFM_MAGIC)
        fh.write(struct.pack("<I", VCFM_VERSION))
        fh.write(struct.pack("<III", d, h, w))
        fh.write(data.tobytes(order="C"))


def load_feature_file(path) -> FeatureMap:
    """Read a VCFM file back into a FeatureMap (bit-exact roundtrip)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != VCFM_MAGIC:
        raise FeatureFileError("bad magic", 0)
    if len(blob) < 8:
        raise FeatureFileError("truncated header", 4)
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VCFM_VERSION:
        raise FeatureFileError(f"unsupported version {version}", 4)
    if len(blob) < 20:
        raise FeatureFileError("truncated dimensions", 8)
    d, h, w = struct.unpack_from("<III", blob, 8)
    count = d * h * w
    if count <= 0 or count > _MAX_ELEMENTS:
        raise FeatureFileError(f"bad dimensions {d}x{h}x{w}", 8)
    payload = blob[20:]
    if len(payload) != 4 * count:
        raise FeatureFileError(
            f"expected {count} values, found {len(payload) // 4}", 20
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(d, h, w).copy()
    return FeatureMap(values=Tensor3(data))


class FeatureFileProvider:
    """Provider backed by pre-exported VCFM files, one per frame."""

    def __init__(self, paths: Sequence):
        self.paths = list(paths)

    def __call__(self, frame: FrameImage, frame_index: Optional[int] = None) -> FeatureMap:
        if frame_index is None or not (0 <= frame_index < len(self.paths)):
            raise ValueError(f"no feature file for frame {frame_index}")
        fmap = load_feature_file(self.paths[frame_index])
        fmap.frame = frame_index
        return fmap
