"""Dense numeric kernels shared by every stage of the engine.

Conventions used throughout the package:
  * Tensor3 data is channel-major: shape (channels, height, width).
  * Texel centers sit at integer coordinates; x runs along width (columns),
    y along height (rows).
  * Summations run in a fixed order (ascending channel index) so results are
    bitwise reproducible and match naive reference loops exactly.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

# ---------------------------------------------------------------------------
# Precision mode
# ---------------------------------------------------------------------------

_DTYPES = {"f32": np.float32, "f64": np.float64}
_current_mode = "f32"


def set_precision(mode: str) -> None:
    """Select the working precision: "f32" (inference) or "f64" (grad checks)."""
    if mode not in _DTYPES:
        raise ValueError(f"unknown precision mode {mode!r}")
    global _current_mode
    _current_mode = mode


def current_dtype() -> np.dtype:
    return np.dtype(_DTYPES[_current_mode])


@contextmanager
def precision(mode: str) -> Iterator[None]:
    """Temporarily switch precision, restoring the previous mode on exit."""
    prev = _current_mode
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(prev)


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


class ContinuousPoint(NamedTuple):
    """Sub-texel sampling location on a feature grid (x along width)."""

    x: float
    y: float


@dataclass
class Tensor3:
    """Channel-major dense tensor of shape (channels, height, width)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"Tensor3 expects 3 axes, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("Tensor3 entries must be finite")

    @classmethod
    def of(cls, data) -> "Tensor3":
        """Build a tensor in the current precision mode."""
        return cls(np.ascontiguousarray(data, dtype=current_dtype()))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class Matrix2:
    """Row-major dense matrix."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError(f"Matrix2 expects 2 axes, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("Matrix2 entries must be finite")

    @classmethod
    def of(cls, data) -> "Matrix2":
        return cls(np.ascontiguousarray(data, dtype=current_dtype()))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def bilinear_weights(x: float, y: float, width: int, height: int):
    """Clamped bilinear corner indices and weights for one sample point.

    Out-of-grid coordinates are clamped to the boundary texel centers before
    interpolation, so border clicks still produce meaningful samples.
    Returns (x0, x1, y0, y1, w00, w10, w01, w11) where w00 pairs with
    (y0, x0), w10 with (y0, x1), w01 with (y1, x0), w11 with (y1, x1).
    """
    x = min(max(float(x), 0.0), float(width - 1))
    y = min(max(float(y), 0.0), float(height - 1))
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    x1 = min(x0 + 1, width - 1)
    y1 = min(y0 + 1, height - 1)
    fx = x - x0
    fy = y - y0
    return x0, x1, y0, y1, (1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy


def bilinear_sample_array(data: np.ndarray, p: ContinuousPoint) -> np.ndarray:
    """Bilinear sample of a (C, H, W) array; shared by the autodiff path."""
    c, h, w = data.shape
    x0, x1, y0, y1, w00, w10, w01, w11 = bilinear_weights(p.x, p.y, w, h)
    dt = data.dtype
    return (
        data[:, y0, x0] * dt.type(w00)
        + data[:, y0, x1] * dt.type(w10)
        + data[:, y1, x0] * dt.type(w01)
        + data[:, y1, x1] * dt.type(w11)
    )


def bilinear_sample(fmap: Tensor3, p: ContinuousPoint) -> np.ndarray:
    """Per-channel bilinear interpolation over the 4 surrounding texel centers."""
    if fmap.data.size == 0:
        raise ValueError("empty feature map")
    return bilinear_sample_array(fmap.data, p)


def softmax_axis0_array(data: np.ndarray) -> np.ndarray:
    """Per-pixel softmax across channels with max-subtraction for stability."""
    shifted = data - data.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def softmax_axis0(t: Tensor3) -> Tensor3:
    if t.channels < 1:
        raise ValueError("softmax_axis0 needs at least one channel")
    return Tensor3(softmax_axis0_array(t.data))


def argmax_axis0(t: Tensor3) -> np.ndarray:
    """Per-pixel index of the maximum channel; ties go to the lowest index."""
    if t.channels < 1:
        raise ValueError("argmax_axis0 needs at least one channel")
    return np.argmax(t.data, axis=0).astype(np.int32)


def channel_contract_arrays(m: np.ndarray, t: np.ndarray) -> np.ndarray:
    """out(n,i,j) = sum_d m(n,d) * t(d,i,j), accumulated in ascending d.

    The explicit loop keeps the summation order identical to a naive triple
    loop, which the reference oracles rely on for bit-exact comparison.
    """
    n, d = m.shape
    if d != t.shape[0]:
        raise ValueError(f"channel mismatch: matrix cols {d} vs tensor channels {t.shape[0]}")
    out = np.zeros((n,) + t.shape[1:], dtype=np.result_type(m.dtype, t.dtype))
    for k in range(d):
        out += m[:, k, None, None] * t[k]
    return out


def channel_contract(m: Matrix2, t: Tensor3) -> Tensor3:
    return Tensor3(channel_contract_arrays(m.data, t.data))


def pixel_contract_arrays(s: np.ndarray, k: np.ndarray) -> np.ndarray:
    """out(n,d) = sum_{i,j} s(n,i,j) * k(d,i,j)."""
    if s.shape[1:] != k.shape[1:]:
        raise ValueError(f"grid mismatch: {s.shape[1:]} vs {k.shape[1:]}")
    return np.einsum("nij,dij->nd", s, k)
