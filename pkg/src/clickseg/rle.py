"""Run-length encoding of label masks for wire/file transport."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from .correlation import LabelMask


@dataclass
class MaskRLE:
    """Row-major runs as a flat [label, length, label, length, ...] list."""

    frame: int
    width: int
    height: int
    runs: List[int]

    def to_json(self) -> Dict:
        return {"frame": self.frame, "width": self.width, "height": self.height, "runs": self.runs}

    @classmethod
    def from_json(cls, payload: Dict) -> "MaskRLE":
        return cls(
            frame=payload["frame"],
            width=payload["width"],
            height=payload["height"],
            runs=list(payload["runs"]),
        )


def encode_mask(mask: LabelMask, frame: int = 0) -> MaskRLE:
    flat = mask.grid.reshape(-1)
    change = np.nonzero(flat[1:] != flat[:-1])[0] + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [flat.size]])
    runs: List[int] = []
    for s, e in zip(starts, ends):
        runs.append(int(flat[s]))
        runs.append(int(e - s))
    h, w = mask.grid.shape
    return MaskRLE(frame=frame, width=w, height=h, runs=runs)


def decode_mask(rle: MaskRLE) -> LabelMask:
    if len(rle.runs) % 2 != 0:
        raise ValueError("runs must alternate (label, length)")
    labels = np.array(rle.runs[0::2], dtype=np.int32)
    lengths = np.array(rle.runs[1::2], dtype=np.int64)
    if lengths.sum() != rle.width * rle.height:
        raise ValueError(
            f"run lengths sum to {int(lengths.sum())}, expected {rle.width * rle.height}"
        )
    flat = np.repeat(labels, lengths)
    return LabelMask(flat.reshape(rle.height, rle.width))
