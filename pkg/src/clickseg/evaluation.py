"""Mask-volume IOU metric, per-class aggregation, and ablation harnesses.

Every instance is scored on its own T x H x W binary canvas, so the metric
penalizes false positives as well as false negatives, and tracking errors
show up directly as volume mismatch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .correlation import BACKGROUND, LabelMask


@dataclass
class MaskletVolume:
    """Per-instance binary occupancy volumes plus optional class tags."""

    channels: Dict[int, np.ndarray]
    classes: Dict[int, Optional[str]] = field(default_factory=dict)

    def ids(self) -> List[int]:
        return sorted(self.channels)


@dataclass
class EvalReport:
    per_instance: List[Dict]
    per_class: Dict[str, float]
    miou: float

    @property
    def n_instances(self) -> int:
        return len(self.per_instance)

    def to_json(self) -> Dict:
        return {
            "per_instance": self.per_instance,
            "per_class": self.per_class,
            "miou": self.miou,
            "n_instances": self.n_instances,
        }


def to_volume(
    masks: Sequence[LabelMask],
    ids: Iterable[int],
    classes: Optional[Dict[int, str]] = None,
) -> MaskletVolume:
    """Split a label-mask sequence into one binary canvas per instance id."""
    if not masks:
        raise ValueError("empty mask sequence")
    shape = masks[0].grid.shape
    for m in masks:
        if m.grid.shape != shape:
            raise ValueError("inconsistent mask grids")
    stack = np.stack([m.grid for m in masks], axis=0)
    present = set(int(v) for v in np.unique(stack)) - {BACKGROUND}
    ids = [int(i) for i in ids]
    unknown = present - set(ids)
    if unknown:
        raise ValueError(f"masks contain ids not listed: {sorted(unknown)}")
    classes = classes or {}
    return MaskletVolume(
        channels={i: stack == i for i in ids},
        classes={i: classes.get(i) for i in ids},
    )


def volume_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union of two binary volumes; 1.0 when both empty."""
    if pred.shape != gt.shape:
        raise ValueError(f"volume shapes differ: {pred.shape} vs {gt.shape}")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(pred & gt) / union)


def miou(pred: MaskletVolume, gt: MaskletVolume) -> EvalReport:
    """Per-instance volume IOU, class means, and the overall mean."""
    if set(pred.channels) != set(gt.channels):
        missing = sorted(set(gt.channels) ^ set(pred.channels))
        raise ValueError(f"instance ids do not match; unmatched: {missing}")
    per_instance = []
    for i in sorted(pred.channels):
        iou = volume_iou(pred.channels[i], gt.channels[i])
        cls = gt.classes.get(i) or pred.classes.get(i)
        per_instance.append({"id": i, "class": cls, "iou": iou})
    return _aggregate(per_instance)


def _aggregate(per_instance: List[Dict]) -> EvalReport:
    by_class: Dict[str, List[float]] = {}
    for row in per_instance:
        if row["class"] is not None:
            by_class.setdefault(row["class"], []).append(row["iou"])
    per_class = {k: float(np.mean(v)) for k, v in sorted(by_class.items())}
    overall = float(np.mean([r["iou"] for r in per_instance])) if per_instance else 1.0
    return EvalReport(per_instance=per_instance, per_class=per_class, miou=overall)


def combine_reports(reports: Sequence[Tuple[str, EvalReport]]) -> EvalReport:
    """Pool per-instance rows across scenes (ids namespaced scene/id)."""
    rows = []
    for name, report in reports:
        for row in report.per_instance:
            rows.append({**row, "id": f"{name}/{row['id']}"})
    return _aggregate(rows)


# ---------------------------------------------------------------------------
# Distance transform
# ---------------------------------------------------------------------------


def chebyshev_distance_inside(mask: np.ndarray) -> np.ndarray:
    """Two-pass Chebyshev distance to the nearest off-mask cell.

    Cells outside the grid count as off-mask, so a mask touching the border
    still gets finite distances. Off-mask cells get 0.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    big = h + w
    # Pad with an off-mask ring so borders behave like mask boundary.
    dist = np.zeros((h + 2, w + 2), dtype=np.int64)
    dist[1:-1, 1:-1] = np.where(mask, big, 0)
    for i in range(1, h + 1):
        for j in range(1, w + 1):
            if dist[i, j]:
                dist[i, j] = min(
                    dist[i, j],
                    dist[i - 1, j - 1] + 1,
                    dist[i - 1, j] + 1,
                    dist[i - 1, j + 1] + 1,
                    dist[i, j - 1] + 1,
                )
    for i in range(h, 0, -1):
        for j in range(w, 0, -1):
            if dist[i, j] > 1:
                dist[i, j] = min(
                    dist[i, j],
                    dist[i + 1, j + 1] + 1,
                    dist[i + 1, j] + 1,
                    dist[i + 1, j - 1] + 1,
                    dist[i, j + 1] + 1,
                )
    return dist[1:-1, 1:-1]


def distance_transform_center(mask: np.ndarray) -> Tuple[int, int]:
    """Cell (row, col) deepest inside the mask; row-major first on ties."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty mask has no center")
    dist = chebyshev_distance_inside(mask)
    flat = int(np.argmax(dist))
    return flat // mask.shape[1], flat % mask.shape[1]


# ---------------------------------------------------------------------------
# Ablation harnesses
# ---------------------------------------------------------------------------


def evaluate_scene(sample, provider, cfg, params, dense: bool = False) -> EvalReport:
    """Run the engine on one synthetic scene and score against its GT."""
    from .propagation import run_snippet

    if dense:
        frames = sample.dense_frames
        clicks = sample.clicks_dense_by_frame()
        keyframe_positions = sample.keyframe_indices
    else:
        frames = sample.keyframe_frames()
        clicks = sample.clicks_by_frame()
        keyframe_positions = list(range(len(frames)))
    result = run_snippet(frames, clicks, provider, cfg, params, class_tags=sample.instance_classes)
    pred_masks = [result.masks[i] for i in keyframe_positions]
    ids = sample.instance_ids()
    pred = to_volume(pred_masks, ids, sample.instance_classes)
    gt = to_volume(sample.gt_feature, ids, sample.instance_classes)
    return miou(pred, gt)


def evaluate_suite(samples, provider, cfg, params, dense: bool = False) -> EvalReport:
    reports = [
        (f"scene{idx}", evaluate_scene(sample, provider, cfg, params, dense=dense))
        for idx, sample in enumerate(samples)
    ]
    return combine_reports(reports)


def ablation_click_mode(
    scene_cfgs, provider, cfg, params, click_seed: int = 0
) -> Dict[str, EvalReport]:
    """Same scenes, random-interior vs distance-transform-center clicks."""
    from .scenes import generate_scene

    out = {}
    for mode in ("random_interior", "center"):
        samples = [generate_scene(sc, click_mode=mode, click_seed=click_seed) for sc in scene_cfgs]
        out[mode] = evaluate_suite(samples, provider, cfg, params)
    return out


def ablation_frame_rate(
    scene_cfgs, provider, cfg, params, click_mode: str = "center", click_seed: int = 0
) -> Dict[str, EvalReport]:
    """Sparse keyframe stepping vs dense stepping scored on the keyframes."""
    from .scenes import generate_scene

    samples = [generate_scene(sc, click_mode=click_mode, click_seed=click_seed) for sc in scene_cfgs]
    return {
        "sparse": evaluate_suite(samples, provider, cfg, params, dense=False),
        "dense": evaluate_suite(samples, provider, cfg, params, dense=True),
    }
