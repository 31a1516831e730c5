"""Full-snippet masklet propagation.

The per-snippet loop: incorporate new clicks on the current frame, decode the
mask, close instances whose decoded area falls under the occlusion threshold,
then carry embeddings forward to the next frame through a fresh correlation
volume. Closed masklets never come back; a reappearing object needs a new
click and gets a new id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .correlation import (
    BACKGROUND,
    Click,
    CorrelationVolume,
    LabelMask,
    assemble_embedding_matrix,
    correlate,
    decode_mask,
    extract_keypoint_embeddings,
    mask_area,
)
from .features import FeatureMap, FrameImage
from .params import TrainableParams
from .refine import RefinementConfig, refine

STATUS_ACTIVE = "active"
STATUS_OCCLUDED = "occluded-closed"


@dataclass
class MaskletEntry:
    instance: int
    origin: Click
    first_frame: int
    status: str = STATUS_ACTIVE
    closed_frame: Optional[int] = None
    class_tag: Optional[str] = None


class MaskletRegistry:
    """Lifecycle ledger for every instance in a snippet, in insertion order."""

    def __init__(self) -> None:
        self.entries: Dict[int, MaskletEntry] = {}

    def add(self, click: Click, class_tag: Optional[str] = None) -> MaskletEntry:
        if click.instance in self.entries:
            raise ValueError(f"duplicate instance id {click.instance}")
        entry = MaskletEntry(
            instance=click.instance, origin=click, first_frame=click.frame, class_tag=class_tag
        )
        self.entries[click.instance] = entry
        return entry

    def close(self, instance: int, frame: int) -> None:
        entry = self.entries[instance]
        if entry.status == STATUS_OCCLUDED:
            return
        entry.status = STATUS_OCCLUDED
        entry.closed_frame = frame

    def active_ids(self) -> List[int]:
        return [e.instance for e in self.entries.values() if e.status == STATUS_ACTIVE]

    def closed_ids(self) -> Set[int]:
        return {e.instance for e in self.entries.values() if e.status == STATUS_OCCLUDED}

    def ids(self) -> List[int]:
        return list(self.entries)


@dataclass
class PropagationConfig:
    """Engine knobs for the snippet state machine."""

    occlusion_area_threshold: int = 10
    top_fraction: float = 0.5
    refinement_steps: int = 5

    def __post_init__(self) -> None:
        if self.occlusion_area_threshold < 1:
            raise ValueError("occlusion_area_threshold must be >= 1")
        if not (0.0 < self.top_fraction <= 1.0):
            raise ValueError("top_fraction must be in (0, 1]")
        if self.refinement_steps < 0:
            raise ValueError("refinement_steps must be >= 0")

    def refinement(self, params: TrainableParams) -> RefinementConfig:
        return RefinementConfig(
            steps=self.refinement_steps,
            key_map=params.key_map,
            value_map=params.value_map,
        )


@dataclass
class SnippetResult:
    masks: List[LabelMask]
    registry: MaskletRegistry
    volumes: Optional[List[CorrelationVolume]] = None


def instance_embeddings_from_volume(
    c: CorrelationVolume,
    f: FeatureMap,
    cfg: PropagationConfig,
    suppressed: Sequence[int] = (),
) -> Tuple[List[Tuple[int, np.ndarray]], Set[int]]:
    """Re-embed each instance from its top-scoring decoded cells.

    Cells assigned to an instance are ranked by that instance's score
    (ties broken row-major) and the top ceil(fraction * area) feature
    columns are averaged. Instances whose decoded area falls below the
    occlusion threshold land in the returned occluded set instead.
    """
    suppressed = set(suppressed) & set(c.row_labels)
    mask = decode_mask(c, suppressed=suppressed)
    embeddings: List[Tuple[int, np.ndarray]] = []
    occluded: Set[int] = set()
    for row, label in enumerate(c.row_labels):
        if label == BACKGROUND or label in suppressed:
            continue
        ii, jj = np.nonzero(mask.grid == label)
        area = ii.size
        if area < cfg.occlusion_area_threshold:
            occluded.add(label)
            continue
        scores = c.scores.data[row, ii, jj]
        order = np.lexsort((jj, ii, -scores))
        keep = order[: math.ceil(cfg.top_fraction * area)]
        cols = f.values.data[:, ii[keep], jj[keep]]
        embeddings.append((label, cols.mean(axis=1)))
    return embeddings, occluded


def _volume_for(
    embeddings: List[Tuple[int, np.ndarray]],
    f_target: FeatureMap,
    ctx: FeatureMap,
    cfg: PropagationConfig,
    params: TrainableParams,
) -> CorrelationVolume:
    e = assemble_embedding_matrix(params.background.astype(f_target.values.data.dtype), embeddings)
    c0 = correlate(e, f_target)
    seq = refine(c0, ctx, cfg.refinement(params))
    return seq[-1] if seq else c0


def step_same_frame(
    f_t: FeatureMap,
    ctx_t: FeatureMap,
    new_clicks: Sequence[Click],
    prev: Optional[CorrelationVolume],
    cfg: PropagationConfig,
    params: TrainableParams,
    suppressed: Sequence[int] = (),
) -> Tuple[CorrelationVolume, Set[int]]:
    """Fold new clicks into the current frame's correlation volume.

    Embeddings carried over from the previous volume come first (original
    row order), then one row per new click. Returns the refined volume and
    the set of instances that fell under the occlusion threshold while
    re-embedding.
    """
    embeddings: List[Tuple[int, np.ndarray]] = []
    occluded: Set[int] = set()
    if prev is not None:
        embeddings, occluded = instance_embeddings_from_volume(prev, f_t, cfg, suppressed)
    vectors = extract_keypoint_embeddings(f_t, new_clicks)
    embeddings.extend((c.instance, v) for c, v in zip(new_clicks, vectors))
    return _volume_for(embeddings, f_t, ctx_t, cfg, params), occluded


def step_next_frame(
    f_t: FeatureMap,
    f_next: FeatureMap,
    ctx_next: FeatureMap,
    c_t: CorrelationVolume,
    cfg: PropagationConfig,
    params: TrainableParams,
    suppressed: Sequence[int] = (),
) -> Tuple[CorrelationVolume, Set[int]]:
    """Propagate the current volume onto the next frame."""
    embeddings, occluded = instance_embeddings_from_volume(c_t, f_t, cfg, suppressed)
    return _volume_for(embeddings, f_next, ctx_next, cfg, params), occluded


def run_snippet(
    frames: Sequence[FrameImage],
    clicks_by_frame: Dict[int, List[Click]],
    provider: Callable,
    cfg: PropagationConfig,
    params: TrainableParams,
    class_tags: Optional[Dict[int, str]] = None,
    keep_volumes: bool = False,
) -> SnippetResult:
    """Run the full-snippet loop over all frames.

    clicks_by_frame maps frame index -> new clicks appearing there. Every
    click creates a new masklet; ids must be unique across the snippet.
    """
    total = len(frames)
    seen_ids: Set[int] = set()
    for t, clicks in clicks_by_frame.items():
        if not (0 <= t < total):
            raise ValueError(f"click frame {t} outside snippet of {total} frames")
        for c in clicks:
            if c.frame != t:
                raise ValueError(f"click for instance {c.instance} listed under frame {t} but tagged {c.frame}")
            if c.instance in seen_ids:
                raise ValueError(f"duplicate instance id {c.instance}")
            seen_ids.add(c.instance)

    registry = MaskletRegistry()
    class_tags = class_tags or {}
    feature_cache: Dict[int, FeatureMap] = {}

    def features(t: int) -> FeatureMap:
        if t not in feature_cache:
            feature_cache[t] = provider(frames[t], t)
        return feature_cache[t]

    masks: List[LabelMask] = []
    volumes: List[CorrelationVolume] = []
    carried: Optional[CorrelationVolume] = None

    for t in range(total):
        f_t = features(t)
        new_clicks = clicks_by_frame.get(t, [])
        for c in new_clicks:
            registry.add(c, class_tags.get(c.instance))

        c_t, occluded = step_same_frame(
            f_t, f_t, new_clicks, carried, cfg, params, suppressed=registry.closed_ids()
        )
        for label in sorted(occluded):
            registry.close(label, t)

        rows = set(c_t.row_labels)
        mask = decode_mask(c_t, suppressed=registry.closed_ids() & rows)
        newly_closed = {
            label
            for label in registry.active_ids()
            if label in rows and mask_area(mask, label) < cfg.occlusion_area_threshold
        }
        if newly_closed:
            for label in sorted(newly_closed):
                registry.close(label, t)
            mask = decode_mask(c_t, suppressed=registry.closed_ids() & rows)
        masks.append(mask)
        if keep_volumes:
            volumes.append(c_t)

        if t < total - 1:
            f_next = features(t + 1)
            carried, occluded = step_next_frame(
                f_t, f_next, f_next, c_t, cfg, params, suppressed=registry.closed_ids()
            )
            for label in sorted(occluded):
                registry.close(label, t + 1)

    return SnippetResult(
        masks=masks, registry=registry, volumes=volumes if keep_volumes else None
    )
