"""Glue between configs, parameters, and the propagation loop."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

from .correlation import Click
from .features import FeatureConfig, FrameImage, HandcraftedProvider
from .params import TrainableParams
from .propagation import PropagationConfig, SnippetResult, run_snippet


@dataclass
class EngineConfig:
    """Serializable bundle of feature + propagation settings."""

    feature: FeatureConfig
    propagation: PropagationConfig

    @classmethod
    def default(cls) -> "EngineConfig":
        return cls(feature=FeatureConfig(), propagation=PropagationConfig())

    def to_json(self) -> Dict:
        return {
            "feature": {
                "position_frequencies": self.feature.position_frequencies,
                "include_gradient_channel": self.feature.include_gradient_channel,
                "freq_base": self.feature.freq_base,
                "amp_decay": self.feature.amp_decay,
            },
            "propagation": {
                "occlusion_area_threshold": self.propagation.occlusion_area_threshold,
                "top_fraction": self.propagation.top_fraction,
                "refinement_steps": self.propagation.refinement_steps,
            },
        }

    @classmethod
    def from_json(cls, payload: Dict) -> "EngineConfig":
        f = payload.get("feature", {})
        p = payload.get("propagation", {})
        return cls(
            feature=FeatureConfig(
                position_frequencies=f.get("position_frequencies", 4),
                include_gradient_channel=f.get("include_gradient_channel", True),
                freq_base=f.get("freq_base", FeatureConfig().freq_base),
                amp_decay=f.get("amp_decay", FeatureConfig().amp_decay),
            ),
            propagation=PropagationConfig(
                occlusion_area_threshold=p.get("occlusion_area_threshold", 10),
                top_fraction=p.get("top_fraction", 0.5),
                refinement_steps=p.get("refinement_steps", 5),
            ),
        )

    @classmethod
    def load(cls, path) -> "EngineConfig":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


def build_provider(config: EngineConfig, params: TrainableParams) -> HandcraftedProvider:
    """Handcrafted provider with the parameter bundle's channel scales baked in."""
    return HandcraftedProvider(config.feature.with_scales(params.channel_scales))


def default_params(config: EngineConfig) -> TrainableParams:
    return TrainableParams.default(config.feature)


def segment_frames(
    frames: Sequence[FrameImage],
    clicks: Sequence[Click],
    config: EngineConfig,
    params: Optional[TrainableParams] = None,
    class_tags: Optional[Dict[int, str]] = None,
    keep_volumes: bool = False,
) -> SnippetResult:
    """Run the snippet engine over frames with an explicit click schedule."""
    params = params or default_params(config)
    by_frame: Dict[int, List[Click]] = {}
    for c in clicks:
        by_frame.setdefault(c.frame, []).append(c)
    provider = build_provider(config, params)
    return run_snippet(
        frames,
        by_frame,
        provider,
        config.propagation,
        params,
        class_tags=class_tags,
        keep_volumes=keep_volumes,
    )
