"""Click-seeded video object segmentation.

One click per object is enough: embeddings sampled at the clicks build a
correlation volume against target-frame features, a recurrent attention
module refines it, and a snippet loop propagates masklets across frames
with occlusion-aware lifecycle handling.
"""

from .correlation import (
    BACKGROUND,
    Click,
    CorrelationVolume,
    EmbeddingMatrix,
    LabelMask,
    assemble_embedding_matrix,
    click_to_feature_coords,
    correlate,
    decode_mask,
    extract_keypoint_embeddings,
    mask_area,
)
from .engine import EngineConfig, build_provider, default_params, segment_frames
from .evaluation import (
    EvalReport,
    MaskletVolume,
    distance_transform_center,
    miou,
    to_volume,
    volume_iou,
)
from .features import (
    FeatureConfig,
    FeatureMap,
    FrameImage,
    HandcraftedProvider,
    handcrafted_features,
    load_feature_file,
    save_feature_file,
)
from .params import TrainableParams, load_params, save_params
from .propagation import (
    MaskletRegistry,
    PropagationConfig,
    SnippetResult,
    run_snippet,
)
from .refine import ChannelMap, RefinementConfig, apply_channel_map, refine, refine_step
from .scenes import SceneConfig, SceneObject, SceneSample, generate_scene, standard_suites
from .tensors import (
    ContinuousPoint,
    Matrix2,
    Tensor3,
    argmax_axis0,
    bilinear_sample,
    channel_contract,
    precision,
    softmax_axis0,
)
from .training import (
    GradCheckReport,
    LossConfig,
    SupervisionPoint,
    grad_check,
    grad_params,
    point_ce_loss,
    sample_supervision_points,
    train_toy,
)

__version__ = "0.1.0"
