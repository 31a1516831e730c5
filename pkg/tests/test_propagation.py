import numpy as np
import pytest

from clickseg.correlation import Click, CorrelationVolume, decode_mask, mask_area
from clickseg.engine import EngineConfig, build_provider, default_params, segment_frames
from clickseg.features import FeatureMap
from clickseg.propagation import (
    MaskletRegistry,
    PropagationConfig,
    instance_embeddings_from_volume,
    run_snippet,
    step_next_frame,
    step_same_frame,
)
from clickseg.scenes import SceneConfig, SceneObject, generate_scene, standard_suites
from clickseg.tensors import Tensor3


def fmap_of(data):
    return FeatureMap(values=Tensor3(np.asarray(data, dtype=np.float64)))


def volume_of(scores, labels):
    return CorrelationVolume(scores=Tensor3(np.asarray(scores, dtype=np.float64)), row_labels=labels)


def small_cfg(threshold=1, fraction=0.5, steps=0):
    return PropagationConfig(
        occlusion_area_threshold=threshold, top_fraction=fraction, refinement_steps=steps
    )


def test_embedding_single_cell_instance():
    scores = np.zeros((2, 3, 3))
    scores[1, 1, 2] = 10.0
    vol = volume_of(scores, [0, 5])
    f = fmap_of(np.arange(2 * 9).reshape(2, 3, 3))
    embeddings, occluded = instance_embeddings_from_volume(vol, f, small_cfg())
    assert occluded == set()
    assert len(embeddings) == 1
    label, vec = embeddings[0]
    assert label == 5
    np.testing.assert_array_equal(vec, f.values.data[:, 1, 2])


def test_embedding_topk_ceil_rule():
    # two cells scored 5 and 1, fraction 0.5 -> keep ceil(1) = top cell only
    scores = np.zeros((2, 1, 4))
    scores[1, 0, 0] = 5.0
    scores[1, 0, 1] = 1.0
    scores[0, 0, 2] = 1.0
    scores[0, 0, 3] = 1.0
    vol = volume_of(scores, [0, 3])
    f = fmap_of(np.array([[[10.0, 20.0, 30.0, 40.0]]]))
    embeddings, _ = instance_embeddings_from_volume(vol, f, small_cfg())
    label, vec = embeddings[0]
    assert label == 3
    np.testing.assert_array_equal(vec, [10.0])


def test_embedding_under_threshold_goes_occluded():
    scores = np.zeros((2, 4, 4))
    scores[1, 0, :3] = 1.0  # area 3 < threshold 10
    vol = volume_of(scores, [0, 2])
    f = fmap_of(np.ones((2, 4, 4)))
    embeddings, occluded = instance_embeddings_from_volume(vol, f, small_cfg(threshold=10))
    assert embeddings == []
    assert occluded == {2}


def test_embedding_tie_break_row_major():
    scores = np.zeros((2, 2, 2))
    scores[1] = 1.0  # all four cells equal score
    vol = volume_of(scores, [0, 1])
    f = fmap_of(np.arange(4, dtype=np.float64).reshape(1, 2, 2))
    embeddings, _ = instance_embeddings_from_volume(vol, f, small_cfg(fraction=0.5))
    # ties resolved row-major: keep cells (0,0) and (0,1)
    np.testing.assert_allclose(embeddings[0][1], [(0.0 + 1.0) / 2])


def engine_fixture():
    cfg = EngineConfig.default()
    params = default_params(cfg)
    provider = build_provider(cfg, params)
    return cfg, params, provider


def test_step_same_frame_first_click():
    cfg, params, provider = engine_fixture()
    scene = standard_suites(0)["test"][2]
    sample = generate_scene(scene, click_mode="center")
    f = provider(sample.keyframe_frames()[0], 0)
    clicks = [c for c in sample.clicks if c.frame == 0]
    vol, occluded = step_same_frame(f, f, clicks, None, cfg.propagation, params)
    assert vol.row_labels == [0] + [c.instance for c in clicks]
    assert occluded == set()


def test_step_same_frame_no_clicks_no_prev():
    cfg, params, provider = engine_fixture()
    sample = generate_scene(standard_suites(0)["test"][2], click_mode="center")
    f = provider(sample.keyframe_frames()[0], 0)
    vol, _ = step_same_frame(f, f, [], None, cfg.propagation, params)
    assert vol.row_labels == [0]
    mask = decode_mask(vol)
    assert set(np.unique(mask.grid)) == {0}


def test_step_same_frame_orders_prev_then_new():
    cfg, params, provider = engine_fixture()
    sample = generate_scene(standard_suites(0)["test"][0], click_mode="center")
    f = provider(sample.keyframe_frames()[0], 0)
    clicks = [c for c in sample.clicks if c.frame == 0]
    vol, _ = step_same_frame(f, f, clicks, None, cfg.propagation, params)
    new_click = Click(frame=0, x=2, y=2, instance=99)
    vol2, _ = step_same_frame(f, f, [new_click], vol, cfg.propagation, params)
    assert vol2.row_labels == [0] + [c.instance for c in clicks] + [99]


def test_step_next_frame_static_scene_keeps_mask():
    cfg, params, provider = engine_fixture()
    scene = SceneConfig(
        objects=[
            SceneObject(shape="rect", color=(225, 65, 105), size=(24, 24), start=(32.0, 32.0))
        ],
        keyframes=2,
        intermediates=0,
        seed=9,
    )
    sample = generate_scene(scene, click_mode="center")
    frame = sample.keyframe_frames()[0]
    f = provider(frame, 0)
    clicks = [c for c in sample.clicks if c.frame == 0]
    vol, _ = step_same_frame(f, f, clicks, None, cfg.propagation, params)
    mask0 = decode_mask(vol)
    vol2, occ = step_next_frame(f, f, f, vol, cfg.propagation, params)
    assert occ == set()
    mask1 = decode_mask(vol2)
    np.testing.assert_array_equal(mask0.grid, mask1.grid)


def test_step_next_frame_all_occluded_gives_background_volume():
    cfg, params, provider = engine_fixture()
    sample = generate_scene(standard_suites(0)["test"][2], click_mode="center")
    f = provider(sample.keyframe_frames()[0], 0)
    scores = np.zeros((2, f.grid_height, f.grid_width))
    scores[0] = 1.0  # background dominates; instance decodes empty
    vol = CorrelationVolume(scores=Tensor3(scores), row_labels=[0, 1])
    out, occluded = step_next_frame(f, f, f, vol, cfg.propagation, params)
    assert occluded == {1}
    assert out.row_labels == [0]


def test_run_snippet_single_frame():
    cfg, params, provider = engine_fixture()
    sample = generate_scene(standard_suites(0)["test"][2], click_mode="center")
    frames = sample.keyframe_frames()[:1]
    clicks = {0: [c for c in sample.clicks if c.frame == 0]}
    result = run_snippet(frames, clicks, provider, cfg.propagation, params)
    assert len(result.masks) == 1
    labels = result.masks[0].labels()
    assert labels == {0, 1}


def test_run_snippet_empty_schedule():
    cfg, params, provider = engine_fixture()
    sample = generate_scene(standard_suites(0)["test"][2], click_mode="center")
    result = run_snippet(sample.keyframe_frames(), {}, provider, cfg.propagation, params)
    for mask in result.masks:
        assert set(np.unique(mask.grid)) == {0}


def test_run_snippet_masks_partition_and_click_causality():
    cfg, params, provider = engine_fixture()
    sample = generate_scene(standard_suites(0)["test"][5], click_mode="center")  # appearance scene
    result = run_snippet(
        sample.keyframe_frames(), sample.clicks_by_frame(), provider, cfg.propagation, params
    )
    first_frame = {c.instance: c.frame for c in sample.clicks}
    for t, mask in enumerate(result.masks):
        for label in mask.labels() - {0}:
            assert first_frame[label] <= t, "label appears before its click frame"


def test_run_snippet_occlusion_lifecycle():
    cfg, params, provider = engine_fixture()
    sample = generate_scene(standard_suites(0)["test"][4], click_mode="center")  # occlusion scene
    result = run_snippet(
        sample.keyframe_frames(), sample.clicks_by_frame(), provider, cfg.propagation, params
    )
    # the vanishing object is instance 2 (clicked at frame 0), reappearing as a new id
    reappear = [c for c in sample.clicks if c.frame > 0]
    assert len(reappear) == 1
    new_id = reappear[0].instance
    closed = result.registry.entries[2]
    assert closed.status == "occluded-closed"
    for t in range(closed.closed_frame, len(result.masks)):
        assert mask_area(result.masks[t], 2) == 0
    assert result.registry.entries[new_id].status == "active"
    assert mask_area(result.masks[4], new_id) > 0


def test_run_snippet_closed_never_returns():
    cfg, params, provider = engine_fixture()
    sample = generate_scene(standard_suites(0)["test"][4], click_mode="center")
    result = run_snippet(
        sample.keyframe_frames(), sample.clicks_by_frame(), provider, cfg.propagation, params
    )
    for entry in result.registry.entries.values():
        if entry.status != "occluded-closed":
            continue
        for t in range(entry.closed_frame, len(result.masks)):
            assert mask_area(result.masks[t], entry.instance) == 0


def test_run_snippet_composition_single_frame():
    cfg, params, provider = engine_fixture()
    sample = generate_scene(standard_suites(0)["test"][2], click_mode="center")
    frames = sample.keyframe_frames()[:1]
    clicks = [c for c in sample.clicks if c.frame == 0]
    result = run_snippet(frames, {0: clicks}, provider, cfg.propagation, params)
    f = provider(frames[0], 0)
    vol, _ = step_same_frame(f, f, clicks, None, cfg.propagation, params)
    np.testing.assert_array_equal(result.masks[0].grid, decode_mask(vol).grid)


def test_run_snippet_determinism():
    cfg, params, provider = engine_fixture()
    sample = generate_scene(standard_suites(0)["test"][0], click_mode="center")
    a = run_snippet(sample.keyframe_frames(), sample.clicks_by_frame(), provider, cfg.propagation, params)
    b = run_snippet(sample.keyframe_frames(), sample.clicks_by_frame(), provider, cfg.propagation, params)
    for ma, mb in zip(a.masks, b.masks):
        np.testing.assert_array_equal(ma.grid, mb.grid)


def test_run_snippet_rejects_duplicate_ids():
    cfg, params, provider = engine_fixture()
    sample = generate_scene(standard_suites(0)["test"][2], click_mode="center")
    frames = sample.keyframe_frames()
    clicks = {0: [Click(0, 10, 10, 1)], 1: [Click(1, 12, 10, 1)]}
    with pytest.raises(ValueError, match="duplicate"):
        run_snippet(frames, clicks, provider, cfg.propagation, params)


def test_run_snippet_rejects_out_of_range_frame():
    cfg, params, provider = engine_fixture()
    sample = generate_scene(standard_suites(0)["test"][2], click_mode="center")
    with pytest.raises(ValueError, match="outside"):
        run_snippet(
            sample.keyframe_frames(),
            {99: [Click(99, 1, 1, 1)]},
            provider,
            cfg.propagation,
            params,
        )


def test_registry_rules():
    reg = MaskletRegistry()
    reg.add(Click(0, 1, 1, 1))
    with pytest.raises(ValueError, match="duplicate"):
        reg.add(Click(0, 2, 2, 1))
    reg.close(1, 3)
    assert reg.entries[1].closed_frame == 3
    reg.close(1, 4)  # idempotent, keeps the first close frame
    assert reg.entries[1].closed_frame == 3


def test_propagation_config_validation():
    with pytest.raises(ValueError):
        PropagationConfig(occlusion_area_threshold=0)
    with pytest.raises(ValueError):
        PropagationConfig(top_fraction=0.0)
    with pytest.raises(ValueError):
        PropagationConfig(top_fraction=1.5)
