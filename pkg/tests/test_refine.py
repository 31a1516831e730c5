import numpy as np
import pytest

from clickseg.correlation import CorrelationVolume
from clickseg.features import FeatureConfig, FeatureMap, FrameImage, handcrafted_features
from clickseg.refine import (
    ChannelMap,
    RefinementConfig,
    apply_channel_map,
    compute_context,
    refine,
    refine_step,
)
from clickseg.tensors import Tensor3


def fmap_of(data):
    return FeatureMap(values=Tensor3(np.asarray(data, dtype=np.float64)))


def volume_of(scores, labels):
    return CorrelationVolume(scores=Tensor3(np.asarray(scores, dtype=np.float64)), row_labels=labels)


def test_compute_context_equals_provider_output():
    rng = np.random.default_rng(0)
    frame = FrameImage(rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8))
    cfg = FeatureConfig()

    def provider(f, idx=None):
        return handcrafted_features(f, cfg, idx)

    a = compute_context(frame, provider)
    b = handcrafted_features(frame, cfg)
    np.testing.assert_array_equal(a.values.data, b.values.data)
    c = compute_context(frame, provider)
    np.testing.assert_array_equal(a.values.data, c.values.data)


def test_channel_map_identity():
    rng = np.random.default_rng(1)
    f = fmap_of(rng.normal(size=(3, 2, 2)))
    out = apply_channel_map(f, ChannelMap.identity(3))
    np.testing.assert_array_equal(out.values.data, f.values.data)


def test_channel_map_constant():
    f = fmap_of(np.zeros((2, 2, 2)))
    m = ChannelMap(np.zeros((2, 2)), np.array([1.5, -2.0]), residual=False)
    out = apply_channel_map(f, m)
    np.testing.assert_allclose(out.values.data[0], 1.5)
    np.testing.assert_allclose(out.values.data[1], -2.0)


def test_channel_map_matches_matvec():
    rng = np.random.default_rng(2)
    f = fmap_of(rng.normal(size=(4, 1, 1)))
    w = rng.normal(size=(4, 4))
    b = rng.normal(size=4)
    out = apply_channel_map(f, ChannelMap(w, b, residual=False))
    expected = w @ f.values.data[:, 0, 0] + b
    np.testing.assert_allclose(out.values.data[:, 0, 0], expected, rtol=1e-12)
    out_res = apply_channel_map(f, ChannelMap(w, b, residual=True))
    np.testing.assert_allclose(
        out_res.values.data[:, 0, 0], f.values.data[:, 0, 0] + expected, rtol=1e-12
    )


def test_channel_map_dim_mismatch():
    f = fmap_of(np.zeros((3, 2, 2)))
    with pytest.raises(ValueError, match="dim"):
        apply_channel_map(f, ChannelMap.identity(4))


def test_refine_step_zero_value_is_identity():
    rng = np.random.default_rng(3)
    scores = rng.normal(size=(3, 4, 4))
    vol = volume_of(scores, [0, 1, 2])
    key = fmap_of(rng.normal(size=(5, 4, 4)))
    value = fmap_of(np.zeros((5, 4, 4)))
    out = refine_step(vol, key, value)
    np.testing.assert_array_equal(out.scores.data, scores.astype(out.scores.data.dtype))


def test_refine_step_hand_example():
    vol = volume_of(np.array([[[0.0]], [[0.0]]]), [0, 1])
    key = fmap_of(np.array([[[1.0]], [[0.0]]]))
    value = fmap_of(np.array([[[2.0]], [[4.0]]]))
    out = refine_step(vol, key, value)
    np.testing.assert_allclose(out.scores.data[:, 0, 0], [2.755, 2.755], atol=1e-3)


def test_refine_step_hand_example_scalar_reference():
    # Independent scalar evaluation of the three update formulas.
    c = np.array([0.0, 0.0])
    fk = np.array([1.0, 0.0])
    fv = np.array([2.0, 4.0])
    s = np.exp(c - c.max()) / np.exp(c - c.max()).sum()
    raw = np.array([[s[n] * fk[d] for d in range(2)] for n in range(2)])
    a = np.exp(raw - raw.max(axis=1, keepdims=True))
    a = a / a.sum(axis=1, keepdims=True)
    expected = c + a @ fv
    vol = volume_of(np.array([[[0.0]], [[0.0]]]), [0, 1])
    out = refine_step(vol, fmap_of(np.array([[[1.0]], [[0.0]]])), fmap_of(np.array([[[2.0]], [[4.0]]])))
    np.testing.assert_allclose(out.scores.data[:, 0, 0], expected, rtol=1e-7)
    assert a[0] == pytest.approx([0.6225, 0.3775], abs=1e-4)


def test_refine_step_identical_rows_stay_identical():
    rng = np.random.default_rng(4)
    row = rng.normal(size=(3, 3))
    vol = volume_of(np.stack([row, row]), [0, 1])
    key = fmap_of(rng.normal(size=(4, 3, 3)))
    value = fmap_of(rng.normal(size=(4, 3, 3)))
    out = refine_step(vol, key, value)
    np.testing.assert_allclose(out.scores.data[0], out.scores.data[1], rtol=1e-10)


def test_refine_step_residual_structure():
    rng = np.random.default_rng(5)
    scores = rng.normal(size=(3, 4, 4))
    vol = volume_of(scores, [0, 1, 2])
    key = fmap_of(rng.normal(size=(5, 4, 4)))
    value = fmap_of(rng.normal(size=(5, 4, 4)))
    out = refine_step(vol, key, value)
    residual = out.scores.data - scores
    # recompute attention independently and check the residual product
    s = np.exp(scores - scores.max(axis=0, keepdims=True))
    s = s / s.sum(axis=0, keepdims=True)
    raw = np.einsum("nij,dij->nd", s, key.values.data)
    att = np.exp(raw - raw.max(axis=1, keepdims=True))
    att = att / att.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(att.sum(axis=1), 1.0, atol=1e-6)
    expected = np.einsum("nd,dij->nij", att, value.values.data)
    np.testing.assert_allclose(residual, expected, rtol=1e-8, atol=1e-10)


def test_refine_step_row_permutation_equivariance():
    rng = np.random.default_rng(6)
    scores = rng.normal(size=(4, 3, 3))
    key = fmap_of(rng.normal(size=(5, 3, 3)))
    value = fmap_of(rng.normal(size=(5, 3, 3)))
    base = refine_step(volume_of(scores, [0, 1, 2, 3]), key, value)
    perm = [0, 3, 1, 2]  # background stays put, instances permute
    permuted = refine_step(volume_of(scores[perm], [0, 3, 1, 2]), key, value)
    np.testing.assert_allclose(permuted.scores.data, base.scores.data[perm], rtol=1e-10)


def test_refine_steps_zero_returns_empty():
    vol = volume_of(np.zeros((2, 2, 2)), [0, 1])
    ctx = fmap_of(np.zeros((3, 2, 2)))
    cfg = RefinementConfig(steps=0, key_map=ChannelMap.identity(3), value_map=ChannelMap.zero(3))
    assert refine(vol, ctx, cfg) == []


def test_refine_zero_value_map_keeps_c0():
    rng = np.random.default_rng(7)
    scores = rng.normal(size=(3, 4, 4))
    vol = volume_of(scores, [0, 1, 2])
    ctx = fmap_of(rng.normal(size=(5, 4, 4)))
    cfg = RefinementConfig(steps=2, key_map=ChannelMap.identity(5), value_map=ChannelMap.zero(5))
    seq = refine(vol, ctx, cfg)
    assert len(seq) == 2
    for out in seq:
        np.testing.assert_array_equal(out.scores.data, vol.scores.data)


def test_refine_single_step_matches_refine_step():
    rng = np.random.default_rng(8)
    scores = rng.normal(size=(3, 4, 4))
    vol = volume_of(scores, [0, 1, 2])
    ctx = fmap_of(rng.normal(size=(5, 4, 4)))
    key_map = ChannelMap(rng.normal(size=(5, 5)), rng.normal(size=5), residual=True)
    value_map = ChannelMap(rng.normal(size=(5, 5)), rng.normal(size=5), residual=False)
    cfg = RefinementConfig(steps=1, key_map=key_map, value_map=value_map)
    seq = refine(vol, ctx, cfg)
    direct = refine_step(vol, apply_channel_map(ctx, key_map), apply_channel_map(ctx, value_map))
    np.testing.assert_array_equal(seq[0].scores.data, direct.scores.data)


def test_refinement_config_validation():
    with pytest.raises(ValueError):
        RefinementConfig(steps=-1, key_map=ChannelMap.identity(2), value_map=ChannelMap.zero(2))
