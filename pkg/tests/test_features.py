import numpy as np
import pytest

from clickseg.features import (
    FeatureConfig,
    FeatureFileError,
    FrameImage,
    handcrafted_features,
    load_feature_file,
    save_feature_file,
)
from clickseg.tensors import Tensor3
from clickseg.features import FeatureMap


def gray_frame(h=16, w=16, value=128):
    return FrameImage(np.full((h, w, 3), value, dtype=np.uint8))


def test_constant_gray_rgb_channels():
    fmap = handcrafted_features(gray_frame(), FeatureConfig())
    for c in range(3):
        np.testing.assert_allclose(fmap.values.data[c], 128.0 / 255.0, atol=1e-6)


def test_bias_channel_is_one():
    fmap = handcrafted_features(gray_frame(), FeatureConfig())
    np.testing.assert_allclose(fmap.values.data[-1], 1.0, atol=1e-7)


def test_lowest_frequency_values_at_corner():
    cfg = FeatureConfig()
    fmap = handcrafted_features(gray_frame(), cfg)
    # channel order after RGB: sin x, cos x, sin y, cos y for frequency 0
    assert fmap.values.data[3, 0, 0] == pytest.approx(0.0, abs=1e-7)  # sin x
    assert fmap.values.data[4, 0, 0] == pytest.approx(1.0, abs=1e-6)  # cos x
    assert fmap.values.data[5, 0, 0] == pytest.approx(0.0, abs=1e-7)  # sin y
    assert fmap.values.data[6, 0, 0] == pytest.approx(1.0, abs=1e-6)  # cos y


def test_channel_dim_formula():
    cfg = FeatureConfig(position_frequencies=4, include_gradient_channel=True)
    assert cfg.channel_dim == 3 + 16 + 1 + 1
    cfg = FeatureConfig(position_frequencies=2, include_gradient_channel=False)
    assert cfg.channel_dim == 3 + 8 + 1


def test_deterministic_extraction():
    rng = np.random.default_rng(0)
    frame = FrameImage(rng.integers(0, 256, size=(20, 24, 3), dtype=np.uint8))
    a = handcrafted_features(frame, FeatureConfig())
    b = handcrafted_features(frame, FeatureConfig())
    np.testing.assert_array_equal(a.values.data, b.values.data)


def test_grid_dims_with_replication_padding():
    frame = FrameImage(np.zeros((18, 21, 3), dtype=np.uint8))
    fmap = handcrafted_features(frame, FeatureConfig())
    assert (fmap.grid_height, fmap.grid_width) == (5, 6)  # ceil(18/4), ceil(21/4)
    assert fmap.pad_bottom == 2 and fmap.pad_right == 3
    assert fmap.source_height == 18 and fmap.source_width == 21


def test_frame_smaller_than_stride_errors():
    with pytest.raises(ValueError, match="stride"):
        handcrafted_features(FrameImage(np.zeros((2, 8, 3), dtype=np.uint8)), FeatureConfig())


def test_channel_scale_locality():
    rng = np.random.default_rng(1)
    frame = FrameImage(rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8))
    cfg = FeatureConfig()
    base = handcrafted_features(frame, cfg)
    scales = np.ones(cfg.channel_dim)
    scales[5] = 2.0  # power of two keeps the comparison exact
    scaled = handcrafted_features(frame, cfg.with_scales(scales))
    np.testing.assert_array_equal(scaled.values.data[5], 2.0 * base.values.data[5])
    mask = np.ones(cfg.channel_dim, dtype=bool)
    mask[5] = False
    np.testing.assert_array_equal(scaled.values.data[mask], base.values.data[mask])


def test_vcfm_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    fmap = FeatureMap(values=Tensor3(rng.normal(size=(8, 4, 4)).astype(np.float32)))
    path = tmp_path / "m.vcfm"
    save_feature_file(fmap, path)
    loaded = load_feature_file(path)
    np.testing.assert_array_equal(loaded.values.data, fmap.values.data)
    # save-load-save byte determinism
    path2 = tmp_path / "m2.vcfm"
    save_feature_file(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_vcfm_header_layout(tmp_path):
    fmap = FeatureMap(values=Tensor3(np.zeros((8, 4, 4), dtype=np.float32)))
    path = tmp_path / "m.vcfm"
    save_feature_file(fmap, path)
    blob = path.read_bytes()
    assert blob[:4] == b"VCFM"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:12], "little") == 8
    assert int.from_bytes(blob[12:16], "little") == 4
    assert int.from_bytes(blob[16:20], "little") == 4
    assert len(blob) == 20 + 4 * 8 * 4 * 4


def test_vcfm_single_element_byte_count(tmp_path):
    fmap = FeatureMap(values=Tensor3(np.zeros((1, 1, 1), dtype=np.float32)))
    path = tmp_path / "tiny.vcfm"
    save_feature_file(fmap, path)
    # 4 magic + 4 version + 12 dims + 4 payload
    assert len(path.read_bytes()) == 24


def test_vcfm_bad_magic(tmp_path):
    path = tmp_path / "bad.vcfm"
    path.write_bytes(b"XXXX" + b"\x00" * 20)
    with pytest.raises(FeatureFileError, match="bad magic at offset 0"):
        load_feature_file(path)


def test_vcfm_payload_length_mismatch(tmp_path):
    import struct

    path = tmp_path / "short.vcfm"
    header = b"VCFM" + struct.pack("<I", 1) + struct.pack("<III", 8, 4, 4)
    path.write_bytes(header + b"\x00" * (4 * 100))
    with pytest.raises(FeatureFileError, match="expected 128 values"):
        load_feature_file(path)
