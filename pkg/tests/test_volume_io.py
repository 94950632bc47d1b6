import numpy as np
import pytest

from slmprop.errors import BadMagic, DimMismatch, IoFailure, TruncatedFile, UnsupportedVersion
from slmprop.volume_io import (
    MaskVolume,
    Modality,
    Volume,
    load_mask,
    load_volume,
    normalize_volume,
    resize_slice,
    save_mask,
    save_volume,
)


def test_volume_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    v = Volume(rng.normal(size=(4, 8, 8)).astype(np.float32), (2.0, 0.5, 0.5), Modality.MR)
    p = tmp_path / "v.svol"
    save_volume(v, p)
    back = load_volume(p)
    assert back.dims == (4, 8, 8)
    assert back.spacing == (2.0, 0.5, 0.5)
    assert back.modality == Modality.MR
    np.testing.assert_array_equal(back.voxels, v.voxels)


def test_mask_round_trip(tmp_path):
    labels = np.zeros((3, 4, 4), dtype=np.uint8)
    labels[1, 1:3, 1:3] = 1
    labels[2, 0, 0] = 2
    m = MaskVolume(labels)
    p = tmp_path / "m.smsk"
    save_mask(m, p)
    back = load_mask(p)
    np.testing.assert_array_equal(back.labels, labels)
    assert back.object_ids == (1, 2)


def test_round_trip_random_volumes_property(tmp_path):
    rng = np.random.default_rng(7)
    for i in range(20):
        dims = tuple(int(d) for d in rng.integers(1, 6, size=3))
        v = Volume(rng.normal(size=dims).astype(np.float32) * 100)
        p = tmp_path / f"v{i}.svol"
        save_volume(v, p)
        np.testing.assert_array_equal(load_volume(p).voxels, v.voxels)
        labels = rng.integers(0, 3, size=dims).astype(np.uint8)
        m = MaskVolume(labels, object_ids=(1, 2))
        q = tmp_path / f"m{i}.smsk"
        save_mask(m, q)
        np.testing.assert_array_equal(load_mask(q).labels, labels)


def test_bad_magic(tmp_path):
    p = tmp_path / "x.svol"
    v = Volume(np.zeros((1, 2, 2), dtype=np.float32))
    save_volume(v, p)
    raw = bytearray(p.read_bytes())
    raw[:4] = b"XXXX"
    p.write_bytes(bytes(raw))
    with pytest.raises(BadMagic, match="magic"):
        load_volume(p)


def test_unsupported_version(tmp_path):
    p = tmp_path / "x.svol"
    save_volume(Volume(np.zeros((1, 2, 2), dtype=np.float32)), p)
    raw = bytearray(p.read_bytes())
    raw[4] = 9
    p.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedVersion, match="version"):
        load_volume(p)


def test_truncated_file(tmp_path):
    p = tmp_path / "x.svol"
    save_volume(Volume(np.zeros((4, 8, 8), dtype=np.float32)), p)
    raw = p.read_bytes()
    p.write_bytes(raw[: 36 + 200 * 4])  # header promises 256 voxels
    with pytest.raises(TruncatedFile, match="payload"):
        load_volume(p)


def test_save_to_readonly_location(tmp_path):
    target = tmp_path / "no_such_dir" / "v.svol"
    with pytest.raises(IoFailure):
        save_volume(Volume(np.zeros((1, 2, 2), dtype=np.float32)), target)


def test_mask_rejects_stray_labels():
    labels = np.full((1, 2, 2), 5, dtype=np.uint8)
    with pytest.raises(DimMismatch):
        MaskVolume(labels, object_ids=(1,))


def test_normalize_ct_clips_then_rescales():
    vox = np.array([-2000.0, 0.0, 3000.0], dtype=np.float32).reshape(1, 1, 3)
    out = normalize_volume(Volume(vox, modality=Modality.CT))
    # clipped to [-1024, 2000], then min-max: (0 + 1024) / 3024 * 255
    expected_mid = (0.0 + 1024.0) / 3024.0 * 255.0
    np.testing.assert_allclose(out.voxels.ravel(), [0.0, expected_mid, 255.0], atol=1e-4)


def test_normalize_constant_volume_is_zero():
    out = normalize_volume(Volume(np.full((2, 2, 2), 5.0, dtype=np.float32), modality=Modality.MR))
    assert np.all(out.voxels == 0)


def test_normalize_endpoints():
    out = normalize_volume(Volume(np.array([[[0.0, 10.0]]], dtype=np.float32), modality=Modality.MR))
    np.testing.assert_allclose(out.voxels.ravel(), [0.0, 255.0])


def test_normalize_idempotent_on_normalized_non_ct():
    rng = np.random.default_rng(3)
    v = Volume(rng.uniform(0, 255, size=(3, 5, 5)).astype(np.float32), modality=Modality.MR)
    v.voxels.flat[0] = 0.0
    v.voxels.flat[1] = 255.0
    once = normalize_volume(v)
    twice = normalize_volume(once)
    np.testing.assert_allclose(twice.voxels, once.voxels, atol=1e-4)


def test_normalize_range_property():
    rng = np.random.default_rng(11)
    for modality in (Modality.CT, Modality.MR, Modality.US):
        v = Volume(rng.normal(0, 1500, size=(2, 4, 4)).astype(np.float32), modality=modality)
        out = normalize_volume(v)
        assert out.voxels.min() >= 0.0 and out.voxels.max() <= 255.0


def test_resize_constant_slice():
    out = resize_slice(np.full((2, 2), 3.5), (4, 4))
    np.testing.assert_allclose(out, 3.5)


def test_resize_identity_is_bit_identical():
    rng = np.random.default_rng(5)
    s = rng.normal(size=(6, 7))
    np.testing.assert_array_equal(resize_slice(s, (6, 7)), s)


def test_resize_bilinear_row():
    # center-aligned sampling of [0, 2] to width 4: x_src = -0.25, 0.25, 0.75, 1.25
    s = np.array([[0.0, 2.0], [0.0, 2.0]])
    out = resize_slice(s, (2, 4))
    np.testing.assert_allclose(out, [[0.0, 0.5, 1.5, 2.0]] * 2)


def test_resize_labels_no_new_values():
    rng = np.random.default_rng(9)
    for _ in range(10):
        labels = rng.integers(0, 4, size=(5, 9)).astype(np.uint8)
        out = resize_slice(labels, (11, 4), labels=True)
        assert set(np.unique(out)) <= set(np.unique(labels))
        assert out.shape == (11, 4)
