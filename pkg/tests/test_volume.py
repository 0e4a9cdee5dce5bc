import numpy as np
import pytest
from PIL import Image

from dragdrop.volume import (
    Box,
    LabelVolume,
    Volume,
    VolumeIOError,
    crop_roi,
    load_label,
    load_volume,
    paste_roi,
    render_slice,
    save_label,
    save_volume,
)


def test_raw_json_declared_header(tmp_path):
    data = np.arange(8, dtype="<f4")
    (tmp_path / "v.f32").write_bytes(data.tobytes())
    (tmp_path / "v.json").write_text(
        '{"dims": [2, 2, 2], "spacing": [1, 1, 1], "order": "x-fastest"}'
    )
    vol = load_volume(tmp_path / "v.f32")
    assert vol.dims == (2, 2, 2)
    # x-fastest: element 1 of the file is voxel (1, 0, 0)
    assert vol.data[1, 0, 0] == 1.0


def test_raw_json_byte_count_mismatch(tmp_path):
    (tmp_path / "v.f32").write_bytes(b"\0" * 12)
    (tmp_path / "v.json").write_text('{"dims": [2, 2, 2], "spacing": [1, 1, 1]}')
    with pytest.raises(VolumeIOError, match="byte count"):
        load_volume(tmp_path / "v.f32")


def test_frame_dir_stacking(tmp_path):
    for i in range(3):
        Image.fromarray(np.full((4, 4), i * 10, np.uint8)).save(
            tmp_path / f"frame_{i:03d}.png"
        )
    vol = load_volume(tmp_path, format="frame_dir")
    assert vol.dims == (4, 4, 3)
    assert vol.spacing == (1.0, 1.0, 1.0)
    assert np.all(vol.data[:, :, 1] == 10)


def test_frame_dir_inconsistent_sizes(tmp_path):
    Image.fromarray(np.zeros((4, 4), np.uint8)).save(tmp_path / "a.png")
    Image.fromarray(np.zeros((5, 4), np.uint8)).save(tmp_path / "b.png")
    with pytest.raises(VolumeIOError, match="differs"):
        load_volume(tmp_path, format="frame_dir")


def test_nifti_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    vol = Volume(rng.normal(size=(5, 6, 7)).astype(np.float32), (1.0, 1.5, 2.0))
    for name in ("v.nii", "v.nii.gz"):
        save_volume(vol, tmp_path / name)
        back = load_volume(tmp_path / name)
        assert back.dims == vol.dims
        assert back.spacing == pytest.approx(vol.spacing)
        assert np.array_equal(back.data, vol.data)


def test_label_roundtrip_zero_and_ids(tmp_path):
    lab = LabelVolume(np.zeros((3, 3, 3), np.int32))
    save_label(lab, tmp_path / "l.nii")
    assert np.array_equal(load_label(tmp_path / "l.nii").labels, lab.labels)

    arr = np.zeros((3, 3, 3), np.int32)
    arr[0, 0, 0] = 1
    arr[2, 2, 2] = 2
    save_label(LabelVolume(arr), tmp_path / "l2.f32", format="raw_json")
    back = load_label(tmp_path / "l2.f32")
    assert sorted(np.unique(back.labels)) == [0, 1, 2]
    assert np.array_equal(back.labels, arr)


def test_label_roundtrip_random_64(tmp_path):
    rng = np.random.default_rng(11)
    arr = rng.integers(0, 9, size=(64, 64, 64)).astype(np.int32)
    lab = LabelVolume(arr, (1.0, 1.0, 2.5))
    for name in ("big.nii.gz", "big.f32"):
        save_label(lab, tmp_path / name)
        back = load_label(tmp_path / name)
        assert np.array_equal(back.labels, arr)


def test_nifti_oblique_rejected(tmp_path):
    save_volume(Volume(np.zeros((3, 3, 3), np.float32)), tmp_path / "v.nii")
    raw = bytearray((tmp_path / "v.nii").read_bytes())
    import struct

    struct.pack_into("<f", raw, 284, 0.7)  # srow_x[1]: shear term
    (tmp_path / "bad.nii").write_bytes(bytes(raw))
    with pytest.raises(VolumeIOError, match="oblique"):
        load_volume(tmp_path / "bad.nii")


def test_crop_paste_roundtrip():
    rng = np.random.default_rng(5)
    arr = rng.normal(size=(6, 7, 8)).astype(np.float32)
    full = crop_roi(arr, Box((0, 0, 0), (6, 7, 8)))
    assert np.array_equal(full, arr)
    for _ in range(20):
        lo = tuple(int(rng.integers(0, d)) for d in arr.shape)
        hi = tuple(int(rng.integers(l + 1, d + 1)) for l, d in zip(lo, arr.shape))
        box = Box(lo, hi)
        patch = crop_roi(arr, box)
        target = arr.copy()
        paste_roi(target, patch, box)
        assert np.array_equal(target, arr)


def test_crop_empty_box_errors():
    with pytest.raises(ValueError, match="empty ROI"):
        crop_roi(np.zeros((4, 4, 4)), Box((10, 0, 0), (12, 2, 2)))


def test_render_slice_windowing():
    vol = Volume(np.full((4, 4, 4), 50.0, np.float32))
    img = render_slice(vol, "z", 0, (0.0, 100.0))
    assert np.all(img == 128)  # midpoint rounds half up
    low = Volume(np.full((2, 2, 2), -5.0, np.float32))
    assert np.all(render_slice(low, "x", 1, (0.0, 100.0)) == 0)
    high = Volume(np.full((2, 2, 2), 200.0, np.float32))
    assert np.all(render_slice(high, "y", 0, (0.0, 100.0)) == 255)


def test_render_slice_matches_formula():
    rng = np.random.default_rng(9)
    vol = Volume(rng.uniform(-50, 150, size=(5, 6, 7)).astype(np.float32))
    lo, hi = 10.0, 90.0
    img = render_slice(vol, "y", 3, (lo, hi))
    ref = np.clip(
        np.floor((vol.data[:, 3, :].astype(np.float64) - lo) / (hi - lo) * 255 + 0.5),
        0,
        255,
    ).astype(np.uint8)
    assert np.array_equal(img, ref)


def test_render_slice_index_out_of_range():
    vol = Volume(np.zeros((3, 3, 3), np.float32))
    with pytest.raises(IndexError):
        render_slice(vol, "z", 3, (0, 1))
