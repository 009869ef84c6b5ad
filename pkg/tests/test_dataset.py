import json
import struct
import zlib
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chronofield import dataset as ds
from chronofield import geometry as g
from chronofield.errors import DataError

SCHEMA = Path(__file__).parents[1] / "docs" / "transforms.schema.json"


def write_png_16bit_rgba(path, values: np.ndarray) -> None:
    """Minimal independent PNG encoder (16-bit RGBA, no filtering)."""
    h, w = values.shape[:2]

    def chunk(tag, data):
        piece = struct.pack(">I", len(data)) + tag + data
        return piece + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    raw = b"".join(b"\x00" + row.astype(">u2").tobytes() for row in values)
    blob = (b"\x89PNG\r\n\x1a\n"
            + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 16, 6, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(raw))
            + chunk(b"IEND", b""))
    Path(path).write_bytes(blob)


def simple_rig(n=3, radius=4.0, width=8, height=6):
    cams = {}
    frames = []
    positions = g.fibonacci_camera_positions(n, radius)
    for i, p in enumerate(positions):
        up = (0, 1, 0) if abs(p[2] / radius) > 1 - 1e-9 else (0, 0, 1)
        pose = g.look_at_pose(p, (0, 0, 0), up)
        cams[i] = g.CameraModel.from_fov(width, height, 0.8, pose)
        for t in range(2):
            frames.append(ds.FrameRef(ds.IMAGE_PATTERN.format(time=t, camera=i), t, i))
    return cams, frames


# -- transforms files -------------------------------------------------------------


def test_fov_round_trip_through_transforms(tmp_path):
    path = tmp_path / "transforms.json"
    doc = {
        "camera_angle_x": 0.6911,
        "w": 1920, "h": 1080,
        "frames": [{
            "file_path": "t0000/cam0000.png", "time_index": 0, "camera_index": 0,
            "transform_matrix": np.eye(4).tolist(),
        }],
    }
    path.write_text(json.dumps(doc))
    tf = ds.load_transforms(path)
    cam = tf.cameras[0]
    assert abs(cam.fx - 2666.67) / 2666.67 < 1e-3
    np.testing.assert_allclose(cam.pose.center, [0, 0, 0])


def test_save_load_fixpoint(tmp_path):
    cams, frames = simple_rig()
    p1 = tmp_path / "transforms.json"
    ds.save_transforms(p1, cams, frames, split=ds.SplitSpec((0,), (1,)))
    tf = ds.load_transforms(p1)
    for i, cam in cams.items():
        np.testing.assert_allclose(tf.cameras[i].pose.matrix, cam.pose.matrix,
                                   atol=1e-12)
        assert tf.cameras[i].fx == cam.fx
    assert [f.file_path for f in tf.frames] == [f.file_path for f in frames]
    assert tf.split.test_view_indices == (0,)
    # saving the loaded rig reproduces the file byte for byte
    p2 = tmp_path / "again.json"
    ds.save_transforms(p2, tf.cameras, tf.frames, split=tf.split)
    assert p1.read_text() == p2.read_text()


def test_load_transforms_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(DataError):
        ds.load_transforms(bad)

    skew = np.eye(4)
    skew[0, 1] = 0.05  # far beyond the 1e-3 orthonormality tolerance
    doc = {"camera_angle_x": 0.7, "w": 8, "h": 8,
           "frames": [{"file_path": "x.png", "time_index": 0, "camera_index": 0,
                       "transform_matrix": skew.tolist()}]}
    p = tmp_path / "skew.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(DataError, match="rotation"):
        ds.load_transforms(p)

    doc["frames"][0] = {"file_path": "x.png"}
    p.write_text(json.dumps(doc))
    with pytest.raises(DataError, match="missing"):
        ds.load_transforms(p)


def test_mildly_skewed_pose_is_projected(tmp_path):
    m = np.eye(4)
    m[0, 1] = 2e-4  # inside the 1e-3 tolerance, outside pose invariants
    doc = {"camera_angle_x": 0.7, "w": 8, "h": 8,
           "frames": [{"file_path": "x.png", "time_index": 0, "camera_index": 0,
                       "transform_matrix": m.tolist()}]}
    p = tmp_path / "skew.json"
    p.write_text(json.dumps(doc))
    tf = ds.load_transforms(p)
    r = tf.cameras[0].pose.rotation
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-9)


def test_saved_files_validate_against_schema(tmp_path):
    import jsonschema

    cams, frames = simple_rig()
    p = tmp_path / "transforms.json"
    ds.save_transforms(p, cams, frames, split=ds.SplitSpec((0,), ()))
    jsonschema.validate(json.loads(p.read_text()), json.loads(SCHEMA.read_text()))


# -- splits ------------------------------------------------------------------------


def test_published_capture_splits():
    train, val, test = ds.split_views(100, ds.SplitSpec((0, 30, 60, 90), (1,)))
    assert len(train) == 95 and val == [1] and test == [0, 30, 60, 90]
    train, val, test = ds.split_views(60, ds.SplitSpec((21, 37, 40, 56), (0,)))
    assert len(train) == 55
    train, val, test = ds.split_views(10, ds.SplitSpec())
    assert train == list(range(10)) and not val and not test


def test_split_validation():
    with pytest.raises(DataError):
        ds.SplitSpec((1, 2), (2,))
    with pytest.raises(DataError):
        ds.split_views(5, ds.SplitSpec((7,), ()))


@given(n=st.integers(2, 40), seed=st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_split_is_partition(n, seed):
    rng = np.random.default_rng(seed)
    picks = rng.choice(n, size=min(n, 6), replace=False)
    spec = ds.SplitSpec(tuple(int(v) for v in picks[:3]),
                        tuple(int(v) for v in picks[3:5]))
    train, val, test = ds.split_views(n, spec)
    combined = sorted(train) + sorted(val) + sorted(test)
    assert sorted(combined) == list(range(n))
    assert not (set(train) & set(val)) and not (set(train) & set(test))
    assert not (set(val) & set(test))


# -- image I/O ----------------------------------------------------------------------


def test_16bit_png_normalization(tmp_path):
    vals = np.array([[[65535, 0, 32768, 65535], [0, 65535, 1, 30000]],
                     [[12345, 54321, 11111, 65535], [65535, 65535, 65535, 0]]],
                    dtype=np.uint16)
    p = tmp_path / "deep.png"
    write_png_16bit_rgba(p, vals)
    img = ds.imread_rgba(p)
    np.testing.assert_allclose(img, vals.astype(np.float32) / 65535.0, atol=1e-7)


def test_8bit_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    rgba = rng.random((6, 5, 4)).astype(np.float32)
    p = tmp_path / "x.png"
    ds.imwrite_rgba(p, rgba)
    back = ds.imread_rgba(p)
    assert back.shape == (6, 5, 4)
    np.testing.assert_allclose(back, rgba, atol=1.0 / 255.0)


def test_rgb_png_gets_opaque_alpha(tmp_path):
    import cv2

    bgr = np.zeros((4, 4, 3), np.uint8)
    bgr[..., 2] = 255  # red in BGR
    cv2.imwrite(str(tmp_path / "rgb.png"), bgr)
    img = ds.imread_rgba(tmp_path / "rgb.png")
    np.testing.assert_array_equal(img[..., 0], 1.0)
    np.testing.assert_array_equal(img[..., 3], 1.0)


def test_imread_missing_file(tmp_path):
    with pytest.raises(DataError, match="cannot read"):
        ds.imread_rgba(tmp_path / "nope.png")


# -- frame sets -----------------------------------------------------------------------


def _write_dataset(tmp_path, n_views=3, drop=None):
    cams, frames = simple_rig(n=n_views)
    rng = np.random.default_rng(0)
    for fr in frames:
        if drop and (fr.time_index, fr.camera_index) == drop:
            continue
        ds.imwrite_rgba(tmp_path / fr.file_path, rng.random((6, 8, 4)).astype(np.float32))
    ds.save_transforms(tmp_path / "transforms.json", cams, frames)
    return tmp_path


def test_load_frame_set(tmp_path):
    root = _write_dataset(tmp_path)
    fs = ds.load_frame_set(root, 0)
    assert fs.time_index == 0 and len(fs.views) == 3
    assert fs.resolution == (8, 6)


def test_load_frame_set_missing_image(tmp_path):
    root = _write_dataset(tmp_path, drop=(1, 2))
    ds.load_frame_set(root, 0)
    with pytest.raises(DataError, match="view 2.*time 1"):
        ds.load_frame_set(root, 1)


def test_frame_set_rejects_mixed_resolutions(tmp_path):
    root = _write_dataset(tmp_path)
    ds.imwrite_rgba(root / "t0000/cam0001.png",
                    np.zeros((5, 8, 4), np.float32))
    with pytest.raises(DataError, match="resolution"):
        ds.load_frame_set(root, 0)


# -- compositing -------------------------------------------------------------------------


def test_composite_alpha_cases():
    fg = np.array([[[1.0, 0.0, 0.0, 1.0]]])
    np.testing.assert_allclose(ds.composite_alpha(fg, (0, 0, 1)), [[[1, 0, 0]]])
    fg[..., 3] = 0.0
    np.testing.assert_allclose(ds.composite_alpha(fg, (0, 0, 1)), [[[0, 0, 1]]])
    fg[..., 3] = 0.25
    np.testing.assert_allclose(ds.composite_alpha(fg, (0, 0, 1)),
                               [[[0.25, 0.0, 0.75]]])


@given(seed=st.integers(0, 10 ** 6))
@settings(max_examples=40, deadline=None)
def test_composite_alpha_stays_in_unit_cube(seed):
    rng = np.random.default_rng(seed)
    rgba = rng.random((3, 4, 4))
    bg = rng.random(3)
    out = ds.composite_alpha(rgba, bg)
    assert np.all((out >= 0) & (out <= 1))


# -- calibration conversion -----------------------------------------------------------------


def _calib_entry(name, r, t, k=None, resolution=(1920, 1080), **extra):
    k = k if k is not None else [[1400.0, 0.0, 960.0], [0.0, 1400.0, 540.0],
                                 [0.0, 0.0, 1.0]]
    entry = {"name": name, "type": "hd", "resolution": list(resolution),
             "K": k, "R": np.asarray(r).tolist(), "t": np.asarray(t).tolist()}
    entry.update(extra)
    return entry


def test_convert_fills_missing_distortion():
    doc = ds.convert_panoptic_calibration(
        {"cameras": [_calib_entry("hd_00", np.eye(3), [0, 0, -3])]})
    fr = doc["frames"][0]
    assert fr["k1"] == fr["k2"] == fr["k3"] == fr["p1"] == fr["p2"] == 0.0
    assert fr["fl_x"] == 1400.0 and fr["w"] == 1920


def test_convert_applies_inversion_then_alignment():
    doc = ds.convert_panoptic_calibration(
        {"cameras": [_calib_entry("hd_00", np.eye(3), [0, 0, -3])]})
    m = np.asarray(doc["frames"][0]["transform_matrix"])
    # camera-to-world center before alignment is (0, 0, 3); alignment is a
    # fixed rotation, checked against the matrix product oracle
    expect = g.PANOPTIC_ALIGNMENT @ np.array([0.0, 0.0, 3.0, 1.0])
    np.testing.assert_allclose(m[:, 3], expect, atol=1e-12)


def test_convert_preserves_pairwise_distances():
    rng = np.random.default_rng(7)
    entries = []
    centers = []
    for i in range(5):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] *= -1
        c = rng.normal(0, 3, 3)
        centers.append(c)
        entries.append(_calib_entry(f"hd_{i:02d}", q, -q @ c))
    doc = ds.convert_panoptic_calibration({"cameras": entries})
    out_centers = np.array([np.asarray(f["transform_matrix"])[:3, 3]
                            for f in doc["frames"]])
    centers = np.array(centers)
    before = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
    after = np.linalg.norm(out_centers[:, None] - out_centers[None], axis=-1)
    assert np.abs(after - before).max() <= 1e-9 * (1 + before.max())


def test_convert_carries_distortion_metadata():
    doc = ds.convert_panoptic_calibration(
        {"cameras": [_calib_entry("hd_00", np.eye(3), [0, 0, -3],
                                  distCoef=[0.1, -0.05, 0.001, 0.002, 0.01])]})
    fr = doc["frames"][0]
    # OpenCV coefficient order is (k1, k2, p1, p2, k3)
    assert (fr["k1"], fr["k2"], fr["p1"], fr["p2"], fr["k3"]) == \
        (0.1, -0.05, 0.001, 0.002, 0.01)


def test_convert_errors():
    with pytest.raises(DataError, match="no cameras"):
        ds.convert_panoptic_calibration({"cameras": []})
    entry = _calib_entry("hd_00", np.eye(3), [0, 0, -3])
    del entry["K"]
    with pytest.raises(DataError, match="missing K"):
        ds.convert_panoptic_calibration({"cameras": [entry]})
    vga = _calib_entry("vga_01", np.eye(3), [0, 0, -3])
    vga["type"] = "vga"
    with pytest.raises(DataError, match="matched"):
        ds.convert_panoptic_calibration({"cameras": [vga]})


def test_convert_output_loads_as_transforms(tmp_path):
    doc = ds.convert_panoptic_calibration(
        {"cameras": [_calib_entry("hd_00", np.eye(3), [0, 0, -3])]}, n_timesteps=2)
    p = tmp_path / "transforms.json"
    p.write_text(json.dumps(doc))
    tf = ds.load_transforms(p)
    assert tf.timesteps() == [0, 1]
    assert tf.cameras[0].k1 == 0.0
