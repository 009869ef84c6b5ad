"""Dataset ingestion: transforms-style camera files, per-timestep frame sets,
view splits, alpha compositing, and conversion of Panoptic-style calibration.

On-disk layout:

    root/transforms.json
    root/t0000/cam0000.png     (time-major, RGBA)

The transforms file carries camera_angle_x, optional per-frame intrinsics
(fl_x, fl_y, cx, cy, w, h, distortion), frames with explicit time_index and
camera_index fields, and optionally the view split. A JSON Schema for the
format lives in docs/transforms.schema.json.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from . import geometry
from .errors import DataError
from .geometry import CameraModel, CameraPose

IMAGE_PATTERN = "t{time:04d}/cam{camera:04d}.png"


# -- image I/O ---------------------------------------------------------------

def imread_rgba(path) -> np.ndarray:
    """Decode a PNG to float32 RGBA in [0, 1]; missing alpha becomes 1."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DataError(f"cannot read image {path}")
    if raw.dtype == np.uint8:
        img = raw.astype(np.float32) / 255.0
    elif raw.dtype == np.uint16:
        img = raw.astype(np.float32) / 65535.0
    else:
        raise DataError(f"{path}: unsupported image dtype {raw.dtype}")
    if img.ndim == 2:
        img = img[:, :, None].repeat(3, axis=2)
    if img.shape[2] == 3:
        img = img[:, :, ::-1]  # BGR -> RGB
        img = np.concatenate([img, np.ones_like(img[:, :, :1])], axis=2)
    elif img.shape[2] == 4:
        img = img[:, :, [2, 1, 0, 3]]  # BGRA -> RGBA
    else:
        img = np.concatenate([img, img, img, np.ones_like(img[:, :, :1])], axis=2)
    return np.ascontiguousarray(img, dtype=np.float32)


def png_encode_rgba(rgba: np.ndarray) -> bytes:
    """8-bit RGBA PNG bytes; deterministic for identical inputs."""
    u8 = np.clip(np.asarray(rgba, dtype=np.float32) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    bgra = u8[:, :, [2, 1, 0, 3]]
    ok, buf = cv2.imencode(".png", bgra, [cv2.IMWRITE_PNG_COMPRESSION, 6])
    if not ok:
        raise DataError("PNG encoding failed")
    return buf.tobytes()


def imwrite_rgba(path, rgba: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(png_encode_rgba(rgba))


# -- domain types -------------------------------------------------------------

@dataclass(frozen=True)
class View:
    camera: CameraModel
    image: np.ndarray  # (H, W, 4) float32 in [0, 1]


@dataclass(frozen=True)
class MultiViewFrameSet:
    """The synchronized multi-view images of one time index."""

    time_index: int
    views: list[View]

    def __post_init__(self):
        if not self.views:
            raise DataError("frame set needs at least one view")
        shapes = {v.image.shape for v in self.views}
        if len(shapes) > 1:
            raise DataError(f"views disagree on resolution: {sorted(shapes)}")

    @property
    def resolution(self) -> tuple[int, int]:
        h, w = self.views[0].image.shape[:2]
        return w, h


@dataclass(frozen=True)
class SplitSpec:
    test_view_indices: tuple[int, ...] = ()
    val_view_indices: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "test_view_indices", tuple(self.test_view_indices))
        object.__setattr__(self, "val_view_indices", tuple(self.val_view_indices))
        overlap = set(self.test_view_indices) & set(self.val_view_indices)
        if overlap:
            raise DataError(f"views {sorted(overlap)} assigned to both test and val")


def split_views(n_views: int, spec: SplitSpec) -> tuple[list[int], list[int], list[int]]:
    """Partition view indices into (train, val, test); the same split applies
    to every timestep."""
    test, val = set(spec.test_view_indices), set(spec.val_view_indices)
    for idx in test | val:
        if not (0 <= idx < n_views):
            raise DataError(f"split index {idx} out of range for {n_views} views")
    train = [i for i in range(n_views) if i not in test and i not in val]
    return train, sorted(val), sorted(test)


@dataclass(frozen=True)
class FrameRef:
    file_path: str
    time_index: int
    camera_index: int


@dataclass
class TransformsFile:
    cameras: dict[int, CameraModel]
    frames: list[FrameRef]
    angle_x: float
    split: SplitSpec | None = None
    root: Path | None = None

    @property
    def n_views(self) -> int:
        return len(self.cameras)

    def timesteps(self) -> list[int]:
        return sorted({f.time_index for f in self.frames})

    def frame_path(self, t: int, camera: int) -> Path:
        for f in self.frames:
            if f.time_index == t and f.camera_index == camera:
                return (self.root or Path(".")) / f.file_path
        raise DataError(f"no frame for time {t}, camera {camera}")


# -- transforms JSON -----------------------------------------------------------

_INTRINSIC_KEYS = ("w", "h", "fl_x", "fl_y", "cx", "cy")
_DISTORTION_KEYS = ("k1", "k2", "k3", "p1", "p2")


def _orthonormalized(m: np.ndarray, where: str) -> CameraPose:
    r = m[:3, :3]
    err = float(np.abs(r.T @ r - np.eye(3)).max())
    if err >= 1e-3:
        raise DataError(f"{where}: transform_matrix rotation off by {err:.2g} (tol 1e-3)")
    if err > 1e-9:
        # project to the nearest rotation so downstream pose invariants hold
        u, _, vt = np.linalg.svd(r)
        r = u @ vt
        if np.linalg.det(r) < 0:
            u[:, -1] *= -1
            r = u @ vt
        m = m.copy()
        m[:3, :3] = r
    return CameraPose(m)


def load_transforms(path) -> TransformsFile:
    """Parse a transforms JSON file into cameras and frame references."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: {e}") from e
    if "frames" not in doc or not isinstance(doc["frames"], list):
        raise DataError(f"{path}: missing frames list")
    angle_x = doc.get("camera_angle_x")

    cameras: dict[int, CameraModel] = {}
    frames: list[FrameRef] = []
    for i, fr in enumerate(doc["frames"]):
        where = f"{path} frames[{i}]"
        for key in ("file_path", "time_index", "camera_index", "transform_matrix"):
            if key not in fr:
                raise DataError(f"{where}: missing {key}")
        m = np.asarray(fr["transform_matrix"], dtype=np.float64)
        if m.shape != (4, 4):
            raise DataError(f"{where}: transform_matrix must be 4x4")
        pose = _orthonormalized(m, where)
        cam_idx = int(fr["camera_index"])
        frames.append(FrameRef(fr["file_path"], int(fr["time_index"]), cam_idx))
        if cam_idx in cameras:
            continue
        if all(k in fr for k in _INTRINSIC_KEYS):
            w, h = int(fr["w"]), int(fr["h"])
            fx, fy = float(fr["fl_x"]), float(fr["fl_y"])
            cx, cy = float(fr["cx"]), float(fr["cy"])
        else:
            w = int(fr.get("w", doc.get("w", 0))) or None
            h = int(fr.get("h", doc.get("h", 0))) or None
            if w is None or h is None or angle_x is None:
                raise DataError(f"{where}: no per-frame intrinsics and no global "
                                "camera_angle_x/w/h to derive them")
            fx = fy = (w / 2.0) / math.tan(angle_x / 2.0)
            cx, cy = w / 2.0, h / 2.0
        dist = {k: float(fr.get(k, 0.0)) for k in _DISTORTION_KEYS}
        cameras[cam_idx] = CameraModel(width=w, height=h, fx=fx, fy=fy, cx=cx, cy=cy,
                                       pose=pose, **dist)
    if angle_x is None:
        cam0 = cameras[min(cameras)]
        angle_x = geometry.fov_from_intrinsics(cam0.width, cam0.height, cam0.fx, cam0.fy)[0]

    split = None
    if "split" in doc:
        split = SplitSpec(tuple(doc["split"].get("test_view_indices", ())),
                          tuple(doc["split"].get("val_view_indices", ())))
    return TransformsFile(cameras=cameras, frames=frames, angle_x=float(angle_x),
                          split=split, root=path.parent)


def save_transforms(path, cameras: dict[int, CameraModel], frames: list[FrameRef],
                    split: SplitSpec | None = None) -> None:
    """Write the transforms JSON; load(save(x)) is an exact fixpoint."""
    path = Path(path)
    cam0 = cameras[min(cameras)]
    doc: dict = {
        "camera_angle_x": geometry.fov_from_intrinsics(
            cam0.width, cam0.height, cam0.fx, cam0.fy)[0],
        "frames": [],
    }
    if split is not None:
        doc["split"] = {
            "test_view_indices": list(split.test_view_indices),
            "val_view_indices": list(split.val_view_indices),
        }
    for fr in frames:
        cam = cameras[fr.camera_index]
        entry = {
            "file_path": fr.file_path,
            "time_index": fr.time_index,
            "camera_index": fr.camera_index,
            "w": cam.width, "h": cam.height,
            "fl_x": cam.fx, "fl_y": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "transform_matrix": cam.pose.matrix.tolist(),
        }
        for k in _DISTORTION_KEYS:
            if getattr(cam, k) != 0.0:
                entry[k] = getattr(cam, k)
        doc["frames"].append(entry)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))


# -- frame sets ----------------------------------------------------------------

def load_frame_set(root, t: int, view_indices=None,
                   transforms: TransformsFile | None = None) -> MultiViewFrameSet:
    """Load the synchronized images of timestep t for the given views."""
    root = Path(root)
    tf = transforms or load_transforms(root / "transforms.json")
    if view_indices is None:
        view_indices = sorted(tf.cameras)
    views = []
    for v in view_indices:
        if v not in tf.cameras:
            raise DataError(f"view {v} not present in transforms file")
        p = tf.frame_path(t, v)
        if not p.exists():
            raise DataError(f"missing image for view {v}, time {t}: {p}")
        views.append(View(tf.cameras[v], imread_rgba(p)))
    try:
        return MultiViewFrameSet(time_index=t, views=views)
    except DataError as e:
        raise DataError(f"time {t}: {e}") from e


def composite_alpha(rgba: np.ndarray, background) -> np.ndarray:
    """Blend RGBA onto a constant background: rgb * a + bg * (1 - a)."""
    rgba = np.asarray(rgba)
    bg = np.asarray(background, dtype=rgba.dtype)
    a = rgba[..., 3:4]
    return rgba[..., :3] * a + bg * (1.0 - a)


# -- Panoptic-style calibration conversion --------------------------------------

def convert_panoptic_calibration(calib: dict | str | Path, n_timesteps: int = 1,
                                 camera_types: tuple[str, ...] | None = ("hd",)
                                 ) -> dict:
    """Convert a Panoptic-studio calibration JSON into a transforms document.

    Each camera entry must carry K (3x3), R (3x3), t (3,) and resolution;
    distortion (OpenCV order [k1, k2, p1, p2, k3]) is carried through as
    metadata and defaults to zero when absent. Extrinsics are inverted in
    closed form and re-expressed in the Z-up world frame.
    """
    if not isinstance(calib, dict):
        p = Path(calib)
        try:
            calib = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"{p}: {e}") from e
    entries = calib.get("cameras")
    if not entries:
        raise DataError("calibration has no cameras")

    frames = []
    kept = 0
    for cam in entries:
        if camera_types is not None and cam.get("type") not in camera_types:
            continue
        name = cam.get("name", f"#{kept}")
        for key in ("K", "R", "t", "resolution"):
            if key not in cam:
                raise DataError(f"camera {name}: missing {key}")
        k = np.asarray(cam["K"], dtype=np.float64)
        r = np.asarray(cam["R"], dtype=np.float64)
        t = np.asarray(cam["t"], dtype=np.float64).reshape(3)
        w, h = (int(v) for v in cam["resolution"])
        dist = list(cam.get("distCoef", [0.0] * 5)) + [0.0] * 5
        k1, k2, p1, p2, k3 = dist[:5]

        m_w2c = np.eye(4)
        m_w2c[:3, :3] = r
        m_w2c[:3, 3] = t
        pose = geometry.panoptic_to_zup(geometry.invert_extrinsics(m_w2c))
        for ti in range(n_timesteps):
            frames.append({
                "file_path": IMAGE_PATTERN.format(time=ti, camera=kept),
                "time_index": ti,
                "camera_index": kept,
                "w": w, "h": h,
                "fl_x": float(k[0, 0]), "fl_y": float(k[1, 1]),
                "cx": float(k[0, 2]), "cy": float(k[1, 2]),
                "k1": float(k1), "k2": float(k2), "k3": float(k3),
                "p1": float(p1), "p2": float(p2),
                "transform_matrix": pose.matrix.tolist(),
            })
        kept += 1
    if kept == 0:
        raise DataError("no cameras matched the requested types")

    first = frames[0]
    angle_x = geometry.fov_from_intrinsics(first["w"], first["h"],
                                           first["fl_x"], first["fl_y"])[0]
    return {"camera_angle_x": angle_x, "frames": frames}
