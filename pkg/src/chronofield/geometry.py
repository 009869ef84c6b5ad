"""Camera models, hemisphere rigs, rays, and coordinate conversions.

Conventions used throughout the package:

* World frame is right-handed with +Z up.
* Camera frame is OpenGL/Blender style: +X right, +Y up, looking along -Z.
* Poses are stored as 4x4 camera-to-world matrices (row-major ndarray,
  acting on column vectors).
* Pixel (0, 0) is the top-left corner; rays are cast through pixel centers
  at +0.5 offsets.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

_POSE_ORTHO_TOL = 1e-6


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
    return m


def _check_rotation(r: np.ndarray, tol: float) -> None:
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err >= tol:
        raise ValueError(f"rotation block is not orthonormal (deviation {err:.3g} >= {tol:g})")
    det = np.linalg.det(r)
    if abs(det - 1.0) >= tol * 10:
        raise ValueError(f"rotation block has determinant {det:.6f}, expected +1")


@dataclass(frozen=True)
class CameraPose:
    """4x4 camera-to-world transform with an orthonormal rotation block."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _as_matrix(self.matrix)
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise ValueError(f"pose bottom row must be [0,0,0,1], got {m[3]}")
        _check_rotation(m[:3, :3], _POSE_ORTHO_TOL)
        object.__setattr__(self, "matrix", m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.matrix[:3, 3]

    @property
    def forward(self) -> np.ndarray:
        """Viewing direction (world space); the camera looks along -Z of its frame."""
        return -self.matrix[:3, 2]

    def world_to_camera(self) -> np.ndarray:
        r, t = self.rotation, self.center
        out = np.eye(4)
        out[:3, :3] = r.T
        out[:3, 3] = -r.T @ t
        return out

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(4))


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with stored (but unused) distortion coefficients."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    pose: CameraPose
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1, got {self.width}x{self.height}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"[0,{self.width}]x[0,{self.height}]"
            )

    @property
    def has_distortion(self) -> bool:
        return any(abs(c) > 0 for c in (self.k1, self.k2, self.k3, self.p1, self.p2))

    @classmethod
    def from_fov(cls, width: int, height: int, angle_x: float, pose: CameraPose,
                 angle_y: float | None = None, **kw) -> "CameraModel":
        fx = (width / 2.0) / math.tan(angle_x / 2.0)
        fy = (height / 2.0) / math.tan(angle_y / 2.0) if angle_y is not None else fx
        return cls(width=width, height=height, fx=fx, fy=fy,
                   cx=width / 2.0, cy=height / 2.0, pose=pose, **kw)

    def scaled_resolution(self, factor: float) -> "CameraModel":
        """Same field of view at factor * resolution (used for preview renders)."""
        w = max(1, int(round(self.width * factor)))
        h = max(1, int(round(self.height * factor)))
        sx, sy = w / self.width, h / self.height
        return CameraModel(width=w, height=h, fx=self.fx * sx, fy=self.fy * sy,
                           cx=self.cx * sx, cy=self.cy * sy, pose=self.pose,
                           k1=self.k1, k2=self.k2, k3=self.k3, p1=self.p1, p2=self.p2)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, |d|={n!r}")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    @classmethod
    def through(cls, origin, toward) -> "Ray":
        o = np.asarray(origin, dtype=np.float64)
        d = np.asarray(toward, dtype=np.float64) - o
        return cls(o, d / np.linalg.norm(d))


@dataclass(frozen=True)
class RayInterval:
    t_in: float
    t_out: float

    def __post_init__(self):
        if not (math.isfinite(self.t_in) and math.isfinite(self.t_out)):
            raise ValueError("interval endpoints must be finite")
        if self.t_in > self.t_out:
            raise ValueError(f"t_in={self.t_in} > t_out={self.t_out}")

    @property
    def length(self) -> float:
        return self.t_out - self.t_in


def fibonacci_camera_positions(n: int, radius: float) -> np.ndarray:
    """Quasi-uniform camera centers on the upper hemisphere of the given radius.

    Point i sits at height z_i = R(1 - i/n), azimuth theta_i = golden_angle*i
    mod 2pi, in-plane radius r_i = sqrt(R^2 - z_i^2). All points have z > 0.
    """
    if n < 1:
        raise ValueError(f"need at least one camera, got n={n}")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    i = np.arange(n, dtype=np.float64)
    z = radius * (1.0 - i / n)
    theta = np.mod(GOLDEN_ANGLE * i, 2.0 * math.pi)
    r = np.sqrt(np.maximum(radius * radius - z * z, 0.0))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def look_at_pose(position, target, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Pose whose camera at `position` faces `target`, roll fixed by `up`."""
    p = np.asarray(position, dtype=np.float64).reshape(3)
    t = np.asarray(target, dtype=np.float64).reshape(3)
    u = np.asarray(up, dtype=np.float64).reshape(3)
    fwd = t - p
    n = np.linalg.norm(fwd)
    if n == 0:
        raise ValueError("camera position coincides with the look-at target")
    fwd = fwd / n
    u = u / np.linalg.norm(u)
    # angle between view direction and up; a vanishing cross product leaves
    # the roll unconstrained
    if np.linalg.norm(np.cross(fwd, u)) < 1e-6:
        raise ValueError("up vector is parallel to the viewing direction")
    z_cam = -fwd
    x_cam = np.cross(u, z_cam)
    x_cam = x_cam / np.linalg.norm(x_cam)
    y_cam = np.cross(z_cam, x_cam)
    m = np.eye(4)
    m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = x_cam, y_cam, z_cam, p
    return CameraPose(m)


def fov_from_intrinsics(width: int, height: int, fx: float, fy: float) -> tuple[float, float]:
    """Horizontal and vertical field-of-view angles, 2*atan((dim/2)/f)."""
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be >= 1")
    if fx <= 0 or fy <= 0:
        raise ValueError("focal lengths must be positive")
    return (2.0 * math.atan((width / 2.0) / fx),
            2.0 * math.atan((height / 2.0) / fy))


def invert_extrinsics(m_w2c) -> CameraPose:
    """Camera-to-world pose from a [R t; 0 1] world-to-camera matrix.

    Uses the closed form [R^T, -R^T t; 0 1] rather than a general inverse.
    """
    m = _as_matrix(m_w2c)
    if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
        raise ValueError(f"extrinsic bottom row must be [0,0,0,1], got {m[3]}")
    try:
        _check_rotation(m[:3, :3], 1e-4)
    except ValueError as e:
        raise ValueError(f"invalid extrinsic matrix: {e}") from e
    r, t = m[:3, :3], m[:3, 3]
    out = np.eye(4)
    out[:3, :3] = r.T
    out[:3, 3] = -r.T @ t
    return CameraPose(out)


# Fixed alignment rotating a Y-up capture frame into the Z-up world frame:
# first Y->Z, then 180 degrees about X. Maps (x, y, z) -> (x, -z, y).
_R_Y_TO_Z = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
])
_R_X_180 = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, -1.0, 0.0, 0.0],
    [0.0, 0.0, -1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
])
PANOPTIC_ALIGNMENT = _R_X_180 @ _R_Y_TO_Z


def panoptic_to_zup(pose: CameraPose | np.ndarray) -> CameraPose:
    """Re-express a Y-up camera-to-world pose in the Z-up world frame."""
    m = pose.matrix if isinstance(pose, CameraPose) else _as_matrix(pose)
    return CameraPose(PANOPTIC_ALIGNMENT @ m)


def scale_camera(pose: CameraPose, scale: float) -> CameraPose:
    """Scale the camera center by a global factor, leaving orientation alone."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    m = pose.matrix.copy()
    m[:3, 3] *= scale
    return CameraPose(m)


_warned_distortion = False


def _warn_distortion_once(camera: CameraModel) -> None:
    global _warned_distortion
    if camera.has_distortion and not _warned_distortion:
        _warned_distortion = True
        warnings.warn(
            "camera has nonzero distortion coefficients; ray generation uses the "
            "ideal pinhole model and ignores them",
            stacklevel=3,
        )


def pixel_directions(camera: CameraModel, px, py, offset: float = 0.5) -> np.ndarray:
    """World-space (unnormalized) directions for pixel coordinates px, py."""
    _warn_distortion_once(camera)
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    d_cam = np.stack([
        (px + offset - camera.cx) / camera.fx,
        -(py + offset - camera.cy) / camera.fy,
        -np.ones_like(px, dtype=np.float64),
    ], axis=-1)
    return d_cam @ camera.pose.rotation.T


def generate_ray(camera: CameraModel, px: int, py: int, offset: float = 0.5) -> Ray:
    """Ray from the camera center through pixel (px, py) + offset."""
    if not (0 <= px < camera.width and 0 <= py < camera.height):
        raise ValueError(
            f"pixel ({px}, {py}) outside image {camera.width}x{camera.height}"
        )
    d = pixel_directions(camera, px, py, offset)
    return Ray(camera.pose.center, d / np.linalg.norm(d))


def camera_ray_grid(camera: CameraModel, offset: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Origin (3,) and unit directions (H, W, 3) for every pixel of the camera."""
    xs = np.arange(camera.width, dtype=np.float64)
    ys = np.arange(camera.height, dtype=np.float64)
    px, py = np.meshgrid(xs, ys)
    d = pixel_directions(camera, px, py, offset)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return camera.pose.center.copy(), d


def project_point(camera: CameraModel, x) -> tuple[float, float]:
    """Continuous pixel coordinates of a world point (pinhole forward model).

    Inverse of generate_ray up to the +offset pixel-center convention; raises
    for points at or behind the camera plane.
    """
    x = np.asarray(x, dtype=np.float64).reshape(3)
    xc = camera.pose.rotation.T @ (x - camera.pose.center)
    if xc[2] >= 0:
        raise ValueError("point is behind the camera")
    u = camera.cx + camera.fx * (xc[0] / -xc[2])
    v = camera.cy - camera.fy * (xc[1] / -xc[2])
    return float(u), float(v)


def clip_ray_to_box(ray: Ray, half_extent: float) -> RayInterval | None:
    """Slab-test intersection of a ray with the cube [-B, B]^3, clipped to t >= 0.

    IEEE division handles axis-parallel rays (components divide to +-inf);
    grazing hits on a face resolve via NaN-ignoring min/max. Returns None when
    the ray misses the box or the box lies entirely behind the origin.
    """
    if half_extent <= 0:
        raise ValueError(f"half_extent must be positive, got {half_extent}")
    o, d = ray.origin, ray.direction
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (-half_extent - o) / d
        t1 = (half_extent - o) / d
    t_near = np.fmax.reduce(np.fmin(t0, t1))
    t_far = np.fmin.reduce(np.fmax(t0, t1))
    t_near = max(t_near, 0.0)
    if not (t_near <= t_far) or not math.isfinite(t_far):
        return None
    return RayInterval(float(t_near), float(t_far))


def clip_rays_to_box(origins: np.ndarray, dirs: np.ndarray, half_extent: float
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized clip_ray_to_box: (t_in, t_out, hit) for rows of origins/dirs."""
    if half_extent <= 0:
        raise ValueError(f"half_extent must be positive, got {half_extent}")
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (-half_extent - o) / d
        t1 = (half_extent - o) / d
    t_near = np.fmax.reduce(np.fmin(t0, t1), axis=-1)
    t_far = np.fmin.reduce(np.fmax(t0, t1), axis=-1)
    t_near = np.maximum(t_near, 0.0)
    hit = (t_near <= t_far) & np.isfinite(t_far)
    return np.where(hit, t_near, 0.0), np.where(hit, t_far, 0.0), hit
