"""Procedural multi-view ground truth: analytic ray-traced dynamic scenes.

Emissive, flat-shaded spheres and axis-aligned boxes move along keyframed
trajectories; every camera that sees a primitive sees exactly its color, so
the reconstruction target is unambiguous. Hit pixels get alpha 1, misses
alpha 0. The output is the dataset layout consumed by the rest of the
package (transforms.json + time-major PNG tree).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset, geometry
from .dataset import IMAGE_PATTERN, FrameRef, SplitSpec
from .geometry import CameraModel, Ray

SHAPE_SPHERE = "sphere"
SHAPE_BOX = "box"


@dataclass(frozen=True)
class Primitive:
    shape: str
    color: tuple[float, float, float]
    size: float  # sphere radius or box half-extent
    centers: np.ndarray  # (n_timesteps, 3) keyframed positions

    def __post_init__(self):
        if self.shape not in (SHAPE_SPHERE, SHAPE_BOX):
            raise ValueError(f"unknown primitive shape {self.shape!r}")
        if self.size <= 0:
            raise ValueError("primitive size must be positive")
        object.__setattr__(self, "centers",
                           np.asarray(self.centers, dtype=np.float64).reshape(-1, 3))


@dataclass(frozen=True)
class SceneSpec:
    primitives: list[Primitive]
    n_timesteps: int
    rig_cameras: int = 30
    rig_radius: float = 3.5
    resolution: tuple[int, int] = (64, 64)
    angle_x: float = 0.6911
    capture_volume: float = 1.0  # primitives must stay inside [-v, v]^3

    def __post_init__(self):
        if self.n_timesteps < 1:
            raise ValueError("need at least one timestep")
        for i, p in enumerate(self.primitives):
            if p.centers.shape[0] != self.n_timesteps:
                raise ValueError(f"primitive {i} has {p.centers.shape[0]} keyframes "
                                 f"for {self.n_timesteps} timesteps")
            reach = np.abs(p.centers).max() + p.size
            if reach > self.capture_volume + 1e-9:
                raise ValueError(f"primitive {i} leaves the capture volume "
                                 f"(extent {reach:.3f} > {self.capture_volume})")


def intersect_primitive(ray: Ray, prim: Primitive, center) -> float | None:
    """Nearest non-negative hit distance, or None."""
    o = ray.origin - np.asarray(center, dtype=np.float64)
    d = ray.direction
    if prim.shape == SHAPE_SPHERE:
        b = np.dot(o, d)
        c = np.dot(o, o) - prim.size ** 2
        disc = b * b - c
        if disc < 0:
            return None
        root = math.sqrt(disc)
        t = -b - root
        if t < 0:
            t = -b + root
        return float(t) if t >= 0 else None
    hit = geometry.clip_ray_to_box(Ray(o, d), prim.size)
    return float(hit.t_in) if hit is not None else None


def _trace_camera(camera: CameraModel, prims: list[Primitive], t: int) -> np.ndarray:
    origin, dirs = geometry.camera_ray_grid(camera)
    h, w = dirs.shape[:2]
    d = dirs.reshape(-1, 3)
    o = np.broadcast_to(origin, d.shape)
    best_t = np.full(d.shape[0], np.inf)
    best_color = np.zeros((d.shape[0], 3), dtype=np.float64)
    for prim in prims:
        center = prim.centers[t]
        if prim.shape == SHAPE_SPHERE:
            oc = o - center
            b = np.einsum("ij,ij->i", oc, d)
            c = np.einsum("ij,ij->i", oc, oc) - prim.size ** 2
            disc = b * b - c
            ok = disc >= 0
            root = np.sqrt(np.where(ok, disc, 0.0))
            t_near = -b - root
            t_far = -b + root
            t_hit = np.where(t_near >= 0, t_near, t_far)
            ok &= t_hit >= 0
        else:
            t_in, t_out, hit = geometry.clip_rays_to_box(o - center, d, prim.size)
            t_hit = t_in
            ok = hit
        closer = ok & (t_hit < best_t)
        best_t[closer] = t_hit[closer]
        best_color[closer] = prim.color
    rgba = np.zeros((d.shape[0], 4), dtype=np.float32)
    seen = np.isfinite(best_t)
    rgba[seen, :3] = best_color[seen]
    rgba[seen, 3] = 1.0
    return rgba.reshape(h, w, 4)


def build_rig(spec: SceneSpec) -> dict[int, CameraModel]:
    """Fibonacci hemisphere rig, every camera facing the origin.

    Cameras near the pole would make the +Z up vector degenerate, so those
    fall back to +Y for roll.
    """
    positions = geometry.fibonacci_camera_positions(spec.rig_cameras, spec.rig_radius)
    w, h = spec.resolution
    cameras = {}
    for i, p in enumerate(positions):
        fwd = -p / np.linalg.norm(p)
        up = (0.0, 1.0, 0.0) if abs(fwd[2]) > 1.0 - 1e-9 else (0.0, 0.0, 1.0)
        pose = geometry.look_at_pose(p, (0.0, 0.0, 0.0), up)
        cameras[i] = CameraModel.from_fov(w, h, spec.angle_x, pose)
    return cameras


def synth_dataset(spec: SceneSpec, out_root, split: SplitSpec | None = None) -> Path:
    """Render the scene from every rig camera at every timestep and write the
    dataset (transforms + images) under out_root."""
    out_root = Path(out_root)
    cameras = build_rig(spec)
    frames = []
    for t in range(spec.n_timesteps):
        for i, cam in cameras.items():
            rgba = _trace_camera(cam, spec.primitives, t)
            rel = IMAGE_PATTERN.format(time=t, camera=i)
            dataset.imwrite_rgba(out_root / rel, rgba)
            frames.append(FrameRef(rel, t, i))
    dataset.save_transforms(out_root / "transforms.json", cameras, frames, split=split)
    return out_root


def default_desk_scene(n_timesteps: int = 3, rig_cameras: int = 30,
                       resolution: int = 64) -> SceneSpec:
    """Three primitives in gentle motion, used by tests and the desk profile."""
    ts = np.linspace(0.0, 1.0, n_timesteps) if n_timesteps > 1 else np.array([0.5])
    sphere_a = np.stack([-0.45 + 0.8 * ts, np.full_like(ts, 0.15),
                         np.full_like(ts, 0.35)], axis=1)
    box = np.stack([np.full_like(ts, 0.35), -0.5 + 0.55 * ts,
                    np.full_like(ts, -0.3)], axis=1)
    sphere_b = np.stack([np.full_like(ts, -0.4), np.full_like(ts, -0.35),
                         -0.25 + 0.75 * ts], axis=1)
    prims = [
        Primitive(SHAPE_SPHERE, (0.85, 0.2, 0.15), 0.38, sphere_a),
        Primitive(SHAPE_BOX, (0.15, 0.65, 0.2), 0.3, box),
        Primitive(SHAPE_SPHERE, (0.2, 0.3, 0.8), 0.3, sphere_b),
    ]
    return SceneSpec(primitives=prims, n_timesteps=n_timesteps,
                     rig_cameras=rig_cameras, rig_radius=3.5,
                     resolution=(resolution, resolution))


DESK_SPLIT = SplitSpec(test_view_indices=(0, 7, 15, 22), val_view_indices=(1,))


def default_split(n_cameras: int) -> SplitSpec:
    """Four evenly spread held-out test views plus one validation view."""
    if n_cameras < 6:
        return SplitSpec(test_view_indices=(0,), val_view_indices=(1,)
                         if n_cameras > 1 else ())
    test = tuple(round(i * n_cameras / 4) for i in range(4))
    val = 1 if 1 not in test else 2
    return SplitSpec(test_view_indices=test, val_view_indices=(val,))
