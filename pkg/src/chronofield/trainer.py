"""Per-timestep optimization and whole-sequence training.

Each timestep is an independent reconstruction problem: parameters are
(re)initialized, rays are drawn uniformly over the training views' pixels,
and Adam minimizes the mean squared photometric error of the composited ray
colors. An optional quadratic coupling toward the previous timestep's
parameters is available but off by default, so a sequence trains in any
order or fully in parallel, and both orders produce byte-identical archives
(each timestep derives its own seed from the global seed and its index).

Sequence training runs every timestep in spawned worker processes with a
pinned intra-op thread budget; parallelism across timesteps is the scaling
mechanism, mirroring one-job-per-GPU deployments.
"""

from __future__ import annotations

import json
import multiprocessing as mp
import tempfile
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import _gemm, _kernels, metrics
from .archive import Archive
from .dataset import MultiViewFrameSet, composite_alpha, load_frame_set, load_transforms, split_views
from .errors import DataError, NumericError
from .field import (FieldConfig, TimestepField, init_parameters, theta_group,
                    theta_layout, zeros_like_theta)
from .geometry import camera_ray_grid
from .renderer import RenderParams, render_image, render_rays, render_rays_backward

_M64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _M64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return (z ^ (z >> 31)) & _M64


def timestep_seed(seed: int, t: int) -> int:
    """Derive the per-timestep seed; parallel and sequential runs agree."""
    return splitmix64((splitmix64(seed & _M64) + t) & _M64)


@dataclass(frozen=True)
class TrainConfig:
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    iterations: int = 2000
    batch_rays: int = 4096
    lr_table: float = 1e-2
    lr_mlp: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-15
    kappa: float = 0.0
    render: RenderParams = dc_field(default_factory=RenderParams)
    seed: int = 0
    precision: int = 32
    log_every: int = 100
    warm_start: bool = False
    scene_scale: float = 1.0
    intra_threads: int = 1
    # per-ray random training backgrounds; a constant background admits a
    # degenerate solution (background-colored fog) that renders training
    # views perfectly and novel views poorly
    random_background: bool = True

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_rays < 1:
            raise ValueError("batch_rays must be >= 1")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        for b in (self.adam_beta1, self.adam_beta2):
            if not (0.0 <= b < 1.0):
                raise ValueError("Adam betas must lie in [0, 1)")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, config: FieldConfig, dtype=np.float32) -> "AdamState":
        return cls(zeros_like_theta(config, dtype), zeros_like_theta(config, dtype))


class RayBank:
    """Precomputed rays and RGBA targets for one frame set."""

    def __init__(self, frames: MultiViewFrameSet):
        if not frames.views:
            raise DataError("empty frame set")
        w, h = frames.resolution
        self.n_views = len(frames.views)
        self.pixels_per_view = w * h
        self.origins = np.empty((self.n_views, 3), dtype=np.float64)
        self.dirs = np.empty((self.n_views, self.pixels_per_view, 3), dtype=np.float32)
        self.targets_rgba = np.empty((self.n_views, self.pixels_per_view, 4),
                                     dtype=np.float32)
        for i, view in enumerate(frames.views):
            origin, dirs = camera_ray_grid(view.camera)
            self.origins[i] = origin
            self.dirs[i] = dirs.reshape(-1, 3).astype(np.float32)
            self.targets_rgba[i] = view.image.reshape(-1, 4)

    @property
    def total_pixels(self) -> int:
        return self.n_views * self.pixels_per_view

    def gather(self, flat_idx: np.ndarray):
        v = flat_idx // self.pixels_per_view
        p = flat_idx % self.pixels_per_view
        return self.origins[v], self.dirs[v, p], self.targets_rgba[v, p]

    def sample(self, n: int, rng: np.random.Generator):
        """n pixels drawn uniformly over all views' pixels."""
        return self.gather(rng.integers(0, self.total_pixels, size=n))

    def epoch(self, batch: int, rng: np.random.Generator):
        """Permutation sampler: every pixel exactly once per epoch."""
        perm = rng.permutation(self.total_pixels)
        for i in range(0, self.total_pixels, batch):
            yield self.gather(perm[i:i + batch])


def sample_ray_batch(frames: MultiViewFrameSet | RayBank, n: int,
                     rng: np.random.Generator, background=(1.0, 1.0, 1.0)):
    """(origins, dirs, target colors) for n uniformly drawn pixels; targets
    come composited onto the configured background.

    Building the ray bank dominates for single batches; hold a RayBank when
    sampling repeatedly.
    """
    bank = frames if isinstance(frames, RayBank) else RayBank(frames)
    origins, dirs, rgba = bank.sample(n, rng)
    return origins, dirs, composite_alpha(rgba, background)


def photometric_loss(pred: np.ndarray, target: np.ndarray):
    """Mean over rays of the squared L2 color error, plus dL/dpred."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    n = pred.shape[0]
    diff = pred - target
    loss = float(np.vdot(diff, diff)) / n
    return loss, (2.0 / n) * diff


def temporal_regularizer(theta_t: dict[str, np.ndarray], theta_prev: dict[str, np.ndarray],
                         kappa: float):
    """kappa * ||theta_t - theta_prev||^2 and its gradient w.r.t. theta_t."""
    if theta_t.keys() != theta_prev.keys():
        raise ValueError("parameter layouts differ")
    loss = 0.0
    grads = {}
    for name, arr in theta_t.items():
        prev = theta_prev[name]
        if arr.shape != prev.shape:
            raise ValueError(f"{name}: shape {arr.shape} vs {prev.shape}")
        d = arr - prev
        loss += float(np.vdot(d, d))
        grads[name] = (2.0 * kappa) * d
    return kappa * loss, grads


def adam_step(theta: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, cfg: TrainConfig) -> None:
    """In-place bias-corrected Adam update; table and MLP groups use their
    own learning rates."""
    state.step += 1
    bc1 = 1.0 - cfg.adam_beta1 ** state.step
    bc2 = 1.0 - cfg.adam_beta2 ** state.step
    for name, arr in theta.items():
        lr = cfg.lr_table if theta_group(name) == "table" else cfg.lr_mlp
        bad = _kernels.adam_update(arr.ravel(), grads[name].ravel(),
                                   state.m[name].ravel(), state.v[name].ravel(),
                                   lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                                   bc1, bc2)
        if bad:
            raise NumericError(f"non-finite gradient in parameter group '{name}'")


@dataclass
class TrainLog:
    records: list[dict]
    final: dict

    def lines(self) -> str:
        rows = self.records + [self.final]
        return "\n".join(json.dumps(r) for r in rows) + "\n"

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.lines())


def _frame_psnr(field: TimestepField, frames: MultiViewFrameSet | None,
                render: RenderParams, view: int = 0) -> float | None:
    if frames is None or not frames.views:
        return None
    target = composite_alpha(frames.views[view].image, render.background)
    img = render_image(field, frames.views[view].camera, render)
    # rendered colors already sit on render.background
    return metrics.psnr(img.rgba[..., :3], target.astype(np.float32))


def train_timestep(frames: MultiViewFrameSet, cfg: TrainConfig,
                   prev: TimestepField | None = None,
                   val_frames: MultiViewFrameSet | None = None
                   ) -> tuple[TimestepField, TrainLog]:
    """Optimize one timestep's field against its multi-view images.

    Fully determined by (seed, config, data); aborts with NumericError if the
    loss diverges. With iterations == 0 the freshly initialized (or
    warm-started) field is returned untouched.
    """
    t = frames.time_index
    seed = timestep_seed(cfg.seed, t)
    dtype = cfg.dtype
    if cfg.warm_start and prev is not None:
        field = prev.astype(dtype)
        field = TimestepField(t, field.theta, field.config, cfg.scene_scale)
    else:
        field = init_parameters(cfg.field, seed=seed, time_index=t,
                                scene_scale=cfg.scene_scale, dtype=dtype)
    prev_theta = None
    if prev is not None and cfg.kappa > 0:
        prev_theta = prev.astype(dtype).theta

    bank = RayBank(frames)
    rng = np.random.default_rng(seed)
    state = AdamState.zeros(cfg.field, dtype)
    grads = zeros_like_theta(cfg.field, dtype)
    pool = _gemm.ArrayPool()
    const_bg = np.asarray(cfg.render.background, dtype=np.float32)
    records = []
    t0 = time.perf_counter()
    loss = float("nan")
    for it in range(cfg.iterations):
        pool.reset()
        origins, dirs, rgba = bank.sample(cfg.batch_rays, rng)
        if cfg.random_background:
            bg = rng.random((cfg.batch_rays, 3), dtype=np.float32)
        else:
            bg = np.tile(const_bg, (cfg.batch_rays, 1))
        targets = composite_alpha(rgba, bg)
        colors, _, cache = render_rays(field, origins, dirs, cfg.render,
                                       rng=rng, want_cache=True, background=bg,
                                       pool=pool)
        loss, d_pred = photometric_loss(colors, targets.astype(colors.dtype))
        if not np.isfinite(loss):
            raise NumericError(f"loss diverged at iteration {it}")
        for g in grads.values():
            g.fill(0)
        render_rays_backward(field, cache, d_pred, grads, pool=pool)
        if prev_theta is not None:
            reg_loss, reg_grads = temporal_regularizer(field.theta, prev_theta, cfg.kappa)
            loss += reg_loss
            for name in grads:
                grads[name] += reg_grads[name]
        adam_step(field.theta, grads, state, cfg)
        if it % cfg.log_every == 0 or it == cfg.iterations - 1:
            records.append({"iter": it, "loss": loss,
                            "wall_ms": round((time.perf_counter() - t0) * 1e3, 3)})

    final = {
        "iter": cfg.iterations,
        "loss": loss if np.isfinite(loss) else None,
        "psnr_train": _frame_psnr(field, frames, cfg.render),
        "wall_ms": round((time.perf_counter() - t0) * 1e3, 3),
    }
    psnr_val = _frame_psnr(field, val_frames, cfg.render)
    if psnr_val is not None:
        final["psnr_val"] = psnr_val
    return field, TrainLog(records, final)


# -- sequence training ---------------------------------------------------------

class TimestepFailure(RuntimeError):
    def __init__(self, failures: dict[int, str]):
        self.failures = failures
        msgs = "; ".join(f"t={t}: {m}" for t, m in sorted(failures.items()))
        super().__init__(f"{len(failures)} timestep(s) failed: {msgs}")


def _worker_train(root: str, cfg: TrainConfig, t: int, train_views: list[int],
                  val_views: list[int], out_path: str, prev_path: str | None,
                  log_path: str | None) -> int:
    _gemm.set_compute_threads(cfg.intra_threads)
    frames = load_frame_set(root, t, train_views)
    val = load_frame_set(root, t, val_views) if val_views else None
    prev = None
    if prev_path is not None:
        blob = np.load(prev_path)
        theta = _theta_from_flat(blob, cfg.field)
        prev = TimestepField(t - 1, theta, cfg.field, cfg.scene_scale)
    field, log = train_timestep(frames, cfg, prev=prev, val_frames=val)
    flat = np.concatenate([field.theta[name].ravel()
                           for name, _, _ in theta_layout(cfg.field)])
    np.save(out_path, flat)
    if log_path:
        log.save(log_path)
    return t


def _theta_from_flat(flat: np.ndarray, config: FieldConfig) -> dict[str, np.ndarray]:
    theta = {}
    off = 0
    for name, shape, _ in theta_layout(config):
        size = int(np.prod(shape))
        theta[name] = flat[off:off + size].reshape(shape).copy()
        off += size
    return theta


def train_sequence(root, cfg: TrainConfig, archive_path, workers: int = 1,
                   timesteps: list[int] | None = None, log_dir=None) -> Archive:
    """Train every timestep of a dataset and archive the results.

    With kappa == 0 the timesteps are independent jobs; any worker count
    produces byte-identical archives because records are appended in time
    order and each timestep seeds itself from (seed, t). kappa > 0 imposes a
    sequential chain and rejects workers > 1.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if cfg.kappa > 0 and workers > 1:
        raise ValueError("temporal regularization couples consecutive timesteps; "
                         "train with workers=1")
    root = Path(root)
    tf = load_transforms(root / "transforms.json")
    if timesteps is None:
        timesteps = tf.timesteps()
    split = tf.split or None
    if split is not None:
        train_views, val_views, _ = split_views(tf.n_views, split)
    else:
        train_views, val_views = sorted(tf.cameras), []

    ctx = mp.get_context("spawn")
    failures: dict[int, str] = {}
    with tempfile.TemporaryDirectory(prefix="chronofield-train-") as tmp:
        out_paths = {t: str(Path(tmp) / f"theta_{t}.npy") for t in timesteps}
        log_paths = {t: (str(Path(log_dir) / f"train_t{t:04d}.ndjson") if log_dir else None)
                     for t in timesteps}
        if cfg.kappa > 0:
            prev_path = None
            for t in timesteps:
                with ctx.Pool(1) as pool:
                    pool.apply(_worker_train, (str(root), cfg, t, train_views, val_views,
                                               out_paths[t], prev_path, log_paths[t]))
                prev_path = out_paths[t]
        else:
            with ctx.Pool(processes=min(workers, max(1, len(timesteps)))) as pool:
                jobs = {t: pool.apply_async(
                    _worker_train, (str(root), cfg, t, train_views, val_views,
                                    out_paths[t], None, log_paths[t]))
                    for t in timesteps}
                for t, job in jobs.items():
                    try:
                        job.get()
                    except Exception as e:  # noqa: BLE001 - report per-timestep
                        failures[t] = str(e)

        archive = Archive.create(archive_path, cfg.field, scene_scale=cfg.scene_scale)
        for t in sorted(timesteps):
            if t in failures:
                continue
            flat = np.load(out_paths[t])
            field = TimestepField(t, _theta_from_flat(flat, cfg.field), cfg.field,
                                  cfg.scene_scale)
            archive.append_timestep(field)
    if failures:
        archive.close()
        raise TimestepFailure(failures)
    return archive
