"""Volume rendering along box-clipped rays.

Rays are clipped to the scene cube, sampled at the midpoints of uniform
sub-intervals, and composited front to back:

    alpha_j = 1 - exp(-sigma_j * delta_j)
    T_j     = prod_{k<j} (1 - alpha_k)
    color   = sum_j T_j * alpha_j * c_j + T_final * background

Fixed-count mode (delta = chord / n_samples) is the default; fixed-step mode
derives ceil(chord / step) samples per ray and is what the quadrature
conformance tests use. A plain Riemann mode (sum of T * sigma * c * delta) is
exposed for verification only.

Internally all hit rays of a batch share a dense (rays, samples) layout;
rays with fewer real samples are padded with delta = 0 entries, which
contribute nothing to either the forward value or the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _gemm, encoding, geometry
from .errors import NumericError
from .field import (FieldCache, TimestepField, field_backward, field_forward,
                    zeros_like_theta)
from .geometry import CameraModel, Ray

MODE_FIXED_COUNT = "fixed-count"
MODE_FIXED_STEP = "fixed-step"
COMPOSITE_ALPHA = "alpha"
COMPOSITE_RIEMANN = "riemann"


@dataclass(frozen=True)
class RenderParams:
    n_samples: int = 64
    mode: str = MODE_FIXED_COUNT
    step: float | None = None
    early_stop_transmittance: float = 0.0
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    compositing: str = COMPOSITE_ALPHA
    jitter: bool = False

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if not (0.0 <= self.early_stop_transmittance < 1.0):
            raise ValueError("early_stop_transmittance must lie in [0, 1)")
        if self.mode not in (MODE_FIXED_COUNT, MODE_FIXED_STEP):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.mode == MODE_FIXED_STEP and (self.step is None or self.step <= 0):
            raise ValueError("fixed-step mode needs a positive step")
        if self.compositing not in (COMPOSITE_ALPHA, COMPOSITE_RIEMANN):
            raise ValueError(f"unknown compositing {self.compositing!r}")
        if any(not (0.0 <= c <= 1.0) for c in self.background):
            raise ValueError("background channels must lie in [0, 1]")


@dataclass(frozen=True)
class RenderedImage:
    width: int
    height: int
    rgba: np.ndarray  # (height, width, 4) in [0, 1]; alpha = accumulated opacity


@dataclass
class RenderCache:
    """Forward intermediates for render_rays_backward (dense hit-ray layout)."""

    n_rays: int
    hit: np.ndarray            # (n_rays,) bool
    delta: np.ndarray          # (n_hit, M)
    sigma: np.ndarray          # (n_hit, M)
    rgb: np.ndarray            # (n_hit, M, 3)
    trans: np.ndarray          # (n_hit, M) transmittance entering each sample
    trans_next: np.ndarray     # (n_hit, M) transmittance after each sample
    t_final: np.ndarray        # (n_hit,)
    background: np.ndarray     # (n_hit, 3) per-ray background
    field_cache: FieldCache    # flattened over (n_hit * M) samples


def _sample_layout(t_in, t_out, params: RenderParams, dtype, rng=None):
    """Midpoint sample distances and interval lengths, dense with zero padding.

    Returns (t (n, M), delta (n, M)); fixed-step rays shorter than the widest
    ray pad with delta = 0 samples parked at their entry point.
    """
    chord = t_out - t_in
    n = t_in.shape[0]
    if params.mode == MODE_FIXED_COUNT:
        m = params.n_samples
        counts = np.full(n, m, dtype=np.int64)
        delta = np.repeat((chord / m)[:, None], m, axis=1).astype(dtype)
    else:
        counts = np.maximum(np.ceil(chord / params.step - 1e-12).astype(np.int64), 1)
        m = int(counts.max()) if n else 1
        j = np.arange(m)[None, :]
        delta = np.where(j < counts[:, None] - 1, params.step, 0.0)
        # the last real interval absorbs the remainder so deltas sum to the chord
        last = counts[:, None] - 1
        delta = np.where(j == last, chord[:, None] - params.step * (counts[:, None] - 1),
                         delta).astype(dtype)
    ends = np.cumsum(delta, axis=1, dtype=np.float64)
    starts = ends - delta
    frac = 0.5 if rng is None else rng.random(delta.shape)
    t = (t_in[:, None] + starts + frac * delta).astype(dtype)
    return t, delta


def composite_samples(sigma, delta, colors, background=(0.0, 0.0, 0.0),
                      riemann: bool = False):
    """Front-to-back compositing of one ray's samples.

    sigma, delta: (m,); colors: (m, 3). Returns (color, opacity, weights).
    The default form is exact for piecewise-constant density; riemann=True
    uses the first-order sum T * sigma * delta instead.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    sd = sigma * delta
    if riemann:
        acc = np.cumsum(sd)
        trans = np.exp(-(acc - sd))
        weights = trans * sd
        t_final = np.exp(-acc[-1]) if sd.size else 1.0
    else:
        exp_term = np.exp(-sd)
        t_next = np.cumprod(exp_term)
        trans = np.concatenate([[1.0], t_next[:-1]])
        weights = trans * (1.0 - exp_term)
        t_final = t_next[-1] if sd.size else 1.0
    color = weights @ colors + t_final * np.asarray(background, dtype=np.float64)
    return color, 1.0 - t_final, weights


def render_rays(field: TimestepField, origins: np.ndarray, dirs: np.ndarray,
                params: RenderParams, rng: np.random.Generator | None = None,
                want_cache: bool = False, background: np.ndarray | None = None,
                pool=None):
    """Render a batch of rays; returns (colors (n, 3), opacity (n,), cache).

    Rays that miss the scene box return the background with zero opacity.
    `background` optionally overrides params.background with one color per
    ray (the trainer randomizes it so empty space cannot hide behind
    background-colored fog). want_cache requires early stopping to be
    disabled so the backward pass sees every sample the forward pass
    produced.
    """
    dtype = field.dtype
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = origins.shape[0]
    if background is None:
        bg_rays = np.tile(np.asarray(params.background, dtype=dtype), (n, 1))
    else:
        bg_rays = np.asarray(background, dtype=dtype).reshape(n, 3)
    if want_cache and params.early_stop_transmittance > 0.0:
        raise ValueError("gradient caches require early stopping to be disabled")
    if want_cache and params.compositing != COMPOSITE_ALPHA:
        raise ValueError("only alpha compositing supports the backward pass")

    t_in, t_out, hit = geometry.clip_rays_to_box(origins, dirs, field.half_extent)
    colors = bg_rays.copy()
    opacity = np.zeros(n, dtype=dtype)
    nh = int(hit.sum())
    bg = bg_rays[hit]
    if nh == 0:
        cache = None
        if want_cache:
            cache = _empty_cache(field, n, hit, bg)
        return colors, opacity, cache

    if params.early_stop_transmittance > 0.0:
        col_h, op_h = _render_hits_early_stop(field, origins[hit], dirs[hit],
                                              t_in[hit], t_out[hit], params, bg, rng)
        colors[hit] = col_h
        opacity[hit] = op_h
        return colors, opacity, None

    t, delta = _sample_layout(t_in[hit], t_out[hit], params, dtype, rng if params.jitter else None)
    m = t.shape[1]
    o_h = origins[hit].astype(dtype)
    d_h = dirs[hit].astype(dtype)
    pts = _gemm.take(pool, (nh, m, 3), dtype)
    np.multiply(t[:, :, None], d_h[:, None, :], out=pts)
    pts += o_h[:, None, :]
    # one direction encoding per ray, broadcast over its samples
    sh = _gemm.take(pool, (nh, m, encoding.SH_DIM), dtype)
    sh[:] = encoding.sh_encode(d_h)[:, None, :]
    sigma, rgb, fcache = field_forward(field, pts.reshape(-1, 3),
                                       want_cache=want_cache, pool=pool,
                                       sh=sh.reshape(-1, encoding.SH_DIM))
    if not np.all(np.isfinite(sigma)):
        raise NumericError(f"non-finite density at sample {int(np.argmin(np.isfinite(sigma)))}")

    sigma = sigma.reshape(nh, m)
    rgb = rgb.reshape(nh, m, 3)
    sd = sigma * delta
    if params.compositing == COMPOSITE_ALPHA:
        exp_term = np.exp(-sd)
        t_next_all = np.cumprod(exp_term, axis=1)
        trans = np.concatenate([np.ones((nh, 1), dtype=dtype), t_next_all[:, :-1]], axis=1)
        weights = trans * (1.0 - exp_term)
        t_final = t_next_all[:, -1]
    else:
        acc = np.cumsum(sd, axis=1)
        trans = np.exp(-(acc - sd))
        weights = trans * sd
        t_final = np.exp(-acc[:, -1])

    col_h = np.einsum("nm,nmc->nc", weights, rgb) + t_final[:, None] * bg
    colors[hit] = col_h
    opacity[hit] = 1.0 - t_final

    cache = None
    if want_cache:
        cache = RenderCache(n_rays=n, hit=hit, delta=delta, sigma=sigma, rgb=rgb,
                            trans=trans, trans_next=trans * exp_term, t_final=t_final,
                            background=bg, field_cache=fcache)
    return colors, opacity, cache


def _empty_cache(field, n, hit, bg):
    dtype = field.dtype
    _, _, fcache = field_forward(field, np.zeros((0, 3)), np.zeros((0, 3)), want_cache=True)
    z = np.zeros((0, 0), dtype=dtype)
    return RenderCache(n, hit, z, z, np.zeros((0, 0, 3), dtype=dtype), z, z,
                       np.zeros(0, dtype=dtype), bg, fcache)


def _render_hits_early_stop(field, origins, dirs, t_in, t_out, params, bg, rng):
    """Chunked march that drops rays once transmittance falls below threshold."""
    dtype = field.dtype
    nh = origins.shape[0]
    t, delta = _sample_layout(t_in, t_out, params, dtype, rng if params.jitter else None)
    m = t.shape[1]
    chunk = max(1, min(16, m))
    color = np.zeros((nh, 3), dtype=dtype)
    trans = np.ones(nh, dtype=dtype)
    sh_ray = encoding.sh_encode(dirs.astype(dtype))
    active = np.arange(nh)
    o32 = origins.astype(dtype)
    d32 = dirs.astype(dtype)
    thresh = params.early_stop_transmittance
    for start in range(0, m, chunk):
        sl = slice(start, min(start + chunk, m))
        width = sl.stop - sl.start
        tc = t[active, sl]
        dc = delta[active, sl]
        pts = (o32[active, None, :] + tc[:, :, None] * d32[active, None, :]).reshape(-1, 3)
        sh = np.ascontiguousarray(np.broadcast_to(sh_ray[active, None, :],
                                                  (active.size, width, encoding.SH_DIM)))
        sigma, rgb, _ = field_forward(field, pts, sh=sh.reshape(-1, encoding.SH_DIM))
        if not np.all(np.isfinite(sigma)):
            raise NumericError(f"non-finite density at sample {int(np.argmin(np.isfinite(sigma)))}")
        sigma = sigma.reshape(-1, width)
        rgb = rgb.reshape(-1, width, 3)
        exp_term = np.exp(-sigma * dc)
        t_next = trans[active, None] * np.cumprod(exp_term, axis=1)
        t_enter = np.concatenate([trans[active, None], t_next[:, :-1]], axis=1)
        w = t_enter * (1.0 - exp_term)
        color[active] += np.einsum("nm,nmc->nc", w, rgb)
        trans[active] = t_next[:, -1]
        active = active[trans[active] >= thresh]
        if active.size == 0:
            break
    color += trans[:, None] * bg
    return color, 1.0 - trans


def render_ray(field: TimestepField, ray: Ray, params: RenderParams):
    """Single-ray rendering; returns (color (3,), opacity, cache-or-None)."""
    want = params.early_stop_transmittance == 0.0 and params.compositing == COMPOSITE_ALPHA
    colors, opacity, cache = render_rays(field, ray.origin[None], ray.direction[None],
                                         params, want_cache=want)
    return colors[0], float(opacity[0]), cache


def render_rays_backward(field: TimestepField, cache: RenderCache,
                         d_colors: np.ndarray,
                         grads: dict[str, np.ndarray] | None = None,
                         pool=None) -> dict[str, np.ndarray]:
    """Exact gradient of the composited colors with respect to the field.

    For each sample j the color depends on sigma_j through its own weight
    (delta_j * T_{j+1} * c_j) and through every later weight and the
    background term (-delta_j * [sum_{k>j} w_k c_k + T_final * bg]).
    """
    d_colors = np.asarray(d_colors, dtype=field.dtype).reshape(cache.n_rays, 3)
    dch = d_colors[cache.hit]
    nh, m = cache.sigma.shape
    if nh == 0:
        return grads if grads is not None else zeros_like_theta(field.config, field.dtype)

    weights = cache.trans - cache.trans_next
    wc = weights[:, :, None] * cache.rgb
    # suffix[j] = sum_{k>j} w_k c_k + T_final * bg
    suffix = np.cumsum(wc[:, ::-1], axis=1)[:, ::-1]
    suffix = np.concatenate([suffix[:, 1:], np.zeros((nh, 1, 3), dtype=wc.dtype)], axis=1)
    suffix += (cache.t_final[:, None] * cache.background)[:, None, :]

    d_rgb = weights[:, :, None] * dch[:, None, :]
    d_sigma = cache.delta * np.einsum(
        "nmc,nc->nm", cache.trans_next[:, :, None] * cache.rgb - suffix, dch)
    return field_backward(field, cache.field_cache,
                          d_sigma.reshape(-1), d_rgb.reshape(-1, 3), grads, pool=pool)


def render_ray_backward(field: TimestepField, cache: RenderCache, d_color: np.ndarray,
                        grads: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Single-ray form of render_rays_backward."""
    return render_rays_backward(field, cache, np.asarray(d_color).reshape(1, 3), grads)


def render_image(field: TimestepField, camera: CameraModel, params: RenderParams,
                 row_chunk: int | None = None) -> RenderedImage:
    """Render every pixel of the camera; deterministic, pixels independent."""
    origin, dirs = geometry.camera_ray_grid(camera)
    h, w = camera.height, camera.width
    rgba = np.empty((h, w, 4), dtype=np.float32)
    if row_chunk is None:
        target = 1 << 20  # samples per slab, keeps peak memory modest
        row_chunk = max(1, target // max(1, w * params.n_samples))
    for r0 in range(0, h, row_chunk):
        r1 = min(r0 + row_chunk, h)
        d = dirs[r0:r1].reshape(-1, 3)
        o = np.broadcast_to(origin, d.shape)
        colors, opacity, _ = render_rays(field, o, d, params)
        rgba[r0:r1, :, :3] = colors.reshape(r1 - r0, w, 3)
        rgba[r0:r1, :, 3] = opacity.reshape(r1 - r0, w)
    return RenderedImage(width=w, height=h, rgba=np.clip(rgba, 0.0, 1.0))
