"""The per-timestep radiance function: density and color MLPs over the
encoded inputs, with hand-derived backward passes.

Architecture (default config): hash-grid features -> Linear(feat, 64) ->
ReLU -> Linear(64, 1+15); the first output channel is raw density (sigma =
exp of the clamped value), the rest a geometric feature vector. Color takes
the 16-D spherical-harmonics direction encoding concatenated with that
feature through Linear(31, 64) -> ReLU -> Linear(64, 64) -> ReLU ->
Linear(64, 3) -> Sigmoid.

Parameters live in an ordered dict of ndarrays; the ordering defined by
`theta_layout` is the canonical serialization order used by the archive.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _gemm, _kernels, encoding
from .encoding import GridConfig, HashTable
from .errors import NumericError


@dataclass(frozen=True)
class FieldConfig:
    grid: GridConfig = dc_field(default_factory=GridConfig)
    density_hidden: int = 64
    geo_features: int = 15
    color_hidden: int = 64
    color_depth: int = 2
    dir_dim: int = 16
    density_clamp: float = 15.0
    seed: int = 0

    def __post_init__(self):
        if self.dir_dim != encoding.SH_DIM:
            raise ValueError(f"dir_dim must be {encoding.SH_DIM} (degree-3 SH basis)")
        for name in ("density_hidden", "geo_features", "color_hidden", "color_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def density_out(self) -> int:
        return 1 + self.geo_features

    @property
    def color_in(self) -> int:
        return self.dir_dim + self.geo_features


def theta_layout(config: FieldConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Canonical (name, shape, group) list; group is 'table' or 'mlp'."""
    g = config.grid
    layout: list[tuple[str, tuple[int, ...], str]] = [
        ("table", (g.table_entries,), "table"),
        ("density.w0", (g.feature_dim, config.density_hidden), "mlp"),
        ("density.b0", (config.density_hidden,), "mlp"),
        ("density.w1", (config.density_hidden, config.density_out), "mlp"),
        ("density.b1", (config.density_out,), "mlp"),
    ]
    widths = [config.color_in] + [config.color_hidden] * config.color_depth + [3]
    for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
        layout.append((f"color.w{i}", (w_in, w_out), "mlp"))
        layout.append((f"color.b{i}", (w_out,), "mlp"))
    return layout


def parameter_count(config: FieldConfig) -> int:
    """Exact number of learnable scalars (equals the serialized payload length)."""
    return sum(int(np.prod(shape)) for _, shape, _ in theta_layout(config))


@dataclass
class TimestepField:
    """All learnable state of one archived moment."""

    time_index: int
    theta: dict[str, np.ndarray]
    config: FieldConfig
    scene_scale: float = 1.0

    @property
    def half_extent(self) -> float:
        return self.config.grid.half_extent

    @property
    def dtype(self):
        return self.theta["table"].dtype

    @property
    def table(self) -> HashTable:
        return HashTable(self.theta["table"], self.config.grid)

    def astype(self, dtype) -> "TimestepField":
        theta = {k: v.astype(dtype) for k, v in self.theta.items()}
        return TimestepField(self.time_index, theta, self.config, self.scene_scale)

    def copy(self) -> "TimestepField":
        return TimestepField(self.time_index, {k: v.copy() for k, v in self.theta.items()},
                             self.config, self.scene_scale)


@dataclass(frozen=True)
class FieldSample:
    sigma: float
    rgb: np.ndarray


def init_parameters(config: FieldConfig, seed: int | None = None,
                    time_index: int = 0, scene_scale: float = 1.0,
                    dtype=np.float32) -> TimestepField:
    """Fresh parameters: table U(-1e-4, 1e-4), Xavier-uniform weights, zero biases.

    Deterministic for a given seed; draws follow the canonical layout order.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    theta: dict[str, np.ndarray] = {}
    for name, shape, group in theta_layout(config):
        if group == "table":
            theta[name] = rng.uniform(-1e-4, 1e-4, size=shape).astype(dtype)
        elif ".w" in name:
            fan_in, fan_out = shape
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            theta[name] = rng.uniform(-lim, lim, size=shape).astype(dtype)
        else:
            theta[name] = np.zeros(shape, dtype=dtype)
    return TimestepField(time_index, theta, config, scene_scale)


def zeros_like_theta(config: FieldConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape, dtype=dtype) for name, shape, _ in theta_layout(config)}


def flatten_theta(theta: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([v.ravel() for v in theta.values()])


def theta_group(name: str) -> str:
    return "table" if name == "table" else "mlp"


@dataclass
class FieldCache:
    """Every intermediate needed by the hand-derived backward pass."""

    xn: np.ndarray          # (n, 3) normalized positions
    enc: np.ndarray         # (n, feature_dim)
    h1: np.ndarray          # (n, density_hidden), post-ReLU
    raw_density: np.ndarray  # (n,) pre-activation density
    sigma: np.ndarray       # (n,)
    color_in: np.ndarray    # (n, dir_dim + geo_features)
    hidden: list[np.ndarray]  # post-ReLU color activations
    rgb: np.ndarray         # (n, 3)


def _relu_(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0, out=x)


def field_forward(field: TimestepField, x: np.ndarray, d: np.ndarray | None = None,
                  want_cache: bool = False, pool: _gemm.ArrayPool | None = None,
                  sh: np.ndarray | None = None):
    """Evaluate (sigma, rgb) at points x viewed from unit directions d.

    x, d: (n, 3). Returns (sigma (n,), rgb (n, 3), cache-or-None). Pure and
    bit-stable for fixed parameters; raises NumericError (naming the first
    offending layer) if anything non-finite appears. `pool` supplies reusable
    scratch buffers for the training loop; callers that already hold the
    direction encoding can pass it as `sh` (n, dir_dim) instead of d.
    """
    cfg = field.config
    th = field.theta
    dtype = field.dtype
    x = np.asarray(x, dtype=dtype).reshape(-1, 3)
    if sh is None:
        if d is None:
            raise ValueError("need either view directions d or their encoding sh")
        d = np.asarray(d, dtype=dtype).reshape(-1, 3)
    n = x.shape[0]
    if n == 0:
        empty = np.zeros((0, 3), dtype=dtype)
        cache = FieldCache(empty, np.zeros((0, cfg.grid.feature_dim), dtype=dtype),
                           np.zeros((0, cfg.density_hidden), dtype=dtype),
                           np.zeros(0, dtype=dtype), np.zeros(0, dtype=dtype),
                           np.zeros((0, cfg.color_in), dtype=dtype), [], empty.copy())
        return np.zeros(0, dtype=dtype), np.zeros((0, 3), dtype=dtype), (
            cache if want_cache else None)

    xn = np.ascontiguousarray(encoding.normalize_positions(x, cfg.grid), dtype=dtype)
    enc = encoding._encode_normalized(xn, th["table"], cfg.grid,
                                      out=_gemm.take(pool, (n, cfg.grid.feature_dim), dtype))
    h1 = _gemm.matmul(enc, th["density.w0"], pool)
    h1 += th["density.b0"]
    _relu_(h1)
    geo = _gemm.matmul(h1, th["density.w1"], pool)
    geo += th["density.b1"]
    raw = _gemm.take(pool, (n,), dtype)
    raw[:] = geo[:, 0]
    c = cfg.density_clamp
    sigma = _gemm.take(pool, (n,), dtype)
    np.clip(raw, -c, c, out=sigma)
    np.exp(sigma, out=sigma)

    color_in = _gemm.take(pool, (n, cfg.color_in), dtype)
    if sh is None:
        encoding.sh_encode(d, out=color_in[:, :cfg.dir_dim])
    else:
        color_in[:, :cfg.dir_dim] = sh
    color_in[:, cfg.dir_dim:] = geo[:, 1:]
    h = color_in
    hidden = []
    for i in range(cfg.color_depth):
        h = _gemm.matmul(h, th[f"color.w{i}"], pool)
        h += th[f"color.b{i}"]
        _relu_(h)
        hidden.append(h)
    z = _gemm.matmul(h, th[f"color.w{cfg.color_depth}"], pool)
    z += th[f"color.b{cfg.color_depth}"]
    rgb = _gemm.take(pool, (n, 3), dtype)
    np.negative(z, out=rgb)
    np.exp(rgb, out=rgb)
    rgb += 1.0
    np.reciprocal(rgb, out=rgb)

    if not (np.isfinite(sigma.max()) and np.isfinite(sigma.min())
            and np.isfinite(rgb.max()) and np.isfinite(rgb.min())):
        _raise_nonfinite(cfg, enc, h1, raw, color_in, hidden, z)

    cache = FieldCache(xn, enc, h1, raw, sigma, color_in, hidden, rgb) \
        if want_cache else None
    return sigma, rgb, cache


def _raise_nonfinite(cfg, enc, h1, raw, color_in, hidden, z):
    stages = [("grid encoding", enc), ("density layer 0", h1),
              ("density layer 1", raw), ("color input", color_in)]
    stages += [(f"color layer {i}", h) for i, h in enumerate(hidden)]
    stages.append((f"color layer {cfg.color_depth}", z))
    for name, arr in stages:
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values produced at {name}")
    raise NumericError("non-finite field output")


def sample_field(field: TimestepField, x, d) -> FieldSample:
    """Single-point convenience wrapper around field_forward."""
    sigma, rgb, _ = field_forward(field, np.asarray(x).reshape(1, 3),
                                  np.asarray(d).reshape(1, 3))
    return FieldSample(float(sigma[0]), rgb[0])


def field_backward(field: TimestepField, cache: FieldCache,
                   d_sigma: np.ndarray, d_rgb: np.ndarray,
                   grads: dict[str, np.ndarray] | None = None,
                   pool: _gemm.ArrayPool | None = None) -> dict[str, np.ndarray]:
    """Chain upstream (dL/dsigma, dL/drgb) into gradients for every parameter.

    Exact through the sigmoid, ReLU masks, the exp clamp (zero gradient in
    the clamped regime) and the trilinear scatter. Accumulates into `grads`
    when given.
    """
    cfg = field.config
    th = field.theta
    n = cache.rgb.shape[0]
    if grads is None:
        grads = zeros_like_theta(cfg, dtype=field.dtype)
    if n == 0:
        return grads

    dz = _gemm.take(pool, (n, 3), field.dtype)
    np.subtract(1.0, cache.rgb, out=dz)
    dz *= cache.rgb
    dz *= np.asarray(d_rgb, dtype=field.dtype).reshape(n, 3)
    k = cfg.color_depth
    grads[f"color.w{k}"] += _gemm.matmul_at(cache.hidden[-1], dz)
    grads[f"color.b{k}"] += dz.sum(axis=0)
    dh = _gemm.matmul_bt(dz, th[f"color.w{k}"], pool)
    for i in range(k - 1, -1, -1):
        _kernels.relu_backward(dh, cache.hidden[i])
        below = cache.hidden[i - 1] if i > 0 else cache.color_in
        grads[f"color.w{i}"] += _gemm.matmul_at(below, dh)
        grads[f"color.b{i}"] += dh.sum(axis=0)
        if i > 0:
            dh = _gemm.matmul_bt(dh, th[f"color.w{i}"], pool)

    # color input gradient: only the geometric-feature slice matters, the
    # direction encoding is never optimized
    d_feat = _gemm.matmul_bt(dh, np.ascontiguousarray(th["color.w0"][cfg.dir_dim:]),
                             pool)

    c = cfg.density_clamp
    live = (cache.raw_density > -c) & (cache.raw_density < c)
    d_geo = _gemm.take(pool, (n, cfg.density_out), field.dtype)
    np.multiply(np.asarray(d_sigma, dtype=field.dtype).reshape(n), cache.sigma,
                out=d_geo[:, 0])
    d_geo[:, 0] *= live
    d_geo[:, 1:] = d_feat
    grads["density.w1"] += _gemm.matmul_at(cache.h1, d_geo)
    grads["density.b1"] += d_geo.sum(axis=0)
    dh1 = _gemm.matmul_bt(d_geo, th["density.w1"], pool)
    _kernels.relu_backward(dh1, cache.h1)
    grads["density.w0"] += _gemm.matmul_at(cache.enc, dh1)
    grads["density.b0"] += dh1.sum(axis=0)
    denc = _gemm.matmul_bt(dh1, th["density.w0"], pool)
    encoding._encode_backward_normalized(cache.xn, denc, cfg.grid, field.dtype,
                                         grad=grads["table"])
    return grads
