"""Input encodings for the radiance field.

Positions go through a multi-resolution hash grid with trilinear
interpolation; view directions through a fixed degree-3 real spherical
harmonics basis. The grid's learnable entries live in a flat table so the
training loop can treat them as one parameter group.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels


@dataclass(frozen=True)
class GridConfig:
    """Hyperparameters of the multi-resolution hash grid.

    With per_level_tables=True the table holds `levels` independent slices of
    `table_size` entries; with False a single slice of `table_size` entries is
    shared by every level (collisions across levels are tolerated by design,
    like any other hash collision).
    """

    levels: int = 16
    channels: int = 2
    table_size: int = 2 ** 22
    r_min: int = 16
    r_max_factor: float = 2048.0
    half_extent: float = 2.0
    per_level_tables: bool = True

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.table_size < 1 or (self.table_size & (self.table_size - 1)) != 0:
            raise ValueError(f"table_size must be a power of two, got {self.table_size}")
        if self.r_min < 1:
            raise ValueError(f"r_min must be >= 1, got {self.r_min}")
        if self.r_max < self.r_min:
            raise ValueError(f"r_max={self.r_max} below r_min={self.r_min}")
        if self.half_extent <= 0:
            raise ValueError(f"half_extent must be positive, got {self.half_extent}")

    @property
    def r_max(self) -> float:
        return self.r_max_factor * self.half_extent

    @property
    def n_slices(self) -> int:
        return self.levels if self.per_level_tables else 1

    @property
    def table_entries(self) -> int:
        """Total learnable scalars in the table."""
        return self.n_slices * self.table_size * self.channels

    @property
    def feature_dim(self) -> int:
        return self.levels * self.channels


def grid_levels(cfg: GridConfig) -> np.ndarray:
    """Integer lattice resolutions R_l = floor(r_min * alpha^l).

    alpha is the geometric factor (r_max/r_min)^(1/(levels-1)); a one-level
    grid just uses r_min. A tiny epsilon keeps exact powers (e.g. 4096) from
    flooring down through float rounding.
    """
    if cfg.levels == 1:
        return np.array([cfg.r_min], dtype=np.int64)
    alpha = (cfg.r_max / cfg.r_min) ** (1.0 / (cfg.levels - 1))
    raw = cfg.r_min * alpha ** np.arange(cfg.levels, dtype=np.float64)
    return np.floor(raw + 1e-6).astype(np.int64)


def level_is_dense(resolution: int, table_size: int) -> bool:
    """Dense row-major indexing is used whenever the full lattice fits."""
    return (resolution + 1) ** 3 <= table_size


def lattice_index(level: int, resolution: int, corner, table_size: int) -> int:
    """Table index of an integer lattice corner at the given level.

    Dense levels index row-major with stride (resolution + 1); larger levels
    use the spatial hash (x XOR y*2654435761 XOR z*805459861) mod table_size
    in wrapping unsigned 32-bit arithmetic. `level` only selects the slice in
    per-level layouts and does not enter the hash.
    """
    vx, vy, vz = (int(c) for c in corner)
    for name, v in (("x", vx), ("y", vy), ("z", vz)):
        if not (0 <= v <= resolution):
            raise ValueError(f"corner {name}={v} outside [0, {resolution}]")
    if level_is_dense(resolution, table_size):
        stride = resolution + 1
        return vx + stride * (vy + stride * vz)
    h = vx ^ ((vy * 2654435761) & 0xFFFFFFFF) ^ ((vz * 805459861) & 0xFFFFFFFF)
    return (h & 0xFFFFFFFF) % table_size


@dataclass
class HashTable:
    """Flat array of grid entries plus the config that gives it shape."""

    entries: np.ndarray
    cfg: GridConfig

    def __post_init__(self):
        if self.entries.ndim != 1 or self.entries.size != self.cfg.table_entries:
            raise ValueError(
                f"table must be flat with {self.cfg.table_entries} entries, "
                f"got shape {self.entries.shape}"
            )

    @classmethod
    def zeros(cls, cfg: GridConfig, dtype=np.float32) -> "HashTable":
        return cls(np.zeros(cfg.table_entries, dtype=dtype), cfg)

    @classmethod
    def uniform_init(cls, cfg: GridConfig, rng: np.random.Generator,
                     scale: float = 1e-4, dtype=np.float32) -> "HashTable":
        vals = rng.uniform(-scale, scale, size=cfg.table_entries)
        return cls(vals.astype(dtype), cfg)

    def slice_view(self, level: int) -> np.ndarray:
        """(table_size, channels) view of the slice used by `level`."""
        c = self.cfg
        s = level if c.per_level_tables else 0
        n = c.table_size * c.channels
        return self.entries[s * n:(s + 1) * n].reshape(c.table_size, c.channels)


def _kernel_args(cfg: GridConfig):
    res = grid_levels(cfg)
    dense = np.array([level_is_dense(int(r), cfg.table_size) for r in res])
    stride = cfg.table_size * cfg.channels if cfg.per_level_tables else 0
    return res, dense, np.uint64(cfg.table_size - 1), np.int64(stride)


def normalize_positions(x: np.ndarray, cfg: GridConfig) -> np.ndarray:
    """Map box coordinates [-B, B]^3 to [0, 1]^3, clamping stragglers."""
    b = cfg.half_extent
    xn = (np.asarray(x) + b) / (2.0 * b)
    assert xn.size == 0 or (xn.min() >= -1e-6 and xn.max() <= 1.0 + 1e-6), \
        "position outside the scene box"
    return np.clip(xn, 0.0, 1.0)


def encode_position(x: np.ndarray, table: HashTable, cfg: GridConfig | None = None,
                    out: np.ndarray | None = None) -> np.ndarray:
    """Concatenated trilinear features for points inside the scene box.

    x: (n, 3) world coordinates (callers guarantee box containment, normally
    via ray clipping). Returns (n, levels * channels) in the table's dtype.
    """
    cfg = cfg or table.cfg
    xn = normalize_positions(x, cfg).astype(table.entries.dtype)
    return _encode_normalized(xn, table.entries, cfg, out)


def _encode_normalized(xn: np.ndarray, entries: np.ndarray, cfg: GridConfig,
                       out: np.ndarray | None = None) -> np.ndarray:
    res, dense, t_mask, stride = _kernel_args(cfg)
    if out is None:
        out = np.empty((xn.shape[0], cfg.feature_dim), dtype=entries.dtype)
    _kernels.grid_forward(xn, entries, res, dense, t_mask, stride, cfg.channels, out)
    return out


def encode_position_backward(x: np.ndarray, upstream: np.ndarray, table: HashTable,
                             cfg: GridConfig | None = None,
                             grad: np.ndarray | None = None) -> np.ndarray:
    """Scatter feature gradients back onto the table entries.

    Accumulates weight * upstream into the 8 corner entries per level;
    gradients with respect to x itself are not produced (sample positions come
    from fixed rays and are never optimized). Pass `grad` to accumulate into
    an existing buffer.
    """
    cfg = cfg or table.cfg
    xn = normalize_positions(x, cfg).astype(table.entries.dtype)
    return _encode_backward_normalized(xn, np.ascontiguousarray(upstream), cfg,
                                       table.entries.dtype, grad)


def _encode_backward_normalized(xn: np.ndarray, upstream: np.ndarray, cfg: GridConfig,
                                dtype, grad: np.ndarray | None = None) -> np.ndarray:
    res, dense, t_mask, stride = _kernel_args(cfg)
    if grad is None:
        grad = np.zeros(cfg.table_entries, dtype=dtype)
    if cfg.per_level_tables:
        _kernels.grid_backward_sliced(xn, upstream, res, dense, t_mask, stride,
                                      cfg.channels, grad)
    else:
        _kernels.grid_backward_shared(xn, upstream, res, dense, t_mask,
                                      cfg.channels, grad)
    return grad


# Real spherical harmonics for degrees 0..3, components ordered (l, m)
# lexicographically. Constants are the usual orthonormal-basis coefficients.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)

SH_DIM = 16


def sh_encode(d: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """16-component direction features (degree 0..3 real spherical harmonics).

    d: (n, 3) unit vectors; inputs off the unit sphere by more than 1e-6 are
    normalized with a warning.
    """
    d = np.asarray(d)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    norms = np.linalg.norm(d, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        warnings.warn("sh_encode received non-unit directions; normalizing", stacklevel=2)
        d = d / norms[:, None]
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    if out is None:
        out = np.empty((d.shape[0], SH_DIM), dtype=d.dtype)
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out[:, 0] = SH_C0
    out[:, 1] = -SH_C1 * y
    out[:, 2] = SH_C1 * z
    out[:, 3] = -SH_C1 * x
    out[:, 4] = SH_C2[0] * xy
    out[:, 5] = SH_C2[1] * yz
    out[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
    out[:, 7] = SH_C2[3] * xz
    out[:, 8] = SH_C2[4] * (xx - yy)
    out[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
    out[:, 10] = SH_C3[1] * xy * z
    out[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
    out[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
    out[:, 14] = SH_C3[5] * z * (xx - yy)
    out[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out[0] if single else out
