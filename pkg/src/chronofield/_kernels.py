"""Numba kernels for the hash-grid lookup, its gradient scatter, and Adam.

The grid kernels iterate levels in the outer loop so each level's table slice
stays cache-resident; the ubiquitous two-channel configuration takes a
register-accumulator fast path. Parallelism is over levels only: forward
writes go to disjoint feature columns and (in per-level layouts) backward
writes go to disjoint table slices, so results are bitwise identical for any
thread count. Shared-table layouts use the serial backward variant because
all levels scatter into the same slice.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

MASK32 = np.uint64(0xFFFFFFFF)
HASH_PRIME_Y = np.uint64(2654435761)
HASH_PRIME_Z = np.uint64(805459861)


@njit(cache=True, fastmath=True, inline="always")
def _corner_index(ix, iy, iz, cx, cy, cz, is_dense, r1, t_mask):
    vx = np.uint64(ix + cx)
    vy = np.uint64(iy + cy)
    vz = np.uint64(iz + cz)
    if is_dense:
        return vx + r1 * (vy + r1 * vz)
    return (vx ^ ((vy * HASH_PRIME_Y) & MASK32)
            ^ ((vz * HASH_PRIME_Z) & MASK32)) & t_mask


@njit(cache=True, fastmath=True, inline="always")
def _cell(xn, s, r):
    hx = xn[s, 0] * r
    hy = xn[s, 1] * r
    hz = xn[s, 2] * r
    ix = int(hx)
    iy = int(hy)
    iz = int(hz)
    if ix > r - 1:
        ix = r - 1
    if iy > r - 1:
        iy = r - 1
    if iz > r - 1:
        iz = r - 1
    return ix, iy, iz, hx - ix, hy - iy, hz - iz


@njit(cache=True, fastmath=True, inline="always")
def _level_forward_c2(xn, table, r, is_dense, t_mask, base, col, out):
    n = xn.shape[0]
    r1 = np.uint64(r + 1)
    for s in range(n):
        ix, iy, iz, fx, fy, fz = _cell(xn, s, r)
        gx = 1.0 - fx
        gy = 1.0 - fy
        gz = 1.0 - fz
        a0 = 0.0
        a1 = 0.0
        for corner in range(8):
            cx = corner & 1
            cy = (corner >> 1) & 1
            cz = (corner >> 2) & 1
            idx = _corner_index(ix, iy, iz, cx, cy, cz, is_dense, r1, t_mask)
            w = (fx if cx else gx) * (fy if cy else gy) * (fz if cz else gz)
            off = base + np.int64(idx) * 2
            a0 += w * table[off]
            a1 += w * table[off + 1]
        out[s, col] = a0
        out[s, col + 1] = a1


@njit(cache=True, fastmath=True, inline="always")
def _level_forward_any(xn, table, r, is_dense, t_mask, base, col, channels, out):
    n = xn.shape[0]
    r1 = np.uint64(r + 1)
    for s in range(n):
        ix, iy, iz, fx, fy, fz = _cell(xn, s, r)
        gx = 1.0 - fx
        gy = 1.0 - fy
        gz = 1.0 - fz
        for c in range(channels):
            out[s, col + c] = 0.0
        for corner in range(8):
            cx = corner & 1
            cy = (corner >> 1) & 1
            cz = (corner >> 2) & 1
            idx = _corner_index(ix, iy, iz, cx, cy, cz, is_dense, r1, t_mask)
            w = (fx if cx else gx) * (fy if cy else gy) * (fz if cz else gz)
            off = base + np.int64(idx) * channels
            for c in range(channels):
                out[s, col + c] += w * table[off + c]


@njit(cache=True, fastmath=True)
def grid_forward(xn, table, res, dense, t_mask, stride, channels, out):
    """Trilinear multi-level lookup.

    xn:      (n, 3) coordinates normalized to [0, 1]
    table:   flat (n_slices * T * C,) entries
    res:     (L,) per-level lattice resolution
    dense:   (L,) row-major (True) vs hashed (False) indexing
    t_mask:  T - 1 (T is a power of two)
    stride:  T * C for per-level slices, 0 for a single shared slice
    out:     (n, L * C) feature output
    """
    for l in prange(res.shape[0]):
        base = np.int64(l) * stride
        if channels == 2:
            _level_forward_c2(xn, table, res[l], dense[l], t_mask, base, l * 2, out)
        else:
            _level_forward_any(xn, table, res[l], dense[l], t_mask, base,
                               l * channels, channels, out)


@njit(cache=True, fastmath=True, inline="always")
def _level_backward_c2(xn, dfeat, r, is_dense, t_mask, base, col, grad):
    n = xn.shape[0]
    r1 = np.uint64(r + 1)
    for s in range(n):
        ix, iy, iz, fx, fy, fz = _cell(xn, s, r)
        gx = 1.0 - fx
        gy = 1.0 - fy
        gz = 1.0 - fz
        u0 = dfeat[s, col]
        u1 = dfeat[s, col + 1]
        for corner in range(8):
            cx = corner & 1
            cy = (corner >> 1) & 1
            cz = (corner >> 2) & 1
            idx = _corner_index(ix, iy, iz, cx, cy, cz, is_dense, r1, t_mask)
            w = (fx if cx else gx) * (fy if cy else gy) * (fz if cz else gz)
            off = base + np.int64(idx) * 2
            grad[off] += w * u0
            grad[off + 1] += w * u1


@njit(cache=True, fastmath=True, inline="always")
def _level_backward_any(xn, dfeat, r, is_dense, t_mask, base, col, channels, grad):
    n = xn.shape[0]
    r1 = np.uint64(r + 1)
    for s in range(n):
        ix, iy, iz, fx, fy, fz = _cell(xn, s, r)
        gx = 1.0 - fx
        gy = 1.0 - fy
        gz = 1.0 - fz
        for corner in range(8):
            cx = corner & 1
            cy = (corner >> 1) & 1
            cz = (corner >> 2) & 1
            idx = _corner_index(ix, iy, iz, cx, cy, cz, is_dense, r1, t_mask)
            w = (fx if cx else gx) * (fy if cy else gy) * (fz if cz else gz)
            off = base + np.int64(idx) * channels
            for c in range(channels):
                grad[off + c] += w * dfeat[s, col + c]


@njit(cache=True, fastmath=True)
def grid_backward_sliced(xn, dfeat, res, dense, t_mask, stride, channels, grad):
    """Scatter feature gradients into per-level table slices (parallel-safe)."""
    for l in prange(res.shape[0]):
        base = np.int64(l) * stride
        if channels == 2:
            _level_backward_c2(xn, dfeat, res[l], dense[l], t_mask, base, l * 2, grad)
        else:
            _level_backward_any(xn, dfeat, res[l], dense[l], t_mask, base,
                                l * channels, channels, grad)


@njit(cache=True, fastmath=True)
def grid_backward_shared(xn, dfeat, res, dense, t_mask, channels, grad):
    """Scatter into one shared slice; serial because levels collide."""
    for l in range(res.shape[0]):
        if channels == 2:
            _level_backward_c2(xn, dfeat, res[l], dense[l], t_mask,
                               np.int64(0), l * 2, grad)
        else:
            _level_backward_any(xn, dfeat, res[l], dense[l], t_mask,
                                np.int64(0), l * channels, channels, grad)


@njit(cache=True)
def relu_backward(dh, act):
    """In-place dh *= (act > 0) without a boolean temporary."""
    flat_d = dh.ravel()
    flat_a = act.ravel()
    for i in prange(flat_d.size):
        if flat_a[i] <= 0.0:
            flat_d[i] = 0.0


# no fastmath here: LLVM's nnan assumption would let it elide the isfinite check
@njit(cache=True)
def adam_update(theta, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """Bias-corrected Adam step, fused into a single pass.

    bc1/bc2 are the precomputed corrections 1 - beta^step. Returns the number
    of non-finite gradient entries so callers can fail loudly.
    """
    bad = 0
    for i in prange(theta.size):
        g = grad[i]
        if not np.isfinite(g):
            bad += 1
            continue
        mi = beta1 * m[i] + (1.0 - beta1) * g
        vi = beta2 * v[i] + (1.0 - beta2) * g * g
        m[i] = mi
        v[i] = vi
        theta[i] -= lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)
    return bad
