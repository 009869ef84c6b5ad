"""Matrix-multiply helpers for the MLP hot path.

torch's CPU GEMM is substantially faster than numpy's BLAS for the tall,
skinny shapes the field uses, so we route through it when available (zero
copy via from_numpy). Everything stays plain float32/float64 ndarrays from
the caller's point of view.
"""

from __future__ import annotations

import numpy as np

try:
    import torch

    _HAVE_TORCH = True
except ImportError:  # pragma: no cover - torch is a declared dependency
    torch = None
    _HAVE_TORCH = False


def set_compute_threads(n: int) -> None:
    """Pin intra-op threads (torch GEMM + numba kernels) for this process."""
    import numba

    numba.set_num_threads(max(1, n))
    if _HAVE_TORCH:
        torch.set_num_threads(max(1, n))


class ArrayPool:
    """Reusable scratch arrays for the training hot loop.

    Freshly mmapped buffers cost a page fault per written page, which at tens
    of megabytes per matmul output dominates the GEMM itself. take() hands
    out a buffer that stays alive across iterations; reset() marks everything
    handed out as reusable again (call it once per iteration, after the
    previous iteration's values are dead). Not thread-safe.
    """

    def __init__(self):
        self._free: dict = {}
        self._used: list = []

    def take(self, shape, dtype) -> np.ndarray:
        key = (tuple(shape), np.dtype(dtype))
        stack = self._free.get(key)
        arr = stack.pop() if stack else np.empty(key[0], key[1])
        self._used.append((key, arr))
        return arr

    def reset(self) -> None:
        for key, arr in self._used:
            self._free.setdefault(key, []).append(arr)
        self._used.clear()


def take(pool: ArrayPool | None, shape, dtype) -> np.ndarray:
    return pool.take(shape, dtype) if pool is not None else np.empty(shape, dtype)


def _usable(a: np.ndarray, b: np.ndarray) -> bool:
    return (_HAVE_TORCH and a.dtype == b.dtype
            and a.dtype in (np.float32, np.float64))


def matmul(a: np.ndarray, b: np.ndarray, pool: ArrayPool | None = None) -> np.ndarray:
    """a @ b into a (possibly pooled) output buffer."""
    out = take(pool, (a.shape[0], b.shape[1]), a.dtype)
    if _usable(a, b):
        torch.mm(torch.from_numpy(a), torch.from_numpy(b), out=torch.from_numpy(out))
        return out
    return np.dot(a, b, out=out)


def matmul_at(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a.T @ b (weight-gradient accumulation shape)."""
    if _usable(a, b):
        out = np.empty((a.shape[1], b.shape[1]), dtype=a.dtype)
        torch.mm(torch.from_numpy(a).t(), torch.from_numpy(b), out=torch.from_numpy(out))
        return out
    return a.T @ b


def matmul_bt(a: np.ndarray, b: np.ndarray, pool: ArrayPool | None = None) -> np.ndarray:
    """a @ b.T (input-gradient shape)."""
    out = take(pool, (a.shape[0], b.shape[0]), a.dtype)
    if _usable(a, b):
        torch.mm(torch.from_numpy(a), torch.from_numpy(b).t(), out=torch.from_numpy(out))
        return out
    return np.dot(a, b.T, out=out)
