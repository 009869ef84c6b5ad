"""Image-quality metrics (PSNR, SSIM) and the archive evaluation harness.

Both metrics operate on RGB images in [0, 1]; predictions and ground truth
are composited onto the same background before comparison so that the
background convention cannot dominate the score on alpha-masked data.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 99.0

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03

_LUMA = np.array([0.299, 0.587, 0.114])


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over all pixels and channels,
    capped at 99 dB (identical inputs)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode 2D correlation with the separable-free direct kernel."""
    win = kernel.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(img, (win, win))
    return np.einsum("ijkl,kl->ij", view, kernel)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity on the luma channel.

    11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1;
    the mean runs over valid windows only.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a = a[..., :3] @ _LUMA
        b = b[..., :3] @ _LUMA
    if min(a.shape) < _SSIM_WINDOW:
        raise ValueError(f"images must be at least {_SSIM_WINDOW}px per side")

    k = _gaussian_kernel(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_a = _windowed_mean(a, k)
    mu_b = _windowed_mean(b, k)
    var_a = _windowed_mean(a * a, k) - mu_a ** 2
    var_b = _windowed_mean(b * b, k) - mu_b ** 2
    cov = _windowed_mean(a * b, k) - mu_a * mu_b
    c1 = _SSIM_K1 ** 2
    c2 = _SSIM_K2 ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    rows: list[dict]          # one per (timestep, test view)
    mean_psnr: float
    mean_ssim: float
    render_fps: float
    lpips: None = None        # reserved column, not computed

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "render_fps": self.render_fps,
            "lpips": self.lpips,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_table(self) -> str:
        lines = [f"{'time':>6} {'view':>6} {'PSNR':>8} {'SSIM':>8}",
                 "-" * 32]
        for r in self.rows:
            lines.append(f"{r['time_index']:>6} {r['view_index']:>6} "
                         f"{r['psnr']:>8.2f} {r['ssim']:>8.4f}")
        lines.append("-" * 32)
        lines.append(f"{'mean':>13} {self.mean_psnr:>8.2f} {self.mean_ssim:>8.4f}")
        lines.append(f"render throughput: {self.render_fps:.2f} frames/s")
        return "\n".join(lines)


def evaluate(archive, dataset_root, render_params=None, background=(1.0, 1.0, 1.0),
             timesteps=None) -> EvalReport:
    """Render every archived (test view, timestep) and score against the
    composited ground truth."""
    from . import dataset as ds
    from .renderer import RenderParams, render_image
    from .errors import DataError

    root = dataset_root
    tf = ds.load_transforms(f"{root}/transforms.json")
    if tf.split is None or not tf.split.test_view_indices:
        raise DataError("dataset has no test split recorded")
    _, _, test_views = ds.split_views(tf.n_views, tf.split)
    if timesteps is None:
        timesteps = tf.timesteps()
    missing = [t for t in timesteps if t not in archive]
    if missing:
        raise DataError(f"archive lacks timesteps {missing}")

    import dataclasses
    params = render_params or RenderParams(early_stop_transmittance=1e-4)
    # renders carry their background in the color channels already, so pin it
    # to the scoring background rather than compositing twice
    params = dataclasses.replace(params, background=tuple(background))
    bg = np.asarray(background, dtype=np.float32)
    rows = []
    render_seconds = 0.0
    for t in timesteps:
        field = archive.read_timestep(t)
        frames = ds.load_frame_set(root, t, test_views, transforms=tf)
        for view_idx, view in zip(test_views, frames.views):
            t0 = time.perf_counter()
            img = render_image(field, view.camera, params)
            render_seconds += time.perf_counter() - t0
            pred = img.rgba[..., :3]
            truth = ds.composite_alpha(view.image, bg)
            rows.append({
                "time_index": t,
                "view_index": view_idx,
                "psnr": psnr(pred, truth),
                "ssim": ssim(pred, truth),
            })
    fps = len(rows) / render_seconds if render_seconds > 0 else float("inf")
    return EvalReport(rows=rows,
                      mean_psnr=float(np.mean([r["psnr"] for r in rows])),
                      mean_ssim=float(np.mean([r["ssim"] for r in rows])),
                      render_fps=fps)
