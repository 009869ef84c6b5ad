"""Desk-scale end-to-end experiment: synthesize the 3-primitive scene, train
one field per timestep with the desk profile, and score the held-out views.

This is the pilot run behind the quality/runtime thresholds in the
acceptance suite and the README. Invoke directly:

    python scripts/run_desk_experiment.py --out /tmp/desk --workers 3
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from chronofield import metrics, profiles, scene_synth, trainer
from chronofield.archive import Archive
from chronofield.renderer import RenderParams

DESK_TIMESTEPS = 3
DESK_CAMERAS = 30
DESK_RESOLUTION = 64


def make_desk_dataset(root) -> Path:
    spec = scene_synth.default_desk_scene(n_timesteps=DESK_TIMESTEPS,
                                          rig_cameras=DESK_CAMERAS,
                                          resolution=DESK_RESOLUTION)
    return scene_synth.synth_dataset(spec, root, split=scene_synth.DESK_SPLIT)


def train_desk(dataset_root, archive_path, workers: int, seed: int = 0,
               log_dir=None) -> float:
    """Train the sequence; returns wall-clock seconds."""
    cfg = dataclasses.replace(profiles.profile("desk"), seed=seed)
    t0 = time.perf_counter()
    trainer.train_sequence(dataset_root, cfg, archive_path, workers=workers,
                           log_dir=log_dir).close()
    return time.perf_counter() - t0


def evaluate_desk(archive_path, dataset_root) -> metrics.EvalReport:
    params = RenderParams(n_samples=64, early_stop_transmittance=1e-4)
    with Archive.open(archive_path) as arc:
        return metrics.evaluate(arc, dataset_root, render_params=params)


def per_timestep_means(report: metrics.EvalReport) -> dict[int, dict[str, float]]:
    out: dict[int, dict[str, float]] = {}
    for t in sorted({r["time_index"] for r in report.rows}):
        rows = [r for r in report.rows if r["time_index"] == t]
        out[t] = {
            "psnr": sum(r["psnr"] for r in rows) / len(rows),
            "ssim": sum(r["ssim"] for r in rows) / len(rows),
        }
    return out


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="working directory")
    ap.add_argument("--workers", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = out / "data"
    if not (data / "transforms.json").exists():
        print("synthesizing desk dataset ...")
        make_desk_dataset(data)

    archive_path = out / f"desk_w{args.workers}.chrono"
    print(f"training {DESK_TIMESTEPS} timesteps with {args.workers} worker(s) ...")
    seconds = train_desk(data, archive_path, args.workers, seed=args.seed,
                         log_dir=out / "logs")
    print(f"training wall-clock: {seconds / 60:.1f} min")

    report = evaluate_desk(archive_path, data)
    print(report.to_table())
    summary = {
        "workers": args.workers,
        "train_seconds": seconds,
        "per_timestep": per_timestep_means(report),
        "mean_psnr": report.mean_psnr,
        "mean_ssim": report.mean_ssim,
        "render_fps": report.render_fps,
    }
    (out / f"summary_w{args.workers}.json").write_text(json.dumps(summary, indent=1))
    print(json.dumps(summary["per_timestep"], indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
