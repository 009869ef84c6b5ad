"""Command-line entry point.

    chronofield gen-cameras --n 100 --radius 4 --out rig.json
    chronofield synth-scene --out data/ --preset desk --seed 0
    chronofield convert-cmu --calib calibration.json --out transforms.json
    chronofield train --data data/ --out run.chrono --profile desk --workers 3
    chronofield render --archive run.chrono --time 2 --pose-from-view 21 \\
        --data data/ --out frame.png
    chronofield eval --archive run.chrono --data data/ --out report.json
    chronofield info --archive run.chrono
    chronofield serve --archive run.chrono --port 8080

Exit codes: 1 usage error, 2 data error, 3 numeric failure.

Training options resolve with precedence: explicit flags > --config JSON file
> profile defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import archive as archive_mod
from . import dataset, geometry, metrics, profiles, scene_synth, service
from .errors import DataError, NumericError
from .renderer import RenderParams, render_image
from .trainer import TrainConfig, train_sequence

USAGE_EXIT = 1
DATA_EXIT = 2
NUMERIC_EXIT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _vec3(text: str) -> tuple[float, float, float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z got {text!r}")
    return tuple(parts)


def build_parser() -> _Parser:
    p = _Parser(prog="chronofield",
                description="per-timestep radiance fields with a time archive")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-cameras", parents=[], help="emit a Fibonacci hemisphere rig",
                       description="Generate a transforms file for a hemisphere rig "
                                   "of cameras facing the origin.")
    g.add_argument("--n", type=int, default=100, help="number of cameras")
    g.add_argument("--radius", type=float, default=4.0, help="hemisphere radius")
    g.add_argument("--width", type=int, default=1920, help="image width in pixels")
    g.add_argument("--height", type=int, default=1080, help="image height in pixels")
    g.add_argument("--angle-x", type=float, default=0.6911, help="horizontal FOV (rad)")
    g.add_argument("--timesteps", type=int, default=1, help="frame entries per camera")
    g.add_argument("--out", required=True, help="output transforms JSON path")

    s = sub.add_parser("synth-scene", help="render a procedural multi-view dataset",
                       description="Ray-trace an analytic dynamic scene from a "
                                   "Fibonacci rig and write the dataset layout.")
    s.add_argument("--out", required=True, help="dataset root directory")
    s.add_argument("--preset", default="desk", choices=["desk"],
                   help="scene preset")
    s.add_argument("--timesteps", type=int, default=3, help="number of time indices")
    s.add_argument("--cameras", type=int, default=30, help="rig camera count")
    s.add_argument("--resolution", type=int, default=64, help="square image size")

    c = sub.add_parser("convert-cmu", help="convert Panoptic calibration JSON",
                       description="Convert a Panoptic-studio calibration file into "
                                   "the transforms format (Z-up, camera-to-world).")
    c.add_argument("--calib", required=True, help="calibration JSON path")
    c.add_argument("--out", required=True, help="output transforms JSON path")
    c.add_argument("--timesteps", type=int, default=1, help="frame entries per camera")
    c.add_argument("--camera-type", default="hd", help="calibration camera type to keep")

    t = sub.add_parser("train", help="train a sequence into an archive",
                       description="Train one field per timestep and append them "
                                   "to a new archive file.")
    t.add_argument("--data", required=True, help="dataset root (transforms.json inside)")
    t.add_argument("--out", required=True, help="archive output path")
    t.add_argument("--profile", default="desk", choices=list(profiles.PROFILE_NAMES),
                   help="configuration preset")
    t.add_argument("--config", help="JSON file of training options (overrides profile)")
    t.add_argument("--iterations", type=int, help="Adam steps per timestep")
    t.add_argument("--batch-rays", type=int, help="rays per iteration")
    t.add_argument("--samples", type=int, help="quadrature samples per ray")
    t.add_argument("--lr-table", type=float, help="learning rate for grid entries")
    t.add_argument("--lr-mlp", type=float, help="learning rate for MLP weights")
    t.add_argument("--kappa", type=float, help="temporal regularizer weight")
    t.add_argument("--scale", type=float, help="world scale applied to camera centers")
    t.add_argument("--seed", type=int, help="global seed")
    t.add_argument("--workers", type=int, default=1, help="parallel timestep workers")
    t.add_argument("--timestep-range", help="inclusive t0:t1 subset, e.g. 0:9")
    t.add_argument("--log-dir", help="directory for per-timestep ndjson logs")

    r = sub.add_parser("render", help="render frames from an archive",
                       description="Render one view/time, a dataset view pose, or a "
                                   "camera path file of render requests.")
    r.add_argument("--archive", required=True, help="archive path")
    r.add_argument("--time", type=int, help="time index to render")
    r.add_argument("--out", required=True, help="output PNG path (or directory for --path)")
    r.add_argument("--pose-from-view", type=int, help="reuse a dataset camera pose")
    r.add_argument("--data", help="dataset root (needed with --pose-from-view)")
    r.add_argument("--position", type=_vec3, help="camera position x,y,z")
    r.add_argument("--look-at", type=_vec3, help="look-at target x,y,z")
    r.add_argument("--up", type=_vec3, default=(0.0, 0.0, 1.0), help="up vector x,y,z")
    r.add_argument("--fov-x", type=float, default=0.6911, help="horizontal FOV (rad)")
    r.add_argument("--width", type=int, default=256, help="output width")
    r.add_argument("--height", type=int, default=256, help="output height")
    r.add_argument("--samples", type=int, default=64, help="samples per ray")
    r.add_argument("--background", type=_vec3, default=(0.0, 0.0, 0.0),
                   help="background color r,g,b")
    r.add_argument("--path", help="JSON file with a list of render requests")

    e = sub.add_parser("eval", help="score an archive against a dataset's test split",
                       description="Render every (test view, timestep), compute "
                                   "PSNR/SSIM, and write a JSON report.")
    e.add_argument("--archive", required=True, help="archive path")
    e.add_argument("--data", required=True, help="dataset root")
    e.add_argument("--out", help="report JSON path (defaults next to the archive)")
    e.add_argument("--samples", type=int, default=64, help="samples per ray")

    i = sub.add_parser("info", help="summarize an archive",
                       description="Print timestep and size accounting for an archive.")
    i.add_argument("--archive", required=True, help="archive path")
    i.add_argument("--json", action="store_true", help="emit machine-readable JSON")

    v = sub.add_parser("serve", help="serve renders over HTTP",
                       description="Start the render service on an archive.")
    v.add_argument("--archive", required=True, help="archive path")
    v.add_argument("--host", default="127.0.0.1", help="bind address")
    v.add_argument("--port", type=int, default=8080, help="bind port")
    v.add_argument("--max-dim", type=int, default=service.DEFAULT_MAX_DIM,
                   help="largest allowed image dimension")
    v.add_argument("--max-samples", type=int, default=service.DEFAULT_MAX_SAMPLES,
                   help="largest allowed per-ray sample count")
    return p


def _merge_train_config(args) -> TrainConfig:
    cfg = profiles.profile(args.profile)
    overrides: dict = {}
    if args.config:
        try:
            overrides.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"config file {args.config}: {e}") from e
    flag_map = {
        "iterations": args.iterations, "batch_rays": args.batch_rays,
        "lr_table": args.lr_table, "lr_mlp": args.lr_mlp, "kappa": args.kappa,
        "scene_scale": args.scale, "seed": args.seed,
    }
    overrides.update({k: v for k, v in flag_map.items() if v is not None})
    render_kw = {}
    if "samples" in overrides:
        render_kw["n_samples"] = overrides.pop("samples")
    if args.samples is not None:
        render_kw["n_samples"] = args.samples
    render = dataclasses.replace(cfg.render, **render_kw) if render_kw else cfg.render
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(overrides) - known
    if unknown:
        raise DataError(f"unknown training options: {sorted(unknown)}")
    return dataclasses.replace(cfg, render=render, **overrides)


def _cmd_gen_cameras(args) -> int:
    positions = geometry.fibonacci_camera_positions(args.n, args.radius)
    cameras, frames = {}, []
    for i, pos in enumerate(positions):
        up = (0.0, 1.0, 0.0) if abs(pos[2] / args.radius) > 1 - 1e-9 else (0.0, 0.0, 1.0)
        pose = geometry.look_at_pose(pos, (0, 0, 0), up)
        cameras[i] = geometry.CameraModel.from_fov(args.width, args.height,
                                                   args.angle_x, pose)
        for t in range(args.timesteps):
            frames.append(dataset.FrameRef(dataset.IMAGE_PATTERN.format(time=t, camera=i),
                                           t, i))
    dataset.save_transforms(args.out, cameras, frames)
    print(f"wrote {args.n} cameras x {args.timesteps} timestep(s) to {args.out}")
    return 0


def _cmd_synth_scene(args) -> int:
    spec = scene_synth.default_desk_scene(args.timesteps, args.cameras, args.resolution)
    split = scene_synth.DESK_SPLIT if args.cameras == 30 \
        else scene_synth.default_split(args.cameras)
    root = scene_synth.synth_dataset(spec, args.out, split=split)
    n = args.timesteps * args.cameras
    print(f"wrote {n} images under {root}")
    return 0


def _cmd_convert_cmu(args) -> int:
    doc = dataset.convert_panoptic_calibration(args.calib, n_timesteps=args.timesteps,
                                               camera_types=(args.camera_type,))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(doc, indent=1))
    n = len({f["camera_index"] for f in doc["frames"]})
    print(f"converted {n} cameras to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _merge_train_config(args)
    timesteps = None
    if args.timestep_range:
        try:
            t0, t1 = (int(v) for v in args.timestep_range.split(":"))
        except ValueError as e:
            raise DataError(f"bad --timestep-range {args.timestep_range!r}") from e
        timesteps = list(range(t0, t1 + 1))
    archive = train_sequence(args.data, cfg, args.out, workers=args.workers,
                             timesteps=timesteps, log_dir=args.log_dir)
    print(f"archived {len(archive)} timesteps to {args.out}")
    archive.close()
    return 0


def _cmd_render(args) -> int:
    with archive_mod.Archive.open(args.archive) as arc:
        if args.path:
            try:
                requests = json.loads(Path(args.path).read_text())
            except (OSError, json.JSONDecodeError) as e:
                raise DataError(f"camera path {args.path}: {e}") from e
            out_dir = Path(args.out)
            out_dir.mkdir(parents=True, exist_ok=True)
            svc = service.RenderService(args.archive, background=args.background)
            svc.load()
            for i, doc in enumerate(requests):
                req = service.RenderRequest._from_dict(doc)
                (out_dir / f"frame_{i:04d}.png").write_bytes(svc.render_png(req))
            print(f"wrote {len(requests)} frames to {out_dir}")
            return 0

        if args.time is None:
            raise DataError("--time is required unless --path is given")
        if args.pose_from_view is not None:
            if not args.data:
                raise DataError("--pose-from-view needs --data to find the camera")
            tf = dataset.load_transforms(Path(args.data) / "transforms.json")
            if args.pose_from_view not in tf.cameras:
                raise DataError(f"view {args.pose_from_view} not in dataset")
            camera = tf.cameras[args.pose_from_view]
        elif args.position is not None and args.look_at is not None:
            pose = geometry.look_at_pose(args.position, args.look_at, args.up)
            camera = geometry.CameraModel.from_fov(args.width, args.height,
                                                   args.fov_x, pose)
        else:
            raise DataError("give --pose-from-view or --position/--look-at")
        field = arc.read_timestep(args.time)
        params = RenderParams(n_samples=args.samples, early_stop_transmittance=1e-4,
                              background=args.background)
        image = render_image(field, camera, params)
        dataset.imwrite_rgba(args.out, image.rgba)
        print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    with archive_mod.Archive.open(args.archive) as arc:
        params = RenderParams(n_samples=args.samples, early_stop_transmittance=1e-4)
        report = metrics.evaluate(arc, args.data, render_params=params)
    out = Path(args.out) if args.out else Path(args.archive).with_suffix(".report.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    print(report.to_table())
    print(f"report written to {out}")
    return 0


def _cmd_info(args) -> int:
    info = archive_mod.archive_info(args.archive)
    if args.json:
        print(json.dumps(info, indent=1))
    else:
        print(archive_mod.format_info(info))
    return 0


def _cmd_serve(args) -> int:
    service.serve(args.archive, host=args.host, port=args.port,
                  max_dim=args.max_dim, max_samples=args.max_samples)
    return 0


_COMMANDS = {
    "gen-cameras": _cmd_gen_cameras,
    "synth-scene": _cmd_synth_scene,
    "convert-cmu": _cmd_convert_cmu,
    "train": _cmd_train,
    "render": _cmd_render,
    "eval": _cmd_eval,
    "info": _cmd_info,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NumericError as e:
        print(f"chronofield: numeric failure: {e}", file=sys.stderr)
        return NUMERIC_EXIT
    except (DataError, ValueError, OSError) as e:
        print(f"chronofield: {e}", file=sys.stderr)
        return DATA_EXIT
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
