"""Acceptance gate: every criterion runs at its stated tolerance and prints
one pass/fail line.

The desk-scale fixture trains the full 3-timestep experiment twice (3
workers, then 1 worker) because the archival-exactness and speedup criteria
compare the two runs. That is hours of compute on a laptop-class machine;
run this module with `-s` to watch the lines appear.
"""

import dataclasses
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "scripts"))

import run_desk_experiment as desk

from chronofield import dataset as ds
from chronofield import geometry, profiles, trainer
from chronofield.archive import Archive
from chronofield.encoding import GridConfig
from chronofield.field import FieldConfig, init_parameters, theta_layout, parameter_count
from chronofield.renderer import (COMPOSITE_RIEMANN, RenderParams, render_image,
                                  render_rays, render_rays_backward)
from chronofield.scene_synth import SceneSpec, Primitive, synth_dataset, default_split
from conftest import random_rays

CPUS = os.cpu_count() or 1


def report(name: str, ok: bool, detail: str = ""):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    print(line, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# formula conformance
# ---------------------------------------------------------------------------


def test_formula_conformance():
    t0 = time.perf_counter()
    theta5 = (geometry.GOLDEN_ANGLE * 5) % (2 * math.pi)
    ok_theta = abs(theta5 - 1.81966 * math.pi) < 1e-4 * math.pi
    angle_x, _ = geometry.fov_from_intrinsics(1920, 1080, 2666.67, 2666.67)
    ok_fov = abs(angle_x - 0.6911) < 5e-4
    elapsed = time.perf_counter() - t0
    report("formula conformance",
           ok_theta and ok_fov and elapsed < 1.0,
           f"theta5={theta5 / math.pi:.5f}pi, angle_x={angle_x:.4f} rad, "
           f"{elapsed * 1e3:.0f} ms")


# ---------------------------------------------------------------------------
# gradient suite
# ---------------------------------------------------------------------------


def test_gradient_suite_full_pipeline():
    t0 = time.perf_counter()
    grid = GridConfig(levels=3, channels=2, table_size=2 ** 10, r_min=4,
                      r_max_factor=8.0, half_extent=2.0)
    config = FieldConfig(grid=grid)
    params = RenderParams(n_samples=8, background=(1.0, 1.0, 1.0))
    checked = 0
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        field = init_parameters(config, seed=seed, dtype=np.float64)
        field.theta["table"] *= 2000.0
        origins, dirs = random_rays(rng, 4)
        targets = rng.random((4, 3))

        def loss_value():
            colors, _, _ = render_rays(field, origins, dirs, params)
            return trainer.photometric_loss(colors, targets)[0]

        colors, _, cache = render_rays(field, origins, dirs, params, want_cache=True)
        _, d_pred = trainer.photometric_loss(colors, targets)
        grads = render_rays_backward(field, cache, d_pred)

        flat_names = [n for n, _, _ in theta_layout(config)]
        # h small enough that no ReLU kink is crossed, probes large enough to
        # sit clear of the f64 difference-quotient noise floor
        h = 1e-6
        for _ in range(40):
            name = flat_names[rng.integers(len(flat_names))]
            g = grads[name].ravel()
            nz = np.nonzero(np.abs(g) > 1e-6)[0]
            if nz.size == 0:
                continue
            i = int(rng.choice(nz))
            flat = field.theta[name].ravel()
            old = flat[i]
            flat[i] = old + h
            up = loss_value()
            flat[i] = old - h
            down = loss_value()
            flat[i] = old
            fd = (up - down) / (2 * h)
            rel = abs(g[i] - fd) / max(abs(fd), 1e-6)
            worst = max(worst, rel)
            checked += 1
    elapsed = time.perf_counter() - t0
    report("gradient suite",
           checked >= 128 and worst < 1e-4 and elapsed < 120.0,
           f"{checked} parameters over 5 seeds, worst rel err {worst:.2e}, "
           f"{elapsed:.1f} s")


# ---------------------------------------------------------------------------
# quadrature invariants
# ---------------------------------------------------------------------------


def test_quadrature_invariants(toy_field64):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    origins, dirs = random_rays(rng, 10_000)
    params = RenderParams(n_samples=16)
    _, _, cache = render_rays(toy_field64, origins, dirs, params, want_cache=True)
    weights = cache.trans - cache.trans_next
    totals = weights.sum(axis=1) + cache.t_final
    ok_partition = np.abs(totals - 1.0).max() < 1e-5

    origins, dirs = random_rays(rng, 16)
    gaps = []
    for m in (16, 32, 64, 128):
        exact, _, _ = render_rays(toy_field64, origins, dirs,
                                  RenderParams(n_samples=m))
        rsum, _, _ = render_rays(toy_field64, origins, dirs,
                                 RenderParams(n_samples=m,
                                              compositing=COMPOSITE_RIEMANN))
        gaps.append(float(np.abs(exact - rsum).mean()))
    ratios = [b / a for a, b in zip(gaps, gaps[1:])]
    ok_halving = all(0.3 < r < 0.7 for r in ratios)
    elapsed = time.perf_counter() - t0
    report("quadrature invariants",
           ok_partition and ok_halving and elapsed < 60.0,
           f"max |sum w + T - 1| = {np.abs(totals - 1).max():.2e}, "
           f"halving ratios {[f'{r:.2f}' for r in ratios]}, {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# desk-scale experiment (shared by three criteria)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    data = out / "data"
    desk.make_desk_dataset(data)

    runs = {}
    for workers in (3, 1):
        archive_path = out / f"desk_w{workers}.chrono"
        runs[workers] = {
            "archive": archive_path,
            "seconds": desk.train_desk(data, archive_path, workers=workers),
        }
        print(f"[desk] workers={workers}: "
              f"{runs[workers]['seconds'] / 60:.1f} min", flush=True)
    report_obj = desk.evaluate_desk(runs[3]["archive"], data)
    return {"data": data, "runs": runs, "report": report_obj}


def test_desk_scale_reconstruction(desk_run):
    per_t = desk.per_timestep_means(desk_run["report"])
    ok_quality = all(v["psnr"] >= 24.0 and v["ssim"] >= 0.90 for v in per_t.values())
    minutes = desk_run["runs"][3]["seconds"] / 60
    ok_time = minutes <= 90.0
    detail = ", ".join(f"t{t}: {v['psnr']:.2f} dB / {v['ssim']:.3f}"
                       for t, v in per_t.items())
    report("desk-scale reconstruction", ok_quality and ok_time,
           f"{detail}; train {minutes:.1f} min (3 workers, {CPUS} cpu)")


def test_time_archival_exactness(desk_run, tmp_path):
    # a field archived before later timesteps exist re-renders bit-identically
    # after they are trained (checked at a fast scale), and worker count does
    # not change a single byte of the desk archives
    cfg = dataclasses.replace(profiles.profile("tiny"), iterations=12, batch_rays=64)
    spec = SceneSpec(
        primitives=[Primitive("sphere", (0.8, 0.2, 0.2), 0.4,
                              np.tile([0.0, 0.0, 0.2], (3, 1)))],
        n_timesteps=3, rig_cameras=4, resolution=(16, 16))
    root = synth_dataset(spec, tmp_path / "snap", split=default_split(4))
    first = tmp_path / "first.chrono"
    trainer.train_sequence(root, cfg, first, workers=1, timesteps=[0]).close()
    cam = ds.load_transforms(root / "transforms.json").cameras[0]
    params = RenderParams(n_samples=16)
    with Archive.open(first) as arc:
        snapshot = render_image(arc.read_timestep(0), cam, params).rgba.copy()

    full = tmp_path / "full.chrono"
    trainer.train_sequence(root, cfg, full, workers=1).close()
    with Archive.open(full) as arc:
        again = render_image(arc.read_timestep(0), cam, params).rgba
    ok_snapshot = np.array_equal(snapshot, again)

    a = desk_run["runs"][3]["archive"].read_bytes()
    b = desk_run["runs"][1]["archive"].read_bytes()
    ok_bytes = a == b
    report("time-archival exactness", ok_snapshot and ok_bytes,
           f"snapshot render unchanged: {ok_snapshot}; "
           f"parallel == sequential archive bytes: {ok_bytes} "
           f"({len(a):,} bytes)")


def test_parallel_over_time_speedup(desk_run):
    seq = desk_run["runs"][1]["seconds"]
    par = desk_run["runs"][3]["seconds"]
    ratio = par / seq
    if CPUS < 3:
        print(f"[SKIP] parallel-over-time speedup: host has {CPUS} CPU core(s); "
              f"3 workers cannot beat 1 (measured ratio {ratio:.2f})", flush=True)
        pytest.skip(f"needs >= 3 cores, host has {CPUS}")
    report("parallel-over-time speedup", ratio <= 0.45,
           f"3 workers / 1 worker wall-clock ratio {ratio:.2f}")


# ---------------------------------------------------------------------------
# archive accounting
# ---------------------------------------------------------------------------


def test_archive_accounting(tmp_path):
    grid = GridConfig(levels=2, channels=2, table_size=2 ** 8, r_min=4,
                      r_max_factor=8.0, half_extent=2.0)
    config = FieldConfig(grid=grid)
    field = init_parameters(config, seed=12)
    field.theta["table"] *= 2000.0
    path = tmp_path / "acc.chrono"
    with Archive.create(path, config) as arc:
        arc.append_timestep(field)
        info = arc.info()
        back = arc.read_timestep(0)
    ok_payload = info["payload_bytes_per_timestep"] == parameter_count(config) * 4

    cam = geometry.CameraModel.from_fov(
        16, 12, 0.8, geometry.look_at_pose((0, 0, 4), (0, 0, 0), up=(0, 1, 0)))
    params = RenderParams(n_samples=8)
    ok_render = np.array_equal(render_image(field, cam, params).rgba,
                               render_image(back, cam, params).rgba)

    golden = Path(__file__).parent / "data" / "golden.chrono"
    expect = json.loads((Path(__file__).parent / "data" /
                         "golden_expect.json").read_text())
    with Archive.open(golden) as arc:
        ginfo = arc.info()
        ok_golden = (ginfo["timesteps"] == expect["timesteps"]
                     and ginfo["config_digest"] == expect["config_digest"])
        for t, probes in expect["probes"].items():
            f = arc.read_timestep(int(t))
            flat = np.concatenate([f.theta[n].ravel()
                                   for n, _, _ in theta_layout(f.config)])
            ok_golden &= all(flat[int(i)] == np.float32(v) for i, v in probes)
    report("archive accounting", ok_payload and ok_render and ok_golden,
           f"payload {info['payload_bytes_per_timestep']:,} B = "
           f"{parameter_count(config):,} x 4; round-trip render identical: "
           f"{ok_render}; golden fixture bit-exact: {ok_golden}")


# ---------------------------------------------------------------------------
# calibration conversion
# ---------------------------------------------------------------------------


def test_cmu_conversion():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    entries = []
    centers = []
    for i in range(8):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] *= -1
        c = rng.normal(0, 250.0, 3)  # centimeter-scale capture stage
        centers.append(c)
        entries.append({
            "name": f"00_{i:02d}", "type": "hd", "resolution": [1920, 1080],
            "K": [[1400.0, 0, 960.0], [0, 1400.0, 540.0], [0, 0, 1]],
            "R": q.tolist(), "t": (-q @ c).tolist(),
        })
    doc = ds.convert_panoptic_calibration({"cameras": entries})
    out = np.array([np.asarray(f["transform_matrix"])[:3, 3] for f in doc["frames"]])
    centers = np.array(centers)
    before = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
    after = np.linalg.norm(out[:, None] - out[None], axis=-1)
    ok_iso = bool(np.abs(after - before).max() <= 1e-9 * (1.0 + before.max()))

    r_y_to_z = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, -1, 0, 0], [0, 0, 0, 1]],
                        dtype=float)
    r_x_180 = np.array([[1, 0, 0, 0], [0, -1, 0, 0], [0, 0, -1, 0], [0, 0, 0, 1]],
                       dtype=float)
    ok_product = np.array_equal(geometry.PANOPTIC_ALIGNMENT, r_x_180 @ r_y_to_z)
    # converted pose equals P applied to the inverted extrinsics
    m0 = np.eye(4)
    m0[:3, :3] = np.asarray(entries[0]["R"])
    m0[:3, 3] = np.asarray(entries[0]["t"])
    expect = geometry.PANOPTIC_ALIGNMENT @ np.linalg.inv(m0)
    got = np.asarray(doc["frames"][0]["transform_matrix"])
    ok_pose = np.allclose(got, expect, atol=1e-9)
    elapsed = time.perf_counter() - t0
    report("cmu conversion", ok_iso and ok_product and ok_pose and elapsed < 1.0,
           f"max distance drift {np.abs(after - before).max():.2e} over "
           f"{before.max():.0f} cm baseline, alignment product exact, "
           f"{elapsed * 1e3:.0f} ms")
