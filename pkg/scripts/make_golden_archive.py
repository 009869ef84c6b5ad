"""Regenerate the golden archive fixture and its expectation file.

Only run this when the on-disk format version changes; the point of the
fixture is that released versions keep parsing it bit-exactly.
"""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from chronofield import archive as A
from chronofield.encoding import GridConfig
from chronofield.field import FieldConfig, init_parameters, theta_layout


def main() -> None:
    out_dir = Path(__file__).resolve().parents[1] / "tests" / "data"
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = GridConfig(levels=2, channels=2, table_size=2 ** 8, r_min=4,
                      r_max_factor=8.0, half_extent=2.0)
    config = FieldConfig(grid=grid)
    path = out_dir / "golden.chrono"
    path.unlink(missing_ok=True)
    probes = {}
    rng = np.random.default_rng(2024)
    with A.Archive.create(path, config, scene_scale=0.5) as arc:
        for t in range(3):
            field = init_parameters(config, seed=100 + t, time_index=t)
            arc.append_timestep(field)
            flat = np.concatenate([field.theta[n].ravel()
                                   for n, _, _ in theta_layout(config)])
            idx = rng.choice(flat.size, size=8, replace=False)
            probes[str(t)] = [[int(i), float(flat[i])] for i in idx]
        info = arc.info()
    expect = {
        "timesteps": info["timesteps"],
        "config_digest": info["config_digest"],
        "parameter_count": info["parameter_count"],
        "probes": probes,
    }
    (out_dir / "golden_expect.json").write_text(json.dumps(expect, indent=1))
    print(f"wrote {path} ({path.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
