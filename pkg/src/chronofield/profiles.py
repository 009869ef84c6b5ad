"""Named configuration presets.

"paper" is the full-scale configuration (16 levels over a single shared
2^22-entry table, 19k/16.5k/14.5k iteration schedules depending on the
dataset, per-dataset world scales). "desk" fits an 8-core desktop CPU and is
what the end-to-end test suite trains; "tiny" is for CI-speed smoke runs.
"""

from __future__ import annotations

from .encoding import GridConfig
from .field import FieldConfig
from .renderer import RenderParams
from .trainer import TrainConfig

# iteration schedules for the published capture setups
PAPER_ITERATIONS = {
    "dancing-walking-standing": 19000,
    "soccer-penalty-kick": 16500,
    "soccer-multiplayer": 16500,
    "cmu-baseball-bat": 14500,
    "cmu-hand-gesture": 14500,
}
PAPER_SCALES = {
    "dancing-walking-standing": 0.3,
    "soccer-penalty-kick": 0.1,
    "soccer-multiplayer": 0.1,
    "cmu-baseball-bat": 0.006,
    "cmu-hand-gesture": 0.006,
}


def _paper() -> TrainConfig:
    grid = GridConfig(levels=16, channels=2, table_size=2 ** 22, r_min=16,
                      r_max_factor=2048.0, half_extent=2.0, per_level_tables=False)
    return TrainConfig(
        field=FieldConfig(grid=grid),
        iterations=19000,
        batch_rays=4096,
        render=RenderParams(n_samples=128, background=(1.0, 1.0, 1.0)),
        scene_scale=0.3,
    )


def _desk() -> TrainConfig:
    grid = GridConfig(levels=8, channels=2, table_size=2 ** 19, r_min=16,
                      r_max_factor=128.0, half_extent=2.0, per_level_tables=True)
    return TrainConfig(
        field=FieldConfig(grid=grid),
        iterations=2000,
        batch_rays=4096,
        render=RenderParams(n_samples=64, background=(1.0, 1.0, 1.0)),
    )


def _tiny() -> TrainConfig:
    grid = GridConfig(levels=4, channels=2, table_size=2 ** 14, r_min=16,
                      r_max_factor=32.0, half_extent=2.0, per_level_tables=True)
    return TrainConfig(
        field=FieldConfig(grid=grid),
        iterations=300,
        batch_rays=1024,
        render=RenderParams(n_samples=32, background=(1.0, 1.0, 1.0)),
    )


_BUILDERS = {"paper": _paper, "desk": _desk, "tiny": _tiny}

PROFILE_NAMES = tuple(_BUILDERS)


def profile(name: str) -> TrainConfig:
    if name not in _BUILDERS:
        raise ValueError(f"unknown profile {name!r}; choose from {PROFILE_NAMES}")
    return _BUILDERS[name]()
