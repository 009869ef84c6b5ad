"""chronofield: per-timestep radiance fields with a random-access time archive."""

__version__ = "0.1.0"
