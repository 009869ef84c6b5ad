import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chronofield import encoding as e

# -- level schedule --------------------------------------------------------------


def test_geometric_level_schedule():
    cfg = e.GridConfig(levels=16, channels=2, table_size=2 ** 22, r_min=16,
                       r_max_factor=2048.0, half_extent=2.0)
    levels = e.grid_levels(cfg)
    # scalar oracle for the growth factor
    alpha = (4096.0 / 16.0) ** (1.0 / 15.0)
    assert abs(alpha - 1.4473) < 1e-4
    assert levels[0] == 16
    assert levels[-1] == 4096
    assert np.all(np.diff(levels) >= 0)
    np.testing.assert_array_equal(levels,
                                  np.floor(16 * alpha ** np.arange(16) + 1e-6))


def test_single_level_grid():
    cfg = e.GridConfig(levels=1, channels=1, table_size=2 ** 4, r_min=8,
                       r_max_factor=4.0, half_extent=2.0)
    np.testing.assert_array_equal(e.grid_levels(cfg), [8])


def test_grid_config_validation():
    with pytest.raises(ValueError):
        e.GridConfig(table_size=1000)  # not a power of two
    with pytest.raises(ValueError):
        e.GridConfig(levels=0)
    with pytest.raises(ValueError):
        e.GridConfig(r_min=32, r_max_factor=1.0, half_extent=2.0)  # r_max < r_min


# -- lattice indexing --------------------------------------------------------------


def test_dense_indexing_row_major():
    t = 2 ** 19
    assert e.lattice_index(0, 16, (0, 0, 0), t) == 0
    assert e.lattice_index(0, 16, (1, 0, 0), t) == 1
    assert e.lattice_index(0, 16, (0, 1, 0), t) == 17
    assert e.lattice_index(0, 16, (0, 0, 1), t) == 17 * 17


def _hash_oracle(v, t):
    # independent reimplementation: wrapping 32-bit products, xor, mask
    hx = v[0] & 0xFFFFFFFF
    hy = (v[1] * 2654435761) & 0xFFFFFFFF
    hz = (v[2] * 805459861) & 0xFFFFFFFF
    return ((hx ^ hy ^ hz) & 0xFFFFFFFF) % t


def test_hashed_indexing_against_oracle():
    t = 2 ** 19
    resolution = 256  # (257)^3 > 2^19 so this level hashes
    assert not e.level_is_dense(resolution, t)
    assert e.lattice_index(5, resolution, (3, 7, 11), t) == _hash_oracle((3, 7, 11), t)
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = tuple(int(x) for x in rng.integers(0, resolution + 1, 3))
        assert e.lattice_index(1, resolution, v, t) == _hash_oracle(v, t)


def test_lattice_index_bounds():
    with pytest.raises(ValueError):
        e.lattice_index(0, 16, (17, 0, 0), 2 ** 10)
    with pytest.raises(ValueError):
        e.lattice_index(0, 16, (0, -1, 0), 2 ** 10)


def test_dense_levels_collision_free():
    t = 2 ** 12
    resolution = 14  # 15^3 = 3375 <= 4096
    assert e.level_is_dense(resolution, t)
    seen = set()
    for x in range(resolution + 1):
        for y in range(resolution + 1):
            for z in range(resolution + 1):
                seen.add(e.lattice_index(0, resolution, (x, y, z), t))
    assert len(seen) == (resolution + 1) ** 3


# -- position encoding ---------------------------------------------------------------


@pytest.fixture
def small_cfg():
    return e.GridConfig(levels=3, channels=2, table_size=2 ** 8, r_min=2,
                        r_max_factor=8.0, half_extent=2.0)


@pytest.fixture
def random_table(small_cfg):
    rng = np.random.default_rng(5)
    return e.HashTable(rng.normal(0, 1, small_cfg.table_entries).astype(np.float64),
                       small_cfg)


def test_zero_table_gives_zero_features(small_cfg):
    table = e.HashTable.zeros(small_cfg)
    x = np.array([[0.3, -0.7, 1.1]])
    np.testing.assert_array_equal(e.encode_position(x, table),
                                  np.zeros((1, small_cfg.feature_dim), np.float32))


def test_corner_point_returns_corner_entry(random_table, small_cfg):
    # the box corner normalizes to 1.0 and lands on lattice corner (r, r, r)
    # at every level, whatever the resolution
    x = np.array([[2.0, 2.0, 2.0]])
    feats = e.encode_position(x, random_table)
    res = e.grid_levels(small_cfg)
    for l, r in enumerate(res):
        corner = (int(r),) * 3
        idx = e.lattice_index(l, int(r), corner, small_cfg.table_size)
        expect = random_table.slice_view(l)[idx]
        np.testing.assert_allclose(feats[0, 2 * l:2 * l + 2], expect, atol=1e-12)


def _trilinear_oracle(x, table: e.HashTable, cfg: e.GridConfig):
    """Loop-based reference interpolation."""
    res = e.grid_levels(cfg)
    xn = (np.asarray(x) + cfg.half_extent) / (2 * cfg.half_extent)
    out = np.zeros(cfg.feature_dim, dtype=np.float64)
    for l, r in enumerate(res):
        scaled = xn * r
        base = np.minimum(np.floor(scaled).astype(int), r - 1)
        frac = scaled - base
        acc = np.zeros(cfg.channels)
        for cx in (0, 1):
            for cy in (0, 1):
                for cz in (0, 1):
                    w = ((frac[0] if cx else 1 - frac[0])
                         * (frac[1] if cy else 1 - frac[1])
                         * (frac[2] if cz else 1 - frac[2]))
                    corner = (base[0] + cx, base[1] + cy, base[2] + cz)
                    idx = e.lattice_index(l, int(r), corner, cfg.table_size)
                    acc += w * table.slice_view(l)[idx]
        out[l * cfg.channels:(l + 1) * cfg.channels] = acc
    return out


def test_encode_matches_trilinear_oracle(random_table, small_cfg):
    rng = np.random.default_rng(11)
    xs = rng.uniform(-2, 2, size=(40, 3))
    feats = e.encode_position(xs, random_table)
    for i, x in enumerate(xs):
        np.testing.assert_allclose(feats[i], _trilinear_oracle(x, random_table, small_cfg),
                                   atol=1e-6)


def test_encode_continuity(random_table):
    rng = np.random.default_rng(3)
    x = rng.uniform(-1.9, 1.9, size=(30, 3))
    dx = rng.normal(0, 1, size=(30, 3))
    dx /= np.linalg.norm(dx, axis=1, keepdims=True)
    eps = 1e-7 * 4.0
    f1 = e.encode_position(x, random_table)
    f2 = e.encode_position(x + eps * dx, random_table)
    bound = 1e-4 * np.abs(random_table.entries).max()
    assert np.abs(f1 - f2).max() < bound


def test_encode_deterministic(random_table):
    x = np.random.default_rng(0).uniform(-2, 2, size=(16, 3))
    a = e.encode_position(x, random_table)
    b = e.encode_position(x, random_table)
    np.testing.assert_array_equal(a, b)


def test_encode_channels_other_than_two(small_cfg):
    cfg = e.GridConfig(levels=2, channels=3, table_size=2 ** 8, r_min=2,
                       r_max_factor=4.0, half_extent=2.0)
    rng = np.random.default_rng(9)
    table = e.HashTable(rng.normal(0, 1, cfg.table_entries), cfg)
    xs = rng.uniform(-2, 2, size=(10, 3))
    feats = e.encode_position(xs, table)
    for i, x in enumerate(xs):
        np.testing.assert_allclose(feats[i], _trilinear_oracle(x, table, cfg), atol=1e-6)


def test_shared_table_layout():
    cfg = e.GridConfig(levels=4, channels=2, table_size=2 ** 8, r_min=2,
                       r_max_factor=8.0, half_extent=2.0, per_level_tables=False)
    assert cfg.table_entries == 2 ** 8 * 2
    rng = np.random.default_rng(4)
    table = e.HashTable(rng.normal(0, 1, cfg.table_entries), cfg)
    xs = rng.uniform(-2, 2, size=(10, 3))
    feats = e.encode_position(xs, table)
    for i, x in enumerate(xs):
        np.testing.assert_allclose(feats[i], _trilinear_oracle(x, table, cfg), atol=1e-6)


# -- encoding gradients ----------------------------------------------------------------


def test_zero_upstream_gives_empty_contributions(random_table, small_cfg):
    x = np.random.default_rng(0).uniform(-2, 2, size=(8, 3))
    grad = e.encode_position_backward(x, np.zeros((8, small_cfg.feature_dim)),
                                      random_table)
    assert not grad.any()


def test_corner_point_gradient_lands_on_one_entry(random_table, small_cfg):
    x = np.array([[2.0, 2.0, 2.0]])
    upstream = np.ones((1, small_cfg.feature_dim))
    grad = e.encode_position_backward(x, upstream, random_table)
    res = e.grid_levels(small_cfg)
    for l, r in enumerate(res):
        nnz = np.nonzero(grad[l * small_cfg.table_size * 2:
                              (l + 1) * small_cfg.table_size * 2])[0]
        assert len(nnz) == 2  # both channels of exactly one corner entry
        corner = (int(r),) * 3
        idx = e.lattice_index(l, int(r), corner, small_cfg.table_size)
        assert set(nnz) == {idx * 2, idx * 2 + 1}


@pytest.mark.parametrize("per_level", [True, False])
def test_table_gradient_matches_finite_differences(per_level):
    cfg = e.GridConfig(levels=3, channels=2, table_size=2 ** 8, r_min=2,
                       r_max_factor=8.0, half_extent=2.0, per_level_tables=per_level)
    rng = np.random.default_rng(21)
    table = e.HashTable(rng.normal(0, 1, cfg.table_entries), cfg)
    xs = rng.uniform(-2, 2, size=(6, 3))
    upstream = rng.normal(0, 1, size=(6, cfg.feature_dim))

    grad = e.encode_position_backward(xs, upstream, table)

    def loss():
        return float(np.sum(e.encode_position(xs, table) * upstream))

    h = 1e-4
    idx = rng.choice(np.nonzero(grad)[0], size=40, replace=False)
    for i in idx:
        old = table.entries[i]
        table.entries[i] = old + h
        up = loss()
        table.entries[i] = old - h
        down = loss()
        table.entries[i] = old
        fd = (up - down) / (2 * h)
        assert abs(grad[i] - fd) / max(abs(fd), 1e-8) < 1e-5


def test_gradient_accumulates_into_buffer(random_table, small_cfg):
    x = np.random.default_rng(2).uniform(-2, 2, size=(4, 3))
    up = np.ones((4, small_cfg.feature_dim))
    g1 = e.encode_position_backward(x, up, random_table)
    buf = g1.copy()
    e.encode_position_backward(x, up, random_table, grad=buf)
    np.testing.assert_allclose(buf, 2 * g1, atol=1e-12)


# -- spherical harmonics ------------------------------------------------------------------


def test_sh_constant_component():
    rng = np.random.default_rng(0)
    d = rng.normal(size=(20, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    feats = e.sh_encode(d)
    np.testing.assert_allclose(feats[:, 0], 0.28209479, atol=1e-8)


def test_sh_axis_symmetry():
    f = e.sh_encode(np.array([0.0, 0.0, 1.0]))
    nonzero = {0, 2, 6, 12}  # the m = 0 component of each degree
    for i in range(16):
        if i in nonzero:
            assert abs(f[i]) > 1e-3
        else:
            assert abs(f[i]) < 1e-12


def test_sh_addition_theorem():
    # independent check of the basis constants: sum_m Y_lm^2 = (2l+1)/(4pi)
    rng = np.random.default_rng(8)
    d = rng.normal(size=(50, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    f = e.sh_encode(d)
    for l, sl in ((0, slice(0, 1)), (1, slice(1, 4)), (2, slice(4, 9)), (3, slice(9, 16))):
        np.testing.assert_allclose(np.sum(f[:, sl] ** 2, axis=1),
                                   (2 * l + 1) / (4 * math.pi), atol=1e-6)


def test_sh_matches_scipy_magnitudes():
    try:
        from scipy.special import sph_harm_y

        def harmonic(l, m, theta, phi):
            return sph_harm_y(l, abs(m), theta, phi)
    except ImportError:  # scipy < 1.15
        from scipy.special import sph_harm

        def harmonic(l, m, theta, phi):
            return sph_harm(abs(m), l, phi, theta)

    rng = np.random.default_rng(3)
    d = rng.normal(size=(10, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    feats = e.sh_encode(d)
    theta = np.arccos(np.clip(d[:, 2], -1, 1))  # polar
    phi = np.arctan2(d[:, 1], d[:, 0])          # azimuth
    order = [(0, 0), (1, -1), (1, 0), (1, 1), (2, -2), (2, -1), (2, 0), (2, 1), (2, 2),
             (3, -3), (3, -2), (3, -1), (3, 0), (3, 1), (3, 2), (3, 3)]
    for col, (l, m) in enumerate(order):
        y = harmonic(l, m, theta, phi)
        ref = np.sqrt(2) * (y.imag if m < 0 else y.real) if m != 0 else y.real
        np.testing.assert_allclose(np.abs(feats[:, col]), np.abs(ref), atol=1e-6)


def test_sh_norm_matches_numeric_oracle():
    rng = np.random.default_rng(5)
    d = rng.normal(size=(20, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    norms = np.linalg.norm(e.sh_encode(d), axis=1)
    # addition theorem gives the exact norm of the full degree-0..3 stack
    expect = math.sqrt(sum((2 * l + 1) for l in range(4)) / (4 * math.pi))
    np.testing.assert_allclose(norms, expect, atol=1e-6)


def test_sh_full_turn_invariance():
    d = np.array([0.3, -0.5, 0.81])
    d /= np.linalg.norm(d)
    angle = 2 * math.pi
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    np.testing.assert_allclose(e.sh_encode(rot @ d), e.sh_encode(d), atol=1e-12)


def test_sh_normalizes_with_warning():
    with pytest.warns(UserWarning, match="non-unit"):
        f = e.sh_encode(np.array([0.0, 0.0, 2.0]))
    np.testing.assert_allclose(f, e.sh_encode(np.array([0.0, 0.0, 1.0])), atol=1e-12)


@given(st.integers(0, 100000))
@settings(max_examples=30, deadline=None)
def test_sh_bounded(seed):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=3)
    n = np.linalg.norm(d)
    if n < 1e-6:
        return
    f = e.sh_encode(d / n)
    assert np.all(np.isfinite(f))
    assert np.abs(f).max() < 1.5
