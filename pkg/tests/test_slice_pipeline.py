import numpy as np
import pytest
from scipy import ndimage

from oracles import edt_bruteforce, superlevel_h1_bruteforce
from topoatrophy.mask_io import MaskValidationError, VoxelMask
from topoatrophy.ph_core import bottleneck
from topoatrophy.slice_pipeline import cubical_complex, edt2d, extract_slices, superlevel_h1


def test_single_voxel_slices():
    d = np.zeros((5, 5, 5), bool)
    d[1, 2, 3] = True
    for axis in ("sagittal", "coronal", "axial"):
        s = extract_slices(VoxelMask(d), axis)
        assert len(s) == 1 and s[0].bits.sum() == 1


def test_cube_slices():
    d = np.zeros((14, 14, 14), bool)
    d[2:12, 2:12, 2:12] = True
    for axis in (0, 1, 2):
        s = extract_slices(VoxelMask(d), axis)
        assert len(s) == 10 and all(x.dims == (10, 10) and x.bits.all() for x in s)
        assert [x.index for x in s] == list(range(2, 12))


def test_slice_counting_identity():
    rng = np.random.default_rng(0)
    for _ in range(10):
        m = VoxelMask(rng.random((9, 11, 7)) < 0.3)
        for axis in range(3):
            assert sum(int(s.bits.sum()) for s in extract_slices(m, axis)) == m.popcount()


def test_empty_mask_rejected():
    with pytest.raises(MaskValidationError):
        extract_slices(VoxelMask(np.zeros((3, 3, 3))), 0)


def test_bad_axis():
    with pytest.raises(ValueError):
        extract_slices(VoxelMask(np.ones((3, 3, 3))), "oblique")


def test_edt_examples():
    f = edt2d(np.ones((3, 3), bool))
    assert f.values[1, 1] == 2.0
    ring = f.values.copy()
    ring[1, 1] = 1.0
    assert np.all(ring == 1.0)
    assert edt2d(np.ones((1, 1), bool)).values[0, 0] == 1.0
    assert not edt2d(np.zeros((4, 4), bool)).values.any()


def test_edt_matches_bruteforce_exactly():
    rng = np.random.default_rng(1)
    for k in range(12):
        bits = rng.random((32, 32)) < rng.uniform(0.3, 0.95)
        sp = (1.0, 1.0) if k % 3 else (2.0, 2.0)
        got = edt2d(bits, sp).values
        assert np.array_equal(got, edt_bruteforce(bits, sp))


def test_edt_invariants():
    rng = np.random.default_rng(2)
    bits = rng.random((20, 20)) < 0.7
    v = edt2d(bits, (2.0, 2.0)).values
    assert np.all(v[~bits] == 0) and np.all(v[bits] >= 2.0)


def test_solid_disk_has_no_h1():
    y, x = np.mgrid[:21, :21]
    disk = (x - 10) ** 2 + (y - 10) ** 2 <= 64
    assert len(superlevel_h1(edt2d(disk))) == 0


def test_one_pixel_ring():
    ring = np.zeros((7, 7), bool)
    ring[1:6, 1:6] = True
    ring[2:5, 2:5] = False
    f = edt2d(ring)
    assert np.all(f.values[ring] == 1.0)
    for method in ("dual", "reduce"):
        d = superlevel_h1(f, method)
        assert d.pairs.tolist() == [[1.0, 0.0]] and d.persistence.tolist() == [1.0]


def test_threshold_sweep_oracle():
    rng = np.random.default_rng(3)
    for k in range(60):
        f = rng.integers(0, 4, (8, 8)) * 0.5 if k % 2 else rng.random((8, 8)) * 3
        expect = superlevel_h1_bruteforce(f)
        for method in ("dual", "reduce"):
            assert sorted(map(tuple, superlevel_h1(f, method).pairs.tolist())) == expect


def test_pairs_bounds_and_no_essential():
    rng = np.random.default_rng(4)
    for _ in range(20):
        bits = ndimage.binary_opening(rng.random((24, 24)) < 0.7)
        f = edt2d(bits)
        d = superlevel_h1(f, "reduce")
        assert len(d.essential) == 0
        if len(d):
            assert np.all(d.deaths >= 0) and np.all(d.deaths < d.births)
            assert d.births.max() <= f.values.max()


def test_erosion_never_raises_max_birth():
    rng = np.random.default_rng(5)
    for _ in range(30):
        bits = rng.random((20, 20)) < 0.75
        less = bits & (rng.random((20, 20)) < 0.9)
        b = superlevel_h1(edt2d(less))
        # depth can only shrink, so no hole of the eroded slice is born deeper
        assert edt2d(less).values.max() <= edt2d(bits).values.max()
        if len(b):
            assert b.births.max() <= edt2d(bits).values.max()


def test_stability_on_edt_fields():
    rng = np.random.default_rng(6)
    for _ in range(20):
        f = edt2d(rng.random((16, 16)) < 0.7).values
        eps = 0.1
        g = np.clip(f + rng.uniform(-eps, eps, f.shape), 0, None)
        assert bottleneck(superlevel_h1(f), superlevel_h1(g)) <= eps + 1e-9


def test_cubical_complex_is_valid():
    cx = cubical_complex(np.random.default_rng(7).random((4, 5)))
    cx.validate()
    assert cx.direction == "superlevel"
    # (6x7 padded pixels): 42 squares, 7*7+6*8 edges, 7*8 vertices
    assert np.bincount(cx.dims).tolist() == [56, 97, 42]
