import numpy as np
import pytest

from topoatrophy.mask_io import DEFAULT_LABEL_MAP, MaskValidationError, VoxelMask
from topoatrophy.synth import (
    ErosionSpec,
    PhantomSpec,
    atrophy,
    boundary_layer,
    erode,
    erosion_manifest,
    erosion_series,
    individual_specs,
    make_phantom,
    phantom_labels,
)


def test_boundary_layer_of_cube():
    d = np.zeros((7, 7, 7), bool)
    d[1:6, 1:6, 1:6] = True
    b = boundary_layer(VoxelMask(d))
    assert b.popcount() == 125 - 27
    full = boundary_layer(VoxelMask(np.ones((3, 3, 3), bool)))
    assert full.popcount() == 26  # volume border counts as exposed


def test_erode_counts_and_subset():
    d = np.zeros((9, 9, 9), bool)
    d[1:8, 1:8, 1:8] = True
    m = VoxelMask(d)
    nb = boundary_layer(m).popcount()
    for f in (0.0, 0.1, 0.5, 1.0):
        e = erode(m, f, 3)
        assert m.popcount() - e.popcount() == int(np.floor(f * nb + 0.5))
        assert not np.any(e.data & ~m.data)
    assert erode(m, 1.0, 0).popcount() == 125
    with pytest.raises(ValueError):
        erode(m, 1.5, 0)


def test_round_half_up():
    d = np.zeros((4, 4, 4), bool)
    d[1, 1, 1:3] = True  # two boundary voxels
    assert erode(VoxelMask(d), 0.25, 0).popcount() == 1  # 0.5 rounds up
    assert erode(VoxelMask(d), 0.2, 0).popcount() == 2
    assert erode(VoxelMask(d), 0.75, 0).popcount() == 0


def test_series_nested_and_reproducible():
    par, _ = make_phantom(individual_specs(1, 2, dims=(24, 24, 24))[0])
    spec = ErosionSpec((0.0, 0.3, 0.6, 1.0), seed=9)
    s = erosion_series(par, spec)
    assert s[0].popcount() == par.popcount()
    for a, b in zip(s, s[1:]):
        assert not np.any(b.data & ~a.data)
    assert all(np.array_equal(a.data, b.data) for a, b in zip(s, erosion_series(par, spec)))
    assert all(np.array_equal(x.data, erode(par, f, 9).data) for x, f in zip(s, spec.fractions))
    other = erosion_series(par, spec, replicate=1)
    assert not np.array_equal(other[1].data, s[1].data)


def test_erosion_spec_validation():
    with pytest.raises(ValueError):
        ErosionSpec((0.5, 0.25))
    with pytest.raises(ValueError):
        ErosionSpec((0.0, 1.2))
    with pytest.raises(ValueError):
        ErosionSpec(replicates=0)


def test_shell_phantom_geometry():
    spec = PhantomSpec("ellipsoid-shell", (32, 32, 32), 1.0, (12.0, 12.0, 12.0), rind=2.0, inner=0.5)
    par, csf = make_phantom(spec)
    assert not np.any(par.data & csf.data)
    vol = 4 / 3 * np.pi * (12**3 - 6**3)
    assert abs(par.popcount() - vol) / vol < 0.03
    # the cavity is one CSF component, the rind another
    from scipy import ndimage

    assert ndimage.label(csf.data)[1] == 2


def test_torus_and_cavity_phantoms():
    t = PhantomSpec("ring-torus", (32, 32, 32), 1.0, (14.0, 14.0, 10.0), torus=(7.0, 2.2))
    par, csf = make_phantom(t)
    vol = 2 * np.pi**2 * 7 * 2.2**2
    assert abs(csf.popcount() - vol) / vol < 0.1
    c = PhantomSpec("nested-cavities", (32, 32, 32), 1.0, (14.0, 14.0, 14.0), cavities=(((5, 0, 0), (2, 2, 2)),))
    par, csf = make_phantom(c)
    assert csf.popcount() > 0 and not np.any(par.data & csf.data)


def test_phantom_validation():
    with pytest.raises(MaskValidationError):
        PhantomSpec("blob")
    with pytest.raises(MaskValidationError):
        PhantomSpec("ellipsoid-shell", (16, 16, 16), 1.0, (10.0, 5.0, 5.0))
    with pytest.raises(MaskValidationError):
        PhantomSpec("nested-cavities", cavities=(((20, 0, 0), (5, 5, 5)),))
    with pytest.raises(MaskValidationError):
        PhantomSpec("ring-torus", torus=(18.0, 5.0))


def test_labels_and_atrophy():
    par, csf = make_phantom(individual_specs(1, 0, dims=(32, 32, 32))[0])
    lab = phantom_labels(par, csf, cortex_mm=1.0)
    gm, wm = lab.labels == DEFAULT_LABEL_MAP["gm"], lab.labels == DEFAULT_LABEL_MAP["wm"]
    assert np.array_equal(gm | wm, par.data) and gm.any() and wm.any()
    e = erode(par, 0.5, 1)
    new = atrophy(par, csf, e)
    assert new.popcount() == csf.popcount() + par.popcount() - e.popcount()
    assert not np.any(new.data & e.data)


def test_individual_specs():
    a = individual_specs(3, 5)
    assert a == individual_specs(3, 5) and a != individual_specs(3, 6)
    assert len({s.radii for s in a}) == 3
    assert all(len(s.cavities) == 26 for s in a)
    # geometry scales with the field of view
    small = individual_specs(1, 5, dims=(32, 32, 32))[0]
    assert np.allclose(np.asarray(small.radii), np.round(np.asarray(a[0].radii) / 2, 2), atol=0.01)


def test_erosion_manifest_record():
    spec = individual_specs(1, 1, dims=(24, 24, 24))[0]
    par, csf = make_phantom(spec)
    e = erode(par, 0.25, 4)
    rec = erosion_manifest(spec, 0.25, 4, par, e, csf)
    pc = rec["popcounts"]
    assert pc["removed"] == par.popcount() - e.popcount() and rec["nested"] and rec["spec"]["kind"] == "nested-cavities"
    assert erosion_manifest({"source": "x"}, 0.0, 0, par, par, csf)["spec"] == {"source": "x"}


def test_boundary_examples():
    one = np.zeros((3, 3, 3), bool)
    one[1, 1, 1] = True
    assert np.array_equal(boundary_layer(VoxelMask(one)).data, one)
    slab = np.zeros((6, 6, 6), bool)
    slab[:, :, 2:4] = True
    assert np.array_equal(boundary_layer(VoxelMask(slab)).data, slab)
    rng = np.random.default_rng(0)
    m = VoxelMask(rng.random((10, 10, 10)) < 0.6)
    assert not np.any(boundary_layer(m).data & ~m.data)


def test_erode_cube_examples():
    cube = VoxelMask(np.ones((3, 3, 3), bool))
    assert np.argwhere(erode(cube, 1.0, 0).data).tolist() == [[1, 1, 1]]
    assert np.array_equal(erode(cube, 0.0, 0).data, cube.data)
    half = erode(cube, 0.5, 8)
    assert cube.popcount() - half.popcount() == 13
    assert np.array_equal(half.data, erode(cube, 0.5, 8).data)


def test_single_cavity_volume_and_random_disjointness():
    spec = PhantomSpec("nested-cavities", (40, 40, 40), 1.0, (16.0, 16.0, 16.0), cavities=(((0.3, -0.2, 0.1), (6, 6, 6)),))
    _, csf = make_phantom(spec)
    vol = 4 / 3 * np.pi * 6**3
    band = 4 * np.pi * 6**2 * np.sqrt(3) / 2  # surface times half a voxel diagonal
    assert abs(csf.popcount() - vol) <= band
    solid, empty = make_phantom(PhantomSpec("ellipsoid-shell", (24, 24, 24), 1.0, (10.0, 9.0, 8.0)))
    assert empty.popcount() == 0 and solid.popcount() > 0
    rng = np.random.default_rng(1)
    for i in range(50):
        kind = ("ellipsoid-shell", "nested-cavities", "ring-torus")[i % 3]
        radii = tuple(rng.uniform(7, 10, 3))
        kw = {"rind": float(rng.uniform(0, 1.5))}
        if kind == "ellipsoid-shell":
            kw["inner"] = float(rng.uniform(0, 0.8))
        elif kind == "nested-cavities":
            kw["cavities"] = (((float(rng.uniform(-2, 2)), 0.0, 0.0), (2.0, 2.5, 1.5)),)
        else:
            kw["torus"] = (3.5, 1.5)
        par, csf = make_phantom(PhantomSpec(kind, (24, 24, 24), 1.0, radii, **kw))
        assert not np.any(par.data & csf.data)
