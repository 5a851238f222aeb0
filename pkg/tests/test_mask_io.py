import nibabel as nib
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from topoatrophy.mask_io import (
    LabelVolume,
    MaskFormatError,
    MaskValidationError,
    ResourceLimitError,
    VoxelMask,
    csf_complement,
    csf_fraction,
    load_labels,
    load_mask,
    parse_label_map,
    save_mask,
    union_masks,
    validate_isotropic,
)


def _nifti(path, data, zooms=(1.0, 1.0, 1.0), dtype=np.uint8):
    img = nib.Nifti1Image(np.asarray(data, dtype=dtype), np.diag(list(zooms) + [1.0]))
    img.header.set_zooms(zooms)
    nib.save(img, str(path))
    return path


def test_load_empty_label(tmp_path):
    p = _nifti(tmp_path / "z.nii", np.zeros((4, 4, 4)))
    assert load_mask(p, label="gm").popcount() == 0


def test_load_single_voxel_label(tmp_path):
    d = np.zeros((4, 4, 4), np.int16)
    d[1, 2, 3] = 2
    m = load_mask(_nifti(tmp_path / "s.nii.gz", d, dtype=np.int16), label="gm")
    assert m.popcount() == 1 and m.data[1, 2, 3]


def test_load_spacing_and_custom_map(tmp_path):
    d = np.zeros((3, 3, 3), np.int16)
    d[0, 0, 0] = 7
    p = _nifti(tmp_path / "a.nii", d, zooms=(2.0, 2.0, 2.0), dtype=np.int16)
    m = load_mask(p, label="csf", label_map={"csf": 7, "gm": 2, "wm": 3})
    assert m.spacing == (2.0, 2.0, 2.0) and m.popcount() == 1
    assert load_mask(p, label=7).popcount() == 1


def test_unsupported_dtype(tmp_path):
    p = _nifti(tmp_path / "f.nii", np.zeros((2, 2, 2)), dtype=np.float64)
    with pytest.raises(MaskFormatError):
        load_mask(p)


def test_memory_cap(tmp_path):
    p = _nifti(tmp_path / "big.nii", np.zeros((8, 8, 8)))
    with pytest.raises(ResourceLimitError):
        load_mask(p, memory_cap=100)


def test_nonpositive_spacing():
    with pytest.raises(MaskValidationError):
        VoxelMask(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))


def test_label_volume_rejects_unknown_labels():
    with pytest.raises(MaskValidationError):
        LabelVolume(np.full((2, 2, 2), 9))


def test_load_labels(tmp_path):
    d = np.zeros((3, 3, 3), np.int16)
    d[0], d[1], d[2] = 1, 2, 3
    lv = load_labels(_nifti(tmp_path / "l.nii", d, dtype=np.int16))
    assert [lv.mask(t).popcount() for t in ("csf", "gm", "wm")] == [9, 9, 9]


def test_raw_roundtrip_50_random(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(50):
        dims = tuple(rng.integers(1, 12, 3))
        m = VoxelMask(rng.random(dims) < 0.4, tuple(rng.uniform(0.5, 2, 3)), tuple(rng.normal(size=3)))
        save_mask(m, tmp_path / f"m{i}.hbmk")
        back = load_mask(tmp_path / f"m{i}.hbmk")
        assert back == m and back.popcount() == m.popcount()


def test_nifti_roundtrip(tmp_path):
    m = VoxelMask(np.random.default_rng(1).random((5, 6, 7)) < 0.5, (2.0, 2.0, 2.0), (1.0, -2.0, 3.0))
    save_mask(m, tmp_path / "m.nii.gz")
    assert load_mask(tmp_path / "m.nii.gz") == m


def test_raw_rejects_label(tmp_path):
    save_mask(VoxelMask(np.ones((2, 2, 2))), tmp_path / "r.hbmk")
    with pytest.raises(MaskValidationError):
        load_mask(tmp_path / "r.hbmk", label="gm")


@pytest.mark.parametrize(
    "spacing,target,ok,flagged",
    [((1, 1, 1), 1, True, ()), ((1, 1, 1.2), 1, False, ("z",)), ((2, 2, 2), 2, True, ())],
)
def test_validate_isotropic(spacing, target, ok, flagged):
    rep = validate_isotropic(VoxelMask(np.ones((2, 2, 2)), spacing), target, 0.01)
    assert bool(rep) is ok and rep.flagged_axes == flagged


def test_union_examples():
    rng = np.random.default_rng(2)
    a = VoxelMask(rng.random((4, 4, 4)) < 0.5)
    empty = a.with_data(np.zeros((4, 4, 4)))
    assert union_masks(empty, a) == a
    assert union_masks(a, a) == a
    b = a.with_data(~a.data)
    assert union_masks(a, b).popcount() == a.popcount() + b.popcount()
    with pytest.raises(MaskValidationError):
        union_masks(a, VoxelMask(a.data, (2, 2, 2)))


masks = arrays(bool, (5, 5, 5))


@settings(max_examples=60, deadline=None)
@given(masks, masks, masks)
def test_union_algebra(x, y, z):
    a, b, c = VoxelMask(x), VoxelMask(y), VoxelMask(z)
    assert union_masks(a, b) == union_masks(b, a)
    assert union_masks(union_masks(a, b), c) == union_masks(a, union_masks(b, c))
    assert union_masks(a, b).popcount() >= max(a.popcount(), b.popcount())


def test_csf_complement_examples():
    d = np.zeros((5, 5, 5), bool)
    d[2, 2, 2] = True
    comp, box = csf_complement(VoxelMask(d))
    assert box.shape == (1, 1, 1) and comp.popcount() == 0
    d = np.zeros((5, 5, 5), bool)
    d[1:4, 1:4, 1:4] = True
    d[2, 2, 2] = False
    comp, box = csf_complement(VoxelMask(d))
    assert comp.popcount() == 1 and comp.data[2, 2, 2]
    with pytest.raises(MaskValidationError):
        csf_complement(VoxelMask(np.zeros((2, 2, 2))))


def test_csf_complement_identity_random_16():
    rng = np.random.default_rng(3)
    for _ in range(30):
        d = rng.random((16, 16, 16)) < rng.uniform(0.01, 0.5)
        if not d.any():
            continue
        csf = VoxelMask(d)
        comp, box = csf_complement(csf)
        inside = int(csf.data[box.slices].sum())
        assert comp.popcount() + inside == box.volume
        assert not (comp.data & csf.data).any()
        assert box.within(csf.dims)


def test_csf_fraction():
    z = np.zeros((10, 10, 1), bool)
    csf = z.copy()
    csf[:5, :5] = True
    gm = z.copy()
    gm[5:] = True
    wm = z.copy()
    wm[:5, 5:] = True
    assert csf_fraction(VoxelMask(gm), VoxelMask(wm), VoxelMask(csf)) == 0.25
    assert csf_fraction(VoxelMask(gm), VoxelMask(wm), VoxelMask(z)) == 0.0
    with pytest.raises(ZeroDivisionError):
        csf_fraction(VoxelMask(z), VoxelMask(z), VoxelMask(z))


def test_parse_label_map():
    assert parse_label_map("csf=1,gm=2,wm=3") == {"csf": 1, "gm": 2, "wm": 3}
    with pytest.raises(ValueError):
        parse_label_map("csf")
