"""
Binary tissue masks: loading, saving, validation and simple set algebra.

Masks are stored as boolean arrays indexed ``[x, y, z]``. The portable raw
format (``.hbmk``) is a little-endian header followed by the voxels packed one
bit each in x-fastest order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

__all__ = [
    "MaskFormatError",
    "MaskValidationError",
    "ResourceLimitError",
    "DEFAULT_LABEL_MAP",
    "VoxelMask",
    "LabelVolume",
    "BoundingBox",
    "IsotropyReport",
    "load_mask",
    "load_labels",
    "save_mask",
    "validate_isotropic",
    "union_masks",
    "csf_complement",
    "csf_fraction",
    "parse_label_map",
]

DEFAULT_LABEL_MAP = {"csf": 1, "gm": 2, "wm": 3}
DEFAULT_MEMORY_CAP = 2 * 1024**3

_MAGIC = b"HBMK"
_HEADER = struct.Struct("<4s3I6d")
_NIFTI_DTYPES = {np.dtype("uint8"), np.dtype("int16"), np.dtype("int32"), np.dtype("float32")}


class MaskFormatError(ValueError):
    pass


class MaskValidationError(ValueError):
    pass


class ResourceLimitError(MemoryError):
    pass


def _geometry(dims, spacing, origin):
    dims = tuple(int(d) for d in dims)
    spacing = tuple(float(s) for s in spacing)
    origin = tuple(float(o) for o in origin)
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise MaskValidationError("masks are three-dimensional")
    if any(d <= 0 for d in dims):
        raise MaskValidationError(f"dimensions must be positive, got {dims}")
    if any(not s > 0 for s in spacing):
        raise MaskValidationError(f"spacing must be strictly positive, got {spacing}")
    return dims, spacing, origin


@dataclass(frozen=True, eq=False)
class VoxelMask:
    """Immutable 3D binary mask with voxel spacing and origin in mm."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=bool, copy=True)
        if data.ndim != 3:
            raise MaskValidationError(f"mask data must be 3D, got shape {data.shape}")
        _, spacing, origin = _geometry(data.shape, self.spacing, self.origin)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple:
        return self.data.shape

    def popcount(self) -> int:
        return int(np.count_nonzero(self.data))

    def same_geometry(self, other: "VoxelMask") -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing, rtol=0, atol=1e-9)
            and np.allclose(self.origin, other.origin, rtol=0, atol=1e-9)
        )

    def with_data(self, data) -> "VoxelMask":
        return VoxelMask(data, self.spacing, self.origin)

    def bounding_box(self) -> "BoundingBox | None":
        idx = np.argwhere(self.data)
        if not len(idx):
            return None
        return BoundingBox(tuple(idx.min(axis=0)), tuple(idx.max(axis=0)))

    def __eq__(self, other):
        if not isinstance(other, VoxelMask):
            return NotImplemented
        return self.same_geometry(other) and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive voxel-index box."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if any(a > b for a, b in zip(lo, hi)):
            raise MaskValidationError(f"box lo {lo} exceeds hi {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def shape(self) -> tuple:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    @property
    def volume(self) -> int:
        return int(np.prod(self.shape))

    @property
    def slices(self) -> tuple:
        return tuple(slice(a, b + 1) for a, b in zip(self.lo, self.hi))

    def within(self, dims) -> bool:
        return all(a >= 0 and b < d for a, b, d in zip(self.lo, self.hi, dims))


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer tissue labels with a class-name to label association."""

    labels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)
    label_map: Mapping = field(default_factory=lambda: dict(DEFAULT_LABEL_MAP))

    def __post_init__(self):
        labels = np.array(self.labels, copy=True)
        if labels.ndim != 3:
            raise MaskValidationError("label volume must be 3D")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.array_equal(labels, np.round(labels)):
                raise MaskFormatError("label volume has non-integer values")
            labels = labels.astype(np.int64)
        _, spacing, origin = _geometry(labels.shape, self.spacing, self.origin)
        allowed = np.array([0] + sorted(set(int(v) for v in self.label_map.values())))
        if not np.isin(labels, allowed).all():
            extra = sorted(set(np.unique(labels)) - set(allowed.tolist()))
            raise MaskValidationError(f"labels {extra} are not in the label map")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "label_map", {k.lower(): int(v) for k, v in self.label_map.items()})

    def mask(self, tissue: str) -> VoxelMask:
        try:
            value = self.label_map[tissue.lower()]
        except KeyError:
            raise MaskValidationError(f"unknown tissue class {tissue!r}") from None
        return VoxelMask(self.labels == value, self.spacing, self.origin)


def parse_label_map(text: str) -> dict:
    """Parse ``"csf=1,gm=2,wm=3"`` into a label map."""
    out = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        name, _, value = item.partition("=")
        if not value:
            raise ValueError(f"bad label assignment {item!r}")
        out[name.strip().lower()] = int(value)
    return out


def _is_raw(path: Path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == _MAGIC


def _read_raw(path: Path, memory_cap: int) -> VoxelMask:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise MaskFormatError(f"{path}: truncated header")
        magic, nx, ny, nz, sx, sy, sz, ox, oy, oz = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise MaskFormatError(f"{path}: not a raw mask file")
        n = nx * ny * nz
        if n > memory_cap:
            raise ResourceLimitError(f"{path}: {n} voxels exceed the memory cap")
        dims, spacing, origin = _geometry((nx, ny, nz), (sx, sy, sz), (ox, oy, oz))
        packed = np.frombuffer(fh.read(), dtype=np.uint8)
    nbytes = (n + 7) // 8
    if len(packed) != nbytes:
        raise MaskFormatError(f"{path}: expected {nbytes} data bytes, found {len(packed)}")
    bits = np.unpackbits(packed, bitorder="little")[:n].astype(bool)
    return VoxelMask(bits.reshape(dims, order="F"), spacing, origin)


def _read_nifti(path: Path, memory_cap: int):
    import nibabel as nib

    try:
        img = nib.load(str(path))
    except Exception as exc:  # nibabel raises several unrelated types
        raise MaskFormatError(f"{path}: cannot read as NIfTI-1 ({exc})") from exc
    if not isinstance(img, nib.Nifti1Image):
        raise MaskFormatError(f"{path}: only NIfTI-1 volumes are supported")
    hdr = img.header
    dtype = hdr.get_data_dtype()
    if dtype.newbyteorder("=") not in _NIFTI_DTYPES:
        raise MaskFormatError(f"{path}: unsupported datatype {dtype}")
    shape = img.shape
    if len(shape) == 4 and shape[3] == 1:
        shape = shape[:3]
    if len(shape) != 3:
        raise MaskFormatError(f"{path}: expected a 3D volume, got shape {img.shape}")
    if int(np.prod(shape)) * dtype.itemsize > memory_cap:
        raise ResourceLimitError(f"{path}: volume of {shape} exceeds the memory cap")
    zooms = tuple(float(z) for z in hdr.get_zooms()[:3])
    if any(not z > 0 for z in zooms):
        raise MaskValidationError(f"{path}: non-positive spacing {zooms}")
    affine = img.affine
    lin = affine[:3, :3]
    if np.any(np.abs(lin - np.diag(np.diag(lin))) > 1e-6) or np.any(np.diag(lin) <= 0):
        raise MaskFormatError(f"{path}: reoriented or oblique volumes are not supported")
    data = np.asanyarray(img.dataobj).reshape(shape)
    return data, zooms, tuple(float(v) for v in affine[:3, 3])


def load_mask(
    path,
    label: str | int | None = None,
    label_map: Mapping | None = None,
    memory_cap: int = DEFAULT_MEMORY_CAP,
) -> VoxelMask:
    """
    Load a binary mask from NIfTI-1 (``.nii``/``.nii.gz``) or the raw format.

    With ``label=None`` every nonzero voxel is set. A tissue name (``"gm"``)
    is looked up in ``label_map`` (default CSF=1, GM=2, WM=3); an integer
    selects that label directly. Raw files are already binary and accept only
    ``label=None``.
    """
    path = Path(path)
    if _is_raw(path):
        if label is not None:
            raise MaskValidationError("raw mask files carry no tissue labels")
        return _read_raw(path, memory_cap)
    data, spacing, origin = _read_nifti(path, memory_cap)
    if label is None:
        return VoxelMask(data != 0, spacing, origin)
    if isinstance(label, str):
        lm = {k.lower(): v for k, v in (label_map or DEFAULT_LABEL_MAP).items()}
        if label.lower() not in lm:
            raise MaskValidationError(f"unknown tissue class {label!r}")
        value = lm[label.lower()]
    else:
        value = int(label)
    return VoxelMask(data == value, spacing, origin)


def load_labels(
    path, label_map: Mapping | None = None, memory_cap: int = DEFAULT_MEMORY_CAP
) -> LabelVolume:
    data, spacing, origin = _read_nifti(Path(path), memory_cap)
    return LabelVolume(data, spacing, origin, dict(label_map or DEFAULT_LABEL_MAP))


def save_mask(mask: VoxelMask, path) -> None:
    """Write ``mask`` as raw (default) or NIfTI-1 when the name ends in .nii/.nii.gz."""
    path = Path(path)
    if path.name.endswith((".nii", ".nii.gz")):
        import nibabel as nib

        affine = np.diag(list(mask.spacing) + [1.0])
        affine[:3, 3] = mask.origin
        img = nib.Nifti1Image(mask.data.astype(np.uint8), affine)
        img.header.set_zooms(mask.spacing)
        nib.save(img, str(path))
        return
    head = _HEADER.pack(_MAGIC, *mask.dims, *mask.spacing, *mask.origin)
    bits = np.packbits(mask.data.ravel(order="F"), bitorder="little")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(bits.tobytes())


@dataclass(frozen=True)
class IsotropyReport:
    passed: bool
    spacing: tuple
    target: float
    tol: float
    flagged_axes: tuple

    def __bool__(self) -> bool:
        return self.passed


def validate_isotropic(mask: VoxelMask, target: float = 1.0, tol: float = 0.01) -> IsotropyReport:
    """Check every spacing component is within ``tol`` of ``target``. Never resamples."""
    flagged = tuple("xyz"[i] for i, s in enumerate(mask.spacing) if abs(s - target) > tol)
    return IsotropyReport(not flagged, mask.spacing, float(target), float(tol), flagged)


def union_masks(a: VoxelMask, b: VoxelMask) -> VoxelMask:
    if not a.same_geometry(b):
        raise MaskValidationError("masks differ in dims, spacing or origin")
    return a.with_data(a.data | b.data)


def csf_complement(csf: VoxelMask) -> tuple:
    """
    Non-CSF voxels inside the tight bounding box of the CSF mask.

    Returns ``(complement, box)``; the complement keeps the full grid geometry
    and is zero outside ``box``.
    """
    box = csf.bounding_box()
    if box is None:
        raise MaskValidationError("CSF mask is empty")
    out = np.zeros(csf.dims, dtype=bool)
    out[box.slices] = ~csf.data[box.slices]
    return csf.with_data(out), box


def csf_fraction(gm: VoxelMask, wm: VoxelMask, csf: VoxelMask) -> float:
    """CSF / (CSF + GM + WM) by voxel counts; overlapping voxels count once per mask."""
    if not (csf.same_geometry(gm) and csf.same_geometry(wm)):
        raise MaskValidationError("masks differ in dims, spacing or origin")
    n_csf = csf.popcount()
    total = n_csf + gm.popcount() + wm.popcount()
    if total == 0:
        raise ZeroDivisionError("all three masks are empty; CSF fraction is undefined")
    return n_csf / total
