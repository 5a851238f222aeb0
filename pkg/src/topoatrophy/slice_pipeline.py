"""
Slice-wise geometry for the cross-sectional pipeline.

A parenchymal mask is cut into 2D slices along each anatomical axis, every
slice gets an exact Euclidean distance transform (tissue depth in mm), and the
superlevel filtration of that depth map is summarised by its H1 diagram.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import dual_merge_pairs, edt_squared_2d
from .mask_io import MaskValidationError, VoxelMask
from .ph_core import SUPERLEVEL, FilteredComplex, PersistenceDiagram, reduce

__all__ = [
    "AXES",
    "Slice2D",
    "ScalarField2D",
    "extract_slices",
    "edt2d",
    "cubical_complex",
    "superlevel_h1",
]

# axis name -> voxel axis that is held fixed
AXES = {"sagittal": 0, "coronal": 1, "axial": 2}


def _axis_index(axis) -> int:
    if isinstance(axis, str):
        try:
            return AXES[axis.lower()]
        except KeyError:
            raise ValueError(f"unknown axis {axis!r}; use one of {list(AXES)}") from None
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis!r}")
    return int(axis)


def _axis_name(axis: int) -> str:
    return next(k for k, v in AXES.items() if v == axis)


@dataclass(frozen=True, eq=False)
class Slice2D:
    bits: np.ndarray
    spacing: tuple
    axis: str
    index: int

    @property
    def dims(self) -> tuple:
        return self.bits.shape


@dataclass(frozen=True, eq=False)
class ScalarField2D:
    """Per-pixel distance in mm plus the exact squared distances it came from."""

    values: np.ndarray
    spacing: tuple
    squared: np.ndarray | None = None

    @property
    def dims(self) -> tuple:
        return self.values.shape


def extract_slices(mask: VoxelMask, axis) -> list:
    """
    Slices of ``mask`` perpendicular to ``axis``, cropped to the mask's bounding box.

    One slice per index between the first and last occupied index along the
    axis, in ascending order.
    """
    ax = _axis_index(axis)
    box = mask.bounding_box()
    if box is None:
        raise MaskValidationError("cannot slice an empty mask")
    sub = mask.data[box.slices]
    plane = tuple(i for i in range(3) if i != ax)
    spacing = tuple(mask.spacing[i] for i in plane)
    name = _axis_name(ax)
    out = []
    for k in range(sub.shape[ax]):
        bits = np.take(sub, k, axis=ax)
        out.append(Slice2D(np.ascontiguousarray(bits), spacing, name, box.lo[ax] + k))
    return out


def edt2d(slice_: Slice2D | np.ndarray, spacing=None) -> ScalarField2D:
    """
    Exact Euclidean distance from each tissue pixel to the nearest background pixel.

    The slice is padded with one background ring first, so tissue on the
    slice border is one pixel away from background. Background pixels get 0.
    """
    if isinstance(slice_, Slice2D):
        bits, spacing = slice_.bits, slice_.spacing
    else:
        bits = np.asarray(slice_, dtype=bool)
        spacing = (1.0, 1.0) if spacing is None else tuple(spacing)
    padded = np.pad(bits, 1, constant_values=False)
    sq = edt_squared_2d(~padded, float(spacing[0]) ** 2, float(spacing[1]) ** 2)[1:-1, 1:-1]
    return ScalarField2D(np.sqrt(sq), tuple(spacing), sq)


def _padded_values(field: ScalarField2D | np.ndarray) -> np.ndarray:
    values = field.values if isinstance(field, ScalarField2D) else np.asarray(field, float)
    if np.any(values < 0):
        raise ValueError("distance fields are non-negative")
    return np.pad(values, 1, constant_values=0.0)


def cubical_complex(field: ScalarField2D | np.ndarray) -> FilteredComplex:
    """
    Top-cell cubical complex of the padded field, ordered for the superlevel filtration.

    Pixels carry the field value; edges and vertices take the maximum over
    their incident pixels.
    """
    f = _padded_values(field)
    w, h = f.shape
    ext = np.full((w + 2, h + 2), -np.inf)
    ext[1:-1, 1:-1] = f
    # vertex (i, j) touches pixels (i-1..i, j-1..j)
    vval = np.maximum.reduce([ext[:-1, :-1], ext[1:, :-1], ext[:-1, 1:], ext[1:, 1:]])
    vid = np.arange((w + 1) * (h + 1)).reshape(w + 1, h + 1)
    dims, values, bounds = [], [], []
    for i in range(w + 1):
        for j in range(h + 1):
            dims.append(0)
            values.append(vval[i, j])
            bounds.append(())
    eid_h = {}  # edge from vertex (i,j) to (i+1,j)
    eid_v = {}  # edge from vertex (i,j) to (i,j+1)
    for i in range(w):
        for j in range(h + 1):
            eid_h[i, j] = len(dims)
            dims.append(1)
            values.append(max(ext[i + 1, j], ext[i + 1, j + 1]))
            bounds.append((vid[i, j], vid[i + 1, j]))
    for i in range(w + 1):
        for j in range(h):
            eid_v[i, j] = len(dims)
            dims.append(1)
            values.append(max(ext[i, j + 1], ext[i + 1, j + 1]))
            bounds.append((vid[i, j], vid[i, j + 1]))
    for i in range(w):
        for j in range(h):
            dims.append(2)
            values.append(f[i, j])
            bounds.append((eid_h[i, j], eid_h[i, j + 1], eid_v[i, j], eid_v[i + 1, j]))
    return FilteredComplex.from_cells(dims, values, bounds, SUPERLEVEL)


def _h1_dual(f: np.ndarray) -> np.ndarray:
    # Dual graph: pixels plus an outer node, joined across every grid edge.
    w, h = f.shape
    npx = w * h
    outer = npx
    pid = np.arange(npx).reshape(w, h)
    # forward superlevel order of pixels: descending value, ties by pixel id
    order = np.lexsort((pid.ravel(), -f.ravel()))
    rank = np.empty(npx + 1, dtype=np.int64)
    rank[order] = np.arange(npx)
    rank[outer] = npx + 1  # never dies
    ext = np.pad(pid, 1, constant_values=outer)
    ev = np.pad(f, 1, constant_values=-np.inf)
    # vertical grid edges separate horizontally adjacent pixels and vice versa
    u = np.concatenate([ext[:-1, 1:-1].ravel(), ext[1:-1, :-1].ravel()])
    v = np.concatenate([ext[1:, 1:-1].ravel(), ext[1:-1, 1:].ravel()])
    val = np.concatenate(
        [
            np.maximum(ev[:-1, 1:-1], ev[1:, 1:-1]).ravel(),
            np.maximum(ev[1:-1, :-1], ev[1:-1, 1:]).ravel(),
        ]
    )
    # reverse sweep: ascending value (the reverse of the superlevel order)
    eorder = np.lexsort((-np.arange(len(val)), val))
    pe, pn = dual_merge_pairs(npx + 1, rank, eorder, u, v)
    births = val[pe]
    deaths = f.ravel()[pn]
    return np.column_stack([births, deaths])


def superlevel_h1(field: ScalarField2D | np.ndarray, method: str = "dual") -> PersistenceDiagram:
    """
    H1 diagram (mm) of the superlevel filtration of a distance field.

    ``method="reduce"`` builds the full top-cell cubical complex and runs the
    boundary-matrix reduction; ``method="dual"`` obtains the same pairs from a
    union-find sweep over the dual graph of pixels, which is much faster.
    """
    if method == "reduce":
        dgm = reduce(cubical_complex(field))[1]
        if len(dgm.essential):
            raise RuntimeError("superlevel H1 has an essential class; background ring missing")
        return dgm
    if method != "dual":
        raise ValueError(f"unknown method {method!r}")
    pairs = _h1_dual(_padded_values(field))
    return PersistenceDiagram(pairs, 1, SUPERLEVEL, "mm")
