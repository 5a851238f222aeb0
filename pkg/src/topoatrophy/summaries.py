"""
Landscape summaries of slice diagrams.

Every slice H1 diagram is collapsed to the L1 norm of its persistence
landscape; stacking those norms along an anatomical axis gives an L1 curve,
which is resampled on a common grid and integrated for an area under the
curve.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .mask_io import MaskValidationError, VoxelMask
from .ph_core import SUPERLEVEL, PersistenceDiagram
from .slice_pipeline import edt2d, extract_slices, superlevel_h1

__all__ = [
    "FULL",
    "FIRST",
    "L1Curve",
    "landscape_l1",
    "landscape_eval",
    "slice_diagrams",
    "build_l1_curve",
    "curve_from_diagrams",
    "interpolate",
    "curve_auc",
    "write_curves_csv",
    "read_curves_csv",
]

FULL = "full"  # sum over all landscape levels
FIRST = "first"  # first level only


@dataclass(frozen=True, eq=False)
class L1Curve:
    """
    Landscape L1 norm as a function of normalised slice position.

    ``grid_size`` is None for a raw per-slice curve and the number of
    samples after :func:`interpolate`. ``norm`` records which landscape norm
    produced the values.
    """

    axis: str
    positions: np.ndarray
    values: np.ndarray
    grid_size: int | None = None
    norm: str = FULL

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1)
        val = np.asarray(self.values, dtype=float).reshape(-1)
        if pos.shape != val.shape:
            raise ValueError("positions and values differ in length")
        if len(pos) > 1 and np.any(np.diff(pos) <= 0):
            raise ValueError("positions must be strictly increasing")
        if np.any(val < 0):
            raise ValueError("L1 values are non-negative")
        if self.norm not in (FULL, FIRST):
            raise ValueError(f"unknown norm {self.norm!r}")
        pos.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "values", val)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def samples(self) -> list:
        return list(zip(self.positions.tolist(), self.values.tolist()))


def _sublevel_pairs(d: PersistenceDiagram) -> np.ndarray:
    # superlevel pairs (b > d) become sublevel pairs (-b < -d)
    return -d.pairs if d.direction == SUPERLEVEL else d.pairs


def landscape_l1(d: PersistenceDiagram, norm: str = FULL) -> float:
    """
    L1 norm of the persistence landscape of ``d`` (units squared).

    ``norm="full"`` sums the norms of all levels. The levels at each point
    are a re-sorting of the tent values, so the sum equals the total tent
    area, sum(p**2) / 4. ``norm="first"`` integrates the top level only,
    which is the area under the upper envelope of the tents.
    """
    pairs = _sublevel_pairs(d)
    if not len(pairs):
        return 0.0
    p = pairs[:, 1] - pairs[:, 0]
    total = float(np.sum(p * p) / 4.0)
    if norm == FULL:
        return total
    if norm != FIRST:
        raise ValueError(f"unknown norm {norm!r}")
    # drop dominated tents; survivors sorted by birth have increasing deaths
    order = np.lexsort((-pairs[:, 1], pairs[:, 0]))
    b, e = pairs[order, 0], pairs[order, 1]
    keep = e > np.concatenate([[-np.inf], np.maximum.accumulate(e)[:-1]])
    b, e = b[keep], e[keep]
    overlap = np.clip(e[:-1] - b[1:], 0.0, None)
    return float(np.sum((e - b) ** 2) / 4.0 - np.sum(overlap**2) / 4.0)


def landscape_eval(d: PersistenceDiagram, k: int, t) -> np.ndarray | float:
    """
    k-th landscape level of ``d`` at ``t`` (scalar or array).

    Tents are ``min(t - b, d - t)`` clipped at 0 for sublevel pairs; a
    superlevel diagram is evaluated on its negation, so ``t`` is given in the
    diagram's own coordinates either way.
    """
    if k < 1:
        raise ValueError("landscape levels start at k=1")
    pairs = _sublevel_pairs(d)
    tt = np.asarray(t, dtype=float)
    if d.direction == SUPERLEVEL:
        tt = -tt
    if len(pairs) < k:
        out = np.zeros_like(tt)
    else:
        x = tt[..., None]
        tents = np.clip(np.minimum(x - pairs[:, 0], pairs[:, 1] - x), 0.0, None)
        out = -np.partition(-tents, k - 1, axis=-1)[..., k - 1]
    return float(out) if np.ndim(out) == 0 else out


def _check_isotropic(mask: VoxelMask, rtol: float = 0.01) -> None:
    sp = np.asarray(mask.spacing, dtype=float)
    if np.ptp(sp) > rtol * sp.max():
        raise MaskValidationError(f"slice curves need isotropic voxels, got spacing {mask.spacing}")


def slice_diagrams(mask: VoxelMask, axis) -> list:
    """``(slice, H1 diagram)`` for every slice of ``mask`` along ``axis``."""
    out = []
    for s in extract_slices(mask, axis):
        if not s.bits.any():
            dgm = PersistenceDiagram.empty(1, SUPERLEVEL, "mm")
        else:
            dgm = superlevel_h1(edt2d(s))
        out.append((s, dgm))
    return out


def build_l1_curve(mask: VoxelMask, axis, norm: str = FULL) -> L1Curve:
    """
    Per-slice landscape L1 norms of the superlevel H1 diagrams of the slice EDTs.

    Position of slice ``i`` of ``n`` is ``i / (n - 1)``; a single slice sits
    at position 0. Empty slices inside the bounding box contribute 0.
    """
    _check_isotropic(mask)
    return curve_from_diagrams(slice_diagrams(mask, axis), norm)


def curve_from_diagrams(pairs, norm: str = FULL) -> L1Curve:
    """L1 curve from the ``(slice, diagram)`` list of :func:`slice_diagrams`."""
    n = len(pairs)
    if not n:
        raise ValueError("no slices")
    pos = np.arange(n) / (n - 1) if n > 1 else np.zeros(1)
    vals = [landscape_l1(dgm, norm) for _, dgm in pairs]
    return L1Curve(pairs[0][0].axis, pos, vals, None, norm)


def interpolate(curve: L1Curve, n: int = 100) -> L1Curve:
    """Linear resampling onto ``n`` equispaced positions in [0, 1]; ends clamp."""
    if n < 1:
        raise ValueError("grid size must be positive")
    if not len(curve):
        raise ValueError("cannot interpolate an empty curve")
    grid = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
    vals = np.interp(grid, curve.positions, curve.values)
    return L1Curve(curve.axis, grid, vals, n, curve.norm)


def curve_auc(curve: L1Curve) -> float:
    """Trapezoid-rule area under the curve over its positions."""
    if len(curve) < 2:
        raise ValueError("AUC is undefined for a curve with fewer than two samples")
    return float(np.trapezoid(curve.values, curve.positions))


def write_curves_csv(target, curves) -> None:
    """
    Write ``(subject, curve)`` items as ``subject,axis,position,value_mm2`` rows.

    Resampled curves get extra ``grid`` and ``norm`` columns so raw and
    interpolated output can never be confused.
    """
    curves = list(curves)
    with_grid = any(c.grid_size is not None for _, c in curves)
    header = ["subject", "axis", "position", "value_mm2"]
    if with_grid:
        header += ["grid", "norm"]
    with open(target, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for subject, c in curves:
            for p, v in zip(c.positions, c.values):
                row = [subject, c.axis, repr(float(p)), repr(float(v))]
                if with_grid:
                    row += ["" if c.grid_size is None else c.grid_size, c.norm]
                w.writerow(row)


def read_curves_csv(source) -> dict:
    """Inverse of :func:`write_curves_csv`: ``{(subject, axis): L1Curve}``."""
    rows: dict = {}
    meta: dict = {}
    with open(source, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            key = (r["subject"], r["axis"])
            rows.setdefault(key, []).append((float(r["position"]), float(r["value_mm2"])))
            grid = r.get("grid") or None
            meta[key] = (int(grid) if grid else None, r.get("norm") or FULL)
    out = {}
    for key, pv in rows.items():
        arr = np.array(pv)
        out[key] = L1Curve(key[1], arr[:, 0], arr[:, 1], *meta[key])
    return out
