"""
Synthetic atrophy: analytic phantoms, boundary layers and stochastic erosion.

Phantoms are voxelised from analytic solids (a voxel is set when its centre is
inside the solid). Atrophy is simulated by removing a seeded random fraction
of the 6-connected boundary layer; all levels of one series remove prefixes of
the same shuffled voxel list, so they are nested.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .mask_io import DEFAULT_LABEL_MAP, LabelVolume, MaskValidationError, VoxelMask

__all__ = [
    "KINDS",
    "ErosionSpec",
    "PhantomSpec",
    "boundary_layer",
    "erode",
    "erosion_series",
    "atrophy",
    "make_phantom",
    "phantom_labels",
    "individual_specs",
    "erosion_manifest",
    "write_manifest",
]

KINDS = ("ellipsoid-shell", "nested-cavities", "ring-torus")
_FACES = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class ErosionSpec:
    fractions: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    seed: int = 0
    replicates: int = 1

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if list(fr) != sorted(fr) or any(not 0.0 <= f <= 1.0 for f in fr):
            raise ValueError("erosion fractions must be sorted and within [0, 1]")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        object.__setattr__(self, "fractions", fr)

    def replicate_seed(self, r: int) -> int:
        """Seed of replicate ``r``; replicate 0 uses ``seed`` itself."""
        if r == 0:
            return int(self.seed)
        return int(np.random.SeedSequence([int(self.seed), r]).generate_state(1)[0])


@dataclass(frozen=True)
class PhantomSpec:
    """
    Analytic phantom on a voxel grid, centred in the volume.

    ``radii`` are the outer ellipsoid semi-axes (mm). ``rind`` is the
    thickness (mm) of a CSF layer wrapped around the outer surface. Kind
    specific parameters:

    ellipsoid-shell
        ``inner``: inner semi-axes as a fraction of ``radii`` (0 = solid).
    nested-cavities
        ``cavities``: list of ``(centre offset xyz mm, semi-axes xyz mm)``.
    ring-torus
        ``torus``: ``(major radius mm, minor radius mm)``, ring in the axial plane.
    """

    kind: str
    dims: tuple = (64, 64, 64)
    spacing: float = 1.0
    radii: tuple = (24.0, 20.0, 22.0)
    rind: float = 0.0
    inner: float = 0.0
    cavities: tuple = ()
    torus: tuple = (10.0, 3.0)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MaskValidationError(f"unknown phantom kind {self.kind!r}; use one of {KINDS}")
        dims = tuple(int(d) for d in self.dims)
        radii = tuple(float(r) for r in self.radii)
        cav = tuple((tuple(map(float, c)), tuple(map(float, r))) for c, r in self.cavities)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "cavities", cav)
        object.__setattr__(self, "torus", tuple(float(t) for t in self.torus))
        if len(dims) != 3 or len(radii) != 3 or min(radii) <= 0 or self.spacing <= 0:
            raise MaskValidationError("phantoms need three dims, three positive radii and positive spacing")
        if not 0.0 <= self.inner < 1.0:
            raise MaskValidationError("inner fraction must be in [0, 1)")
        half = np.asarray(dims) * self.spacing / 2.0
        if np.any(np.asarray(radii) + self.rind > half):
            raise MaskValidationError(
                f"radii {radii} plus rind {self.rind} do not fit in {dims} voxels of {self.spacing} mm"
            )
        for c, r in cav:
            if np.any(np.abs(c) + np.asarray(r) > np.asarray(radii)):
                raise MaskValidationError(f"cavity at {c} with radii {r} leaves the outer ellipsoid")
        if self.kind == "ring-torus" and sum(self.torus) >= min(radii[:2]):
            raise MaskValidationError("torus does not fit inside the outer ellipsoid")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cavities"] = [list(map(list, c)) for c in self.cavities]
        return d


def _coords(spec: PhantomSpec):
    # voxel-centre coordinates relative to the volume centre, in mm
    axes = [(np.arange(n) + 0.5) * spec.spacing - n * spec.spacing / 2.0 for n in spec.dims]
    return np.meshgrid(*axes, indexing="ij")


def _inside(x, y, z, centre, radii) -> np.ndarray:
    return ((x - centre[0]) / radii[0]) ** 2 + ((y - centre[1]) / radii[1]) ** 2 + (
        (z - centre[2]) / radii[2]
    ) ** 2 < 1.0


def make_phantom(spec: PhantomSpec) -> tuple:
    """
    Voxelise a phantom into disjoint ``(parenchyma, csf)`` masks.

    The CSF mask holds the cavities and the optional rind. With no rind and no
    cavity the CSF mask is empty.
    """
    x, y, z = _coords(spec)
    zero = (0.0, 0.0, 0.0)
    outer = _inside(x, y, z, zero, spec.radii)
    cavity = np.zeros(spec.dims, dtype=bool)
    if spec.kind == "ellipsoid-shell":
        if spec.inner > 0:
            cavity = _inside(x, y, z, zero, tuple(r * spec.inner for r in spec.radii))
    elif spec.kind == "nested-cavities":
        for c, r in spec.cavities:
            cavity |= _inside(x, y, z, c, r)
    else:
        major, minor = spec.torus
        ring = np.hypot(x, y) - major
        cavity = ring**2 + z**2 < minor**2
    cavity &= outer
    csf = cavity.copy()
    if spec.rind > 0:
        shell = _inside(x, y, z, zero, tuple(r + spec.rind for r in spec.radii)) & ~outer
        csf |= shell
    par = outer & ~cavity
    sp = (float(spec.spacing),) * 3
    return VoxelMask(par, sp), VoxelMask(csf, sp)


def phantom_labels(parenchyma: VoxelMask, csf: VoxelMask, cortex_mm: float = 3.0, label_map=None) -> LabelVolume:
    """
    Label volume with GM as the parenchyma within ``cortex_mm`` of non-tissue, WM inside.
    """
    lm = dict(label_map or DEFAULT_LABEL_MAP)
    depth = ndimage.distance_transform_edt(np.pad(parenchyma.data, 1), sampling=parenchyma.spacing)[1:-1, 1:-1, 1:-1]
    labels = np.zeros(parenchyma.dims, dtype=np.int16)
    labels[csf.data] = lm["csf"]
    labels[parenchyma.data & (depth <= cortex_mm)] = lm["gm"]
    labels[parenchyma.data & (depth > cortex_mm)] = lm["wm"]
    return LabelVolume(labels, parenchyma.spacing, parenchyma.origin, lm)


def boundary_layer(mask: VoxelMask) -> VoxelMask:
    """
    Mask voxels with at least one of their six face neighbours outside the mask.

    Voxels on the volume border count as exposed.
    """
    inner = ndimage.binary_erosion(mask.data, structure=_FACES, border_value=0)
    return mask.with_data(mask.data & ~inner)


def _removal_order(mask: VoxelMask, seed: int) -> np.ndarray:
    # boundary voxels in x-fastest linear order, then one seeded shuffle
    b = boundary_layer(mask).data
    lin = np.flatnonzero(b.ravel(order="F"))
    rng = np.random.default_rng(int(seed))
    return lin[rng.permutation(len(lin))]


def _count(fraction: float, n: int) -> int:
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"erosion fraction must be in [0, 1], got {fraction}")
    return int(math.floor(fraction * n + 0.5))  # round half up


def erode(mask: VoxelMask, fraction: float, seed: int) -> VoxelMask:
    """
    Remove ``round(fraction * |boundary|)`` boundary voxels chosen by a seeded shuffle.

    Removal always takes a prefix of the same shuffled boundary list, so
    larger fractions with the same seed remove supersets.
    """
    order = _removal_order(mask, seed)
    k = _count(fraction, len(order))
    flat = mask.data.ravel(order="F").copy()
    flat[order[:k]] = False
    return mask.with_data(flat.reshape(mask.dims, order="F"))


def erosion_series(mask: VoxelMask, spec: ErosionSpec, replicate: int = 0) -> list:
    """Eroded masks for every fraction of ``spec``, sharing one removal order."""
    order = _removal_order(mask, spec.replicate_seed(replicate))
    base = mask.data.ravel(order="F")
    out = []
    for f in spec.fractions:
        flat = base.copy()
        flat[order[: _count(f, len(order))]] = False
        out.append(mask.with_data(flat.reshape(mask.dims, order="F")))
    return out


def atrophy(parenchyma: VoxelMask, csf: VoxelMask, eroded: VoxelMask) -> VoxelMask:
    """CSF after atrophy: removed parenchyma voxels are filled with CSF."""
    return csf.with_data(csf.data | (parenchyma.data & ~eroded.data))


def individual_specs(
    n: int,
    seed: int,
    dims=(64, 64, 64),
    spacing: float = 1.0,
    n_cavities: int = 24,
    cavity_radii=(1.5, 4.5),
    rind: float = 2.0,
) -> list:
    """
    ``n`` brain-like nested-cavity phantoms with individual geometry.

    Each phantom is an ellipsoidal parenchyma (semi-axes drawn from
    [18, 21] x [15, 18] x [16, 19] mm) wrapped in a CSF rind, with two
    ventricle-like cavities placed symmetrically on x and ``n_cavities``
    small ellipsoidal cavities scattered through the tissue. The small
    cavities give every phantom interior boundary that erosion can reach
    and an individual set of H2 features. All lengths are quoted for a
    64 mm field of view and scale with the actual one.
    """
    rng = np.random.default_rng(int(seed))
    k = min(dims) * spacing / 64.0
    lo, hi = cavity_radii[0] * k, cavity_radii[1] * k
    specs = []
    for i in range(n):
        radii = np.round(k * rng.uniform([18.0, 15.0, 16.0], [21.0, 18.0, 19.0]), 2)
        vent = tuple(float(v) for v in np.round(k * rng.uniform([2.5, 5.0, 3.0], [4.0, 8.0, 5.0]), 2))
        off = float(k * rng.uniform(4.0, 6.0))
        cav = [((-off, 0.0, 0.0), vent), ((off, 0.0, 0.0), vent)]
        while len(cav) < n_cavities + 2:
            r = rng.uniform(lo, hi, 3)
            u = rng.normal(size=3)
            u /= np.linalg.norm(u)
            c = u * radii * rng.uniform(0.35, 0.85)
            # keep at least 1.5 mm of tissue between a cavity and the outer surface
            if np.all(np.abs(c) + r < radii - 1.5 * k):
                cav.append((tuple(float(v) for v in c), tuple(float(v) for v in r)))
        specs.append(
            PhantomSpec(
                "nested-cavities",
                dims,
                spacing,
                tuple(float(v) for v in radii),
                rind=rind * k,
                cavities=tuple(cav),
                seed=int(seed) * 1000 + i,
            )
        )
    return specs


def erosion_manifest(spec, fraction: float, seed: int, parenchyma: VoxelMask, eroded: VoxelMask, csf: VoxelMask) -> dict:
    """
    Record of one erosion level; ``spec`` is a :class:`PhantomSpec` or a dict
    describing a non-phantom source.
    """
    n_b = boundary_layer(parenchyma).popcount()
    return {
        "spec": spec.to_dict() if isinstance(spec, PhantomSpec) else dict(spec),
        "seed": int(seed),
        "fraction": float(fraction),
        "nested": True,
        "popcounts": {
            "parenchyma": parenchyma.popcount(),
            "boundary": n_b,
            "removed": parenchyma.popcount() - eroded.popcount(),
            "eroded": eroded.popcount(),
            "csf": csf.popcount(),
        },
    }


def write_manifest(path, record) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
