"""
Alpha-complex H2 persistence of a voxel point cloud.

The point cloud is the set of voxel centres of a mask. Voxel grids are as
degenerate as point sets get (every unit cell is eight co-spherical points),
so each centre is moved by a tiny deterministic offset before triangulating.
The offset only decides *which* Delaunay triangulation of the grid is used;
filtration values are computed from the unperturbed centres with integer
arithmetic, so grid-scale noise keeps its exact persistence of 0.25 voxel²
and never leaks past the noise threshold.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import predicates as pr
from ._kernels import dual_merge_pairs
from .mask_io import MaskValidationError, VoxelMask
from .ph_core import (
    SUBLEVEL,
    FilteredComplex,
    PersistenceDiagram,
    filter_by_persistence,
    reduce,
)

__all__ = [
    "DegenerateInputError",
    "PointCloud3",
    "Triangulation3",
    "AlphaFiltration",
    "point_cloud",
    "delaunay3",
    "check_local_delaunay",
    "alpha_filtration",
    "h2_diagram",
]

DEFAULT_JITTER = 1e-3
DEFAULT_TAU = 0.25
QHULL_THRESHOLD = 3000
# jitter fallback when the offsets break the grid's Delaunay property
JITTER_SHRINK = 10.0
MIN_JITTER = 1e-6
# largest index span whose lifted determinants fit in int64
_INT_SPAN = 1000


class DegenerateInputError(ValueError):
    pass


_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (x + np.uint64(0x9E3779B97F4A7C15)) & _M64
        z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _M64
        z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _M64
        return z ^ (z >> np.uint64(31))


def _hash_uniform(seed: int, keys: np.ndarray) -> np.ndarray:
    """Uniform values in [-1, 1) that depend only on ``(seed, key)``."""
    s = _splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]
    h = _splitmix64(keys.astype(np.uint64) ^ s)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-52 - 1.0


@dataclass(frozen=True, eq=False)
class PointCloud3:
    """
    Voxel centres (mm) of a mask.

    ``points`` are the jittered coordinates used for triangulation,
    ``centers`` the exact voxel centres and ``voxels`` their integer indices.
    """

    points: np.ndarray
    centers: np.ndarray
    voxels: np.ndarray
    dims: tuple
    spacing: tuple
    origin: tuple
    jitter: float
    seed: int

    def __len__(self) -> int:
        return len(self.points)

    @property
    def isotropic(self) -> bool:
        return self.spacing[0] == self.spacing[1] == self.spacing[2]


def point_cloud(mask: VoxelMask, jitter: float = DEFAULT_JITTER, seed: int = 0) -> PointCloud3:
    """
    One point per set voxel, at the voxel centre plus a hashed offset.

    Voxel ``(i, j, k)`` maps to ``origin + (index + 0.5) * spacing``. Each
    coordinate moves by ``jitter * u`` with ``u`` in [-1, 1) derived from the
    seed and the voxel's linear index, so a voxel gets the same offset in
    every mask that contains it.
    """
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    vox = np.argwhere(mask.data)
    if not len(vox):
        raise MaskValidationError("cannot build a point cloud from an empty mask")
    # x-fastest ordering of voxels
    nx, ny, _ = mask.dims
    lin = vox[:, 0] + nx * (vox[:, 1] + ny * vox[:, 2])
    order = np.argsort(lin, kind="stable")
    vox, lin = vox[order], lin[order]
    spacing = np.asarray(mask.spacing)
    centers = np.asarray(mask.origin) + (vox + 0.5) * spacing
    keys = (lin[:, None] * 3 + np.arange(3)[None, :]).astype(np.uint64)
    offsets = _hash_uniform(int(seed), keys) * jitter if jitter > 0 else 0.0
    pts = centers + offsets
    for arr in (pts, centers, vox):
        arr.setflags(write=False)
    return PointCloud3(
        pts, centers, vox, mask.dims, mask.spacing, mask.origin, float(jitter), int(seed)
    )


@dataclass(frozen=True, eq=False)
class Triangulation3:
    """
    Tetrahedra of a 3D Delaunay triangulation.

    ``neighbors[t, i]`` is the tetrahedron across the face opposite vertex
    ``i`` of ``t`` (``-1`` on the convex hull). Every tetrahedron is
    positively oriented in ``points``.
    """

    points: np.ndarray
    tetrahedra: np.ndarray
    neighbors: np.ndarray
    engine: str
    cloud: PointCloud3 | None = field(default=None, repr=False)

    @property
    def hull_faces(self) -> np.ndarray:
        """``(t, i)`` index pairs of faces on the convex hull."""
        return np.argwhere(self.neighbors < 0)


# ---------------------------------------------------------------- incremental

_INF = -1


class _BowyerWatson:
    """Incremental Delaunay insertion with ghost cells for the outside of the hull."""

    def __init__(self, pts: list, seed: int = 0):
        self.p = pts
        self.tv: list = []  # tetra vertices, _INF for the point at infinity
        self.tn: list = []  # neighbours opposite each vertex
        self.alive: list = []
        self.rng = random.Random(seed)
        self.last = 0

    def _new(self, verts, nbrs) -> int:
        self.tv.append(verts)
        self.tn.append(nbrs)
        self.alive.append(True)
        return len(self.tv) - 1

    def start(self, a, b, c, d):
        p = self.p
        if pr.orient3d(p[a], p[b], p[c], p[d]) < 0:
            a, b = b, a
        verts = [a, b, c, d]
        t0 = self._new(list(verts), [None] * 4)
        ghosts = []
        for i in range(4):
            g = list(verts)
            g[i] = _INF
            # swap two finite vertices so that infinity sits beyond the face
            j, k = [x for x in range(4) if x != i][:2]
            g[j], g[k] = g[k], g[j]
            nbrs = [None] * 4
            nbrs[i] = t0
            ghosts.append(self._new(g, nbrs))
            self.tn[t0][i] = ghosts[-1]
        self._link_new(ghosts)
        self.last = t0

    def _link_new(self, cells):
        faces = {}
        for t in cells:
            v = self.tv[t]
            for i in range(4):
                if self.tn[t][i] is not None:
                    continue
                key = frozenset(v[:i] + v[i + 1 :])
                other = faces.pop(key, None)
                if other is None:
                    faces[key] = (t, i)
                else:
                    u, j = other
                    self.tn[t][i] = u
                    self.tn[u][j] = t
        if faces:
            raise RuntimeError("unmatched faces while linking new cells")

    def _conflict(self, t, q) -> bool:
        v = self.tv[t]
        p = self.p
        if _INF in v:
            k = v.index(_INF)
            pts = [p[x] if x != _INF else q for x in v]
            o = pr.orient3d(*pts)
            if o:
                return o > 0
            face = [p[x] for j, x in enumerate(v) if j != k]
            return pr.incircle_coplanar_sos(*face, q) > 0
        return pr.insphere_sos(p[v[0]], p[v[1]], p[v[2]], p[v[3]], q) > 0

    def _locate(self, q) -> int:
        t = self.last
        if not self.alive[t]:
            t = next(i for i in range(len(self.tv) - 1, -1, -1) if self.alive[i])
        prev = -1
        p = self.p
        for _ in range(4 * len(self.tv) + 64):
            v = self.tv[t]
            if _INF in v:
                return t
            order = [0, 1, 2, 3]
            self.rng.shuffle(order)
            moved = False
            for i in order:
                nb = self.tn[t][i]
                if nb == prev:
                    continue
                pts = [p[x] for x in v]
                pts[i] = q
                if pr.orient3d(*pts) < 0:
                    prev, t = t, nb
                    moved = True
                    break
            if not moved:
                return t
        return -1

    def insert(self, idx: int):
        q = self.p[idx]
        start = self._locate(q)
        if start < 0 or not self._conflict(start, q):
            start = next(
                (t for t in range(len(self.tv)) if self.alive[t] and self._conflict(t, q)), -1
            )
            if start < 0:
                raise DegenerateInputError(f"point {idx} duplicates an inserted point")
        cavity = {start}
        stack = [start]
        boundary = []
        tested = {start: True}
        while stack:
            t = stack.pop()
            for i in range(4):
                nb = self.tn[t][i]
                if nb not in tested:
                    tested[nb] = self._conflict(nb, q)
                    if tested[nb]:
                        cavity.add(nb)
                        stack.append(nb)
                if not tested[nb]:
                    boundary.append((t, i, nb))
        new = []
        for t, i, nb in boundary:
            verts = list(self.tv[t])
            verts[i] = idx
            nbrs = [None] * 4
            nbrs[i] = nb
            c = self._new(verts, nbrs)
            back = self.tn[nb].index(t)
            self.tn[nb][back] = c
            new.append(c)
        for t in cavity:
            self.alive[t] = False
        self._link_new(new)
        self.last = next((c for c in new if _INF not in self.tv[c]), new[0])

    def result(self):
        keep = [t for t in range(len(self.tv)) if self.alive[t] and _INF not in self.tv[t]]
        remap = {t: i for i, t in enumerate(keep)}
        tets = np.array([self.tv[t] for t in keep], dtype=np.int64).reshape(-1, 4)
        nbrs = np.array(
            [[remap.get(n, -1) for n in self.tn[t]] for t in keep], dtype=np.int64
        ).reshape(-1, 4)
        return tets, nbrs


def _morton_order(pts: np.ndarray) -> np.ndarray:
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    q = ((pts - lo) / span * 1023).astype(np.uint64)
    code = np.zeros(len(pts), dtype=np.uint64)
    for bit in range(10):
        for ax in range(3):
            code |= ((q[:, ax] >> np.uint64(bit)) & np.uint64(1)) << np.uint64(3 * bit + ax)
    return np.lexsort((np.arange(len(pts)), code))


def _initial_simplex(pts: list, order) -> tuple:
    a = order[0]
    rest = iter(order[1:])
    b = next((i for i in rest if pts[i] != pts[a]), None)
    if b is None:
        raise DegenerateInputError("all points coincide")
    c = next((i for i in order if _noncollinear(pts[a], pts[b], pts[i])), None)
    if c is None:
        raise DegenerateInputError("all points are collinear")
    d = next((i for i in order if pr.orient3d(pts[a], pts[b], pts[c], pts[i]) != 0), None)
    if d is None:
        raise DegenerateInputError("all points are coplanar")
    return a, b, c, d


def _noncollinear(a, b, c) -> bool:
    from fractions import Fraction as F

    u = [F(b[k]) - F(a[k]) for k in range(3)]
    w = [F(c[k]) - F(a[k]) for k in range(3)]
    cr = (u[1] * w[2] - u[2] * w[1], u[2] * w[0] - u[0] * w[2], u[0] * w[1] - u[1] * w[0])
    return any(x != 0 for x in cr)


def _incremental(points: np.ndarray, seed: int = 0):
    pts = [tuple(float(x) for x in row) for row in points]
    if len(set(pts)) != len(pts):
        raise DegenerateInputError("point cloud contains duplicate points")
    order = [int(i) for i in _morton_order(points)]
    first = _initial_simplex(pts, order)
    bw = _BowyerWatson(pts, seed)
    bw.start(*first)
    used = set(first)
    for i in order:
        if i not in used:
            bw.insert(i)
    return bw.result()


def _qhull(points: np.ndarray):
    from scipy.spatial import Delaunay, QhullError

    try:
        d = Delaunay(points)
    except QhullError as exc:
        raise DegenerateInputError(f"qhull failed: {exc}") from exc
    tets = d.simplices.astype(np.int64).copy()
    nbrs = d.neighbors.astype(np.int64).copy()
    o = pr.orient3d_many(*(points[tets[:, k]] for k in range(4)))
    if np.any(o == 0):
        raise DegenerateInputError("qhull returned flat tetrahedra; increase the jitter")
    flip = o < 0
    tets[flip, 0], tets[flip, 1] = tets[flip, 1].copy(), tets[flip, 0].copy()
    nbrs[flip, 0], nbrs[flip, 1] = nbrs[flip, 1].copy(), nbrs[flip, 0].copy()
    return tets, nbrs


def check_local_delaunay(points: np.ndarray, tets: np.ndarray, nbrs: np.ndarray) -> int:
    """
    Count interior faces whose far vertex lies strictly inside the near
    tetrahedron's circumsphere (exact predicates). Zero means Delaunay.
    """
    t_idx, f_idx = np.nonzero(nbrs >= 0)
    if not len(t_idx):
        return 0
    other = nbrs[t_idx, f_idx]
    # the far vertex is the vertex of `other` whose opposite neighbour is t
    back = np.argmax(nbrs[other] == t_idx[:, None], axis=1)
    far = tets[other, back]
    cells = tets[t_idx]
    s = pr.insphere_many(*(points[cells[:, k]] for k in range(4)), points[far])
    return int(np.count_nonzero(s > 0))


def delaunay3(cloud, engine: str = "auto", seed: int = 0) -> Triangulation3:
    """
    Delaunay triangulation of a point cloud.

    ``engine="incremental"`` inserts points one at a time (Bowyer-Watson)
    using exact predicates with symbolic tie-breaking, so it also handles
    unperturbed grids. ``engine="qhull"`` delegates to Qhull and then checks
    every interior face with the exact in-sphere predicate. ``"auto"`` uses
    the incremental engine up to ``QHULL_THRESHOLD`` points.

    For a jittered :class:`PointCloud3` the result must also be Delaunay for
    the exact voxel centres (see :func:`grid_violations`); otherwise the
    offsets are scaled down by ``JITTER_SHRINK`` and the cloud triangulated
    again. The returned ``cloud`` carries the jitter actually used.
    """
    pc = cloud if isinstance(cloud, PointCloud3) else None
    points = np.ascontiguousarray(pc.points if pc is not None else cloud, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError("points must be an (n, 3) array")
    if len(points) < 4:
        raise DegenerateInputError(f"need at least 4 points, got {len(points)}")
    if engine == "auto":
        engine = "incremental" if len(points) <= QHULL_THRESHOLD else "qhull"
    if engine == "incremental":
        tets, nbrs = _incremental(points, seed)
    elif engine == "qhull":
        tets, nbrs = _qhull(points)
        bad = check_local_delaunay(points, tets, nbrs)
        if bad:
            raise DegenerateInputError(f"qhull output has {bad} non-Delaunay faces")
    else:
        raise ValueError(f"unknown engine {engine!r}")
    if not len(tets):
        raise DegenerateInputError("points are coplanar")
    if pc is not None and pc.jitter > 0 and grid_violations(pc, tets, nbrs):
        # the offsets flipped a configuration that is not a tie on the grid;
        # shrink them and triangulate again, ending with symbolic ties only
        smaller = pc.jitter / JITTER_SHRINK if pc.jitter > MIN_JITTER else 0.0
        return delaunay3(_rescaled(pc, smaller), engine, seed)
    tets.setflags(write=False)
    nbrs.setflags(write=False)
    return Triangulation3(points, tets, nbrs, engine, pc)


def grid_violations(pc: PointCloud3, tets: np.ndarray, nbrs: np.ndarray) -> int:
    """
    Count defects of a jittered triangulation read on the exact centres.

    A defect is an inverted tetrahedron or an interior face whose far vertex
    lies strictly inside the circumsphere of a non-flat tetrahedron. Flat
    tetrahedra are allowed: they stand for co-spherical ties. Zero means the
    triangulation is a Delaunay triangulation of the exact centres.
    """
    pos = pr.orient3d_many(*(pc.points[tets[:, k]] for k in range(4)))
    if pc.isotropic and int(np.ptp(pc.voxels, axis=0).max()) <= _INT_SPAN:
        # voxel indices are an exact similarity image of the centres
        X = pc.voxels.astype(np.int64)
        # the package's orient3d sign is the negated determinant
        o = -np.sign(_det3_int(*(X[tets[:, k]] - X[tets[:, 3]] for k in range(3))))
    else:
        X = pc.centers
        o = pr.orient3d_many(*(X[tets[:, k]] for k in range(4)))
    bad = int(np.count_nonzero(o == -pos))
    t_idx, f_idx = np.nonzero((nbrs >= 0) & (o == pos)[:, None])
    if not len(t_idx):
        return bad
    other = nbrs[t_idx, f_idx]
    back = np.argmax(nbrs[other] == t_idx[:, None], axis=1)
    far = tets[other, back]
    cells = tets[t_idx]
    if X.dtype == np.int64:
        e = X[far]
        r = [X[cells[:, k]] - e for k in range(4)]
        lift = [np.einsum("ij,ij->i", v, v) for v in r]
        # Laplace expansion of the lifted 4x4 determinant along its last column
        d = sum(
            (-1) ** (k + 1) * lift[k] * _det3_int(*(r[i] for i in range(4) if i != k))
            for k in range(4)
        )
        inside = (d != 0) & ((d > 0) == (o[t_idx] < 0))
        return bad + int(np.count_nonzero(inside))
    s = pr.insphere_many(*(X[cells[:, k]] for k in range(4)), X[far])
    return bad + int(np.count_nonzero(s > 0))


def _det3_int(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    return (
        u[:, 0] * (v[:, 1] * w[:, 2] - v[:, 2] * w[:, 1])
        - u[:, 1] * (v[:, 0] * w[:, 2] - v[:, 2] * w[:, 0])
        + u[:, 2] * (v[:, 0] * w[:, 1] - v[:, 1] * w[:, 0])
    )


def _rescaled(pc: PointCloud3, jitter: float) -> PointCloud3:
    pts = pc.centers + (pc.points - pc.centers) * (jitter / pc.jitter)
    pts.setflags(write=False)
    return PointCloud3(pts, pc.centers, pc.voxels, pc.dims, pc.spacing, pc.origin, float(jitter), pc.seed)


# -------------------------------------------------------------- alpha values


def _sq(x):
    return (x * x).sum(axis=-1)


def _cross(u, v):
    return np.stack(
        [
            u[..., 1] * v[..., 2] - u[..., 2] * v[..., 1],
            u[..., 2] * v[..., 0] - u[..., 0] * v[..., 2],
            u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0],
        ],
        axis=-1,
    )


def _dot(u, v):
    return (u * v).sum(axis=-1)


def _ratio(num, den):
    if num.dtype == object:
        return np.array([float(Fraction(n) / Fraction(d)) if d else np.inf for n, d in zip(num, den)])
    with np.errstate(divide="ignore", invalid="ignore"):
        return num.astype(float) / den.astype(float)


@dataclass(frozen=True, eq=False)
class AlphaFiltration:
    """
    Alpha filtration of a Delaunay triangulation, held as arrays.

    Simplices of each dimension are vertex-index arrays with matching value
    arrays (mm²). ``tri_cofaces`` lists the one or two tetrahedra of each
    triangle (``-1`` marks the outside of the hull).
    """

    n_vertices: int
    edges: np.ndarray
    triangles: np.ndarray
    tetrahedra: np.ndarray
    edge_values: np.ndarray
    tri_values: np.ndarray
    tet_values: np.ndarray
    tri_edges: np.ndarray
    tet_tris: np.ndarray
    tri_cofaces: np.ndarray

    @property
    def size(self) -> int:
        return self.n_vertices + len(self.edges) + len(self.triangles) + len(self.tetrahedra)

    def simplices(self):
        """Yield ``(dim, vertex tuple, value)`` for every simplex."""
        for v in range(self.n_vertices):
            yield 0, (v,), 0.0
        for d, arr, val in (
            (1, self.edges, self.edge_values),
            (2, self.triangles, self.tri_values),
            (3, self.tetrahedra, self.tet_values),
        ):
            for s, x in zip(arr, val):
                yield d, tuple(int(i) for i in s), float(x)

    def to_complex(self, check: bool = True) -> FilteredComplex:
        """The full filtered complex, ordered by (value, dim, index)."""
        nv, ne, nt = self.n_vertices, len(self.edges), len(self.triangles)
        dims = np.concatenate(
            [np.zeros(nv), np.ones(ne), np.full(nt, 2), np.full(len(self.tetrahedra), 3)]
        ).astype(int)
        values = np.concatenate([np.zeros(nv), self.edge_values, self.tri_values, self.tet_values])
        bounds = [()] * nv
        bounds += [tuple(e) for e in self.edges.tolist()]
        bounds += [tuple(nv + x for x in t) for t in self.tri_edges.tolist()]
        bounds += [tuple(nv + ne + x for x in t) for t in self.tet_tris.tolist()]
        return FilteredComplex.from_cells(dims, values, bounds, SUBLEVEL, check)


def _unique_rows(rows: np.ndarray, n: int) -> tuple:
    """Sorted unique rows of small vertex-index tuples via packed int64 keys."""
    if n ** rows.shape[1] >= 2**63:
        out, inv = np.unique(rows, axis=0, return_inverse=True)
        return out, inv.reshape(-1)
    key = np.zeros(len(rows), dtype=np.int64)
    for j in range(rows.shape[1]):
        key = key * n + rows[:, j]
    _, first, inv = np.unique(key, return_index=True, return_inverse=True)
    return rows[first], inv.reshape(-1)


def _peel_hull_slivers(flat: np.ndarray, nbrs: np.ndarray) -> np.ndarray:
    """
    Keep-mask after collapsing flat tetrahedra off the convex hull.

    The jitter can glue zero-volume slivers onto flat parts of the hull. In
    exact coordinates they add no volume, and collapsing them (with their
    exposed faces) leaves a Delaunay triangulation of the unperturbed points.
    Flat tetrahedra strictly inside, such as those spanning a co-circular
    square between two grid cells, stay.
    """
    alive = np.ones(len(flat), dtype=bool)
    stack = [int(t) for t in np.flatnonzero(flat & (nbrs < 0).any(axis=1))]
    while stack:
        t = stack.pop()
        if not alive[t]:
            continue
        nb = nbrs[t]
        if not np.any((nb < 0) | ~alive[np.maximum(nb, 0)]):
            continue
        alive[t] = False
        stack.extend(int(u) for u in nb if u >= 0 and alive[u] and flat[u])
    return alive


def _flat_values(flat, tet_tris, cof, opp, tet_val, tri_own, X, ta, Nc, Dc) -> tuple:
    """
    Values of the flat tetrahedra that survive the hull peel.

    Such tetrahedra are co-circular and, in exact coordinates, together stand
    for one polygonal Delaunay face between two cells. Each coplanar group
    takes the value that face would have: the squared radius of the circle
    when no vertex of the two adjacent cells lies strictly inside its
    diametral ball, else the smaller of the two cell values. The faces of
    the group inherit that attachment, since a sliver would otherwise hide
    the far side from them.

    Returns the values and the attachment flag of each flat tetrahedron.
    """
    idx = np.flatnonzero(flat)
    local = np.full(len(flat), -1, dtype=np.int64)
    local[idx] = np.arange(len(idx))
    faces = tet_tris[idx].ravel()
    me = np.repeat(idx, 4)
    side = (cof[faces, 0] == me).astype(np.int64)  # column of the tet across the face
    other = cof[faces, side]
    far = opp[faces, side]
    both = (other >= 0) & flat[np.maximum(other, 0)]
    graph = coo_matrix(
        (np.ones(int(both.sum())), (local[me[both]], local[other[both]])), shape=(len(idx), len(idx))
    )
    _, group = connected_components(graph, directed=False)
    ng = int(group.max()) + 1 if len(group) else 0
    # any face serves as the group's reference: they all share the circle
    ref = np.full(ng, -1, dtype=np.int64)
    ref[group] = tet_tris[idx, 0]
    cell = (other >= 0) & ~both
    g = group[local[me[cell]]]
    f0 = ref[g]
    d = X[far[cell]] - ta[f0]
    inside = np.asarray(Dc[f0] * _sq(d) < 2 * _dot(d, Nc[f0]), dtype=bool)
    att = np.zeros(ng, dtype=bool)
    att[g[inside]] = True
    low = np.full(ng, np.inf)
    np.minimum.at(low, g, tet_val[other[cell]])
    value = np.where(att, low, tri_own[ref])
    return value[group], att[group]


def alpha_filtration(tri: Triangulation3, exact: str = "auto") -> AlphaFiltration:
    """
    Alpha values of every simplex of the Delaunay complex (squared radii, mm²).

    Each simplex gets the squared radius of its circumsphere (the smallest
    sphere through its vertices) when that sphere is empty of the far
    vertices of its cofaces, and otherwise the smallest value among its
    cofaces. Zero-volume slivers that the jitter glues onto the hull are
    collapsed first; co-circular slivers inside take the value of the
    polygonal face they stand for.

    ``exact="auto"`` evaluates in exact arithmetic on the unjittered voxel
    grid when the triangulation came from a point cloud (integer indices
    for isotropic spacing, rationals otherwise) and on the exact input
    coordinates for a raw cloud. The jitter then only decides the
    combinatorics. ``"none"`` uses plain floating point on the triangulated
    coordinates.
    """
    tets = tri.tetrahedra
    pc = tri.cloud
    if exact not in ("auto", "none"):
        raise ValueError(f"unknown exact mode {exact!r}")
    scale = 1.0
    if exact == "none":
        X = tri.points
    elif pc is not None and pc.isotropic:
        X = pc.voxels.astype(np.int64)
        scale = pc.spacing[0] ** 2
        span = int(np.abs(X[tets] - X[tets[:, :1]]).max()) if len(tets) else 0
        if span > 60:
            X = X.astype(object)
    elif pc is not None:
        # anisotropic grid: index times the exact rational spacing per axis
        sp = [Fraction(float(v)) for v in pc.spacing]
        X = np.array([[int(k) * sp[i] for i, k in enumerate(row)] for row in pc.voxels], dtype=object)
        X = X.reshape(-1, 3)
    else:
        X = np.array([[Fraction(float(v)) for v in row] for row in tri.points], dtype=object)
        X = X.reshape(-1, 3)
    if len(tets):
        a = X[tets[:, 0]]
        det = _dot(X[tets[:, 1]] - a, _cross(X[tets[:, 2]] - a, X[tets[:, 3]] - a))
        keep = _peel_hull_slivers(np.asarray(det == 0, dtype=bool), tri.neighbors)
        tets = tets[keep]
    m = len(tets)
    # faces: face i of a tetrahedron is opposite vertex i
    face_idx = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
    all_faces = np.sort(tets[:, face_idx].reshape(-1, 3), axis=1)
    triangles, tri_inv = _unique_rows(all_faces, len(X))
    tri_inv = tri_inv.reshape(-1)
    tet_tris = tri_inv.reshape(m, 4)
    nt = len(triangles)
    cof = np.full((nt, 2), -1, dtype=np.int64)
    opp = np.full((nt, 2), -1, dtype=np.int64)
    owner = np.repeat(np.arange(m), 4)
    far = tets.reshape(-1)
    # stable assignment of the (at most two) cofaces per triangle
    srt = np.argsort(tri_inv, kind="stable")
    ti = tri_inv[srt]
    is_first = np.r_[True, ti[1:] != ti[:-1]]
    cof[ti[is_first], 0] = owner[srt][is_first]
    opp[ti[is_first], 0] = far[srt][is_first]
    cof[ti[~is_first], 1] = owner[srt][~is_first]
    opp[ti[~is_first], 1] = far[srt][~is_first]

    edge_idx = np.array([[1, 2], [0, 2], [0, 1]])  # edge opposite triangle vertex k
    all_edges = triangles[:, edge_idx].reshape(-1, 2)
    edges, edge_inv = _unique_rows(all_edges, len(X))
    edge_inv = edge_inv.reshape(-1)
    tri_edges = edge_inv.reshape(nt, 3)
    edge_third = triangles.reshape(-1)  # vertex opposite each triangle edge

    # tetrahedra
    a = X[tets[:, 0]]
    U, V, W = X[tets[:, 1]] - a, X[tets[:, 2]] - a, X[tets[:, 3]] - a
    det = _dot(U, _cross(V, W))
    numv = (
        _sq(U)[:, None] * _cross(V, W)
        + _sq(V)[:, None] * _cross(W, U)
        + _sq(W)[:, None] * _cross(U, V)
    )
    flat = det == 0
    tet_val = _ratio(_sq(numv), 4 * det * det)

    # triangles: own circumradius and circumcentre numerator for the Gabriel test
    ta = X[triangles[:, 0]]
    tU, tV = X[triangles[:, 1]] - ta, X[triangles[:, 2]] - ta
    n = _cross(tU, tV)
    n2 = _sq(n)
    if np.any(n2 == 0):
        raise DegenerateInputError("collinear triangle inside the Delaunay complex")
    tri_own = np.asarray(_ratio(_sq(tU) * _sq(tV) * _sq(tU - tV), 4 * n2), dtype=float)
    Nc = _sq(tU)[:, None] * _cross(tV, n) + _sq(tV)[:, None] * _cross(n, tU)
    Dc = 2 * n2
    tet_val = np.asarray(tet_val, dtype=float)
    flat = np.asarray(flat, dtype=bool)
    if np.any(flat):
        tet_val[flat], group_att = _flat_values(flat, tet_tris, cof, opp, tet_val, tri_own, X, ta, Nc, Dc)

    attached = np.zeros(nt, dtype=bool)
    for k in range(2):
        has = opp[:, k] >= 0
        w = X[opp[has, k]] - ta[has]
        inside = Dc[has] * _sq(w) < 2 * _dot(w, Nc[has])
        attached[np.flatnonzero(has)[np.asarray(inside, dtype=bool)]] = True
    if np.any(flat):
        # faces of a sliver group share the circle; the group decides for all
        attached[tet_tris[flat].ravel()] = np.repeat(group_att, 4)
    coface_min = np.full(nt, np.inf)
    np.minimum.at(coface_min, tet_tris.reshape(-1), np.repeat(tet_val, 4))
    tri_val = np.where(attached, coface_min, tri_own)

    # edges
    ea, eb = X[edges[:, 0]], X[edges[:, 1]]
    e2 = _sq(eb - ea)
    edge_own = _ratio(e2, 4 * np.ones_like(e2))
    q = X[edge_third]
    ev = edge_inv
    inside = _sq(2 * q - X[edges[ev, 0]] - X[edges[ev, 1]]) < e2[ev]
    e_att = np.zeros(len(edges), dtype=bool)
    e_att[ev[np.asarray(inside, dtype=bool)]] = True
    e_min = np.full(len(edges), np.inf)
    np.minimum.at(e_min, ev, np.repeat(tri_val, 3))
    edge_val = np.where(e_att, e_min, edge_own)

    out = []
    for arr in (edge_val, tri_val, tet_val):
        out.append(np.asarray(arr, dtype=float) * scale)
    return AlphaFiltration(
        int(tri.points.shape[0]),
        edges,
        triangles,
        tets,
        out[0],
        out[1],
        out[2],
        tri_edges,
        tet_tris,
        cof,
    )


def _h2_dual(af: AlphaFiltration) -> np.ndarray:
    m = len(af.tetrahedra)
    outer = m
    nt = len(af.triangles)
    tet_order = np.lexsort((np.arange(m), af.tet_values))
    rank = np.empty(m + 1, dtype=np.int64)
    rank[tet_order] = np.arange(m)
    rank[outer] = m + 1
    u = np.where(af.tri_cofaces[:, 0] >= 0, af.tri_cofaces[:, 0], outer)
    v = np.where(af.tri_cofaces[:, 1] >= 0, af.tri_cofaces[:, 1], outer)
    # reverse of the forward (value, index) order
    eorder = np.lexsort((-np.arange(nt), -af.tri_values))
    pe, pn = dual_merge_pairs(m + 1, rank, eorder, u, v)
    return np.column_stack([af.tri_values[pe], af.tet_values[pn]])


def h2_diagram(
    af: AlphaFiltration, tau: float = DEFAULT_TAU, method: str = "dual"
) -> PersistenceDiagram:
    """
    H2 diagram (mm²) of an alpha filtration with pairs of persistence <= ``tau`` removed.

    ``method="reduce"`` runs the boundary-matrix reduction on the whole
    complex. ``method="dual"`` pairs each void-closing triangle with the last
    tetrahedron that fills the void, by a union-find sweep over tetrahedra in
    decreasing alpha; it gives the same diagram in near-linear time.
    """
    if method == "reduce":
        dgm = reduce(af.to_complex(check=False), units="mm2")[2]
        if len(dgm.essential):
            raise RuntimeError("alpha complex has an essential H2 class")
    elif method == "dual":
        dgm = PersistenceDiagram(_h2_dual(af), 2, SUBLEVEL, "mm2")
    else:
        raise ValueError(f"unknown method {method!r}")
    return filter_by_persistence(dgm, tau)
