"""
Filtered complexes, persistence by boundary-matrix reduction, persistence
diagrams and the bottleneck distance.

All homology is computed with GF(2) coefficients. Superlevel filtrations are
reduced as sublevel filtrations of the negated values; diagrams always store
the values in the caller's direction.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

__all__ = [
    "MalformedComplexError",
    "DiagramMismatchError",
    "FilteredComplex",
    "PersistenceDiagram",
    "DiagramStats",
    "reduce",
    "filter_by_persistence",
    "diagram_stats",
    "bottleneck",
    "write_diagram_csv",
    "read_diagram_csv",
]

SUBLEVEL = "sublevel"
SUPERLEVEL = "superlevel"
_DIRECTIONS = (SUBLEVEL, SUPERLEVEL)


class MalformedComplexError(ValueError):
    """Raised when a filtered complex violates its ordering or face invariants."""


class DiagramMismatchError(ValueError):
    """Raised when two diagrams with different metadata are compared."""


def _key(values: np.ndarray, direction: str) -> np.ndarray:
    if direction not in _DIRECTIONS:
        raise ValueError(f"unknown filtration direction {direction!r}")
    return -values if direction == SUPERLEVEL else values


@dataclass(frozen=True, eq=False)
class FilteredComplex:
    """
    Cells in filtration order.

    Parameters
    ----------
    dims : array of int
        Dimension of every cell.
    values : array of float
        Filtration value of every cell, in the caller's units.
    boundaries : sequence of tuples
        ``boundaries[i]`` lists the indices of the facets of cell ``i``.
        Every index must be smaller than ``i``.
    direction : {"sublevel", "superlevel"}
        Sublevel complexes have non-decreasing values along the order,
        superlevel complexes non-increasing values.
    check : bool
        Validate ordering, facet dimensions and that the boundary of every
        boundary vanishes. Construction raises :class:`MalformedComplexError`
        on the first violation.
    """

    dims: np.ndarray
    values: np.ndarray
    boundaries: tuple
    direction: str = SUBLEVEL
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        dims = np.asarray(self.dims, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        boundaries = tuple(tuple(int(f) for f in b) for b in self.boundaries)
        if not (len(dims) == len(values) == len(boundaries)):
            raise MalformedComplexError("dims, values and boundaries differ in length")
        dims.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "boundaries", boundaries)
        _key(values, self.direction)
        if self.check:
            self.validate()

    def __len__(self) -> int:
        return len(self.dims)

    @property
    def max_dim(self) -> int:
        return int(self.dims.max()) if len(self.dims) else -1

    @classmethod
    def from_cells(
        cls,
        dims: Sequence[int],
        values: Sequence[float],
        boundaries: Sequence[Sequence[int]],
        direction: str = SUBLEVEL,
        check: bool = True,
    ) -> "FilteredComplex":
        """Sort unordered cells by (value, dim, index) and relabel their boundaries."""
        dims = np.asarray(dims, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        key = _key(values, direction)
        order = np.lexsort((np.arange(len(dims)), dims, key))
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        new_bd = tuple(tuple(sorted(int(rank[f]) for f in boundaries[i])) for i in order)
        return cls(dims[order], values[order], new_bd, direction, check)

    def validate(self) -> None:
        key = _key(self.values, self.direction)
        if np.any(np.isnan(key)):
            raise MalformedComplexError("NaN filtration value")
        if len(key) > 1 and np.any(np.diff(key) < 0):
            bad = int(np.flatnonzero(np.diff(key) < 0)[0]) + 1
            raise MalformedComplexError(f"filtration not monotone at cell {bad}")
        dims = self.dims
        for i, bd in enumerate(self.boundaries):
            d = dims[i]
            if d == 0:
                if bd:
                    raise MalformedComplexError(f"vertex {i} has a nonempty boundary")
                continue
            acc: set = set()
            for f in bd:
                if f >= i or f < 0:
                    raise MalformedComplexError(f"facet {f} of cell {i} does not precede it")
                if dims[f] != d - 1:
                    raise MalformedComplexError(f"facet {f} of cell {i} has wrong dimension")
                acc ^= set(self.boundaries[f])
            if acc:
                raise MalformedComplexError(f"boundary of boundary of cell {i} is nonzero")


@dataclass(frozen=True, eq=False)
class PersistenceDiagram:
    """
    Finite persistence pairs of one homology dimension.

    ``pairs`` is an ``(n, 2)`` array of ``(birth, death)``. Pairs with zero
    persistence are dropped at construction. Classes that never die are kept
    apart in ``essential`` (their births).
    """

    pairs: np.ndarray
    dim: int
    direction: str = SUBLEVEL
    units: str = "mm"
    essential: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=float).reshape(-1, 2)
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        if np.any(~np.isfinite(pairs)):
            raise ValueError("finite pairs must have finite birth and death")
        ess = np.asarray(self.essential, dtype=float).reshape(-1)
        _key(pairs[:, 0], self.direction)
        if self.direction == SUBLEVEL and np.any(pairs[:, 0] > pairs[:, 1]):
            raise ValueError("sublevel pairs need birth <= death")
        if self.direction == SUPERLEVEL and np.any(pairs[:, 0] < pairs[:, 1]):
            raise ValueError("superlevel pairs need birth >= death")
        pairs.setflags(write=False)
        ess.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "essential", ess)
        object.__setattr__(self, "dim", int(self.dim))

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def births(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def deaths(self) -> np.ndarray:
        return self.pairs[:, 1]

    @property
    def persistence(self) -> np.ndarray:
        return np.abs(self.pairs[:, 1] - self.pairs[:, 0])

    def same_kind(self, other: "PersistenceDiagram") -> bool:
        return (self.dim, self.direction, self.units) == (other.dim, other.direction, other.units)

    def sorted_pairs(self) -> np.ndarray:
        """Pairs in lexicographic order; convenient for multiset comparison."""
        if not len(self.pairs):
            return self.pairs.copy()
        return self.pairs[np.lexsort((self.pairs[:, 1], self.pairs[:, 0]))]

    def with_pairs(self, pairs, essential=None) -> "PersistenceDiagram":
        return PersistenceDiagram(
            pairs,
            self.dim,
            self.direction,
            self.units,
            self.essential if essential is None else essential,
        )

    @classmethod
    def empty(cls, dim: int, direction: str = SUBLEVEL, units: str = "mm") -> "PersistenceDiagram":
        return cls(np.empty((0, 2)), dim, direction, units)


def reduce(complex_: FilteredComplex, units: str = "mm", clearing: bool = True) -> dict:
    """
    Persistence pairing of a filtered complex over GF(2).

    Columns are processed from the top dimension down so that every pivot of
    a reduced ``d``-column clears the corresponding ``(d-1)``-column
    (the clearing optimisation). Columns are stored as Python integers used
    as bit sets, which makes column addition a single XOR.

    Returns
    -------
    dict
        ``{dim: PersistenceDiagram}`` for every dimension ``0 .. max_dim``.
        Unpaired classes are listed in each diagram's ``essential`` field.
    """
    n = len(complex_)
    dims = complex_.dims
    values = complex_.values
    boundaries = complex_.boundaries
    if complex_.check is False:
        complex_.validate()
    max_dim = complex_.max_dim

    by_dim = [np.flatnonzero(dims == d) for d in range(max_dim + 1)]
    pivot_owner: dict = {}  # row -> reduced column (as bitset) whose low is row
    paired = np.zeros(n, dtype=bool)
    births: list = [[] for _ in range(max_dim + 1)]
    deaths: list = [[] for _ in range(max_dim + 1)]

    for d in range(max_dim, 0, -1):
        for j in by_dim[d]:
            j = int(j)
            if clearing and paired[j]:
                continue
            col = 0
            for f in boundaries[j]:
                col ^= 1 << f
            while col:
                low = col.bit_length() - 1
                other = pivot_owner.get(low)
                if other is None:
                    break
                col ^= other
            if col:
                low = col.bit_length() - 1
                pivot_owner[low] = col
                paired[low] = True
                paired[j] = True
                births[d - 1].append(values[low])
                deaths[d - 1].append(values[j])

    out = {}
    for d in range(max_dim + 1):
        idx = by_dim[d]
        ess = values[idx[~paired[idx]]]
        pairs = np.column_stack([births[d], deaths[d]]) if births[d] else np.empty((0, 2))
        out[d] = PersistenceDiagram(pairs, d, complex_.direction, units, ess)
    return out


def filter_by_persistence(d: PersistenceDiagram, tau: float) -> PersistenceDiagram:
    """Keep the pairs whose persistence is strictly greater than ``tau``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    keep = d.persistence > tau
    ess = d.essential if math.inf > tau else d.essential[:0]
    return d.with_pairs(d.pairs[keep], ess)


@dataclass(frozen=True)
class DiagramStats:
    count: int
    mean: float | None
    max: float | None

    @property
    def defined(self) -> bool:
        return self.count > 0


def diagram_stats(d: PersistenceDiagram) -> DiagramStats:
    p = d.persistence
    if not len(p):
        return DiagramStats(0, None, None)
    return DiagramStats(len(p), float(p.mean()), float(p.max()))


def _feasible(cost: np.ndarray, half_a: np.ndarray, half_b: np.ndarray, r: float) -> bool:
    # Mendelsohn-Dulmage: a matching covering the points of A that cannot go
    # to the diagonal and one covering those of B combine into one covering
    # both, so two one-sided maximum matchings decide feasibility.
    adj = cost <= r
    must_a = np.flatnonzero(half_a > r)
    must_b = np.flatnonzero(half_b > r)
    if len(must_a):
        sub = adj[must_a]
        if not sub.any(axis=1).all():
            return False
        m = maximum_bipartite_matching(csr_matrix(sub), perm_type="column")
        if np.count_nonzero(m >= 0) < len(must_a):
            return False
    if len(must_b):
        sub = adj[:, must_b].T
        if not sub.any(axis=1).all():
            return False
        m = maximum_bipartite_matching(csr_matrix(sub), perm_type="column")
        if np.count_nonzero(m >= 0) < len(must_b):
            return False
    return True


def bottleneck(
    d1: PersistenceDiagram, d2: PersistenceDiagram, essential: str = "strip"
) -> float:
    """
    Exact bottleneck distance between two diagrams of the same kind.

    The answer is one of the pairwise L-infinity distances or one of the
    half-persistences (distance to the diagonal), so a binary search over that
    sorted candidate set with a matching feasibility test at each step gives
    the exact value.

    Parameters
    ----------
    essential : {"strip", "match"}
        ``"strip"`` ignores essential classes. ``"match"`` pairs them by
        sorted birth and returns ``inf`` if their counts differ.
    """
    if not d1.same_kind(d2):
        raise DiagramMismatchError(
            f"cannot compare {(d1.dim, d1.direction, d1.units)} with "
            f"{(d2.dim, d2.direction, d2.units)}"
        )
    ess_cost = 0.0
    if essential == "match":
        e1, e2 = np.sort(d1.essential), np.sort(d2.essential)
        if len(e1) != len(e2):
            return math.inf
        if len(e1):
            ess_cost = float(np.max(np.abs(e1 - e2)))
    elif essential != "strip":
        raise ValueError(f"unknown essential policy {essential!r}")

    a, b = d1.pairs, d2.pairs
    half_a = np.abs(a[:, 1] - a[:, 0]) / 2
    half_b = np.abs(b[:, 1] - b[:, 0]) / 2
    if len(a) and len(b):
        cost = np.maximum(
            np.abs(a[:, None, 0] - b[None, :, 0]), np.abs(a[:, None, 1] - b[None, :, 1])
        )
    else:
        cost = np.empty((len(a), len(b)))
    cand = np.unique(np.concatenate([[0.0], cost.ravel(), half_a, half_b]))
    lo, hi = 0, len(cand) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if _feasible(cost, half_a, half_b, cand[mid]):
            hi = mid
        else:
            lo = mid + 1
    return max(float(cand[lo]), ess_cost)


_CSV_COLUMNS = ["dim", "birth", "death", "units", "direction"]


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else repr(float(x))


def write_diagram_csv(
    target,
    diagrams: Iterable[PersistenceDiagram],
    extra: Sequence[dict] | None = None,
) -> None:
    """
    Write diagrams as ``dim,birth,death,units,direction`` rows.

    ``extra`` optionally gives one dict of additional columns per diagram
    (for example ``{"axis": "axial", "slice_index": 12}``). Essential classes
    are written with death ``inf``. ``target`` is a path or a text stream.
    """
    diagrams = list(diagrams)
    extra = list(extra) if extra is not None else [{} for _ in diagrams]
    extra_cols: list = []
    for e in extra:
        for k in e:
            if k not in extra_cols:
                extra_cols.append(k)
    own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
    fh = open(target, "w", newline="", encoding="utf-8") if own else target
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_CSV_COLUMNS + extra_cols)
        for dgm, ex in zip(diagrams, extra):
            tail = [ex.get(k, "") for k in extra_cols]
            for b, dth in dgm.pairs:
                w.writerow([dgm.dim, _fmt(b), _fmt(dth), dgm.units, dgm.direction] + tail)
            for b in dgm.essential:
                w.writerow([dgm.dim, _fmt(b), "inf", dgm.units, dgm.direction] + tail)
    finally:
        if own:
            fh.close()


def read_diagram_csv(source, group_by: Sequence[str] = ()) -> dict:
    """
    Read diagrams written by :func:`write_diagram_csv`.

    Rows are grouped by ``(dim, units, direction)`` plus the ``group_by``
    extra columns. Returns a dict from that key tuple to a diagram.
    """
    own = isinstance(source, (str, bytes)) or hasattr(source, "__fspath__")
    fh = open(source, newline="", encoding="utf-8") if own else io.StringIO(source.read())
    try:
        rows = list(csv.DictReader(fh))
    finally:
        fh.close()
    groups: dict = {}
    for row in rows:
        key = (int(row["dim"]), row["units"], row["direction"]) + tuple(
            row[k] for k in group_by
        )
        groups.setdefault(key, ([], []))
        birth, death = float(row["birth"]), float(row["death"])
        if math.isinf(death):
            groups[key][1].append(birth)
        else:
            groups[key][0].append((birth, death))
    out = {}
    for key, (pairs, ess) in groups.items():
        out[key] = PersistenceDiagram(
            np.array(pairs, dtype=float).reshape(-1, 2), key[0], key[2], key[1], np.array(ess)
        )
    return out
