"""Compiled inner loops shared by the slice and alpha pipelines."""

import numpy as np
from numba import njit


@njit(cache=True)
def lower_envelope_1d(f, w2, out, v, z):
    """
    Exact 1D squared distance transform of ``f`` (Felzenszwalb-Huttenlocher).

    ``out[p] = min_q f[q] + w2 * (p - q)**2``. Entries of ``f`` equal to
    ``inf`` are sites that never win. ``v`` and ``z`` are scratch buffers of
    length ``len(f)`` and ``len(f) + 1``.
    """
    n = f.shape[0]
    k = -1
    for q in range(n):
        if f[q] == np.inf:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        while True:
            r = v[k]
            s = ((f[q] + w2 * q * q) - (f[r] + w2 * r * r)) / (2.0 * w2 * (q - r))
            if s <= z[k]:
                k -= 1
                if k < 0:
                    break
            else:
                break
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
        else:
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
    if k < 0:
        for p in range(n):
            out[p] = np.inf
        return
    k = 0
    for p in range(n):
        while z[k + 1] < p:
            k += 1
        r = v[k]
        out[p] = f[r] + w2 * (p - r) * (p - r)


@njit(cache=True)
def edt_squared_2d(background, wx2, wy2):
    """Squared distance from every pixel to the nearest ``True`` pixel of ``background``."""
    nx, ny = background.shape
    col = np.empty((nx, ny))
    for i in range(nx):
        for j in range(ny):
            col[i, j] = 0.0 if background[i, j] else np.inf
    tmp = np.empty((nx, ny))
    m = max(nx, ny)
    v = np.empty(m, dtype=np.int64)
    z = np.empty(m + 1)
    buf = np.empty(m)
    out = np.empty(m)
    for i in range(nx):
        for j in range(ny):
            buf[j] = col[i, j]
        lower_envelope_1d(buf[:ny], wy2, out[:ny], v, z)
        for j in range(ny):
            tmp[i, j] = out[j]
    res = np.empty((nx, ny))
    for j in range(ny):
        for i in range(nx):
            buf[i] = tmp[i, j]
        lower_envelope_1d(buf[:nx], wx2, out[:nx], v, z)
        for i in range(nx):
            res[i, j] = out[i]
    return res


@njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(cache=True)
def dual_merge_pairs(n_nodes, node_rank, edge_order, edge_u, edge_v):
    """
    Elder-rule merging on a dual graph swept in reverse filtration order.

    Nodes are top cells plus one outer node; ``node_rank`` gives each node's
    position in the forward filtration (the outer node carries the largest
    rank). Edges are codimension-one cells, visited in ``edge_order``. When
    an edge joins two components, the component whose oldest node has the
    smaller rank dies; the edge and that node form a persistence pair.

    Returns two arrays: the pairing edge ids and the matching node ids.
    """
    parent = np.arange(n_nodes)
    oldest = np.arange(n_nodes)
    out_e = np.empty(edge_order.shape[0], dtype=np.int64)
    out_n = np.empty(edge_order.shape[0], dtype=np.int64)
    count = 0
    for t in range(edge_order.shape[0]):
        e = edge_order[t]
        a = _find(parent, edge_u[e])
        b = _find(parent, edge_v[e])
        if a == b:
            continue
        oa = oldest[a]
        ob = oldest[b]
        if node_rank[oa] < node_rank[ob]:
            out_e[count] = e
            out_n[count] = oa
            parent[a] = b
        else:
            out_e[count] = e
            out_n[count] = ob
            parent[b] = a
        count += 1
    return out_e[:count], out_n[:count]
