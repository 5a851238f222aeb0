"""
Robust orientation and in-sphere predicates.

Each predicate evaluates in floating point first and accepts the sign when it
exceeds Shewchuk's forward error bound; otherwise it recomputes the
determinant exactly with rationals. Vectorised variants apply the same filter
to whole arrays and only fall back to exact arithmetic for the rows that need
it.

Sign conventions
----------------
``orient3d(a, b, c, d) > 0`` when ``d`` lies on the side of the plane
``abc`` that ``(b - a) x (c - a)`` points to.
``insphere(a, b, c, d, e) > 0`` when ``e`` lies strictly inside the sphere
through ``a, b, c, d`` and ``orient3d(a, b, c, d) > 0``.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

__all__ = [
    "orient3d",
    "insphere",
    "insphere_sos",
    "incircle_coplanar_sos",
    "orient3d_many",
    "insphere_many",
]

_EPS = 2.0**-53
_O3D_BOUND = (7.0 + 56.0 * _EPS) * _EPS
_ISP_BOUND = (16.0 + 224.0 * _EPS) * _EPS


def _sign(x) -> int:
    return (x > 0) - (x < 0)


def _orient3d_exact(a, b, c, d) -> int:
    F = Fraction
    ax, ay, az = (F(v) for v in a)
    bx, by, bz = (F(v) for v in b)
    cx, cy, cz = (F(v) for v in c)
    dx, dy, dz = (F(v) for v in d)
    ux, uy, uz = bx - ax, by - ay, bz - az
    vx, vy, vz = cx - ax, cy - ay, cz - az
    wx, wy, wz = dx - ax, dy - ay, dz - az
    det = ux * (vy * wz - vz * wy) - uy * (vx * wz - vz * wx) + uz * (vx * wy - vy * wx)
    return _sign(det)


def orient3d(a, b, c, d) -> int:
    adx, ady, adz = a[0] - d[0], a[1] - d[1], a[2] - d[2]
    bdx, bdy, bdz = b[0] - d[0], b[1] - d[1], b[2] - d[2]
    cdx, cdy, cdz = c[0] - d[0], c[1] - d[1], c[2] - d[2]
    bdxcdy, cdxbdy = bdx * cdy, cdx * bdy
    cdxady, adxcdy = cdx * ady, adx * cdy
    adxbdy, bdxady = adx * bdy, bdx * ady
    det = adz * (bdxcdy - cdxbdy) + bdz * (cdxady - adxcdy) + cdz * (adxbdy - bdxady)
    perm = (
        (abs(bdxcdy) + abs(cdxbdy)) * abs(adz)
        + (abs(cdxady) + abs(adxcdy)) * abs(bdz)
        + (abs(adxbdy) + abs(bdxady)) * abs(cdz)
    )
    # the expression above is Shewchuk's orient3d, which has the opposite sign
    bound = _O3D_BOUND * perm
    if det > bound:
        return -1
    if -det > bound:
        return 1
    return _orient3d_exact(a, b, c, d)


def _insphere_exact(a, b, c, d, e) -> int:
    F = Fraction
    rows = []
    ex, ey, ez = (F(v) for v in e)
    for p in (a, b, c, d):
        x, y, z = F(p[0]) - ex, F(p[1]) - ey, F(p[2]) - ez
        rows.append((x, y, z, x * x + y * y + z * z))
    return _sign(_det4(rows))


def _det3(m):
    return (
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    )


def _det4(m):
    total = 0
    for j in range(4):
        minor = [[m[i][k] for k in range(4) if k != j] for i in range(1, 4)]
        term = m[0][j] * _det3(minor)
        total = total + term if j % 2 == 0 else total - term
    return total


def _insphere_float(a, b, c, d, e):
    aex, aey, aez = a[0] - e[0], a[1] - e[1], a[2] - e[2]
    bex, bey, bez = b[0] - e[0], b[1] - e[1], b[2] - e[2]
    cex, cey, cez = c[0] - e[0], c[1] - e[1], c[2] - e[2]
    dex, dey, dez = d[0] - e[0], d[1] - e[1], d[2] - e[2]
    aexbey, bexaey = aex * bey, bex * aey
    bexcey, cexbey = bex * cey, cex * bey
    cexdey, dexcey = cex * dey, dex * cey
    dexaey, aexdey = dex * aey, aex * dey
    aexcey, cexaey = aex * cey, cex * aey
    bexdey, dexbey = bex * dey, dex * bey
    ab, bc, cd, da = aexbey - bexaey, bexcey - cexbey, cexdey - dexcey, dexaey - aexdey
    ac, bd = aexcey - cexaey, bexdey - dexbey
    abc = aez * bc - bez * ac + cez * ab
    bcd = bez * cd - cez * bd + dez * bc
    cda = cez * da + dez * ac + aez * cd
    dab = dez * ab + aez * bd + bez * da
    alift = aex * aex + aey * aey + aez * aez
    blift = bex * bex + bey * bey + bez * bez
    clift = cex * cex + cey * cey + cez * cez
    dlift = dex * dex + dey * dey + dez * dez
    det = (dlift * abc - clift * dab) + (blift * cda - alift * bcd)
    aez_, bez_, cez_, dez_ = abs(aez), abs(bez), abs(cez), abs(dez)
    aexbey_, bexaey_ = abs(aexbey), abs(bexaey)
    bexcey_, cexbey_ = abs(bexcey), abs(cexbey)
    cexdey_, dexcey_ = abs(cexdey), abs(dexcey)
    dexaey_, aexdey_ = abs(dexaey), abs(aexdey)
    aexcey_, cexaey_ = abs(aexcey), abs(cexaey)
    bexdey_, dexbey_ = abs(bexdey), abs(dexbey)
    perm = (
        ((cexdey_ + dexcey_) * bez_ + (dexbey_ + bexdey_) * cez_ + (bexcey_ + cexbey_) * dez_) * alift
        + ((dexaey_ + aexdey_) * cez_ + (aexcey_ + cexaey_) * dez_ + (cexdey_ + dexcey_) * aez_) * blift
        + ((aexbey_ + bexaey_) * dez_ + (bexdey_ + dexbey_) * aez_ + (dexaey_ + aexdey_) * bez_) * clift
        + ((bexcey_ + cexbey_) * aez_ + (cexaey_ + aexcey_) * bez_ + (aexbey_ + bexaey_) * cez_) * dlift
    )
    return det, _ISP_BOUND * perm


def insphere(a, b, c, d, e) -> int:
    det, bound = _insphere_float(a, b, c, d, e)
    # Shewchuk's insphere is positive inside for his orientation, which is
    # the negative of ours; flip to keep "inside" positive here.
    if det > bound:
        return -1
    if -det > bound:
        return 1
    return -_insphere_exact(a, b, c, d, e)


def _lex_rank(points) -> list:
    return sorted(range(len(points)), key=lambda i: tuple(points[i]))


def insphere_sos(a, b, c, d, e) -> int:
    """
    In-sphere test with symbolic perturbation; never returns 0.

    ``a, b, c, d`` must be positively oriented and distinct from ``e``. Ties
    are broken by perturbing the lifted coordinate of every point by a power
    of an infinitesimal ordered lexicographically, which makes the
    Delaunay triangulation of any point set unique.
    """
    s = insphere(a, b, c, d, e)
    if s:
        return s
    pts = (a, b, c, d, e)
    for i in reversed(_lex_rank(pts)[2:]):
        if i == 4:
            return -1
        q = list(pts[:4])
        q[i] = e
        o = orient3d(*q)
        if o:
            return o
    raise ArithmeticError("insphere_sos: degenerate configuration")


def _coplanar_orient(p, q, r, normal) -> int:
    # orientation of r w.r.t. pq inside a plane with the given normal
    return orient3d(p, q, r, tuple(p[k] + normal[k] for k in range(3)))


def incircle_coplanar_sos(a, b, c, p) -> int:
    """
    Whether coplanar ``p`` lies inside the circumcircle of triangle ``abc``.

    Positive inside, negative outside; exact ties are broken symbolically so
    the result is never 0.
    """
    u = [b[k] - a[k] for k in range(3)]
    v = [c[k] - a[k] for k in range(3)]
    normal = (
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    )
    # any point off the plane spans a sphere whose trace on the plane is the circle
    off = tuple(a[k] + normal[k] for k in range(3))
    o = orient3d(a, b, c, off)
    if o == 0:
        off = tuple(a[k] + (1.0 if k == int(np.argmax(np.abs(normal))) else 0.0) for k in range(3))
        o = orient3d(a, b, c, off)
    s = insphere(a, b, c, off, p) * o
    if s:
        return s
    local = _coplanar_orient(a, b, c, normal)
    pts = (a, b, c, p)
    for i in reversed(_lex_rank(pts)[1:]):
        if i == 3:
            return -1
        q = list(pts[:3])
        q[i] = p
        o2 = _coplanar_orient(*q, normal)
        if o2:
            return o2 * local
    raise ArithmeticError("incircle_coplanar_sos: degenerate configuration")


def orient3d_many(a, b, c, d) -> np.ndarray:
    """Row-wise :func:`orient3d` for ``(n, 3)`` arrays."""
    a, b, c, d = (np.asarray(x, dtype=float) for x in (a, b, c, d))
    ad, bd, cd = a - d, b - d, c - d
    bdxcdy, cdxbdy = bd[:, 0] * cd[:, 1], cd[:, 0] * bd[:, 1]
    cdxady, adxcdy = cd[:, 0] * ad[:, 1], ad[:, 0] * cd[:, 1]
    adxbdy, bdxady = ad[:, 0] * bd[:, 1], bd[:, 0] * ad[:, 1]
    det = ad[:, 2] * (bdxcdy - cdxbdy) + bd[:, 2] * (cdxady - adxcdy) + cd[:, 2] * (adxbdy - bdxady)
    perm = (
        (np.abs(bdxcdy) + np.abs(cdxbdy)) * np.abs(ad[:, 2])
        + (np.abs(cdxady) + np.abs(adxcdy)) * np.abs(bd[:, 2])
        + (np.abs(adxbdy) + np.abs(bdxady)) * np.abs(cd[:, 2])
    )
    bound = _O3D_BOUND * perm
    out = np.where(det > bound, -1, np.where(-det > bound, 1, 0))
    for i in np.flatnonzero(out == 0):
        out[i] = _orient3d_exact(a[i], b[i], c[i], d[i])
    return out


def insphere_many(a, b, c, d, e) -> np.ndarray:
    """Row-wise :func:`insphere` for ``(n, 3)`` arrays."""
    a, b, c, d, e = (np.asarray(x, dtype=float) for x in (a, b, c, d, e))
    cols = [x.T for x in (a, b, c, d, e)]
    det, bound = _insphere_float(*cols)
    out = np.where(det > bound, -1, np.where(-det > bound, 1, 0))
    for i in np.flatnonzero(out == 0):
        out[i] = -_insphere_exact(a[i], b[i], c[i], d[i], e[i])
    return out
