"""Nodal reference tetrahedron.

Reference element is {r, s, t >= -1, r + s + t <= -1}.  Nodes are the
Warp & Blend set, the modal basis is the orthonormal Dubiner basis, and the
operators follow the usual nodal-DG construction (Hesthaven & Warburton).

Face numbering: 0: t = -1, 1: s = -1, 2: r + s + t = -1, 3: r = -1.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import gamma

import numpy as np

NODETOL = 1e-10

# Warp & Blend blending parameter, tabulated for orders 1..15.
_ALPHA_OPT = (0.0, 0.0, 0.0, 0.1002, 1.1332, 1.5608, 1.3413, 1.2577, 1.1603,
              1.10153, 0.6080, 0.4523, 0.8856, 0.8717, 0.9655)


def jacobi_p(x, alpha: float, beta: float, n: int) -> np.ndarray:
    """Orthonormal Jacobi polynomial P_n^(alpha, beta) evaluated at x."""
    x = np.asarray(x, dtype=float)
    pl = np.zeros((n + 1,) + x.shape)
    gamma0 = (2 ** (alpha + beta + 1) / (alpha + beta + 1)
              * gamma(alpha + 1) * gamma(beta + 1) / gamma(alpha + beta + 1))
    pl[0] = 1.0 / np.sqrt(gamma0)
    if n == 0:
        return pl[0]
    gamma1 = (alpha + 1) * (beta + 1) / (alpha + beta + 3) * gamma0
    pl[1] = ((alpha + beta + 2) * x / 2 + (alpha - beta) / 2) / np.sqrt(gamma1)
    if n == 1:
        return pl[1]
    aold = 2 / (2 + alpha + beta) * np.sqrt((alpha + 1) * (beta + 1) / (alpha + beta + 3))
    for i in range(1, n):
        h1 = 2 * i + alpha + beta
        anew = 2 / (h1 + 2) * np.sqrt((i + 1) * (i + 1 + alpha + beta) * (i + 1 + alpha)
                                      * (i + 1 + beta) / (h1 + 1) / (h1 + 3))
        bnew = -(alpha**2 - beta**2) / h1 / (h1 + 2)
        pl[i + 1] = 1 / anew * (-aold * pl[i - 1] + (x - bnew) * pl[i])
        aold = anew
    return pl[n]


def grad_jacobi_p(x, alpha: float, beta: float, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if n == 0:
        return np.zeros_like(x)
    return np.sqrt(n * (n + alpha + beta + 1)) * jacobi_p(x, alpha + 1, beta + 1, n - 1)


def jacobi_gq(alpha: float, beta: float, n: int):
    """Gauss quadrature points/weights for the (alpha, beta) Jacobi weight."""
    if n == 0:
        return np.array([(alpha - beta) / (alpha + beta + 2)]), np.array([2.0])
    h1 = 2 * np.arange(n + 1) + alpha + beta
    j = np.diag(-0.5 * (alpha**2 - beta**2) / (h1 + 2) / np.where(h1 == 0, 1, h1))
    i = np.arange(1, n + 1)
    off = 2 / (h1[:-1] + 2) * np.sqrt(i * (i + alpha + beta) * (i + alpha) * (i + beta)
                                      / (h1[:-1] + 1) / (h1[:-1] + 3))
    j = j + np.diag(off, 1)
    if alpha + beta < 10 * np.finfo(float).eps:
        j[0, 0] = 0.0
    j = j + j.T
    d, v = np.linalg.eigh(j)
    w = v[0] ** 2 * 2 ** (alpha + beta + 1) / (alpha + beta + 1) * gamma(alpha + 1) \
        * gamma(beta + 1) / gamma(alpha + beta + 1)
    return d, w


def jacobi_gl(alpha: float, beta: float, n: int) -> np.ndarray:
    """Gauss-Lobatto points for the (alpha, beta) Jacobi weight, ascending."""
    if n == 1:
        return np.array([-1.0, 1.0])
    xint, _ = jacobi_gq(alpha + 1, beta + 1, n - 2)
    return np.concatenate(([-1.0], xint, [1.0]))


# -- nodes -----------------------------------------------------------------

def _eval_warp(p: int, xnodes, xout):
    xeq = -1.0 + 2.0 * (p - np.arange(p + 1)) / p
    warp = np.zeros_like(xout)
    for i in range(p + 1):
        d = xnodes[i] - xeq[i]
        for j in range(1, p):
            if i != j:
                d = d * (xout - xeq[j]) / (xeq[i] - xeq[j])
        if i != 0:
            d = -d / (xeq[i] - xeq[0])
        if i != p:
            d = d / (xeq[i] - xeq[p])
        warp = warp + d
    return warp


def _eval_shift(p: int, pval: float, l1, l2, l3):
    gauss_x = -jacobi_gl(0, 0, p)
    blend1, blend2, blend3 = l2 * l3, l1 * l3, l1 * l2
    wf1 = 4 * _eval_warp(p, gauss_x, l3 - l2)
    wf2 = 4 * _eval_warp(p, gauss_x, l1 - l3)
    wf3 = 4 * _eval_warp(p, gauss_x, l2 - l1)
    w1 = blend1 * wf1 * (1 + (pval * l1) ** 2)
    w2 = blend2 * wf2 * (1 + (pval * l2) ** 2)
    w3 = blend3 * wf3 * (1 + (pval * l3) ** 2)
    dx = w1 + np.cos(2 * np.pi / 3) * w2 + np.cos(4 * np.pi / 3) * w3
    dy = np.sin(2 * np.pi / 3) * w2 + np.sin(4 * np.pi / 3) * w3
    return dx, dy


def _equi_nodes(n: int):
    pts = []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            for k in range(n + 1 - i - j):
                pts.append((-1 + 2 * k / n, -1 + 2 * j / n, -1 + 2 * i / n))
    return np.array(pts).T


_V1 = np.array([-1.0, -1 / np.sqrt(3), -1 / np.sqrt(6)])
_V2 = np.array([1.0, -1 / np.sqrt(3), -1 / np.sqrt(6)])
_V3 = np.array([0.0, 2 / np.sqrt(3), -1 / np.sqrt(6)])
_V4 = np.array([0.0, 0.0, 3 / np.sqrt(6)])


def _xyz_to_rst(xyz):
    rhs = xyz - 0.5 * (_V2 + _V3 + _V4 - _V1)[:, None]
    a = np.column_stack((0.5 * (_V2 - _V1), 0.5 * (_V3 - _V1), 0.5 * (_V4 - _V1)))
    return np.linalg.solve(a, rhs)


def warp_blend_nodes(n: int):
    """Warp & Blend interpolation nodes (r, s, t) of order ``n``."""
    if n == 0:
        return np.array([-0.5]), np.array([-0.5]), np.array([-0.5])
    alpha = _ALPHA_OPT[n - 1] if n <= 15 else 1.0
    tol = 1e-8
    r, s, t = _equi_nodes(n)
    l1, l2, l3, l4 = (1 + t) / 2, (1 + s) / 2, -(1 + r + s + t) / 2, (1 + r) / 2
    t1 = np.array([_V2 - _V1, _V2 - _V1, _V3 - _V2, _V3 - _V1])
    t2 = np.array([_V3 - 0.5 * (_V1 + _V2), _V4 - 0.5 * (_V1 + _V2),
                   _V4 - 0.5 * (_V2 + _V3), _V4 - 0.5 * (_V1 + _V3)])
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 /= np.linalg.norm(t2, axis=1)[:, None]
    xyz = np.outer(_V1, l3) + np.outer(_V2, l4) + np.outer(_V3, l2) + np.outer(_V4, l1)
    shift = np.zeros_like(xyz)
    faces = ((l1, l2, l3, l4), (l2, l1, l3, l4), (l3, l1, l4, l2), (l4, l1, l3, l2))
    for f, (la, lb, lc, ld) in enumerate(faces):
        warp1, warp2 = _eval_shift(n, alpha, lb, lc, ld)
        blend = lb * lc * ld
        denom = (lb + 0.5 * la) * (lc + 0.5 * la) * (ld + 0.5 * la)
        ids = denom > tol
        blend[ids] = (1 + (alpha * la[ids]) ** 2) * blend[ids] / denom[ids]
        shift += np.outer(t1[f], blend * warp1) + np.outer(t2[f], blend * warp2)
        on_face = (la < tol) & ((lb > tol).astype(int) + (lc > tol) + (ld > tol) < 3)
        shift[:, on_face] = (np.outer(t1[f], warp1) + np.outer(t2[f], warp2))[:, on_face]
    r, s, t = _xyz_to_rst(xyz + shift)
    return r, s, t


# -- modal basis -------------------------------------------------------------

def rst_to_abc(r, s, t):
    r, s, t = (np.asarray(v, dtype=float) for v in (r, s, t))
    st = -s - t
    a = np.where(np.abs(st) > NODETOL, 2 * (1 + r) / np.where(st == 0, 1, st) - 1, -1.0)
    b = np.where(np.abs(t - 1) > NODETOL, 2 * (1 + s) / np.where(t == 1, 2, 1 - t) - 1, -1.0)
    return a, b, t.copy()


def rs_to_ab(r, s):
    r, s = np.asarray(r, dtype=float), np.asarray(s, dtype=float)
    a = np.where(np.abs(s - 1) > NODETOL, 2 * (1 + r) / np.where(s == 1, 2, 1 - s) - 1, -1.0)
    return a, s.copy()


def _mode_indices3(n: int):
    return [(i, j, k) for i in range(n + 1) for j in range(n + 1 - i)
            for k in range(n + 1 - i - j)]


def simplex3d_p(a, b, c, i, j, k):
    h1 = jacobi_p(a, 0, 0, i)
    h2 = jacobi_p(b, 2 * i + 1, 0, j)
    h3 = jacobi_p(c, 2 * (i + j) + 2, 0, k)
    return 2 * np.sqrt(2) * h1 * h2 * (1 - b) ** i * h3 * (1 - c) ** (i + j)


def grad_simplex3d_p(a, b, c, i, j, k):
    fa, dfa = jacobi_p(a, 0, 0, i), grad_jacobi_p(a, 0, 0, i)
    gb, dgb = jacobi_p(b, 2 * i + 1, 0, j), grad_jacobi_p(b, 2 * i + 1, 0, j)
    hc, dhc = jacobi_p(c, 2 * (i + j) + 2, 0, k), grad_jacobi_p(c, 2 * (i + j) + 2, 0, k)
    hb, hcc = 0.5 * (1 - b), 0.5 * (1 - c)

    vr = dfa * gb * hc
    if i > 0:
        vr = vr * hb ** (i - 1)
    if i + j > 0:
        vr = vr * hcc ** (i + j - 1)

    vs = 0.5 * (1 + a) * vr
    tmp = dgb * hb**i
    if i > 0:
        tmp = tmp + (-0.5 * i) * gb * hb ** (i - 1)
    if i + j > 0:
        tmp = tmp * hcc ** (i + j - 1)
    tmp = fa * tmp * hc
    vs = vs + tmp

    vt = 0.5 * (1 + a) * vr + 0.5 * (1 + b) * tmp
    tmp = dhc * hcc ** (i + j)
    if i + j > 0:
        tmp = tmp - 0.5 * (i + j) * hc * hcc ** (i + j - 1)
    tmp = fa * gb * tmp * hb**i
    vt = vt + tmp

    scale = 2 ** (2 * i + j + 1.5)
    return vr * scale, vs * scale, vt * scale


def vandermonde3d(n: int, r, s, t) -> np.ndarray:
    a, b, c = rst_to_abc(r, s, t)
    cols = [simplex3d_p(a, b, c, i, j, k) for i, j, k in _mode_indices3(n)]
    return np.stack(cols, axis=-1)


def grad_vandermonde3d(n: int, r, s, t):
    a, b, c = rst_to_abc(r, s, t)
    g = [grad_simplex3d_p(a, b, c, i, j, k) for i, j, k in _mode_indices3(n)]
    return tuple(np.stack([gi[d] for gi in g], axis=-1) for d in range(3))


def vandermonde2d(n: int, r, s) -> np.ndarray:
    a, b = rs_to_ab(r, s)
    cols = []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            h1 = jacobi_p(a, 0, 0, i)
            h2 = jacobi_p(b, 2 * i + 1, 0, j)
            cols.append(np.sqrt(2.0) * h1 * h2 * (1 - b) ** i)
    return np.stack(cols, axis=-1)


@dataclass(frozen=True, eq=False)
class ReferenceElement:
    """Nodal operators on the reference tetrahedron for polynomial order ``order``."""

    order: int
    r: np.ndarray
    s: np.ndarray
    t: np.ndarray
    V: np.ndarray
    Dr: np.ndarray
    Ds: np.ndarray
    Dt: np.ndarray
    LIFT: np.ndarray
    Fmask: np.ndarray  # (4, Nfp) node indices per face

    @property
    def Np(self) -> int:
        return (self.order + 1) * (self.order + 2) * (self.order + 3) // 6

    @property
    def Nfp(self) -> int:
        return (self.order + 1) * (self.order + 2) // 2

    @property
    def mass(self) -> np.ndarray:
        """Reference mass matrix (for an element with Jacobian 1)."""
        vinv = np.linalg.inv(self.V)
        return vinv.T @ vinv

    def interpolation_row(self, r, s, t) -> np.ndarray:
        """Rows mapping nodal values to values at reference points (r, s, t)."""
        vp = vandermonde3d(self.order, np.atleast_1d(r), np.atleast_1d(s), np.atleast_1d(t))
        return np.linalg.solve(self.V.T, vp.T).T

    def modal_at(self, r, s, t) -> np.ndarray:
        return vandermonde3d(self.order, np.atleast_1d(r), np.atleast_1d(s), np.atleast_1d(t))


@lru_cache(maxsize=None)
def reference_element(order: int) -> ReferenceElement:
    if order < 1:
        raise ValueError("polynomial order must be >= 1")
    r, s, t = warp_blend_nodes(order)
    V = vandermonde3d(order, r, s, t)
    Vr, Vs, Vt = grad_vandermonde3d(order, r, s, t)
    Vinv = np.linalg.inv(V)
    Dr, Ds, Dt = Vr @ Vinv, Vs @ Vinv, Vt @ Vinv

    fmask = np.array([
        np.nonzero(np.abs(1 + t) < NODETOL)[0],
        np.nonzero(np.abs(1 + s) < NODETOL)[0],
        np.nonzero(np.abs(1 + r + s + t) < NODETOL)[0],
        np.nonzero(np.abs(1 + r) < NODETOL)[0],
    ])
    nfp = (order + 1) * (order + 2) // 2
    if fmask.shape != (4, nfp):
        raise RuntimeError("face node extraction failed")

    face_coords = ((r, s), (r, t), (s, t), (s, t))
    emat = np.zeros((len(r), 4 * nfp))
    for f in range(4):
        u, v = face_coords[f]
        vf = vandermonde2d(order, u[fmask[f]], v[fmask[f]])
        mass_f = np.linalg.inv(vf @ vf.T)
        emat[fmask[f], f * nfp:(f + 1) * nfp] = mass_f
    lift = V @ (V.T @ emat)

    for arr in (r, s, t, V, Dr, Ds, Dt, lift, fmask):
        arr.setflags(write=False)
    return ReferenceElement(order, r, s, t, V, Dr, Ds, Dt, lift, fmask)
