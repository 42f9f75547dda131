"""Compiled element loop for the Maxwell right-hand side.

One pass per element fuses the physical curl, the upwind surface flux and
the lift, so the element block stays in cache.  The batch axis is
innermost and vectorizes.
"""
from __future__ import annotations

import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numba as nb  # noqa: E402
import numpy as np

FACE_INTERIOR = 0
FACE_PEC = 1
FACE_ZERO = 2  # impedance and absorbing faces: ghost fields vanish


@nb.njit(parallel=True, fastmath=True, cache=True)
def maxwell_rhs(q, out, D, rst_x, LIFT, fmask, nbr_elem, nbr_node, face_kind,
                normals, cE, cH, ZP, inv_eps, inv_mu, beta, use_beta,
                ghost_slot, ghost_corr):
    K, Np, _, B = q.shape
    nfaces, Nfp = fmask.shape
    for k in nb.prange(K):
        Dx = np.empty((3, Np, Np))
        for j in range(3):
            r0 = rst_x[k, 0, j]
            r1 = rst_x[k, 1, j]
            r2 = rst_x[k, 2, j]
            for n in range(Np):
                for m in range(Np):
                    Dx[j, n, m] = r0 * D[0, n, m] + r1 * D[1, n, m] + r2 * D[2, n, m]
        acc = np.zeros((Np, 6, B))
        for n in range(Np):
            for m in range(Np):
                ax = Dx[0, n, m]
                ay = Dx[1, n, m]
                az = Dx[2, n, m]
                for b in range(B):
                    ex = q[k, m, 0, b]
                    ey = q[k, m, 1, b]
                    ez = q[k, m, 2, b]
                    hx = q[k, m, 3, b]
                    hy = q[k, m, 4, b]
                    hz = q[k, m, 5, b]
                    acc[n, 0, b] += ay * hz - az * hy
                    acc[n, 1, b] += az * hx - ax * hz
                    acc[n, 2, b] += ax * hy - ay * hx
                    acc[n, 3, b] -= ay * ez - az * ey
                    acc[n, 4, b] -= az * ex - ax * ez
                    acc[n, 5, b] -= ax * ey - ay * ex

        flux = np.empty((nfaces * Nfp, 6, B))
        for f in range(nfaces):
            kind = face_kind[k, f]
            nx = normals[k, f, 0]
            ny = normals[k, f, 1]
            nz = normals[k, f, 2]
            ce = cE[k, f]
            ch = cH[k, f]
            zp = ZP[k, f]
            yp = 1.0 / zp
            kp = nbr_elem[k, f]
            slot = ghost_slot[k, f]
            for i in range(Nfp):
                nm = fmask[f, i]
                npn = nbr_node[k, f, i]
                row = f * Nfp + i
                for b in range(B):
                    exm = q[k, nm, 0, b]
                    eym = q[k, nm, 1, b]
                    ezm = q[k, nm, 2, b]
                    hxm = q[k, nm, 3, b]
                    hym = q[k, nm, 4, b]
                    hzm = q[k, nm, 5, b]
                    if kind == FACE_INTERIOR:
                        exp_ = q[kp, npn, 0, b]
                        eyp = q[kp, npn, 1, b]
                        ezp = q[kp, npn, 2, b]
                        hxp = q[kp, npn, 3, b]
                        hyp = q[kp, npn, 4, b]
                        hzp = q[kp, npn, 5, b]
                    elif kind == FACE_PEC:
                        exp_ = -exm
                        eyp = -eym
                        ezp = -ezm
                        hxp = hxm
                        hyp = hym
                        hzp = hzm
                    else:
                        exp_ = 0.0
                        eyp = 0.0
                        ezp = 0.0
                        hxp = 0.0
                        hyp = 0.0
                        hzp = 0.0
                    if slot >= 0:
                        exp_ -= ghost_corr[slot, i, 0, b]
                        eyp -= ghost_corr[slot, i, 1, b]
                        ezp -= ghost_corr[slot, i, 2, b]
                        hxp -= ghost_corr[slot, i, 3, b]
                        hyp -= ghost_corr[slot, i, 4, b]
                        hzp -= ghost_corr[slot, i, 5, b]
                    dex = exp_ - exm
                    dey = eyp - eym
                    dez = ezp - ezm
                    dhx = hxp - hxm
                    dhy = hyp - hym
                    dhz = hzp - hzm
                    ax_ = zp * dhx - (ny * dez - nz * dey)
                    ay_ = zp * dhy - (nz * dex - nx * dez)
                    az_ = zp * dhz - (nx * dey - ny * dex)
                    bx_ = yp * dex + (ny * dhz - nz * dhy)
                    by_ = yp * dey + (nz * dhx - nx * dhz)
                    bz_ = yp * dez + (nx * dhy - ny * dhx)
                    flux[row, 0, b] = ce * (ny * az_ - nz * ay_)
                    flux[row, 1, b] = ce * (nz * ax_ - nx * az_)
                    flux[row, 2, b] = ce * (nx * ay_ - ny * ax_)
                    flux[row, 3, b] = -ch * (ny * bz_ - nz * by_)
                    flux[row, 4, b] = -ch * (nz * bx_ - nx * bz_)
                    flux[row, 5, b] = -ch * (nx * by_ - ny * bx_)

        nrows = nfaces * Nfp
        for n in range(Np):
            for j in range(nrows):
                lj = LIFT[n, j]
                for c in range(6):
                    for b in range(B):
                        acc[n, c, b] += lj * flux[j, c, b]
            ie = inv_eps[k]
            im = inv_mu[k]
            bt = beta[k, n]
            for b in range(B):
                for c in range(3):
                    v = acc[n, c, b] * ie
                    if use_beta:
                        v -= bt * q[k, n, c, b]
                    out[k, n, c, b] = v
                for c in range(3, 6):
                    v = acc[n, c, b] * im
                    if use_beta:
                        v -= bt * q[k, n, c, b]
                    out[k, n, c, b] = v
    return out
