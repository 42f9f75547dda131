"""Nodal DG semi-discretization of Maxwell's equations with upwind fluxes.

State layout is ``q[k, n, c, b]``: element ``k``, node ``n``, component
``c`` (Ex, Ey, Ez, Hx, Hy, Hz) and batch member ``b``.  Batch members share
mesh and materials but carry independent sources, so many forward runs
advance in a single matrix product.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..incident import RickerSpec, ricker
from ..mesh import BoundaryKind, GeomFactors, MaterialMap, Mesh, MeshError, \
    connect_and_factors, make_material_map
from . import kernels
from .reference import ReferenceElement, reference_element


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class BoundarySpec:
    kind: BoundaryKind
    eps_bc: float = 1.0
    mu_bc: float = 1.0

    def __post_init__(self):
        if self.kind not in (BoundaryKind.PEC, BoundaryKind.IMPEDANCE, BoundaryKind.SMA):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == BoundaryKind.IMPEDANCE and not (self.eps_bc > 0 and self.mu_bc > 0):
            raise ValueError("impedance boundary needs eps_bc > 0 and mu_bc > 0")

    @classmethod
    def impedance(cls, lam: float) -> "BoundarySpec":
        """Surface impedance ``lam`` as ghost materials (eps_bc = lam^2, mu_bc = 1)."""
        return cls(BoundaryKind.IMPEDANCE, lam**2, 1.0)


def upwind_flux(EM, HM, EP, HP, nu, ZM, ZP, YM, YP):
    """Upwind flux terms for the E and H equations.

    Vector arguments have the component on axis ``-1``; impedances broadcast
    against the leading axes.
    """
    dE = np.asarray(EP) - np.asarray(EM)
    dH = np.asarray(HP) - np.asarray(HM)
    nu = np.asarray(nu)
    ZM, ZP, YM, YP = (np.asarray(v)[..., None] for v in (ZM, ZP, YM, YP))
    e_term = np.cross(nu, ZP * dH - np.cross(nu, dE)) / (ZP + ZM)
    h_term = -np.cross(nu, YP * dE + np.cross(nu, dH)) / (YP + YM)
    return e_term, h_term


def ghost_state(bc: BoundarySpec, EM, HM, eps_m: float, mu_m: float):
    """Exterior trace and exterior materials for a boundary face.

    Returns ``(EP, HP, eps_p, mu_p)``.
    """
    EM = np.asarray(EM, dtype=float)
    HM = np.asarray(HM, dtype=float)
    if bc.kind == BoundaryKind.PEC:
        return -EM, HM.copy(), eps_m, mu_m
    if bc.kind == BoundaryKind.IMPEDANCE:
        return np.zeros_like(EM), np.zeros_like(HM), bc.eps_bc, bc.mu_bc
    if bc.kind == BoundaryKind.SMA:
        return np.zeros_like(EM), np.zeros_like(HM), eps_m, mu_m
    raise ValueError(f"unknown boundary kind {bc.kind!r}")


@dataclass(frozen=True)
class PointSource:
    """Magnetic point dipole ``p * chi(t - tau) * delta_y`` in the H equation."""

    y: np.ndarray
    p: np.ndarray
    chi: RickerSpec
    tau: float = 0.0


IncidentFn = Callable[[np.ndarray, float], tuple]


class MaxwellDG:
    """Discrete Maxwell operator on a fixed mesh and reference element.

    ``formulation="total"`` evolves the total field driven by point sources
    in the H equation.  ``formulation="scattered"`` evolves the scattered
    field; the incident field enters only through the ghost states on
    scatterer faces (PEC and impedance tags), supplied by ``incident``.
    """

    def __init__(self, mesh: Mesh, order: int, materials: MaterialMap | None = None,
                 geom: GeomFactors | None = None):
        self.mesh = mesh
        self.ref: ReferenceElement = reference_element(order)
        self.order = order
        self.geom = geom if geom is not None else connect_and_factors(mesh)
        ref = self.ref
        K, Np, Nfp = mesh.K, ref.Np, ref.Nfp
        self.K, self.Np, self.Nfp = K, Np, Nfp

        v = mesh.element_vertices()  # (K, 4, 3)
        r, s, t = ref.r, ref.s, ref.t
        lam = np.stack([-(1 + r + s + t), 1 + r, 1 + s, 1 + t]) * 0.5  # (4, Np)
        self.nodes = np.einsum("vn,kvd->dnk", lam, v)  # (3, Np, K)
        self.materials = materials if materials is not None else make_material_map(mesh, self.nodes)
        mat = self.materials
        if mat.beta.shape != (Np, K) or mat.eps_r.shape != (K,):
            raise ShapeError("materials do not match mesh and order")

        self.fmask = np.ascontiguousarray(np.array(ref.Fmask, dtype=np.int64))  # (4, Nfp)
        xM = np.moveaxis(self.nodes[:, self.fmask, :], (0, 3), (3, 0))  # (K, 4, Nfp, 3)
        xP = xM[mesh.EToE, mesh.EToF]
        d = np.linalg.norm(xM[:, :, :, None, :] - xP[:, :, None, :, :], axis=-1)
        perm = np.argmin(d, axis=3)  # (K, 4, Nfp)
        scale = max(float(np.max(np.abs(mesh.vertices))), 1.0)
        if np.max(np.take_along_axis(d, perm[..., None], 3)) > 1e-7 * scale:
            raise MeshError("face nodes of neighbouring elements do not match")
        self.nbr_elem = np.ascontiguousarray(mesh.EToE, dtype=np.int64)
        self.nbr_node = np.ascontiguousarray(self.fmask[mesh.EToF[:, :, None], perm], dtype=np.int64)

        self.face_kind = np.zeros((K, 4), dtype=np.int64)
        self.face_kind[mesh.bc == BoundaryKind.PEC] = kernels.FACE_PEC
        self.face_kind[(mesh.bc == BoundaryKind.IMPEDANCE) | (mesh.bc == BoundaryKind.SMA)] = \
            kernels.FACE_ZERO
        self.scat_faces = (mesh.bc == BoundaryKind.PEC) | (mesh.bc == BoundaryKind.IMPEDANCE)

        eps, mu = mat.eps_r, mat.mu_r
        epsP = eps[mesh.EToE]
        muP = mu[mesh.EToE]
        imp = mesh.bc == BoundaryKind.IMPEDANCE
        epsP[imp] = mesh.face_eps_bc[imp]
        muP[imp] = mesh.face_mu_bc[imp]
        ZM = np.sqrt(mu / eps)[:, None]
        self.ZP = np.sqrt(muP / epsP)  # (K, 4)
        fscale = self.geom.sJ / self.geom.J[:, None]
        self.cE = fscale / (ZM + self.ZP)
        self.cH = fscale / (1.0 / ZM + 1.0 / self.ZP)
        self.normals = np.ascontiguousarray(self.geom.normals)
        self.inv_eps = 1.0 / eps
        self.inv_mu = 1.0 / mu
        self.beta = np.ascontiguousarray(mat.beta.T)  # (K, Np)
        self.has_beta = bool(np.any(mat.beta > 0))
        self.rst_x = np.ascontiguousarray(self.geom.rst_x)
        self.D = np.ascontiguousarray(np.stack([ref.Dr, ref.Ds, ref.Dt]))
        self.LIFT = np.ascontiguousarray(ref.LIFT)

        self.formulation = "total"
        self._sources: list | None = None
        self._incident: IncidentFn | None = None
        self._ghost_slot = np.full((K, 4), -1, dtype=np.int64)
        self._no_corr = np.zeros((1, 1, 6, 1))

    # -- configuration -------------------------------------------------------

    def face_node_points(self) -> np.ndarray:
        """Physical coordinates of face nodes, shape (K, 4, Nfp, 3)."""
        return np.moveaxis(self.nodes[:, self.fmask, :], (0, 3), (3, 0))

    def set_scattered(self, incident: IncidentFn) -> None:
        """Switch to scattered-field mode with ``incident(points, t) -> (E, H)``.

        ``points`` has shape (M, 3); the callback returns arrays (M, 3, B).
        """
        self.formulation = "scattered"
        self._incident = incident
        ks, fs = np.nonzero(self.scat_faces)
        self._ghost_slot = np.full((self.K, 4), -1, dtype=np.int64)
        self._ghost_slot[ks, fs] = np.arange(len(ks))
        self._scat_faces_idx = (ks, fs)
        self._scat_pts = self.face_node_points()[ks, fs].reshape(-1, 3)
        self._scat_pec = (self.mesh.bc[ks, fs] == BoundaryKind.PEC)

    def _ghost_correction(self, t: float, B: int) -> np.ndarray:
        ks, _ = self._scat_faces_idx
        if len(ks) == 0:
            return self._no_corr
        Ei, Hi = self._incident(self._scat_pts, t)
        if Ei.shape[-1] != B:
            raise ShapeError("incident field batch does not match state batch")
        corr = np.empty((len(ks), self.Nfp, 6, B))
        Ei = Ei.reshape(len(ks), self.Nfp, 3, B)
        Hi = Hi.reshape(len(ks), self.Nfp, 3, B)
        pec = self._scat_pec[:, None, None, None]
        corr[:, :, :3] = np.where(pec, 2.0 * Ei, Ei)
        corr[:, :, 3:] = np.where(pec, 0.0, Hi)
        return corr

    def locate(self, points, tol: float = 1e-9):
        """Owning element and reference coordinates for each point (M, 3)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        v = self.mesh.element_vertices()
        A = np.linalg.inv(np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], 2))
        elems = np.empty(len(pts), dtype=int)
        rst = np.empty((len(pts), 3))
        for i, x in enumerate(pts):
            lam = np.einsum("kij,kj->ki", A, x - v[:, 0])
            worst = np.minimum(lam.min(axis=1), 1.0 - lam.sum(axis=1))
            k = int(np.argmax(worst))
            if worst[k] < -tol:
                raise MeshError(f"point {x.tolist()} is outside the mesh")
            elems[i] = k
            rst[i] = 2.0 * lam[k] - 1.0
        return elems, rst

    def set_point_sources(self, sources: Sequence[PointSource]) -> None:
        """One point source per batch member (total-field mode)."""
        self.formulation = "total"
        self._ghost_slot = np.full((self.K, 4), -1, dtype=np.int64)
        elems, rst = self.locate(np.array([s.y for s in sources]))
        V = self.ref.V
        rows = self.ref.interpolation_row(rst[:, 0], rst[:, 1], rst[:, 2])
        # delta tested against the nodal basis, then inverse mass matrix
        coef = (V @ (V.T @ rows.T)).T / self.geom.J[elems][:, None]
        self._sources = list(sources)
        self._src_elem = elems
        self._src_coef = coef  # (B, Np)

    def probe_operator(self, points):
        """Interpolation data ``(elems, rows)`` for sampling fields at points."""
        elems, rst = self.locate(points)
        rows = self.ref.interpolation_row(rst[:, 0], rst[:, 1], rst[:, 2])
        return elems, rows

    # -- evaluation ----------------------------------------------------------

    def zeros(self, batch: int = 1) -> np.ndarray:
        return np.zeros((self.K, self.Np, 6, batch))

    def _check(self, q):
        if q.ndim != 4 or q.shape[:3] != (self.K, self.Np, 6):
            raise ShapeError(f"state shape {q.shape} does not match "
                             f"({self.K}, {self.Np}, 6, B)")

    def _add_sources(self, out, t):
        if self.formulation != "total" or self._sources is None:
            return
        if len(self._sources) != out.shape[3]:
            raise ShapeError("number of point sources does not match batch size")
        for b, src in enumerate(self._sources):
            k = self._src_elem[b]
            amp = float(ricker(t - src.tau, src.chi)) * self.inv_mu[k]
            out[k, :, 3:, b] += np.outer(self._src_coef[b], np.asarray(src.p) * amp)

    def rhs(self, q: np.ndarray, t: float, out: np.ndarray | None = None) -> np.ndarray:
        """Time derivative of the state ``q`` (K, Np, 6, B) at time ``t``."""
        self._check(q)
        B = q.shape[3]
        if out is None:
            out = np.empty_like(q)
        corr = self._ghost_correction(t, B) if self.formulation == "scattered" else self._no_corr
        kernels.maxwell_rhs(q, out, self.D, self.rst_x, self.LIFT, self.fmask, self.nbr_elem,
                            self.nbr_node, self.face_kind, self.normals, self.cE, self.cH,
                            self.ZP, self.inv_eps, self.inv_mu, self.beta, self.has_beta,
                            self._ghost_slot, corr)
        self._add_sources(out, t)
        return out

    def rhs_reference(self, q: np.ndarray, t: float) -> np.ndarray:
        """Vectorized array-expression evaluation of :meth:`rhs` (cross-check route)."""
        self._check(q)
        K, Np, Nfp = self.K, self.Np, self.Nfp
        B = q.shape[3]
        g = np.einsum("inm,kmcb->ikncb", self.D, q)
        d = np.einsum("kij,ikncb->jkncb", self.rst_x, g)

        E, H = q[:, :, :3], q[:, :, 3:]
        fm = self.fmask.reshape(-1)
        qM = q[:, fm].reshape(K, 4, Nfp, 6, B)
        qP = q[self.nbr_elem[:, :, None], self.nbr_node].copy()
        EM, HM = qM[..., :3, :], qM[..., 3:, :]
        for f in range(4):
            for k in np.nonzero(self.face_kind[:, f] != kernels.FACE_INTERIOR)[0]:
                bc = BoundarySpec(BoundaryKind(self.mesh.bc[k, f]),
                                  self.mesh.face_eps_bc[k, f], self.mesh.face_mu_bc[k, f])
                EP, HP, _, _ = ghost_state(bc, EM[k, f], HM[k, f], 1.0, 1.0)
                qP[k, f, :, :3], qP[k, f, :, 3:] = EP, HP
        if self.formulation == "scattered":
            corr = self._ghost_correction(t, B)
            ks, fs = self._scat_faces_idx
            if len(ks):
                qP[ks, fs] -= corr
        nu = np.broadcast_to(self.normals[:, :, None, None, :], (K, 4, Nfp, B, 3))
        mv = lambda a: np.moveaxis(a, -2, -1)  # noqa: E731  (K,4,Nfp,3,B) -> (...,B,3)
        ZM = np.sqrt(self.materials.mu_r / self.materials.eps_r)[:, None, None, None]
        ZP = self.ZP[:, :, None, None]
        e_term, h_term = upwind_flux(mv(qM[..., :3, :]), mv(qM[..., 3:, :]),
                                     mv(qP[..., :3, :]), mv(qP[..., 3:, :]), nu,
                                     ZM, ZP, 1.0 / ZM, 1.0 / ZP)
        fscale = (self.geom.sJ / self.geom.J[:, None])[:, :, None, None, None]
        flux = np.concatenate([np.moveaxis(e_term, -1, -2), np.moveaxis(h_term, -1, -2)], axis=3)
        flux = (flux * fscale).reshape(K, 4 * Nfp, 6, B)
        out = np.einsum("nj,kjcb->kncb", self.LIFT, flux)

        dx, dy, dz = d
        out[:, :, 0] += dy[:, :, 5] - dz[:, :, 4]
        out[:, :, 1] += dz[:, :, 3] - dx[:, :, 5]
        out[:, :, 2] += dx[:, :, 4] - dy[:, :, 3]
        out[:, :, 3] -= dy[:, :, 2] - dz[:, :, 1]
        out[:, :, 4] -= dz[:, :, 0] - dx[:, :, 2]
        out[:, :, 5] -= dx[:, :, 1] - dy[:, :, 0]
        out[:, :, :3] *= self.inv_eps[:, None, None, None]
        out[:, :, 3:] *= self.inv_mu[:, None, None, None]
        out -= self.beta[:, :, None, None] * q
        self._add_sources(out, t)
        return out

    def sample(self, q: np.ndarray, elems: np.ndarray, rows: np.ndarray,
               components=slice(0, 3)) -> np.ndarray:
        """Field values at probe points: (P, ncomp, B)."""
        return np.einsum("pn,pncb->pcb", rows, q[elems][:, :, components])

    def energy(self, q: np.ndarray) -> np.ndarray:
        """Discrete electromagnetic energy per batch member."""
        M = self.ref.mass
        w = np.einsum("nm,kmcb,kncb->kcb", M, q, q)
        eps = self.materials.eps_r[:, None]
        mu = self.materials.mu_r[:, None]
        e = (w[:, :3].sum(1) * eps + w[:, 3:].sum(1) * mu) * self.geom.J[:, None]
        return 0.5 * e.sum(axis=0)
