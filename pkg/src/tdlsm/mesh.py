"""Tetrahedral meshes of a box domain with embedded box scatterers.

A structured grid of hexahedral cells is cut into 6 tetrahedra per cell
(Kuhn split along the main diagonal, which is conforming between cells).
Per-axis grid planes always include the scatterer faces, so scatterer
boundaries coincide with element faces.  An optional sponge layer is
appended outside the main cube and its vertices are grid-stretched.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class BoundaryKind(enum.IntEnum):
    NONE = 0  # interior face
    PEC = 1
    IMPEDANCE = 2
    SMA = 3


class Region(enum.IntEnum):
    MAIN = 0
    SPONGE = 1


class MeshError(ValueError):
    pass


# local vertex triples of the four faces, matched to the reference element
# face numbering (t=-1, s=-1, r+s+t=-1, r=-1).
FACE_VERTICES = np.array([[0, 1, 2], [0, 1, 3], [1, 2, 3], [0, 2, 3]])


@dataclass(frozen=True)
class SpongeSpec:
    """Absorbing layer of thickness ``thickness`` starting at ``start`` on every side.

    ``start`` is the half-width of the main cube; the layer occupies
    ``start <= |x_l| <= start + thickness`` before stretching.
    """

    start: float
    thickness: float
    beta_max: float
    g_max: float = 0.2

    def __post_init__(self):
        if not self.thickness > 0:
            raise MeshError("sponge thickness must be positive")
        if self.beta_max < 0 or self.g_max < 0:
            raise MeshError("sponge beta_max and g_max must be non-negative")

    @classmethod
    def for_frequency(cls, start: float, f0: float, c0: float = 1.0,
                      wavelengths: float = 6.0, damping: float = 10.0,
                      g_max: float = 0.2) -> "SpongeSpec":
        """Layer sized in source wavelengths, ``beta_max = damping * f0``."""
        return cls(start, wavelengths * c0 / f0, damping * f0, g_max)

    @property
    def stretched_thickness(self) -> float:
        return self.thickness * (1.0 + self.g_max)


def stretch_coordinate(x, spec: SpongeSpec):
    """Grid-stretched coordinate for ``x`` inside the layer ``[x0, x0 + L]``.

    Points outside the layer are passed through unchanged.
    """
    x = np.asarray(x, dtype=float)
    x0, L = spec.start, spec.thickness
    u = (x - x0) / L
    inside = (u >= 0.0) & (u <= 1.0)
    return np.where(inside, x0 + (x - x0) * (1.0 + spec.g_max * u**3), x)


def sponge_beta(x_stretched, spec: SpongeSpec):
    """Cubic damping profile evaluated at a stretched coordinate."""
    x = np.asarray(x_stretched, dtype=float)
    u = np.clip((x - spec.start) / spec.stretched_thickness, 0.0, 1.0)
    return spec.beta_max * u**3


def sponge_beta_3d(points, spec: SpongeSpec):
    """Damping at physical points (..., 3); per-axis profiles combined by maximum."""
    pts = np.abs(np.asarray(points, dtype=float))
    return np.max(sponge_beta(pts, spec), axis=-1)


@dataclass(frozen=True)
class ScattererBox:
    """Axis-aligned box obstacle.

    ``kind`` is ``"pec"``, ``"impedance"`` or ``"penetrable"``.  Impedance
    boxes use ``lam`` (the surface impedance Lambda); penetrable boxes use
    ``eps_r`` and ``mu_r``.
    """

    lo: tuple
    hi: tuple
    kind: str = "pec"
    lam: float = 1.0
    eps_r: float = 1.0
    mu_r: float = 1.0

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3 or any(a >= b for a, b in zip(lo, hi)):
            raise MeshError(f"invalid scatterer box {lo} - {hi}")
        if self.kind not in ("pec", "impedance", "penetrable"):
            raise MeshError(f"unknown scatterer kind {self.kind!r}")
        if self.kind == "impedance" and not self.lam > 0:
            raise MeshError("impedance scatterer needs lam > 0")
        if self.kind == "penetrable" and not (self.eps_r > 0 and self.mu_r > 0):
            raise MeshError("penetrable scatterer needs eps_r, mu_r > 0")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def impenetrable(self) -> bool:
        return self.kind != "penetrable"

    @property
    def boundary_kind(self) -> BoundaryKind:
        return BoundaryKind.PEC if self.kind == "pec" else BoundaryKind.IMPEDANCE

    @property
    def boundary_materials(self) -> tuple[float, float]:
        """Ghost (eps_bc, mu_bc) realizing Lambda = sqrt(eps_bc / mu_bc)."""
        if self.kind == "impedance":
            return self.lam**2, 1.0
        return 1.0, 1.0

    def contains(self, pts, pad: float = 0.0):
        pts = np.asarray(pts, dtype=float)
        lo = np.array(self.lo) - pad
        hi = np.array(self.hi) + pad
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def distance(self, pts):
        """Euclidean distance from points to the box (0 inside)."""
        pts = np.asarray(pts, dtype=float)
        d = np.maximum(np.maximum(np.array(self.lo) - pts, pts - np.array(self.hi)), 0.0)
        return np.linalg.norm(d, axis=-1)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming tetrahedral mesh.

    ``EToE``/``EToF`` give, per element and face, the neighbouring element
    and its face; boundary faces point back to themselves and carry a
    nonzero ``bc`` tag.  ``face_eps_bc``/``face_mu_bc`` hold the ghost
    materials for impedance faces.
    """

    vertices: np.ndarray
    tets: np.ndarray
    EToE: np.ndarray
    EToF: np.ndarray
    bc: np.ndarray
    face_eps_bc: np.ndarray
    face_mu_bc: np.ndarray
    region: np.ndarray
    eps_r: np.ndarray
    mu_r: np.ndarray
    sponge: SpongeSpec | None = None

    @property
    def K(self) -> int:
        return len(self.tets)

    def boundary_faces(self, kind: BoundaryKind | None = None):
        if kind is None:
            return np.argwhere(self.bc != BoundaryKind.NONE)
        return np.argwhere(self.bc == kind)

    def element_vertices(self) -> np.ndarray:
        return self.vertices[self.tets]  # (K, 4, 3)

    def signed_volumes(self) -> np.ndarray:
        v = self.element_vertices()
        d = v[:, 1:] - v[:, :1]
        return np.linalg.det(d) / 6.0

    def min_edge_lengths(self) -> np.ndarray:
        v = self.element_vertices()
        pairs = list(itertools.combinations(range(4), 2))
        lens = [np.linalg.norm(v[:, i] - v[:, j], axis=1) for i, j in pairs]
        return np.min(lens, axis=0)

    def centroids(self) -> np.ndarray:
        return self.element_vertices().mean(axis=1)


def connect(tets: np.ndarray):
    """Face-to-face connectivity. Returns (EToE, EToF, is_boundary)."""
    K = len(tets)
    fv = np.sort(tets[:, FACE_VERTICES], axis=2).reshape(4 * K, 3)
    ids = np.arange(4 * K)
    order = np.lexsort((fv[:, 2], fv[:, 1], fv[:, 0]))
    fs = fv[order]
    same = np.all(fs[1:] == fs[:-1], axis=1)
    if np.any(same[1:] & same[:-1]):
        raise MeshError("a face is shared by more than two elements")
    EToE = np.repeat(np.arange(K)[:, None], 4, axis=1).ravel()
    EToF = np.tile(np.arange(4), K)
    a, b = order[:-1][same], order[1:][same]
    EToE[a], EToF[a] = b // 4, b % 4
    EToE[b], EToF[b] = a // 4, a % 4
    boundary = np.ones(4 * K, dtype=bool)
    boundary[a] = False
    boundary[b] = False
    return EToE.reshape(K, 4), EToF.reshape(K, 4), boundary.reshape(K, 4)


def _axis_planes(lo: float, hi: float, breaks: Sequence[float], h: float) -> list[float]:
    pts = sorted({lo, hi, *[b for b in breaks if lo < b < hi]})
    planes = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, math.ceil((b - a) / h - 1e-9))
        planes.extend(a + (b - a) * np.arange(1, n + 1) / n)
    planes[-1] = hi
    return planes


def _orient(tets: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    v = vertices[tets]
    vol = np.linalg.det(v[:, 1:] - v[:, :1])
    tets = tets.copy()
    neg = vol < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3], tets[neg, 2].copy()
    return tets


def build_box_mesh(half_width: float, target_h: float,
                   scatterer_boxes: Sequence[ScattererBox] = (),
                   sponge: SpongeSpec | None = None, *,
                   sponge_h: float | None = None,
                   outer_bc: BoundaryKind = BoundaryKind.SMA) -> Mesh:
    """Structured cube-to-tet mesh of ``[-half_width, half_width]^3``.

    Elements inside impenetrable scatterers are removed and their exposed
    faces tagged PEC/impedance; penetrable boxes set per-element materials.
    With a sponge, cells outside the main cube (sized ``sponge_h``, default
    ``1.5 * target_h``) are tagged SPONGE and their vertices stretched.
    """
    if not target_h > 0:
        raise MeshError("target_h must be positive")
    boxes = list(scatterer_boxes)
    for b in boxes:
        if min(b.lo) <= -half_width or max(b.hi) >= half_width:
            raise MeshError(f"scatterer {b.lo}-{b.hi} is not strictly inside the domain")
        edge = min(h - l for l, h in zip(b.lo, b.hi))
        if target_h > edge + 1e-12:
            raise MeshError(f"target_h={target_h} exceeds smallest scatterer edge {edge}; "
                            "geometry unresolvable")
    if sponge is not None and abs(sponge.start - half_width) > 1e-12:
        raise MeshError("sponge must start at the main-cube half width")

    axes = []
    for a in range(3):
        breaks = [b.lo[a] for b in boxes] + [b.hi[a] for b in boxes]
        planes = _axis_planes(-half_width, half_width, breaks, target_h)
        if sponge is not None:
            hs = sponge_h if sponge_h is not None else 1.5 * target_h
            n = max(1, math.ceil(sponge.thickness / hs - 1e-9))
            ext = sponge.thickness * np.arange(1, n + 1) / n
            planes = list(-half_width - ext[::-1]) + planes + list(half_width + ext)
        axes.append(np.asarray(planes))

    nx, ny, nz = (len(ax) for ax in axes)
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    vertices = np.column_stack((X.ravel(), Y.ravel(), Z.ravel()))

    def vid(i, j, k):
        return (i * ny + j) * nz + k

    ci, cj, ck = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), np.arange(nz - 1),
                             indexing="ij")
    ci, cj, ck = ci.ravel(), cj.ravel(), ck.ravel()
    centers = np.column_stack(((axes[0][ci] + axes[0][ci + 1]) / 2,
                               (axes[1][cj] + axes[1][cj + 1]) / 2,
                               (axes[2][ck] + axes[2][ck + 1]) / 2))
    keep = np.ones(len(ci), dtype=bool)
    cell_eps = np.ones(len(ci))
    cell_mu = np.ones(len(ci))
    for b in boxes:
        inside = b.contains(centers)
        if b.impenetrable:
            keep &= ~inside
        else:
            cell_eps[inside] = b.eps_r
            cell_mu[inside] = b.mu_r
    ci, cj, ck, centers = ci[keep], cj[keep], ck[keep], centers[keep]
    cell_eps, cell_mu = cell_eps[keep], cell_mu[keep]
    cell_region = np.where(np.any(np.abs(centers) > half_width, axis=1),
                           Region.SPONGE, Region.MAIN)

    tets = []
    for perm in itertools.permutations(range(3)):
        corner = [np.zeros(3, dtype=int)]
        for ax in perm:
            c = corner[-1].copy()
            c[ax] = 1
            corner.append(c)
        tets.append(np.column_stack([vid(ci + c[0], cj + c[1], ck + c[2]) for c in corner]))
    tets = np.stack(tets, axis=1).reshape(-1, 4)
    n_sub = 6
    eps_r = np.repeat(cell_eps, n_sub)
    mu_r = np.repeat(cell_mu, n_sub)
    region = np.repeat(cell_region, n_sub).astype(np.int8)

    used, inverse = np.unique(tets, return_inverse=True)
    tets = inverse.reshape(tets.shape)
    vertices = vertices[used]
    tets = _orient(tets, vertices)

    EToE, EToF, boundary = connect(tets)
    bc = np.zeros((len(tets), 4), dtype=np.int8)
    face_eps = np.ones((len(tets), 4))
    face_mu = np.ones((len(tets), 4))
    fcent = vertices[tets[:, FACE_VERTICES]].mean(axis=2)  # (K, 4, 3)
    outer = np.array([ax[-1] for ax in axes])
    tol = 1e-9 * max(1.0, float(outer.max()))
    on_outer = np.any(np.abs(np.abs(fcent) - outer) < tol, axis=-1) & boundary
    bc[on_outer] = outer_bc
    rest = boundary & ~on_outer
    for b in boxes:
        if not b.impenetrable:
            continue
        hit = rest & b.contains(fcent, pad=tol)
        bc[hit] = b.boundary_kind
        face_eps[hit], face_mu[hit] = b.boundary_materials
        rest &= ~hit
    if np.any(rest):
        raise MeshError("untagged boundary faces remain")

    if sponge is not None:
        s = np.sign(vertices)
        vertices = s * stretch_coordinate(np.abs(vertices), sponge)

    return Mesh(vertices=vertices, tets=tets, EToE=EToE, EToF=EToF, bc=bc,
                face_eps_bc=face_eps, face_mu_bc=face_mu, region=region,
                eps_r=eps_r, mu_r=mu_r, sponge=sponge)


@dataclass(frozen=True, eq=False)
class GeomFactors:
    """Affine-element geometry.

    ``J`` follows the reference-element convention: element volume equals
    ``4/3 * J`` because the reference tetrahedron has volume 4/3.
    ``rst_x[k, i, j]`` holds d(r_i)/d(x_j).
    """

    J: np.ndarray  # (K,)
    rst_x: np.ndarray  # (K, 3, 3)
    sJ: np.ndarray  # (K, 4)
    normals: np.ndarray  # (K, 4, 3)

    @property
    def volume(self) -> np.ndarray:
        return 4.0 / 3.0 * self.J


def connect_and_factors(mesh: Mesh) -> GeomFactors:
    v = mesh.element_vertices()
    # x = 0.5 * (-(1+r+s+t) v0 + (1+r) v1 + (1+s) v2 + (1+t) v3)
    jac = 0.5 * np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=2)
    J = np.linalg.det(jac)
    scale = np.max(np.abs(jac), axis=(1, 2)) ** 3
    if np.any(J <= 1e-12 * scale):
        bad = np.nonzero(J <= 1e-12 * scale)[0]
        raise MeshError(f"degenerate or inverted elements: {bad[:10].tolist()}")
    rst_x = np.linalg.inv(jac)  # rows: grad r, grad s, grad t
    gr, gs, gt = rst_x[:, 0], rst_x[:, 1], rst_x[:, 2]
    n = np.stack([-gt, -gs, gr + gs + gt, -gr], axis=1)
    norm = np.linalg.norm(n, axis=2)
    normals = n / norm[..., None]
    sJ = norm * J[:, None]
    return GeomFactors(J=J, rst_x=rst_x, sJ=sJ, normals=normals)


@dataclass(frozen=True, eq=False)
class MaterialMap:
    eps_r: np.ndarray  # (K,)
    mu_r: np.ndarray  # (K,)
    beta: np.ndarray  # (Np, K)

    def __post_init__(self):
        if np.any(self.eps_r <= 0) or np.any(self.mu_r <= 0):
            raise MeshError("material parameters must be positive")
        if np.any(self.beta < 0):
            raise MeshError("damping must be non-negative")

    @property
    def speed(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.eps_r * self.mu_r)


def make_material_map(mesh: Mesh, nodes: np.ndarray) -> MaterialMap:
    """Materials from the mesh plus sponge damping at DG nodes ``(3, Np, K)``."""
    Np = nodes.shape[1]
    beta = np.zeros((Np, mesh.K))
    if mesh.sponge is not None:
        sp = np.nonzero(mesh.region == Region.SPONGE)[0]
        pts = np.moveaxis(nodes[:, :, sp], 0, -1)
        beta[:, sp] = sponge_beta_3d(pts, mesh.sponge)
    return MaterialMap(eps_r=np.asarray(mesh.eps_r, float).copy(),
                       mu_r=np.asarray(mesh.mu_r, float).copy(), beta=beta)


# -- file formats -------------------------------------------------------------

_BC_NAMES = {"pec": BoundaryKind.PEC, "impedance": BoundaryKind.IMPEDANCE,
             "sma": BoundaryKind.SMA, "silvermuller": BoundaryKind.SMA,
             "absorbing": BoundaryKind.SMA}


def read_gmsh(path, *, impedance_lambda: float = 1.0,
              materials: dict[str, tuple[float, float]] | None = None,
              default_bc: BoundaryKind = BoundaryKind.SMA,
              sponge: SpongeSpec | None = None) -> Mesh:
    """Read a Gmsh MSH 2.2 ASCII file (4-node tets plus tagged triangles).

    Triangle physical names select boundary kinds (PEC, Impedance, SMA);
    tetrahedron physical names select regions ("Sponge") or entries of
    ``materials`` mapping a name to ``(eps_r, mu_r)``.
    """
    lines = Path(path).read_text().splitlines()
    names: dict[int, str] = {}
    nodes: dict[int, np.ndarray] = {}
    tets, tet_tags, tris, tri_tags = [], [], [], []
    i = 0
    while i < len(lines):
        head = lines[i].strip()
        if head == "$MeshFormat":
            version = lines[i + 1].split()
            if not version[0].startswith("2") or version[1] != "0":
                raise MeshError(f"unsupported MSH format {version}")
            i += 3
        elif head == "$PhysicalNames":
            n = int(lines[i + 1])
            for ln in lines[i + 2:i + 2 + n]:
                parts = ln.split(maxsplit=2)
                names[int(parts[1])] = parts[2].strip().strip('"')
            i += n + 3
        elif head == "$Nodes":
            n = int(lines[i + 1])
            for ln in lines[i + 2:i + 2 + n]:
                parts = ln.split()
                nodes[int(parts[0])] = np.array([float(v) for v in parts[1:4]])
            i += n + 3
        elif head == "$Elements":
            n = int(lines[i + 1])
            for ln in lines[i + 2:i + 2 + n]:
                parts = [int(v) for v in ln.split()]
                etype, ntags = parts[1], parts[2]
                tag = parts[3] if ntags > 0 else 0
                conn = parts[3 + ntags:]
                if etype == 4:
                    tets.append(conn[:4])
                    tet_tags.append(tag)
                elif etype == 2:
                    tris.append(conn[:3])
                    tri_tags.append(tag)
            i += n + 3
        else:
            i += 1
    if not tets:
        raise MeshError("no tetrahedra in mesh file")
    ids = np.array(sorted(nodes))
    lookup = {nid: j for j, nid in enumerate(ids)}
    vertices = np.array([nodes[nid] for nid in ids])
    tets_arr = np.array([[lookup[v] for v in t] for t in tets])
    tets_arr = _orient(tets_arr, vertices)
    K = len(tets_arr)

    region = np.zeros(K, dtype=np.int8)
    eps_r, mu_r = np.ones(K), np.ones(K)
    materials = {k.lower(): v for k, v in (materials or {}).items()}
    for k, tag in enumerate(tet_tags):
        name = names.get(tag, "").lower()
        if name == "sponge":
            region[k] = Region.SPONGE
        if name in materials:
            eps_r[k], mu_r[k] = materials[name]

    EToE, EToF, boundary = connect(tets_arr)
    bc = np.zeros((K, 4), dtype=np.int8)
    bc[boundary] = default_bc
    face_eps, face_mu = np.ones((K, 4)), np.ones((K, 4))
    if tris:
        fkey = {tuple(sorted(f)): (k, j)
                for k, tet in enumerate(tets_arr)
                for j, f in enumerate(tet[FACE_VERTICES])}
        for tri, tag in zip(tris, tri_tags):
            key = tuple(sorted(lookup[v] for v in tri))
            if key not in fkey:
                continue
            k, j = fkey[key]
            if not boundary[k, j]:
                continue
            kind = _BC_NAMES.get(names.get(tag, "").lower().replace("-", "").replace(" ", ""))
            if kind is None:
                continue
            bc[k, j] = kind
            if kind == BoundaryKind.IMPEDANCE:
                face_eps[k, j], face_mu[k, j] = impedance_lambda**2, 1.0
    return Mesh(vertices=vertices, tets=tets_arr, EToE=EToE, EToF=EToF, bc=bc,
                face_eps_bc=face_eps, face_mu_bc=face_mu, region=region,
                eps_r=eps_r, mu_r=mu_r, sponge=sponge)


def write_gmsh(path, mesh: Mesh) -> None:
    """Write a mesh as MSH 2.2 ASCII with physical tags for boundaries and regions."""
    phys = {1: "Main", 2: "Sponge", 11: "PEC", 12: "Impedance", 13: "SMA"}
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames", str(len(phys))]
    for tag, name in phys.items():
        dim = 3 if tag < 10 else 2
        out.append(f'{dim} {tag} "{name}"')
    out += ["$EndPhysicalNames", "$Nodes", str(len(mesh.vertices))]
    out += [f"{i + 1} {x:.17g} {y:.17g} {z:.17g}" for i, (x, y, z) in enumerate(mesh.vertices)]
    out += ["$EndNodes", "$Elements"]
    elems = []
    for k, j in mesh.boundary_faces():
        tag = 10 + int(mesh.bc[k, j])
        v = mesh.tets[k, FACE_VERTICES[j]] + 1
        elems.append(f"2 2 {tag} {tag} {v[0]} {v[1]} {v[2]}")
    for k, tet in enumerate(mesh.tets):
        tag = 1 + int(mesh.region[k])
        v = tet + 1
        elems.append(f"4 2 {tag} {tag} {v[0]} {v[1]} {v[2]} {v[3]}")
    out.append(str(len(elems)))
    out += [f"{i + 1} {e}" for i, e in enumerate(elems)]
    out.append("$EndElements")
    Path(path).write_text("\n".join(out) + "\n")


def write_vtk(path, mesh: Mesh) -> None:
    """Legacy VTK unstructured-grid ASCII with region and material cell data."""
    K = mesh.K
    out = ["# vtk DataFile Version 3.0", "tdlsm mesh", "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {len(mesh.vertices)} double"]
    out += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    out.append(f"CELLS {K} {5 * K}")
    out += ["4 " + " ".join(map(str, t)) for t in mesh.tets]
    out.append(f"CELL_TYPES {K}")
    out += ["10"] * K
    out += [f"CELL_DATA {K}", "SCALARS region int 1", "LOOKUP_TABLE default"]
    out += [str(int(r)) for r in mesh.region]
    out += ["SCALARS eps_r double 1", "LOOKUP_TABLE default"]
    out += [f"{float(e):.17g}" for e in mesh.eps_r]
    Path(path).write_text("\n".join(out) + "\n")
