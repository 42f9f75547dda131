import numpy as np
import pytest
from hypothesis import given, strategies as st

from tdlsm.mesh import (BoundaryKind, MeshError, Region, ScattererBox, SpongeSpec,
                        build_box_mesh, connect_and_factors, make_material_map, read_gmsh,
                        sponge_beta, sponge_beta_3d, stretch_coordinate, write_gmsh, write_vtk)
from _util import REF_TET, mesh_from_tets


def _check_connectivity(mesh):
    K = mesh.K
    for k in range(K):
        for f in range(4):
            k2, f2 = mesh.EToE[k, f], mesh.EToF[k, f]
            if (k2, f2) == (k, f):
                assert mesh.bc[k, f] != BoundaryKind.NONE
            else:
                assert mesh.bc[k, f] == BoundaryKind.NONE
                assert (mesh.EToE[k2, f2], mesh.EToF[k2, f2]) == (k, f)


def test_unit_cube_six_tets():
    mesh = build_box_mesh(0.5, 1.0, outer_bc=BoundaryKind.PEC)
    assert mesh.K == 6
    assert np.all(mesh.signed_volumes() > 0)
    assert mesh.signed_volumes().sum() == pytest.approx(1.0)
    assert len(mesh.boundary_faces()) == 12


def test_empty_domain_has_no_impedance_faces():
    mesh = build_box_mesh(1.0, 0.5)
    assert len(mesh.boundary_faces(BoundaryKind.IMPEDANCE)) == 0
    assert len(mesh.boundary_faces(BoundaryKind.SMA)) == 6 * 4 * 4 * 2
    _check_connectivity(mesh)


def test_scatterer_faces_snap_to_element_faces():
    box = ScattererBox((0.25,) * 3, (0.75,) * 3, "impedance", lam=np.sqrt(2))
    mesh = build_box_mesh(1.0, 0.25, [box])
    faces = mesh.boundary_faces(BoundaryKind.IMPEDANCE)
    area = 0.0
    v = mesh.vertices
    for k, f in faces:
        from tdlsm.mesh import FACE_VERTICES
        a, b, c = v[mesh.tets[k, FACE_VERTICES[f]]]
        area += 0.5 * np.linalg.norm(np.cross(b - a, c - a))
        assert np.all(box.contains(np.array([a, b, c]), pad=1e-12))
        assert mesh.face_eps_bc[k, f] == pytest.approx(2.0)
    assert area == pytest.approx(6 * 0.25)
    assert mesh.signed_volumes().sum() == pytest.approx(8.0 - 0.125)
    _check_connectivity(mesh)


def test_mesh_errors():
    with pytest.raises(MeshError):
        build_box_mesh(1.0, 0.6, [ScattererBox((-0.25,) * 3, (0.25,) * 3)])
    with pytest.raises(MeshError):
        build_box_mesh(1.0, 0.25, [ScattererBox((0.5,) * 3, (1.5,) * 3)])
    with pytest.raises(MeshError):
        ScattererBox((0,) * 3, (0,) * 3)


def test_penetrable_box_sets_materials():
    box = ScattererBox((-0.5,) * 3, (0.5,) * 3, "penetrable", eps_r=4.0)
    mesh = build_box_mesh(1.0, 0.5, [box])
    inside = box.contains(mesh.centroids())
    assert np.all(mesh.eps_r[inside] == 4.0) and np.all(mesh.eps_r[~inside] == 1.0)
    assert len(mesh.boundary_faces(BoundaryKind.PEC)) == 0


def test_reference_tet_factors():
    g = connect_and_factors(mesh_from_tets(*REF_TET))
    assert g.J[0] == pytest.approx(1 / 8)
    assert g.volume[0] == pytest.approx(1 / 6)
    expected = [(0, 0, -1), (0, -1, 0), tuple(np.ones(3) / np.sqrt(3)), (-1, 0, 0)]
    for f, n in enumerate(expected):
        assert np.allclose(g.normals[0, f], n)


def test_similarity_scaling():
    m = build_box_mesh(1.0, 0.5)
    big = mesh_from_tets(2 * m.vertices, m.tets)
    g1, g2 = connect_and_factors(m), connect_and_factors(big)
    assert np.allclose(g2.J, 8 * g1.J)
    assert np.allclose(g2.sJ, 4 * g1.sJ)
    assert np.allclose(g2.normals, g1.normals)


def test_degenerate_tet_rejected():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])
    with pytest.raises(MeshError):
        connect_and_factors(mesh_from_tets(verts, [[0, 1, 2, 3]]))


def test_interior_normals_opposite_and_unit():
    box = ScattererBox((-0.25,) * 3, (0.25,) * 3, "pec")
    mesh = build_box_mesh(1.0, 0.5, [box], SpongeSpec(1.0, 1.0, 10.0))
    g = connect_and_factors(mesh)
    assert np.all(g.J > 0)
    assert np.allclose(np.linalg.norm(g.normals, axis=-1), 1.0)
    nbr = g.normals[mesh.EToE, mesh.EToF]
    interior = mesh.bc == BoundaryKind.NONE
    assert np.max(np.abs(g.normals[interior] + nbr[interior])) < 1e-12
    assert np.allclose(g.sJ[interior], g.sJ[mesh.EToE, mesh.EToF][interior])
    _check_connectivity(mesh)


def test_sponge_region_and_damping():
    sp = SpongeSpec.for_frequency(1.0, 1.0, wavelengths=1.0)
    mesh = build_box_mesh(1.0, 0.5, sponge=sp)
    assert np.all(np.abs(mesh.vertices) <= 1.0 + sp.stretched_thickness + 1e-12)
    assert np.max(np.abs(mesh.vertices)) == pytest.approx(1.0 + 1.2)
    from tdlsm.dg.operator import MaxwellDG
    op = MaxwellDG(mesh, 2)
    beta = op.materials.beta
    main = mesh.region == Region.MAIN
    assert np.all(beta[:, main] == 0) and np.all(beta >= 0)
    assert beta.max() <= sp.beta_max


def test_stretch_examples():
    sp = SpongeSpec(2.0, 3.0, 10.0, 0.2)
    assert stretch_coordinate(2.0, sp) == pytest.approx(2.0)
    assert stretch_coordinate(5.0, sp) == pytest.approx(2.0 + 1.2 * 3.0)
    assert stretch_coordinate(1.0, sp) == 1.0  # outside: identity
    flat = SpongeSpec(2.0, 3.0, 10.0, 0.0)
    xs = np.linspace(0, 6, 13)
    assert np.allclose(stretch_coordinate(xs, flat), xs)


def test_beta_examples():
    sp = SpongeSpec(2.0, 3.0, 10.0, 0.2)
    L = sp.stretched_thickness
    assert sponge_beta(2.0, sp) == 0.0
    assert sponge_beta(2.0 + L, sp) == pytest.approx(10.0)
    assert sponge_beta(2.0 + L / 2, sp) == pytest.approx(10.0 / 8)
    assert sponge_beta(100.0, sp) == 10.0 and sponge_beta(-1.0, sp) == 0.0


def test_beta_3d_uses_axis_maximum():
    sp = SpongeSpec(1.0, 1.0, 8.0, 0.0)
    pts = np.array([[1.5, 1.25, 0.0], [-1.5, 0.0, 0.0], [0.2, 0.3, 0.4]])
    assert np.allclose(sponge_beta_3d(pts, sp), [1.0, 1.0, 0.0])


@given(st.floats(0.0, 0.9), st.floats(0.01, 0.99), st.floats(0.0, 0.5))
def test_stretch_monotone(g, u, du):
    sp = SpongeSpec(1.0, 2.0, 1.0, g)
    x1 = 1.0 + 2.0 * u
    x2 = min(3.0, x1 + du + 1e-6)
    assert stretch_coordinate(x2, sp) > stretch_coordinate(x1, sp)


@given(st.floats(0.0, 1e-3))
def test_beta_continuous_at_interface(eps):
    sp = SpongeSpec(1.0, 2.0, 10.0, 0.2)
    assert sponge_beta(1.0 + eps, sp) <= 10.0 * (eps / sp.stretched_thickness) ** 3 + 1e-15


def test_gmsh_round_trip(tmp_path):
    box = ScattererBox((-0.25,) * 3, (0.25,) * 3, "impedance", lam=np.sqrt(2))
    sp = SpongeSpec(1.0, 1.0, 10.0)
    mesh = build_box_mesh(1.0, 0.5, [box], sp)
    path = tmp_path / "m.msh"
    write_gmsh(path, mesh)
    back = read_gmsh(path, impedance_lambda=np.sqrt(2), sponge=sp)
    assert back.K == mesh.K
    assert np.allclose(back.vertices, mesh.vertices)
    assert np.array_equal(np.sort(back.bc, axis=None), np.sort(mesh.bc, axis=None))
    assert np.array_equal(back.region, mesh.region)
    assert np.allclose(back.face_eps_bc[back.bc == BoundaryKind.IMPEDANCE], 2.0)
    write_vtk(tmp_path / "m.vtk", mesh)
    assert (tmp_path / "m.vtk").read_text().startswith("# vtk DataFile")


def test_materials_map_from_nodes():
    mesh = build_box_mesh(1.0, 1.0)
    nodes = np.zeros((3, 4, mesh.K))
    mat = make_material_map(mesh, nodes)
    assert mat.beta.shape == (4, mesh.K) and np.all(mat.speed == 1.0)
