import numpy as np

from tdlsm.mesh import BoundaryKind, Mesh, connect


def mesh_from_tets(vertices, tets, bc=BoundaryKind.SMA, eps_r=None):
    vertices = np.asarray(vertices, dtype=float)
    tets = np.asarray(tets, dtype=int)
    K = len(tets)
    EToE, EToF, boundary = connect(tets)
    tags = np.where(boundary, int(bc), 0).astype(np.int8)
    eps = np.ones(K) if eps_r is None else np.asarray(eps_r, dtype=float)
    return Mesh(vertices=vertices, tets=tets, EToE=EToE, EToF=EToF, bc=tags,
                face_eps_bc=np.ones((K, 4)), face_mu_bc=np.ones((K, 4)),
                region=np.zeros(K, dtype=np.int8), eps_r=eps, mu_r=np.ones(K))


REF_TET = (np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]), np.array([[0, 1, 2, 3]]))
