import numpy as np
import pytest
from hypothesis import given, strategies as st

from tdlsm.acquisition import build_probe_grid
from tdlsm.incident import DipoleSource, RickerSpec, dipole_E
from tdlsm.inversion import (IndicatorVolume, InversionError, MatrixOperator, SamplingGrid,
                             SVDResult, filter_factors, indicator_from_coefficients,
                             indicator_sweep, isosurface_level, kernel_hash, load_svd,
                             load_volume, projection_coefficients, rhs_vector, save_svd,
                             save_volume, solve_regularized, truncated_svd)
from tdlsm.nearfield import NearFieldOperator, dense_matrix, kernel_from_array

CHI = RickerSpec(1.0)


def _rand_kernel(nI, nM, nT, seed):
    rng = np.random.default_rng(seed)
    return kernel_from_array(rng.standard_normal((2 * nM, 2 * nI, nT)))


def _check_svd(svd, A, n):
    ref = np.linalg.svd(A, compute_uv=False)
    assert np.all(np.diff(svd.sigma) <= 0)
    assert np.max(np.abs(svd.sigma - ref[:n])) <= 1e-8 * ref[0]
    assert np.max(np.abs(svd.U.T @ svd.U - np.eye(n))) < 1e-8
    assert np.max(np.abs(svd.V.T @ svd.V - np.eye(n))) < 1e-8
    resid = np.linalg.norm(A @ svd.V - svd.U * svd.sigma, axis=0)
    assert np.all(resid <= 1e-6 * ref[0])
    assert np.allclose(resid, svd.residuals, atol=1e-12 * ref[0])


def test_diagonal_shim():
    svd = truncated_svd(MatrixOperator(np.diag([3.0, 2.0, 1.0])), 3)
    assert np.allclose(svd.sigma, [3, 2, 1])
    assert np.allclose(np.abs(svd.V), np.eye(3), atol=1e-12)
    assert np.allclose(np.abs(svd.U), np.eye(3), atol=1e-12)


def test_rank_one():
    u0 = np.array([1.0, 2.0, 2.0]) / 3
    v0 = np.array([0.6, 0.0, 0.8])
    svd = truncated_svd(MatrixOperator(5.0 * np.outer(u0, v0)), 2)
    assert svd.sigma[0] == pytest.approx(5.0)
    assert svd.sigma[1] < 1e-12
    assert abs(abs(svd.U[:, 0] @ u0) - 1) < 1e-12 and abs(abs(svd.V[:, 0] @ v0) - 1) < 1e-12
    assert svd.converged


@pytest.mark.parametrize("shape,n", [((2, 3, 8), 6), ((3, 4, 16), 20), ((1, 2, 5), 10),
                                     ((3, 2, 12), 40)])
def test_matches_dense_svd(shape, n):
    k = _rand_kernel(*shape, seed=sum(shape))
    svd = truncated_svd(NearFieldOperator(k), n, seed=1)
    assert svd.converged
    _check_svd(svd, dense_matrix(k), n)


def test_restarts_with_small_subspace():
    k = _rand_kernel(3, 4, 16, 5)
    svd = truncated_svd(NearFieldOperator(k), 5, seed=0, ncv=12, max_restarts=200)
    assert svd.converged and svd.iterations > 1
    _check_svd(svd, dense_matrix(k), 5)


def test_budget_exhaustion_flags():
    k = _rand_kernel(3, 4, 16, 5)
    svd = truncated_svd(NearFieldOperator(k), 8, seed=0, ncv=9, max_restarts=0)
    assert not svd.converged and svd.n == 8


def test_seed_determinism():
    k = _rand_kernel(2, 3, 10, 2)
    a = truncated_svd(NearFieldOperator(k), 5, seed=3)
    b = truncated_svd(NearFieldOperator(k), 5, seed=3)
    assert np.array_equal(a.sigma, b.sigma) and np.array_equal(a.U, b.U)


def test_n_sv_bounds():
    op = MatrixOperator(np.eye(3))
    with pytest.raises(InversionError):
        truncated_svd(op, 4)
    with pytest.raises(InversionError):
        truncated_svd(op, 0)


def test_zero_operator():
    svd = truncated_svd(MatrixOperator(np.zeros((6, 4))), 2)
    assert np.all(svd.sigma == 0)
    g, n = solve_regularized(svd, np.ones(6), 0.1)
    assert n == 0.0


def _full_svd(A):
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    z = np.zeros_like(s)
    return SVDResult(s, U, Vt.T, z, z)


def test_exact_solve_gamma_zero():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((12, 12)) + 4 * np.eye(12)
    b = rng.standard_normal(12)
    svd = truncated_svd(MatrixOperator(A), 12)
    g, n = solve_regularized(svd, b, 0.0)
    assert np.linalg.norm(A @ g - b) < 1e-8 * np.linalg.norm(b)
    assert n == pytest.approx(np.linalg.norm(g))


@given(st.integers(0, 1000), st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_tikhonov_norm_monotone(seed, g1, g2):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((8, 6))
    b = rng.standard_normal(8)
    svd = _full_svd(A)
    lo, hi = sorted((g1, g2))
    assert solve_regularized(svd, b, lo)[1] >= solve_regularized(svd, b, hi)[1] - 1e-12


def test_large_gamma_shrinks_to_zero():
    rng = np.random.default_rng(1)
    svd = _full_svd(rng.standard_normal((8, 6)))
    b = rng.standard_normal(8)
    norms = [solve_regularized(svd, b, g)[1] for g in (1e2, 1e4, 1e6, 1e8)]
    assert all(x > y for x, y in zip(norms, norms[1:])) and norms[-1] < 1e-6


@given(st.integers(0, 1000))
def test_truncation_residual_monotone(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((10, 7))
    b = rng.standard_normal(10)
    svd = _full_svd(A)
    res = [np.linalg.norm(A @ solve_regularized(svd.truncated(n), b, 0.0)[0] - b)
           for n in range(1, 8)]
    assert all(x >= y - 1e-12 for x, y in zip(res, res[1:]))


def test_filter_factors():
    f = filter_factors(np.array([2.0, 1.0, 0.0]), 0.0)
    assert np.allclose(f, [0.5, 1.0, 0.0])
    with pytest.raises(InversionError):
        solve_regularized(_full_svd(np.eye(2)), np.ones(2), -1.0)


# -- sampling ---------------------------------------------------------------------

MEAS = build_probe_grid(2, 1.0)
TIMES = 4.0 / 20 * np.arange(1, 21)


def test_rhs_matches_direct_evaluation():
    z = np.array([0.1, -0.2, 0.05])
    p = np.array([0.0, 0.0, 1.0])
    b = rhs_vector(z, p, 0.0, MEAS, TIMES, CHI)
    assert b.shape == (2 * len(MEAS), len(TIMES))
    src = DipoleSource(z, p, CHI)
    for i in np.nonzero(np.isclose(MEAS.normals[:, 2], 1.0))[0]:
        for q in range(2):
            for j in (3, 10, 19):
                E = dipole_E(MEAS.points[i], TIMES[j], src)
                assert b[2 * i + q, j] == pytest.approx(MEAS.tangents[i, q] @ E, abs=1e-14)


def test_rhs_causal_at_centre():
    b = rhs_vector(np.zeros(3), np.array([1.0, 0, 0]), 0.0, MEAS, TIMES, CHI).reshape(
        len(MEAS), 2, -1)
    d = np.linalg.norm(MEAS.points, axis=1)
    peak = np.abs(b).max()
    for i in range(len(MEAS)):
        assert np.abs(b[i][:, TIMES < d[i] - 1.0]).max(initial=0) < 1e-6 * peak


def test_rhs_time_shift():
    z, p = np.array([0.1, 0.2, 0.0]), np.array([0, 1.0, 0])
    dt = TIMES[1] - TIMES[0]
    a = rhs_vector(z, p, 0.0, MEAS, TIMES, CHI)
    b = rhs_vector(z, p, dt, MEAS, TIMES, CHI)
    assert np.allclose(b[:, 1:], a[:, :-1], atol=1e-12)


def test_rhs_rejects_measurement_point():
    with pytest.raises(InversionError):
        rhs_vector(MEAS.points[3], np.array([1.0, 0, 0]), 0.0, MEAS, TIMES, CHI)


def test_batched_rhs_matches_single():
    grid = SamplingGrid.cube(-0.4, 0.4, 3)
    k = kernel_from_array(np.random.default_rng(0).standard_normal((2 * len(MEAS), 6, 20)))
    svd = truncated_svd(NearFieldOperator(k), 6)
    coef, bad = projection_coefficients(svd, grid, MEAS, TIMES, CHI, chunk=5)
    assert not bad.any()
    for idx in (0, 13, 26):
        z = grid.points()[idx]
        for a in range(3):
            b = rhs_vector(z, np.eye(3)[a], 0.0, MEAS, TIMES, CHI).ravel()
            assert np.allclose(coef[idx, a], svd.U.T @ b, atol=1e-12)


def test_indicator_matches_explicit_solves():
    grid = SamplingGrid.cube(-0.5, 0.5, 2)
    k = kernel_from_array(np.random.default_rng(4).standard_normal((2 * len(MEAS), 8, 20)))
    svd = truncated_svd(NearFieldOperator(k), 10)
    vol = indicator_sweep(k, svd, grid, 0.1, MEAS, TIMES, CHI, n_sv=7)
    for idx, z in enumerate(grid.points()):
        norms = [solve_regularized(svd.truncated(7), rhs_vector(z, e, 0.0, MEAS, TIMES, CHI),
                                   0.1)[1] for e in np.eye(3)]
        assert np.allclose(vol.norms.reshape(-1, 3)[idx], norms, rtol=1e-10)
        assert vol.psi.ravel()[idx] == pytest.approx(1 / sum(norms))


def test_zero_kernel_gives_degenerate_volume():
    grid = SamplingGrid.cube(-0.5, 0.5, 2)
    k = kernel_from_array(np.zeros((2 * len(MEAS), 4, 20)))
    svd = truncated_svd(NearFieldOperator(k), 3)
    vol = indicator_sweep(k, svd, grid, 0.1, MEAS, TIMES, CHI)
    assert vol.degenerate and np.all(vol.psi == 0) and np.all(np.isfinite(vol.psi))
    with pytest.raises(InversionError):
        isosurface_level(vol, 0.1)


def test_flagged_points_get_zero():
    grid = SamplingGrid((1.0, -0.5, -0.5), (1.0, 0.5, 0.5), (1, 2, 2))  # on the +x face
    k = kernel_from_array(np.random.default_rng(0).standard_normal((2 * len(MEAS), 4, 20)))
    svd = truncated_svd(NearFieldOperator(k), 3)
    vol = indicator_sweep(k, svd, grid, 0.1, MEAS, TIMES, CHI)
    assert vol.flags.all() and np.all(vol.psi == 0)


def test_kernel_scaling_ranking_invariance():
    rng = np.random.default_rng(2)
    K = rng.standard_normal((2 * len(MEAS), 6, 20))
    grid = SamplingGrid.cube(-0.5, 0.5, 3)
    vols = []
    for c in (1.0, 3.0):
        k = kernel_from_array(c * K)
        svd = truncated_svd(NearFieldOperator(k), 6)
        vols.append(indicator_sweep(k, svd, grid, 0.0, MEAS, TIMES, CHI))
    assert np.allclose(vols[1].norms, vols[0].norms / 3.0, rtol=1e-8)
    assert np.argmax(vols[0].psi) == np.argmax(vols[1].psi)
    assert np.array_equal(np.argsort(vols[0].psi, axis=None), np.argsort(vols[1].psi, axis=None))


def test_wrong_kernel_rejected():
    k = kernel_from_array(np.ones((2 * len(MEAS), 4, 20)))
    svd = truncated_svd(NearFieldOperator(kernel_from_array(np.ones((4, 4, 20)))), 2)
    with pytest.raises(InversionError):
        indicator_sweep(k, svd, SamplingGrid.cube(0, 0, 1), 0.1, MEAS, TIMES, CHI)


# -- isosurface level -------------------------------------------------------------

def _volume_from_psi(psi):
    psi = np.asarray(psi, dtype=float)
    norms = np.zeros(psi.shape + (3,))
    norms[..., 0] = 1.0 / psi
    grid = SamplingGrid((0, 0, 0), (1, 1, 1), psi.shape)
    return IndicatorVolume(grid, norms, np.zeros(psi.shape, bool), 0.1, 1, 1.0)


def test_level_examples():
    vol = _volume_from_psi(np.array([1.0, 0.5, 0.25, 2.0]).reshape(1, 2, 2))
    assert isosurface_level(vol, 0.0) == pytest.approx(2.0)
    assert isosurface_level(vol, 1.0) == pytest.approx(0.25)
    assert isosurface_level(vol, 0.1) == pytest.approx(0.1 * 0.25 + 0.9 * 2.0)
    const = _volume_from_psi(np.full((2, 2, 2), 3.0))
    assert isosurface_level(const, 0.37) == pytest.approx(3.0)


def test_level_min_zero_max_one():
    psi = np.array([1e-300, 1.0]).reshape(1, 1, 2)
    assert isosurface_level(_volume_from_psi(psi), 0.1) == pytest.approx(0.9)


# -- checkpoints --------------------------------------------------------------------

def test_svd_checkpoint_round_trip(tmp_path):
    k = _rand_kernel(2, 2, 6, 0)
    svd = truncated_svd(NearFieldOperator(k), 4)
    svd.kernel_hash = kernel_hash(k)
    save_svd(svd, tmp_path / "s.bin")
    back = load_svd(tmp_path / "s.bin")
    assert np.array_equal(back.sigma, svd.sigma) and np.array_equal(back.U, svd.U)
    assert np.array_equal(back.V, svd.V) and back.kernel_hash == svd.kernel_hash
    assert back.converged == svd.converged
    raw = (tmp_path / "s.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-50])
    with pytest.raises(InversionError):
        load_svd(tmp_path / "t.bin")
    (tmp_path / "m.bin").write_bytes(b"NOTANSVD" + raw[8:])
    with pytest.raises(InversionError):
        load_svd(tmp_path / "m.bin")


def test_volume_round_trip(tmp_path):
    vol = _volume_from_psi(np.arange(1.0, 9.0).reshape(2, 2, 2))
    vol.meta["config_hash"] = "abc"
    save_volume(vol, tmp_path / "v.npz")
    back = load_volume(tmp_path / "v.npz")
    assert np.array_equal(back.psi, vol.psi) and back.meta["config_hash"] == "abc"
    assert back.level == pytest.approx(vol.level) and back.grid == vol.grid


def test_sampling_grid():
    g = SamplingGrid.cube(-1.5, 1.5, 41)
    assert g.size == 68921 and g.spacing == pytest.approx((0.075,) * 3)
    pts = g.points()
    assert np.allclose(pts[0], -1.5) and np.allclose(pts[-1], 1.5)
    assert np.allclose(pts[1], [-1.5, -1.5, -1.425])
    with pytest.raises(InversionError):
        SamplingGrid((0, 0, 0), (1, 1, 1), (0, 1, 1))
