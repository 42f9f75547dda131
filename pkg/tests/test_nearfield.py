import numpy as np
import pytest
from hypothesis import given, strategies as st

from tdlsm.acquisition import DataSet, ProbeGrid, build_probe_grid
from tdlsm.incident import RickerSpec
from tdlsm.nearfield import (NearFieldOperator, OperatorShapeError, apply, apply_adjoint,
                             build_kernel, dense_matrix, dense_oracle, kernel_from_array,
                             operator_shape)

sizes = st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 16), st.integers(0, 2**31))


def _kernel(nI, nM, nT, seed):
    rng = np.random.default_rng(seed)
    return kernel_from_array(rng.standard_normal((2 * nM, 2 * nI, nT))), rng


@given(sizes)
def test_fft_apply_matches_dense_oracle(case):
    nI, nM, nT, seed = case
    k, rng = _kernel(nI, nM, nT, seed)
    g = rng.standard_normal(2 * nI * nT)
    ref = dense_oracle(k, g)
    assert np.max(np.abs(apply(k, g) - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


@given(sizes)
def test_adjoint_identity(case):
    nI, nM, nT, seed = case
    k, rng = _kernel(nI, nM, nT, seed)
    g = rng.standard_normal(2 * nI * nT)
    r = rng.standard_normal(2 * nM * nT)
    lhs, rhs = apply(k, g) @ r, g @ apply_adjoint(k, r)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, np.linalg.norm(apply(k, g)) * np.linalg.norm(r))


def test_dense_matrix_agrees_with_oracle_and_transpose():
    k, rng = _kernel(2, 3, 9, 1)
    A = dense_matrix(k)
    g = rng.standard_normal(A.shape[1])
    r = rng.standard_normal(A.shape[0])
    assert np.allclose(A @ g, dense_oracle(k, g), atol=1e-12)
    assert np.allclose(A.T @ r, apply_adjoint(k, r), atol=1e-12)


def test_single_time_sample_is_zero_map():
    k, _ = _kernel(1, 1, 1, 0)
    assert np.all(apply(k, np.ones(2)) == 0)


def test_causal_one_sample_lag():
    K = np.zeros((2, 2, 5))
    K[0, 0, 0] = 1.0
    k = kernel_from_array(K)
    g = np.zeros((2, 5))
    g[0, 1] = 1.0
    out = apply(k, g)
    assert out[0, 2] == pytest.approx(1.0)
    assert np.abs(out).sum() == pytest.approx(1.0)


def test_spectrum_round_trip():
    k, _ = _kernel(3, 4, 16, 7)
    assert np.max(np.abs(k.reconstructed() - k.K)) < 1e-12
    assert k.nfft == 32


def test_stacked_inputs():
    k, rng = _kernel(2, 2, 8, 3)
    G = rng.standard_normal((5, 4, 8))
    out = apply(k, G)
    assert out.shape == (5, 4, 8)
    for b in range(5):
        assert np.allclose(out[b], apply(k, G[b].ravel()).reshape(4, 8))
    op = NearFieldOperator(k)
    X = rng.standard_normal((32, 3))
    assert np.allclose(op.matmat(X), dense_matrix(k) @ X)
    Y = rng.standard_normal((32, 3))
    assert np.allclose(op.rmatmat(Y), dense_matrix(k).T @ Y)


def test_shape_errors():
    k, _ = _kernel(2, 2, 8, 3)
    with pytest.raises(OperatorShapeError):
        apply(k, np.ones(7))
    with pytest.raises(OperatorShapeError):
        apply_adjoint(k, np.ones((3, 8)))
    with pytest.raises(OperatorShapeError):
        kernel_from_array(np.ones((2, 2)))


def test_dense_guard():
    k = kernel_from_array(np.zeros((192, 108, 400)))
    with pytest.raises(OperatorShapeError):
        dense_matrix(k)


def test_operator_dimensions_at_full_scale():
    assert operator_shape(96, 54, 1250) == (240_000, 135_000)


def test_kernel_layout_and_weights():
    src = build_probe_grid(1, 1.0, "source")
    meas = build_probe_grid(1, 1.0)
    nT = 4
    tr = np.random.default_rng(0).standard_normal((12, 6, 2, nT))
    ds = DataSet(tr, src, meas, 2.0, RickerSpec(1.0))
    k = build_kernel(ds)
    assert k.K.shape == (12, 12, nT)
    for s in (0, 5, 11):
        for i, q in ((0, 0), (3, 1), (5, 1)):
            expected = tr[s, i, q] * src.weights[s // 2] / nT
            assert np.allclose(k.K[2 * i + q, s], expected)


def test_zero_traces_give_zero_kernel():
    src = build_probe_grid(1, 1.0, "source")
    meas = build_probe_grid(1, 1.0)
    ds = DataSet(np.zeros((12, 6, 2, 5)), src, meas, 1.0, RickerSpec(1.0))
    k = build_kernel(ds)
    assert not k.K.any() and not apply(k, np.ones(12 * 5)).any()


def test_weight_scale_at_full_resolution():
    src = build_probe_grid(3, 4.0, "source")
    meas = build_probe_grid(1, 4.0)
    nT = 1250
    ds = DataSet(np.ones((108, 6, 2, nT)), src, meas, 20.0, RickerSpec(1.0))
    k = build_kernel(ds)
    assert np.allclose(k.K, 64 / 11250)


def test_impulse_response_and_mirrored_adjoint():
    k, rng = _kernel(2, 2, 10, 11)
    g = np.zeros((4, 10))
    g[3, 2] = 1.0
    out = apply(k, g)
    for j in range(10):
        expected = k.K[:, 3, j - 2 - 1] if j - 2 >= 1 else np.zeros(4)
        assert np.allclose(out[:, j], expected)
    K = np.zeros((4, 4, 10))
    K[1, 2, 3] = 1.0
    one = kernel_from_array(K)
    r = np.zeros((4, 10))
    r[1, 7] = 1.0
    back = apply_adjoint(one, r)
    # forward couples g[2, l] to r[1, l + 4]; the transpose maps r[1, 7] to g[2, 3]
    assert np.isclose(back[2, 3], 1.0) and np.isclose(np.abs(back).sum(), 1.0)
    assert not apply_adjoint(k, np.zeros(40)).any()


@given(sizes, st.floats(-5, 5))
def test_linearity(case, c):
    nI, nM, nT, seed = case
    k, rng = _kernel(nI, nM, nT, seed)
    g1, g2 = rng.standard_normal((2, 2 * nI * nT))
    assert np.allclose(dense_oracle(k, g1 + g2), dense_oracle(k, g1) + dense_oracle(k, g2))
    assert np.allclose(apply(k, c * g1), c * apply(k, g1), atol=1e-12)


def test_causal_sparsity_pattern():
    k, rng = _kernel(2, 2, 12, 4)
    A = dense_matrix(k).reshape(4, 12, 4, 12)
    for j in range(12):
        for l in range(j, 12):
            assert not A[:, j, :, l].any()
