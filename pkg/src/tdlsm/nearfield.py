"""Discrete near-field operator: block causal time convolution with the data kernel.

With ``K[r, s, m]`` for ``m = 1..N_T`` (``r`` a measurement row ``(i, q)``,
``s`` a density column ``(k, l)``) the operator is

    (A g)[r, j] = sum_{l < j} sum_s K[r, s, j - l] g[s, l]

so a density sample influences the output one step later at the earliest.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acquisition import DataSet

DENSE_LIMIT = 10_000_000


class OperatorShapeError(ValueError):
    pass


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


@dataclass(frozen=True, eq=False)
class NearFieldKernel:
    """Scaled kernel ``K[r, s, m - 1]`` and its cached zero-padded spectrum."""

    K: np.ndarray  # (2 N_M, 2 N_I, N_T)
    nfft: int
    Khat: np.ndarray  # (2 N_M, 2 N_I, nfft // 2 + 1)

    @property
    def n_rows(self) -> int:
        return self.K.shape[0]

    @property
    def n_cols(self) -> int:
        return self.K.shape[1]

    @property
    def N_T(self) -> int:
        return self.K.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        """Matrix dimensions (trace-space length, density-space length)."""
        return self.n_rows * self.N_T, self.n_cols * self.N_T

    def reconstructed(self) -> np.ndarray:
        """Kernel recovered from the cached spectrum (transform round trip)."""
        return np.fft.irfft(self.Khat, self.nfft, axis=-1)[..., :self.N_T]


def operator_shape(n_meas: int, n_src: int, n_t: int) -> tuple[int, int]:
    """Matrix size of the discrete system for the given grid sizes."""
    return 2 * n_meas * n_t, 2 * n_src * n_t


def kernel_from_array(K: np.ndarray) -> NearFieldKernel:
    K = np.ascontiguousarray(K, dtype=float)
    if K.ndim != 3:
        raise OperatorShapeError("kernel must have shape (rows, cols, N_T)")
    nfft = _next_pow2(2 * K.shape[2] - 1)
    return NearFieldKernel(K, nfft, np.fft.rfft(K, nfft, axis=-1))


def build_kernel(ds: DataSet) -> NearFieldKernel:
    """Kernel ``traces * w_k / N_T`` rearranged to (measurement row, density column, time)."""
    nI, nM, nT = len(ds.sources), len(ds.measurements), ds.N_T
    w = np.repeat(ds.sources.weights, 2) / nT  # per column s = 2k + l
    K = ds.traces.transpose(1, 2, 0, 3).reshape(2 * nM, 2 * nI, nT) * w[None, :, None]
    return kernel_from_array(K)


def _as_blocks(x: np.ndarray, rows: int, nT: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.size != rows * nT:
            raise OperatorShapeError(f"{what} vector has length {x.size}, expected {rows * nT}")
        return x.reshape(1, rows, nT), True
    if x.shape[-2:] != (rows, nT):
        raise OperatorShapeError(f"{what} has shape {x.shape}, expected (..., {rows}, {nT})")
    return x.reshape(-1, rows, nT), False


def apply(kernel: NearFieldKernel, g: np.ndarray) -> np.ndarray:
    """Forward map on densities ``g`` (2 N_I, N_T), a flat vector, or a stack of either."""
    nT = kernel.N_T
    shape = np.shape(g)
    G, flat = _as_blocks(g, kernel.n_cols, nT, "density")
    Ghat = np.fft.rfft(G, kernel.nfft, axis=-1)  # (b, S, F)
    Rhat = np.einsum("rsf,bsf->brf", kernel.Khat, Ghat)
    conv = np.fft.irfft(Rhat, kernel.nfft, axis=-1)
    out = np.zeros((G.shape[0], kernel.n_rows, nT))
    out[..., 1:] = conv[..., :nT - 1]
    if flat:
        return out.reshape(-1)
    return out.reshape(shape[:-2] + (kernel.n_rows, nT))


def apply_adjoint(kernel: NearFieldKernel, r: np.ndarray) -> np.ndarray:
    """Transpose map: time correlation of traces ``r`` with the kernel."""
    nT = kernel.N_T
    shape = np.shape(r)
    R, flat = _as_blocks(r, kernel.n_rows, nT, "trace")
    shifted = np.zeros_like(R)
    shifted[..., :nT - 1] = R[..., 1:]
    Rhat = np.fft.rfft(shifted, kernel.nfft, axis=-1)
    Ghat = np.einsum("rsf,brf->bsf", np.conj(kernel.Khat), Rhat)
    out = np.fft.irfft(Ghat, kernel.nfft, axis=-1)[..., :nT]
    if flat:
        return out.reshape(-1)
    return out.reshape(shape[:-2] + (kernel.n_cols, nT))


def dense_matrix(kernel: NearFieldKernel) -> np.ndarray:
    """Explicit matrix, rows ``(r, j)`` and columns ``(s, l)`` in C order."""
    m, n = kernel.shape
    if m * n > DENSE_LIMIT:
        raise OperatorShapeError(f"dense matrix {m}x{n} exceeds {DENSE_LIMIT} entries")
    R, S, nT = kernel.K.shape
    A = np.zeros((R, nT, S, nT))
    for j in range(nT):
        for l in range(j):
            A[:, j, :, l] = kernel.K[:, :, j - l - 1]
    return A.reshape(m, n)


def dense_oracle(kernel: NearFieldKernel, g: np.ndarray) -> np.ndarray:
    """Direct triple-loop evaluation of :func:`apply` (no transforms)."""
    m, n = kernel.shape
    if m * n > DENSE_LIMIT:
        raise OperatorShapeError(f"dense evaluation {m}x{n} exceeds {DENSE_LIMIT} entries")
    G, flat = _as_blocks(g, kernel.n_cols, kernel.N_T, "density")
    if G.shape[0] != 1:
        raise OperatorShapeError("dense_oracle takes a single density")
    G = G[0]
    K = kernel.K
    R, S, nT = K.shape
    out = np.zeros((R, nT))
    for r in range(R):
        for j in range(nT):
            acc = 0.0
            for l in range(j):
                for s in range(S):
                    acc += K[r, s, j - l - 1] * G[s, l]
            out[r, j] = acc
    return out.reshape(-1) if flat else out


class NearFieldOperator:
    """Matrix-free handle on flat vectors, as used by the iterative SVD."""

    def __init__(self, kernel: NearFieldKernel):
        self.kernel = kernel
        self.shape = kernel.shape

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return apply(self.kernel, x)

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return apply_adjoint(self.kernel, y)

    def matmat(self, X: np.ndarray) -> np.ndarray:
        """Columns of ``X`` (n, b) mapped to (m, b)."""
        k = self.kernel
        G = X.T.reshape(-1, k.n_cols, k.N_T)
        return apply(k, G).reshape(X.shape[1], -1).T

    def rmatmat(self, Y: np.ndarray) -> np.ndarray:
        k = self.kernel
        R = Y.T.reshape(-1, k.n_rows, k.N_T)
        return apply_adjoint(k, R).reshape(Y.shape[1], -1).T
