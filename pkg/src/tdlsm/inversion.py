"""Regularized near-field solves, the sampling indicator and its isosurface level."""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acquisition import ProbeGrid
from .incident import FOUR_PI, RickerSpec, dipole_E, DipoleSource, ricker_derivative, \
    tangential_trace
from .nearfield import NearFieldKernel, NearFieldOperator

SVD_MAGIC = b"TDLSMSVD"
_SVD_HEADER = struct.Struct("<8sIIIId")


class InversionError(ValueError):
    pass


class MatrixOperator:
    """Explicit matrix exposed through the matrix-free interface."""

    def __init__(self, A):
        self.A = np.asarray(A, dtype=float)
        self.shape = self.A.shape

    def matvec(self, x):
        return self.A @ x

    def rmatvec(self, y):
        return self.A.T @ y


@dataclass(eq=False)
class SVDResult:
    """Leading singular triples: ``A V = U diag(sigma)`` up to ``residuals``."""

    sigma: np.ndarray  # (n,)
    U: np.ndarray  # (m, n) trace-space vectors
    V: np.ndarray  # (N, n) density-space vectors
    residuals: np.ndarray  # ||A v_i - sigma_i u_i||
    residuals_adjoint: np.ndarray  # ||A^T u_i - sigma_i v_i||
    converged: bool = True
    kernel_hash: str = ""
    iterations: int = 0

    @property
    def n(self) -> int:
        return len(self.sigma)

    def truncated(self, n: int) -> "SVDResult":
        if not 1 <= n <= self.n:
            raise InversionError(f"cannot truncate {self.n} triples to {n}")
        return SVDResult(self.sigma[:n], self.U[:, :n], self.V[:, :n], self.residuals[:n],
                         self.residuals_adjoint[:n], self.converged, self.kernel_hash,
                         self.iterations)


def _orthogonalize(x, Q):
    """Two passes of classical Gram-Schmidt; returns (x, coefficients)."""
    if Q.shape[1] == 0:
        return x, np.zeros(0)
    c = Q.T @ x
    x = x - Q @ c
    c2 = Q.T @ x
    return x - Q @ c2, c + c2


def _random_orthogonal(rng, Q, size):
    for _ in range(5):
        x, _ = _orthogonalize(rng.standard_normal(size), Q)
        nx = np.linalg.norm(x)
        if nx > 1e-8:
            return x / nx
    raise InversionError("could not extend the Krylov basis")


def truncated_svd(op, n_sv: int, seed: int = 0, *, tol: float = 1e-6,
                  max_restarts: int = 50, ncv: int | None = None) -> SVDResult:
    """Leading ``n_sv`` singular triples of a matrix-free operator.

    Restarted Golub-Kahan bidiagonalization with full reorthogonalization.
    ``op`` provides ``shape``, ``matvec`` and ``rmatvec``.  The projected
    matrix ``B = U^T A V`` is kept explicitly, so after a thick restart it
    is upper triangular rather than bidiagonal.
    """
    m, n = op.shape
    kmax = min(m, n)
    if not 1 <= n_sv <= kmax:
        raise InversionError(f"n_sv={n_sv} must lie in 1..{kmax}")
    p = min(kmax, ncv if ncv is not None else max(2 * n_sv + 10, n_sv + 20))
    if p < n_sv:
        raise InversionError("ncv must be at least n_sv")
    rng = np.random.default_rng(seed)
    V = np.zeros((n, p + 1))
    U = np.zeros((m, p))
    B = np.zeros((p, p))
    v = rng.standard_normal(n)
    V[:, 0] = v / np.linalg.norm(v)
    j0 = 0
    scale = 0.0
    for restart in range(max_restarts + 1):
        for j in range(j0, p):
            u, c = _orthogonalize(op.matvec(V[:, j]), U[:, :j])
            B[:j, j] = c
            alpha = np.linalg.norm(u)
            scale = max(scale, alpha, np.max(np.abs(c), initial=0.0))
            if alpha <= 1e-13 * max(scale, 1e-300):
                U[:, j] = _random_orthogonal(rng, U[:, :j], m)
                B[j, j] = 0.0
            else:
                U[:, j] = u / alpha
                B[j, j] = alpha
            w, _ = _orthogonalize(op.rmatvec(U[:, j]), V[:, :j + 1])
            beta = np.linalg.norm(w)
            if j + 1 < n and beta <= 1e-13 * max(scale, 1e-300):
                V[:, j + 1] = _random_orthogonal(rng, V[:, :j + 1], n)
                beta = 0.0
            elif beta > 0:
                V[:, j + 1] = w / beta
            else:
                V[:, j + 1] = 0.0
        X, s, Yt = np.linalg.svd(B)
        res_adj = np.abs(beta * X[p - 1, :])
        sigma1 = s[0] if s[0] > 0 else 1.0
        done = bool(np.all(res_adj[:n_sv] <= tol * sigma1))
        if done or restart == max_restarts or p == kmax and beta == 0.0:
            break
        k = min(p - 1, n_sv + (p - n_sv) // 2)
        Y = Yt.T
        V[:, :k] = V[:, :p] @ Y[:, :k]
        V[:, k] = V[:, p]
        U[:, :k] = U @ X[:, :k]
        B[:] = 0.0
        B[np.arange(k), np.arange(k)] = s[:k]
        j0 = k
    Y = Yt.T
    Uk = U @ X[:, :n_sv]
    Vk = V[:, :p] @ Y[:, :n_sv]
    sk = s[:n_sv].copy()
    AV = np.column_stack([op.matvec(Vk[:, i]) for i in range(n_sv)])
    res = np.linalg.norm(AV - Uk * sk, axis=0)
    res_adj = res_adj[:n_sv]
    converged = bool(np.all(np.maximum(res, res_adj) <= tol * sigma1))
    return SVDResult(sk, Uk, Vk, res, res_adj, converged, iterations=restart + 1)


def filter_factors(sigma: np.ndarray, gamma: float) -> np.ndarray:
    """Tikhonov filter ``sigma / (sigma^2 + gamma)``; zero where sigma vanishes."""
    sigma = np.asarray(sigma, dtype=float)
    f = np.zeros_like(sigma)
    pos = sigma > 0
    f[pos] = sigma[pos] / (sigma[pos] ** 2 + gamma)
    return f


def solve_regularized(svd: SVDResult, b: np.ndarray, gamma: float):
    """Filtered truncated-SVD solution ``g`` of ``A g = b`` and its norm."""
    if svd.n == 0:
        raise InversionError("empty decomposition")
    if gamma < 0:
        raise InversionError("gamma must be non-negative")
    b = np.asarray(b, dtype=float).reshape(-1)
    coef = filter_factors(svd.sigma, gamma) * (svd.U.T @ b)
    g = svd.V @ coef
    return g, float(np.linalg.norm(g))


# -- sampling --------------------------------------------------------------------

AXES = np.eye(3)


@dataclass(frozen=True)
class SamplingGrid:
    lo: tuple
    hi: tuple
    counts: tuple
    tau: float = 0.0

    def __post_init__(self):
        lo = tuple(float(v) for v in np.broadcast_to(self.lo, 3))
        hi = tuple(float(v) for v in np.broadcast_to(self.hi, 3))
        counts = tuple(int(v) for v in np.broadcast_to(self.counts, 3))
        if any(c < 1 for c in counts):
            raise InversionError("sampling counts must be >= 1")
        if any(h < l for l, h in zip(lo, hi)):
            raise InversionError("sampling box has negative extent")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def cube(cls, lo: float, hi: float, n: int, tau: float = 0.0) -> "SamplingGrid":
        return cls((lo,) * 3, (hi,) * 3, (n,) * 3, tau)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(l, h, c) for l, h, c in zip(self.lo, self.hi, self.counts)]

    @property
    def spacing(self) -> tuple:
        return tuple((h - l) / (c - 1) if c > 1 else 0.0
                     for l, h, c in zip(self.lo, self.hi, self.counts))

    def points(self) -> np.ndarray:
        """All points, x-index slowest, shape (nx*ny*nz, 3)."""
        X, Y, Z = np.meshgrid(*self.axes(), indexing="ij")
        return np.column_stack((X.ravel(), Y.ravel(), Z.ravel()))

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))


def rhs_vector(z, p, tau: float, grid_M: ProbeGrid, times: np.ndarray,
               chi: RickerSpec) -> np.ndarray:
    """Right-hand side ``p^M_{i,q} . E^i_T(x^M_i, t_j - tau; z, p)``, shape (2 N_M, N_T)."""
    z = np.asarray(z, dtype=float)
    if np.any(np.linalg.norm(grid_M.points - z, axis=1) == 0.0):
        raise InversionError("sampling point coincides with a measurement point")
    src = DipoleSource(z, np.asarray(p, dtype=float), chi, tau)
    E = dipole_E(grid_M.points[:, None, :], np.asarray(times)[None, :], src)  # (M, T, 3)
    Et = tangential_trace(E, grid_M.normals[:, None, :])
    b = np.einsum("mqd,mtd->mqt", grid_M.tangents, Et)
    return b.reshape(2 * len(grid_M), len(times))


def _rhs_block(zs, grid_M: ProbeGrid, times, chi: RickerSpec, tau: float):
    """Right-hand sides for all three axis polarizations: (Z, 3, 2 N_M * N_T).

    Uses ``t . (e_a x rhat) = (rhat x t)_a`` so the radial profile is
    evaluated once per (z, x^M) pair.
    """
    r = grid_M.points[None, :, :] - zs[:, None, :]  # (Z, M, 3)
    rn = np.linalg.norm(r, axis=-1)
    bad = np.any(rn == 0.0, axis=1)
    rn = np.where(rn == 0.0, 1.0, rn)
    rhat = r / rn[..., None]
    s = times[None, None, :] - tau - rn[..., None]
    prof = (ricker_derivative(s, chi, 1) / rn[..., None]
            + ricker_derivative(s, chi, 0) / rn[..., None] ** 2) / FOUR_PI  # (Z, M, T)
    w = np.cross(rhat[:, :, None, :], grid_M.tangents[None])  # (Z, M, 2, 3)
    b = np.einsum("zmqa,zmt->zamqt", w, prof)
    Z, M, T = prof.shape
    return b.reshape(Z, 3, 2 * M * T), bad


@dataclass(eq=False)
class IndicatorVolume:
    grid: SamplingGrid
    norms: np.ndarray  # (nx, ny, nz, 3)
    flags: np.ndarray  # (nx, ny, nz) bool, True where the solve failed
    gamma: float
    n_sv: int
    sigma1: float
    alpha: float = 0.1
    meta: dict = field(default_factory=dict)

    @property
    def psi(self) -> np.ndarray:
        total = self.norms.sum(axis=-1)
        out = np.zeros_like(total)
        ok = (~self.flags) & (total > 0)
        out[ok] = 1.0 / total[ok]
        return out

    @property
    def degenerate(self) -> bool:
        return not np.any((~self.flags) & (self.norms.sum(axis=-1) > 0))

    @property
    def level(self) -> float:
        return isosurface_level(self, self.alpha)


def projection_coefficients(svd: SVDResult, grid: SamplingGrid, grid_M: ProbeGrid,
                            times: np.ndarray, chi: RickerSpec, chunk: int = 64):
    """``U^T b(z, e_a)`` for every sampling point: (npts, 3, n) plus failure flags."""
    zs = grid.points()
    coef = np.empty((len(zs), 3, svd.n))
    bad = np.zeros(len(zs), dtype=bool)
    for a in range(0, len(zs), chunk):
        b, flag = _rhs_block(zs[a:a + chunk], grid_M, times, chi, grid.tau)
        coef[a:a + chunk] = b @ svd.U
        bad[a:a + chunk] = flag | ~np.all(np.isfinite(b), axis=(1, 2))
    return coef, bad


def indicator_from_coefficients(coef, bad, svd: SVDResult, grid: SamplingGrid,
                                gamma: float, n_sv: int | None = None,
                                alpha: float = 0.1) -> IndicatorVolume:
    n = svd.n if n_sv is None else n_sv
    if not 1 <= n <= svd.n:
        raise InversionError(f"n_sv={n} outside 1..{svd.n}")
    f = filter_factors(svd.sigma[:n], gamma)
    norms = np.linalg.norm(coef[:, :, :n] * f, axis=-1)  # V has orthonormal columns
    norms[bad] = 0.0
    shape = grid.counts
    return IndicatorVolume(grid, norms.reshape(shape + (3,)), bad.reshape(shape), gamma, n,
                           float(svd.sigma[0]), alpha)


def indicator_sweep(kernel: NearFieldKernel, svd: SVDResult, grid: SamplingGrid, gamma: float,
                    grid_M: ProbeGrid, times: np.ndarray, chi: RickerSpec,
                    n_sv: int | None = None, alpha: float = 0.1) -> IndicatorVolume:
    """Indicator ``1 / sum_a ||g(z, e_a)||`` over the sampling grid."""
    if svd.U.shape[0] != kernel.shape[0]:
        raise InversionError("decomposition does not belong to this kernel")
    coef, bad = projection_coefficients(svd, grid, grid_M, times, chi)
    return indicator_from_coefficients(coef, bad, svd, grid, gamma, n_sv, alpha)


def isosurface_level(vol: IndicatorVolume, alpha: float) -> float:
    """``alpha * min psi + (1 - alpha) * max psi`` over valid points."""
    if vol.norms.size == 0 or vol.degenerate:
        raise InversionError("indicator volume is empty or degenerate")
    psi = vol.psi[~vol.flags]
    return float(alpha * psi.min() + (1.0 - alpha) * psi.max())


# -- checkpoints -------------------------------------------------------------------

def kernel_hash(kernel: NearFieldKernel) -> str:
    return hashlib.sha256(np.ascontiguousarray(kernel.K, dtype="<f8").tobytes()).hexdigest()


def save_svd(svd: SVDResult, path) -> None:
    m, n = svd.U.shape
    N = svd.V.shape[0]
    head = _SVD_HEADER.pack(SVD_MAGIC, n, m, N, int(svd.converged), 0.0)
    parts = [head] + [np.ascontiguousarray(a, dtype="<f8").tobytes()
                      for a in (svd.sigma, svd.U, svd.V, svd.residuals, svd.residuals_adjoint)]
    parts.append(bytes.fromhex(svd.kernel_hash) if svd.kernel_hash else bytes(32))
    Path(path).write_bytes(b"".join(parts))


def load_svd(path) -> SVDResult:
    raw = Path(path).read_bytes()
    if raw[:8] != SVD_MAGIC:
        raise InversionError(f"{path}: not an SVD checkpoint")
    _, n, m, N, conv, _ = _SVD_HEADER.unpack_from(raw, 0)
    off = _SVD_HEADER.size
    arrays = []
    for size in (n, m * n, N * n, n, n):
        end = off + 8 * size
        if end > len(raw):
            raise InversionError(f"{path}: truncated SVD checkpoint")
        arrays.append(np.frombuffer(raw[off:end], dtype="<f8").copy())
        off = end
    if off + 32 != len(raw):
        raise InversionError(f"{path}: malformed SVD checkpoint")
    digest = raw[off:off + 32]
    khash = "" if digest == bytes(32) else digest.hex()
    s, U, V, r, ra = arrays
    return SVDResult(s, U.reshape(m, n), V.reshape(N, n), r, ra, bool(conv), khash)


def save_volume(vol: IndicatorVolume, path) -> None:
    meta = dict(vol.meta, lo=vol.grid.lo, hi=vol.grid.hi, counts=vol.grid.counts,
                tau=vol.grid.tau, gamma=vol.gamma, n_sv=vol.n_sv, sigma1=vol.sigma1,
                alpha=vol.alpha, level=None if vol.degenerate else vol.level)
    with open(path, "wb") as fh:
        np.savez(fh, norms=vol.norms, flags=vol.flags, meta=np.array(json.dumps(meta)))


def load_volume(path) -> IndicatorVolume:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        grid = SamplingGrid(tuple(meta["lo"]), tuple(meta["hi"]), tuple(meta["counts"]),
                            meta["tau"])
        keep = {k: v for k, v in meta.items()
                if k not in ("lo", "hi", "counts", "tau", "gamma", "n_sv", "sigma1", "alpha")}
        return IndicatorVolume(grid, data["norms"].copy(), data["flags"].copy(), meta["gamma"],
                               meta["n_sv"], meta["sigma1"], meta["alpha"], keep)


def sweep_operator(kernel: NearFieldKernel) -> NearFieldOperator:
    return NearFieldOperator(kernel)
