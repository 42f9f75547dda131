"""Closed-form incident fields: Ricker modulation and regularized magnetic dipoles.

All expressions use rescaled units with c0 = 1.  A magnetic dipole with
polarization ``p`` at ``y`` radiates

    E(x, t) = curl_x (p * chi(t - |x-y|) / (4 pi |x-y|))

and the matching magnetic field follows from Faraday's law with mu = 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P

FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True)
class RickerSpec:
    """Ricker wavelet ``-(1 + 2a(t-t0)^2) exp(a(t-t0)^2)`` with ``a = -(pi f0)^2``."""

    f0: float
    t0: float | None = None
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.f0 > 0:
            raise ValueError(f"f0 must be positive, got {self.f0}")
        if self.t0 is None:
            object.__setattr__(self, "t0", 1.2 / self.f0)
        if not self.t0 > 0:
            raise ValueError(f"t0 must be positive, got {self.t0}")

    @property
    def a(self) -> float:
        return -((np.pi * self.f0) ** 2)


@lru_cache(maxsize=None)
def _gauss_poly(n: int) -> tuple:
    # d^n/ds^n [s exp(a s^2)] = Q_n(s, a) exp(a s^2); coefficients stored as a
    # 2D table c[i, j] for s^i a^j so the cache is independent of a.
    c = np.zeros((2, 1))
    c[1, 0] = 1.0
    for _ in range(n):
        ds = np.zeros_like(c)
        ds[:-1] = c[1:] * np.arange(1, c.shape[0])[:, None]
        two_as = np.zeros((c.shape[0] + 1, c.shape[1] + 1))
        two_as[1:, 1:] = 2.0 * c
        nxt = np.zeros_like(two_as)
        nxt[: ds.shape[0], : ds.shape[1]] += ds
        nxt += two_as
        c = nxt
    return tuple(map(tuple, c))


def _h_derivative(s, a: float, n: int):
    """n-th derivative of ``s exp(a s^2)``."""
    c = np.asarray(_gauss_poly(n))
    coeffs = c @ (a ** np.arange(c.shape[1]))
    return P.polyval(s, coeffs) * np.exp(a * s * s)


def ricker_derivative(t, spec: RickerSpec, order: int = 0):
    """Time derivative of the Ricker wavelet.

    ``order=-1`` returns the causal antiderivative ``int_{-inf}^t chi``,
    which for this wavelet is ``-(t-t0) exp(a (t-t0)^2)``.
    """
    if order < -1:
        raise ValueError("order must be >= -1")
    s = np.asarray(t, dtype=float) - spec.t0
    return -spec.amplitude * _h_derivative(s, spec.a, order + 1)


def ricker(t, spec: RickerSpec):
    """Ricker modulation chi(t)."""
    s = np.asarray(t, dtype=float) - spec.t0
    a = spec.a
    return -spec.amplitude * (1.0 + 2.0 * a * s * s) * np.exp(a * s * s)


def ricker_dt(t, spec: RickerSpec):
    """Analytic derivative chi'(t)."""
    s = np.asarray(t, dtype=float) - spec.t0
    a = spec.a
    return -spec.amplitude * 2.0 * a * s * (3.0 + 2.0 * a * s * s) * np.exp(a * s * s)


def phi_chi(r, t, spec: RickerSpec):
    """Regularized retarded fundamental solution chi(t - |r|) / (4 pi |r|)."""
    r = np.asarray(r, dtype=float)
    rn = np.linalg.norm(r, axis=-1)
    if np.any(rn == 0.0):
        raise ValueError("phi_chi is singular at r = 0")
    return ricker(np.asarray(t) - rn, spec) / (FOUR_PI * rn)


@dataclass(frozen=True)
class DipoleSource:
    """Regularized magnetic dipole at ``y`` with unit polarization ``p``."""

    y: np.ndarray
    p: np.ndarray
    chi: RickerSpec
    tau: float = 0.0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(3)
        p = np.asarray(self.p, dtype=float).reshape(3)
        if abs(np.linalg.norm(p) - 1.0) > 1e-12:
            raise ValueError("dipole polarization must have unit length")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p", p)


def _geometry(x, y):
    r = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    rn = np.linalg.norm(r, axis=-1)
    if np.any(rn == 0.0):
        raise ValueError("field point coincides with the dipole location")
    return r / rn[..., None], rn


def dipole_fields(x, t, y, p, chi: RickerSpec, tau=0.0, *, time_derivative=0,
                  want_h=True):
    """Electric and magnetic field of a regularized magnetic dipole.

    ``x`` (..., 3), ``t`` broadcastable against ``x[..., 0]``; ``y`` and ``p``
    broadcast likewise.  ``time_derivative`` selects d^k/dt^k of both fields.
    Returns ``(E, H)`` with ``H=None`` when ``want_h`` is false.
    """
    rhat, r = _geometry(x, y)
    p = np.asarray(p, dtype=float)
    s = np.asarray(t, dtype=float) - tau - r
    k = time_derivative
    f0 = ricker_derivative(s, chi, k)
    f1 = ricker_derivative(s, chi, k + 1)
    pxr = np.cross(np.broadcast_to(p, rhat.shape), rhat)
    E = pxr * ((f1 / r + f0 / r**2) / FOUR_PI)[..., None]
    if not want_h:
        return E, None
    fm = ricker_derivative(s, chi, k - 1)
    pdr = np.sum(p * rhat, axis=-1)
    p_par = pdr[..., None] * rhat
    p_perp = p - p_par
    near = f0 / r**2 + fm / r**3
    H = (p_perp * (f1 / r + near)[..., None]
         - p_par * (2.0 * near)[..., None]) / FOUR_PI
    return E, H


def dipole_E(x, t, src: DipoleSource):
    """Electric field of ``src`` at points ``x`` (..., 3) and times ``t``."""
    E, _ = dipole_fields(x, t, src.y, src.p, src.chi, src.tau, want_h=False)
    return E


def dipole_H(x, t, src: DipoleSource):
    E, H = dipole_fields(x, t, src.y, src.p, src.chi, src.tau)
    return H


def tangential_trace(v, nu):
    """Tangential part ``(nu x v) x nu = v - (v.nu) nu``."""
    v = np.asarray(v, dtype=float)
    nu = np.asarray(nu, dtype=float)
    return v - np.sum(v * nu, axis=-1, keepdims=True) * nu
