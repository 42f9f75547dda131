"""Five-stage fourth-order low-storage Runge-Kutta and the CFL step rule."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..mesh import MaterialMap, Mesh

RK4A = np.array([
    0.0,
    -567301805773.0 / 1357537059087.0,
    -2404267990393.0 / 2016746695238.0,
    -3550918686646.0 / 2091501179385.0,
    -1275806237668.0 / 842570457699.0,
])
RK4B = np.array([
    1432997174477.0 / 9575080441755.0,
    5161836677717.0 / 13612068292357.0,
    1720146321549.0 / 2090206949498.0,
    3134564353537.0 / 4481467310338.0,
    2277821191437.0 / 14882151754819.0,
])
RK4C = np.array([
    0.0,
    1432997174477.0 / 9575080441755.0,
    2526269341429.0 / 6820363962896.0,
    2006345519317.0 / 3224310063776.0,
    2802321613138.0 / 2924317926251.0,
])


class InstabilityError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TimeIntegrator:
    dt: float
    a: tuple = tuple(RK4A)
    b: tuple = tuple(RK4B)
    c: tuple = tuple(RK4C)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")


def stability_polynomial(z):
    """Amplification factor R(z) of one step applied to u' = lambda u, z = lambda dt."""
    z = np.asarray(z, dtype=complex)
    u = np.ones_like(z)
    res = np.zeros_like(z)
    for a, b in zip(RK4A, RK4B):
        res = a * res + z * u
        u = u + b * res
    return u


def lserk_step(u: np.ndarray, t: float, integrator: TimeIntegrator,
               rhs: Callable[[np.ndarray, float], np.ndarray],
               res: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Advance ``u`` in place by one step; returns ``(u, t + dt)``.

    ``res`` is the residual register; pass a persistent buffer to avoid
    reallocating it every step.
    """
    dt = integrator.dt
    if res is None:
        res = np.zeros_like(u)
    else:
        res[...] = 0.0
    for a, b, c in zip(integrator.a, integrator.b, integrator.c):
        k = rhs(u, t + c * dt)
        res *= a
        res += dt * k
        u += b * res
    if not np.all(np.isfinite(u)):
        raise InstabilityError(f"non-finite state after step ending at t={t + dt:.6g}")
    return u, t + dt


def cfl_timestep(mesh: Mesh, materials: MaterialMap, order: int) -> float:
    """Stable step ``min_k h_min / (2 c (N+1)^2)`` over elements."""
    if mesh.K == 0:
        raise ValueError("empty mesh")
    h = mesh.min_edge_lengths()
    if np.any(h <= 0):
        raise ValueError("element with zero edge length")
    return float(np.min(h / (2.0 * materials.speed * (order + 1) ** 2)))
