"""Time integration driver with probe recording."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .operator import MaxwellDG
from .timestep import InstabilityError, TimeIntegrator, cfl_timestep, lserk_step

GROWTH_LIMIT = 1e6


@dataclass
class SimulationResult:
    """Probe samples ``traces[b, p, c, n]`` at ``times[n]``."""

    times: np.ndarray
    traces: np.ndarray
    dt: float


def run_simulation(op: MaxwellDG, t_end: float, probes: np.ndarray, batch: int, *,
                   t_start: float = 0.0, dt: float | None = None,
                   q0: np.ndarray | None = None, guard_every: int = 10,
                   progress: Callable[[int, int], None] | None = None) -> SimulationResult:
    """Integrate from ``t_start`` to ``t_end`` recording E at ``probes`` every step.

    The step is the CFL step shrunk so that an integer number of steps
    lands exactly on ``t_end``.
    """
    if not t_end > t_start:
        raise ValueError("t_end must exceed t_start")
    dt_max = cfl_timestep(op.mesh, op.materials, op.order)
    if dt is None:
        dt = dt_max
    elif dt > dt_max * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds the stable step {dt_max}")
    n_steps = max(1, math.ceil((t_end - t_start) / dt - 1e-9))
    integ = TimeIntegrator((t_end - t_start) / n_steps)
    elems, rows = op.probe_operator(probes)

    q = op.zeros(batch) if q0 is None else np.array(q0, dtype=float)
    res = np.zeros_like(q)
    buf = np.empty_like(q)

    def f(u, t):
        return op.rhs(u, t, buf)

    traces = np.empty((batch, len(probes), 3, n_steps + 1))
    traces[..., 0] = np.moveaxis(op.sample(q, elems, rows), 2, 0)
    history: list[float] = []
    t = t_start
    for step in range(1, n_steps + 1):
        q, t = lserk_step(q, t, integ, f, res)
        traces[..., step] = np.moveaxis(op.sample(q, elems, rows), 2, 0)
        if step % guard_every == 0:
            peak = float(np.max(np.abs(q)))
            if history and max(history) > 0:
                # clamp at 1e-3 of the running max so a field growing out of zero is not flagged
                ref = float(np.median(np.maximum(history, 1e-3 * max(history))))
                if peak > GROWTH_LIMIT * ref:
                    raise InstabilityError(f"field growth beyond {GROWTH_LIMIT:g}x its running "
                                           f"median at t={t:.6g}")
            history.append(peak)
        if progress is not None:
            progress(step, n_steps)
    times = t_start + integ.dt * np.arange(n_steps + 1)
    return SimulationResult(times=times, traces=traces, dt=integ.dt)


def write_traces(path, traces: np.ndarray, dt: float, probes: np.ndarray,
                 config_hash: str = "", t_start: float = 0.0) -> None:
    """Raw float64 ``[probe][component][step]`` plus a JSON sidecar."""
    traces = np.ascontiguousarray(traces, dtype="<f8")
    if traces.ndim != 3 or traces.shape[1] != 3:
        raise ValueError("traces must have shape (n_probes, 3, n_steps)")
    path = Path(path)
    path.write_bytes(traces.tobytes())
    meta = {"dt": dt, "t_start": t_start, "shape": list(traces.shape),
            "probes": np.asarray(probes, float).tolist(), "config_hash": config_hash}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=1))


def read_traces(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(meta["shape"])
    return data.copy(), meta
