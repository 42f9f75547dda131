"""Indicator volumes as legacy VTK structured points and CSV."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .inversion import IndicatorVolume, SamplingGrid

FORMATS = ("vtk", "csv")


class ExportError(ValueError):
    pass


def _meta(vol: IndicatorVolume) -> dict:
    level = None if vol.degenerate else vol.level
    return {"alpha": vol.alpha, "level": level, "gamma": vol.gamma, "n_sv": vol.n_sv,
            "sigma1": vol.sigma1, "config_hash": vol.meta.get("config_hash", "")}


def write_vtk(vol: IndicatorVolume, path) -> None:
    """ASCII STRUCTURED_POINTS; the title line carries the isosurface level."""
    m = _meta(vol)
    title = " ".join(f"{k}={v}" for k, v in m.items())
    nx, ny, nz = vol.grid.counts
    sx, sy, sz = (s if s > 0 else 1.0 for s in vol.grid.spacing)
    psi = vol.psi.ravel(order="F")  # x fastest
    lines = ["# vtk DataFile Version 3.0", f"tdlsm indicator {title}"[:255], "ASCII",
             "DATASET STRUCTURED_POINTS", f"DIMENSIONS {nx} {ny} {nz}",
             "ORIGIN {:.17g} {:.17g} {:.17g}".format(*vol.grid.lo),
             f"SPACING {sx:.17g} {sy:.17g} {sz:.17g}", f"POINT_DATA {psi.size}",
             "SCALARS psi double 1", "LOOKUP_TABLE default"]
    lines += [f"{v:.17g}" for v in psi]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk(path) -> tuple[SamplingGrid, np.ndarray, dict]:
    text = Path(path).read_text().splitlines()
    meta = dict(kv.split("=", 1) for kv in text[1].split()[2:] if "=" in kv)
    dims = [int(v) for v in text[4].split()[1:]]
    origin = [float(v) for v in text[5].split()[1:]]
    spacing = [float(v) for v in text[6].split()[1:]]
    vals = np.array([float(v) for v in text[10:]])
    hi = [o + s * (n - 1) for o, s, n in zip(origin, spacing, dims)]
    grid = SamplingGrid(tuple(origin), tuple(hi), tuple(dims))
    return grid, vals.reshape(dims, order="F"), meta


def write_csv(vol: IndicatorVolume, path) -> None:
    """Rows ``x,y,z,psi`` in grid order plus a JSON sidecar with the level."""
    pts = vol.grid.points()
    psi = vol.psi.ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["x", "y", "z", "psi"])
        for p, v in zip(pts, psi):
            w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(v))])
    Path(str(path) + ".json").write_text(json.dumps(_meta(vol), indent=1))


def read_csv(path) -> tuple[SamplingGrid, np.ndarray]:
    """Recover the grid and ``psi`` volume from a CSV written by :func:`write_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["x", "y", "z", "psi"]:
        raise ExportError(f"{path}: missing x,y,z,psi header")
    data = np.array(rows[1:], dtype=float).reshape(-1, 4)
    axes = [np.unique(data[:, a]) for a in range(3)]
    counts = tuple(len(a) for a in axes)
    if int(np.prod(counts)) != len(data):
        raise ExportError(f"{path}: rows do not form a full grid")
    grid = SamplingGrid(tuple(a[0] for a in axes), tuple(a[-1] for a in axes), counts)
    idx = [np.searchsorted(axes[a], data[:, a]) for a in range(3)]
    psi = np.zeros(counts)
    psi[idx[0], idx[1], idx[2]] = data[:, 3]
    return grid, psi


def export(vol: IndicatorVolume, path, fmt: str) -> Path:
    if fmt not in FORMATS:
        raise ExportError(f"unknown export format {fmt!r}; choose from {FORMATS}")
    path = Path(path)
    (write_vtk if fmt == "vtk" else write_csv)(vol, path)
    return path
