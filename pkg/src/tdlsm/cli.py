"""Batch command-line entry points: mesh, forward, dataset-info, svd, invert, export."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import PRESETS, ConfigError, ExperimentConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("tdlsm")


class CommandError(Exception):
    """Input problem reported with exit code 2."""


class NumericalFailure(Exception):
    """Solver failure reported with exit code 3."""


def load_config(spec: str | None, overrides: list[str], seed: int | None) -> ExperimentConfig:
    """Preset name or JSON path, then ``key=value`` overrides, then the seed."""
    spec = spec or "full"
    if spec in PRESETS:
        cfg = PRESETS[spec]()
    else:
        cfg = ExperimentConfig.load(spec)
    pairs = list(overrides)
    if seed is not None:
        pairs.append(f"seed={seed}")
    return cfg.with_overrides(pairs) if pairs else cfg


def _set_workers(n: int | None) -> None:
    n = n if n is not None else int(os.environ.get("TDLSM_WORKERS", "0") or 0)
    if n > 0:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sidecar(path: Path, cfg: ExperimentConfig, **extra) -> None:
    meta = {"config_hash": cfg.config_hash(), "forward_hash": cfg.forward_hash(), **extra}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=1))


def _load_dataset(path, cfg: ExperimentConfig):
    from .acquisition import load_dataset
    if not Path(path).is_file():
        raise CommandError(f"dataset file not found: {path}")
    ds = load_dataset(path)
    got = ds.provenance.get("forward_hash")
    if got != cfg.forward_hash():
        raise CommandError(f"{path}: dataset was produced by a different forward configuration "
                           f"(hash {got}, expected {cfg.forward_hash()})")
    return ds


# -- commands --------------------------------------------------------------------

def cmd_mesh(cfg: ExperimentConfig, args) -> int:
    from .acquisition import build_mesh
    from .dg.operator import MaxwellDG
    from .dg.timestep import cfl_timestep
    from .mesh import write_gmsh, write_vtk

    mesh = build_mesh(cfg)
    out = Path(args.out) if args.out else _outdir(cfg) / "mesh.msh"
    write_gmsh(out, mesh)
    write_vtk(out.with_suffix(".vtk"), mesh)
    _sidecar(out, cfg, elements=mesh.K)
    op = MaxwellDG(mesh, cfg.order)
    dt = cfl_timestep(mesh, op.materials, cfg.order)
    print(f"elements {mesh.K}  vertices {len(mesh.vertices)}  "
          f"min edge {mesh.min_edge_lengths().min():.4g}  dt {dt:.4g}")
    print(f"wrote {out} and {out.with_suffix('.vtk')}")
    return EXIT_OK


def cmd_forward(cfg: ExperimentConfig, args) -> int:
    from .acquisition import acquire, save_dataset

    t0 = time.perf_counter()
    ds = acquire(cfg, progress=lambda msg: print(msg, flush=True))
    wall = time.perf_counter() - t0
    out = Path(args.out) if args.out else _outdir(cfg) / "dataset.bin"
    digest = save_dataset(ds, out)
    prov = ds.provenance
    print(f"solver dt {prov['solver_dt']:.6g}  steps {prov['solver_steps']}  "
          f"wall {wall:.1f} s")
    print(f"N_I {len(ds.sources)}  N_M {len(ds.measurements)}  N_T {ds.N_T}  "
          f"max|trace| {np.abs(ds.traces).max():.4g}")
    print(f"wrote {out}  sha256 {digest}")
    return EXIT_OK


def cmd_dataset_info(cfg: ExperimentConfig, args) -> int:
    from .acquisition import causality_violation, load_dataset
    from .nearfield import operator_shape

    if not Path(args.dataset).is_file():
        raise CommandError(f"dataset file not found: {args.dataset}")
    ds = load_dataset(args.dataset)
    m, n = operator_shape(len(ds.measurements), len(ds.sources), ds.N_T)
    print(f"sources {len(ds.sources)}  measurements {len(ds.measurements)}  N_T {ds.N_T}  "
          f"T_max {ds.T_max:g}  f0 {ds.chi.f0:g}")
    print(f"operator {m} x {n}  max|trace| {np.abs(ds.traces).max():.4g}  "
          f"pre-arrival ratio {causality_violation(ds):.3g}")
    for key in ("config_hash", "forward_hash", "content_hash", "formulation", "order"):
        if key in ds.provenance:
            print(f"{key} {ds.provenance[key]}")
    return EXIT_OK


def _compute_svd(cfg: ExperimentConfig, kernel, n_sv: int):
    from .inversion import kernel_hash, truncated_svd
    from .nearfield import NearFieldOperator

    t0 = time.perf_counter()
    svd = truncated_svd(NearFieldOperator(kernel), n_sv, cfg.seed, tol=cfg.svd_tol,
                        max_restarts=cfg.svd_max_restarts)
    svd.kernel_hash = kernel_hash(kernel)
    print(f"svd: {svd.n} triples, sigma1 {svd.sigma[0]:.6g}, sigma_n {svd.sigma[-1]:.3g}, "
          f"max residual/sigma1 {svd.residuals.max() / svd.sigma[0]:.2g}, "
          f"{svd.iterations} passes, {time.perf_counter() - t0:.1f} s")
    return svd


def cmd_svd(cfg: ExperimentConfig, args) -> int:
    from .inversion import save_svd
    from .nearfield import build_kernel

    ds = _load_dataset(args.dataset, cfg)
    kernel = build_kernel(ds)
    svd = _compute_svd(cfg, kernel, cfg.n_sv)
    out = Path(args.out) if args.out else _outdir(cfg) / "svd.bin"
    save_svd(svd, out)
    _sidecar(out, cfg, kernel_hash=svd.kernel_hash, converged=svd.converged)
    print(f"wrote {out}")
    if not svd.converged:
        raise NumericalFailure("truncated SVD did not converge within the restart budget")
    return EXIT_OK


def cmd_invert(cfg: ExperimentConfig, args) -> int:
    from .inversion import (InversionError, SamplingGrid, indicator_from_coefficients,
                            kernel_hash, load_svd, projection_coefficients, save_svd,
                            save_volume)
    from .nearfield import build_kernel

    ds = _load_dataset(args.dataset, cfg)
    kernel = build_kernel(ds)
    khash = kernel_hash(kernel)
    out = _outdir(cfg)
    n_list = sorted(set(cfg.n_sv_list)) or [cfg.n_sv]
    need = max(n_list)
    ckpt = Path(args.svd) if args.svd else out / "svd.bin"
    svd = None
    if ckpt.is_file():
        svd = load_svd(ckpt)
        if svd.kernel_hash != khash:
            if args.svd:
                raise CommandError(f"{ckpt}: SVD checkpoint belongs to a different kernel")
            svd = None
        elif svd.n < need:
            if args.svd:
                raise CommandError(f"{ckpt}: holds {svd.n} triples, {need} requested")
            svd = None
        else:
            print(f"reusing SVD checkpoint {ckpt} ({svd.n} triples)")
    elif args.svd:
        raise CommandError(f"SVD checkpoint not found: {ckpt}")
    if svd is None:
        svd = _compute_svd(cfg, kernel, need)
        save_svd(svd, ckpt)
        _sidecar(ckpt, cfg, kernel_hash=khash, converged=svd.converged)
    if not svd.converged:
        log.warning("SVD checkpoint is flagged as not converged")
    grid = SamplingGrid.cube(cfg.sampling_lo, cfg.sampling_hi, cfg.sampling_n, cfg.tau)
    t0 = time.perf_counter()
    try:
        coef, bad = projection_coefficients(svd.truncated(need), grid, ds.measurements,
                                            ds.times, ds.chi)
    except InversionError as exc:
        raise NumericalFailure(str(exc)) from exc
    print(f"projected {grid.size} sampling points in {time.perf_counter() - t0:.1f} s")
    gammas = list(cfg.gamma_list) or [cfg.gamma]
    for n in n_list:
        for g in gammas:
            vol = indicator_from_coefficients(coef, bad, svd, grid, g, n, cfg.alpha)
            vol.meta.update(config_hash=cfg.config_hash(), forward_hash=cfg.forward_hash(),
                            kernel_hash=khash,
                            dataset_hash=ds.provenance.get("content_hash", ""))
            path = out / f"volume_n{n}_g{g:g}.npz"
            save_volume(vol, path)
            if vol.degenerate:
                print(f"n_sv {n} gamma {g:g}: degenerate volume (all norms zero)  -> {path}")
            else:
                psi = vol.psi
                print(f"n_sv {n} gamma {g:g}: psi in [{psi.min():.4g}, {psi.max():.4g}], "
                      f"level {vol.level:.4g} (alpha {cfg.alpha:g}), "
                      f"flagged {int(vol.flags.sum())}  -> {path}")
    return EXIT_OK


def cmd_export(cfg: ExperimentConfig, args) -> int:
    from .export import ExportError, export
    from .inversion import load_volume

    if args.format not in ("vtk", "csv"):
        raise CommandError(f"unknown export format {args.format!r}")
    src = Path(args.volume)
    if not src.is_file():
        raise CommandError(f"volume file not found: {src}")
    vol = load_volume(src)
    dest = Path(args.out) if args.out else src.with_suffix("." + args.format)
    try:
        export(vol, dest, args.format)
    except ExportError as exc:
        raise CommandError(str(exc)) from exc
    print(f"wrote {dest} ({vol.grid.size} points)")
    return EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "forward": cmd_forward, "dataset-info": cmd_dataset_info,
            "svd": cmd_svd, "invert": cmd_invert, "export": cmd_export}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config path or preset name (full, desk)")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config field")
    common.add_argument("--workers", type=int, help="solver threads (env TDLSM_WORKERS)")
    common.add_argument("--seed", type=int, help="RNG seed for the iterative SVD")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tdlsm",
                                description="Time-domain sampling reconstruction pipeline.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("mesh", parents=[common], help="build and write the mesh")
    s.add_argument("--out")
    s = sub.add_parser("forward", parents=[common], help="run the synthetic data campaign")
    s.add_argument("--out")
    s = sub.add_parser("dataset-info", parents=[common], help="summarize a dataset file")
    s.add_argument("dataset")
    s = sub.add_parser("svd", parents=[common], help="truncated SVD checkpoint of a dataset")
    s.add_argument("dataset")
    s.add_argument("--out")
    s = sub.add_parser("invert", parents=[common], help="indicator volumes from a dataset")
    s.add_argument("dataset")
    s.add_argument("--svd", help="SVD checkpoint to reuse")
    s = sub.add_parser("export", parents=[common], help="write a volume as VTK or CSV")
    s.add_argument("volume")
    s.add_argument("--format", default="vtk")
    s.add_argument("--out")
    return p


def main(argv: list[str] | None = None) -> int:
    from .acquisition import DatasetError
    from .dg.timestep import InstabilityError
    from .inversion import InversionError
    from .mesh import MeshError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    where = f" (config {args.config or 'full'})"
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        _set_workers(args.workers)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, MeshError) as exc:
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CommandError, DatasetError, InversionError, FileNotFoundError) as exc:
        print(f"error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, InstabilityError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
