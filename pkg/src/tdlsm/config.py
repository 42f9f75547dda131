"""Experiment configuration: full-scale defaults and a desk-scale preset."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .mesh import BoundaryKind, ScattererBox, SpongeSpec


class ConfigError(ValueError):
    pass


def _two_cubes() -> list[dict]:
    lam = math.sqrt(2.0)
    return [
        {"lo": [-0.75, -0.75, -0.75], "hi": [-0.25, -0.25, -0.25], "kind": "impedance", "lam": lam},
        {"lo": [0.25, 0.25, 0.25], "hi": [0.75, 0.75, 0.75], "kind": "impedance", "lam": lam},
    ]


@dataclass
class ExperimentConfig:
    """All parameters of one forward + inverse experiment.

    Lengths are in units where the background wave speed is 1.  Sponge size
    and mesh size are given relative to the source wavelength ``1/f0``.
    """

    domain_half_width: float = 4.1
    f0: float = 1.0
    order: int = 9
    scatterers: list = field(default_factory=_two_cubes)
    outer_bc: str = "sma"
    elements_per_wavelength: float = 1.5
    sponge_elements_per_wavelength: float = 1.0
    sponge_wavelengths: float = 6.0
    sponge_damping: float = 10.0
    sponge_stretch: float = 0.2
    probe_half_width: float = 4.0
    source_per_face: int = 3
    measurement_per_face: int = 4
    T_max: float = 20.0
    N_T: int = 1250
    formulation: str = "scattered"
    batch_size: int = 16
    sampling_lo: float = -1.5
    sampling_hi: float = 1.5
    sampling_n: int = 41
    tau: float = 0.0
    n_sv: int = 2500
    n_sv_list: list = field(default_factory=lambda: [25, 1000, 2500])
    gamma: float = 0.1
    gamma_list: list = field(default_factory=list)
    alpha: float = 0.1
    svd_tol: float = 1e-6
    svd_max_restarts: int = 50
    seed: int = 0
    output_dir: str = "tdlsm_out"

    # -- derived ---------------------------------------------------------------

    @property
    def wavelength(self) -> float:
        return 1.0 / self.f0

    @property
    def target_h(self) -> float:
        """Main-region element size, capped by the smallest scatterer edge."""
        h = self.wavelength / self.elements_per_wavelength
        edges = [min(b.hi[a] - b.lo[a] for a in range(3)) for b in self.scatterer_boxes()]
        return min([h] + edges)

    @property
    def sponge_h(self) -> float:
        return self.wavelength / self.sponge_elements_per_wavelength

    def sponge_spec(self) -> SpongeSpec | None:
        if self.sponge_wavelengths <= 0:
            return None
        return SpongeSpec.for_frequency(self.domain_half_width, self.f0,
                                        wavelengths=self.sponge_wavelengths,
                                        damping=self.sponge_damping,
                                        g_max=self.sponge_stretch)

    def scatterer_boxes(self) -> list[ScattererBox]:
        return [ScattererBox(**b) for b in self.scatterers]

    @property
    def outer_boundary(self) -> BoundaryKind:
        return {"sma": BoundaryKind.SMA, "pec": BoundaryKind.PEC}[self.outer_bc]

    # -- validation / io -------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.f0 > 0, "f0 must be positive")
        need(isinstance(self.order, int) and 1 <= self.order <= 12, "order must be in 1..12")
        need(self.domain_half_width > 0, "domain_half_width must be positive")
        need(0 < self.probe_half_width < self.domain_half_width,
             "probe cube must lie strictly inside the main domain")
        need(self.source_per_face >= 1 and self.measurement_per_face >= 1,
             "probe grids need at least one point per face")
        need(self.T_max > 0 and self.N_T >= 1, "T_max > 0 and N_T >= 1 required")
        need(self.formulation in ("total", "scattered"), "formulation is 'total' or 'scattered'")
        need(self.outer_bc in ("sma", "pec"), "outer_bc is 'sma' or 'pec'")
        need(self.elements_per_wavelength > 0 and self.sponge_elements_per_wavelength > 0,
             "elements per wavelength must be positive")
        need(self.sponge_damping >= 0 and self.sponge_stretch >= 0, "sponge parameters >= 0")
        need(self.sampling_n >= 1 and self.sampling_hi >= self.sampling_lo, "bad sampling grid")
        need(self.n_sv >= 1, "n_sv must be >= 1")
        need(all(1 <= n <= self.n_sv for n in self.n_sv_list),
             "n_sv_list entries must lie in 1..n_sv")
        need(self.gamma >= 0 and all(g >= 0 for g in self.gamma_list), "gamma must be >= 0")
        need(0.0 <= self.alpha <= 1.0, "alpha must lie in [0, 1]")
        need(self.batch_size >= 1, "batch_size must be >= 1")
        try:
            boxes = self.scatterer_boxes()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scatterer: {exc}") from exc
        for b in boxes:
            need(max(abs(v) for v in b.lo + b.hi) < self.probe_half_width,
                 "scatterers must lie inside the probe cube")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def forward_hash(self) -> str:
        """Hash of the fields that determine the forward data only."""
        data = {k: v for k, v in self.to_dict().items() if k in FORWARD_KEYS}
        text = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def with_overrides(self, pairs: list[str]) -> "ExperimentConfig":
        """Apply ``key=value`` strings; values are parsed as JSON when possible."""
        data = self.to_dict()
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} is not key=value")
            key, raw = pair.split("=", 1)
            key = key.strip()
            if key not in data:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                value: Any = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            data[key] = value
        return type(self).from_dict(data)


FORWARD_KEYS = frozenset({
    "domain_half_width", "f0", "order", "scatterers", "outer_bc", "elements_per_wavelength",
    "sponge_elements_per_wavelength", "sponge_wavelengths", "sponge_damping", "sponge_stretch",
    "probe_half_width", "source_per_face", "measurement_per_face", "T_max", "N_T", "formulation",
})


def full_config() -> ExperimentConfig:
    return ExperimentConfig().validate()


def desk_config() -> ExperimentConfig:
    """Scaled-down single-cube PEC experiment that runs on one workstation."""
    return ExperimentConfig(
        domain_half_width=2.05,
        f0=1.0,
        order=3,
        scatterers=[{"lo": [-0.25] * 3, "hi": [0.25] * 3, "kind": "pec"}],
        sponge_wavelengths=1.0,
        probe_half_width=2.0,
        source_per_face=2,
        measurement_per_face=3,
        T_max=10.0,
        N_T=256,
        batch_size=48,
        sampling_lo=-1.0,
        sampling_hi=1.0,
        sampling_n=21,
        n_sv=200,
        n_sv_list=[25, 200],
        gamma=0.1,
    ).validate()


PRESETS = {"full": full_config, "desk": desk_config}
