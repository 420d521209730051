"""Run configuration: INI-style sections of ``key = value`` pairs."""

from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .lattice import CouplingSet


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"[{field_name}] {message}")
        self.field = field_name


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.replace(",", " ").split()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.replace(",", " ").split()]


def _pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


@dataclass
class ModelConfig:
    d: int = 2
    N: int = 16
    r: int = 1
    coupling: str = "nn"
    beta: float = 0.8
    eta: list[float] = field(default_factory=lambda: [0.0])
    boundary: str = "plus"


@dataclass
class DynamicsConfig:
    algorithm: str = "sw"
    sweeps: int = 1000
    therm: int = 200
    every: int = 100
    chains: int = 1
    seed: int = 0
    magnetization: float | None = None
    format: str = "text"


@dataclass
class AnalysisConfig:
    K: list[int] = field(default_factory=lambda: [1])
    alpha: float = 0.5
    zeta: float = 0.1
    nu: float | None = None
    m_star: float | None = None
    shifts: str = "lateral"


@dataclass
class GeometryConfig:
    tau: str = "isotropic"
    tau_normals: int = 8
    tau_values: list[float] = field(default_factory=list)
    delta: float = 0.0
    m: float = 0.0
    accuracy: float = 0.05
    domain: str = "unit"


@dataclass
class EstimateConfig:
    quantities: list[str] = field(default_factory=lambda: ["m_star", "delta", "tau"])
    method: str = "exact"
    size: int = 1
    L: float = 5.0
    M: float = 2.0
    normals: list[float] = field(default_factory=lambda: [0.0, 1.0])
    relax_eps: float = 0.25


@dataclass
class OutputConfig:
    dir: str = "out"
    input: str = ""


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    estimate: EstimateConfig = field(default_factory=EstimateConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def coupling_set(self) -> CouplingSet:
        if self.model.coupling == "nn":
            return CouplingSet.nearest_neighbor(self.model.d)
        J = CouplingSet.from_file(self.model.coupling)
        if J.d != self.model.d:
            raise ConfigError("model.coupling", f"coupling file has dimension {J.d}, expected {self.model.d}")
        return J

    def header_lines(self) -> list[str]:
        """Flat ``section.key = value`` lines, sorted, for output headers."""
        out = []
        for sec, vals in asdict(self).items():
            for k in sorted(vals):
                out.append(f"{sec}.{k} = {_fmt(vals[k])}")
        return out

    def validate(self) -> None:
        m, dyn, an, geo = self.model, self.dynamics, self.analysis, self.geometry
        if m.d < 2:
            raise ConfigError("model.d", "dimension must be >= 2")
        if not _pow2(m.N):
            raise ConfigError("model.N", f"N={m.N} must be a power of two")
        if m.r < 1:
            raise ConfigError("model.r", "field depth must be >= 1")
        if len(m.eta) != m.r:
            raise ConfigError("model.eta", f"expected {m.r} field components, got {len(m.eta)}")
        if any(x > 0 for x in m.eta) and any(x < 0 for x in m.eta):
            raise ConfigError("model.eta", "field components must share one sign")
        if m.beta < 0 or not math.isfinite(m.beta):
            raise ConfigError("model.beta", "beta must be finite and >= 0")
        if m.boundary not in ("plus", "minus", "free"):
            raise ConfigError("model.boundary", f"unknown boundary condition {m.boundary!r}")
        if dyn.algorithm not in ("sw", "heatbath", "kawasaki", "kawasaki-nonlocal"):
            raise ConfigError("dynamics.algorithm", f"unknown algorithm {dyn.algorithm!r}")
        for name in ("sweeps", "chains", "every"):
            if getattr(dyn, name) < 1:
                raise ConfigError(f"dynamics.{name}", "must be >= 1")
        if dyn.therm < 0:
            raise ConfigError("dynamics.therm", "must be >= 0")
        if dyn.format not in ("text", "binary"):
            raise ConfigError("dynamics.format", "must be text or binary")
        if dyn.magnetization is not None and not -1 <= dyn.magnetization <= 1:
            raise ConfigError("dynamics.magnetization", "must lie in [-1, 1]")
        nu = 1.0 / (2 * m.d) if an.nu is None else an.nu
        for K in an.K:
            if not _pow2(K):
                raise ConfigError("analysis.K", f"K={K} must be a power of two")
            if K > m.N ** nu + 1e-9:
                raise ConfigError("analysis.K", f"K={K} exceeds N^nu = {m.N ** nu:.4g} (nu={nu:.4g})")
        if not 0 < an.alpha < 1:
            raise ConfigError("analysis.alpha", "must lie in (0, 1)")
        if an.zeta <= 0:
            raise ConfigError("analysis.zeta", "must be positive")
        if an.m_star is not None and not 0 < an.m_star <= 1:
            raise ConfigError("analysis.m_star", "must lie in (0, 1]")
        if an.shifts not in ("lateral", "all"):
            raise ConfigError("analysis.shifts", "must be lateral or all")
        if geo.tau not in ("isotropic", "values"):
            raise ConfigError("geometry.tau", "must be isotropic or values")
        if geo.tau == "values" and len(geo.tau_values) != geo.tau_normals:
            raise ConfigError("geometry.tau_values", f"expected {geo.tau_normals} values")
        if geo.tau_normals < 2 * m.d:
            raise ConfigError("geometry.tau_normals", "too few normals for a bounded shape")
        if geo.accuracy <= 0:
            raise ConfigError("geometry.accuracy", "must be positive")
        if geo.domain not in ("unit", "box"):
            raise ConfigError("geometry.domain", "must be unit or box")
        if self.estimate.method not in ("exact", "mc"):
            raise ConfigError("estimate.method", "must be exact or mc")


def _fmt(v) -> str:
    if isinstance(v, list):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


_PARSERS = {
    "list[float]": _floats,
    "list[int]": _ints,
    "list[str]": lambda s: [x for x in s.replace(",", " ").split()],
    "int": int,
    "float": float,
    "str": str,
    "float | None": lambda s: None if s.strip().lower() in ("", "none") else float(s),
}


def load_config(path: str | Path | None = None, overrides: list[str] = ()) -> RunConfig:
    """Read an INI file and ``section.key=value`` overrides into a validated :class:`RunConfig`."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if path is not None:
        if not Path(path).exists():
            raise ConfigError("config", f"file {path} not found")
        cp.read(path)
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigError("override", f"expected section.key=value, got {ov!r}")
        key, val = ov.split("=", 1)
        sec, k = key.strip().split(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, k, val.strip())
    cfg = RunConfig()
    for sec in cp.sections():
        if not hasattr(cfg, sec):
            raise ConfigError(sec, "unknown section")
        obj = getattr(cfg, sec)
        types = {f: t for f, t in obj.__annotations__.items()}
        for k, raw in cp.items(sec):
            if k not in types:
                raise ConfigError(f"{sec}.{k}", "unknown field")
            try:
                setattr(obj, k, _PARSERS[types[k]](raw))
            except (ValueError, KeyError) as e:
                raise ConfigError(f"{sec}.{k}", f"cannot parse {raw!r}: {e}") from None
    cfg.validate()
    return cfg


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Independent stream for chain ``chain`` derived from the run seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chain,)))
