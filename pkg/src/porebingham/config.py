"""Sectioned ``key = value`` run configuration.

Layout::

    [grid]
    dim = 2
    nx = 32
    [material]
    epsilon = 0.01

Keys may also be written fully qualified (``material.q_star = 2``) anywhere.
``#`` starts a comment.  Unknown sections or keys are errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .constitutive import MaterialParams
from .solver import DarcyParams, SolverConfig

__all__ = [
    "ConfigError",
    "GridSpec",
    "ForcingParams",
    "OutputSpec",
    "RunConfig",
    "parse_config",
    "emit_config",
    "load_config",
]


class ConfigError(ValueError):
    """Invalid configuration; the message names the line or key."""


@dataclass(frozen=True)
class GridSpec:
    dim: int = 2
    nx: int = 32
    ny: int = 32
    nz: int = 32
    lx: float = 1.0
    ly: float = 1.0
    lz: float = 1.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"invalid grid setting dim = {self.dim!r}")
        for name in ("nx", "ny", "nz"):
            if getattr(self, name) < 2:
                raise ValueError(f"invalid grid setting {name} = {getattr(self, name)!r}")
        for name in ("lx", "ly", "lz"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"invalid grid setting {name} = {v!r}")

    @property
    def n_cells(self):
        return (self.nx, self.ny, self.nz)[: self.dim]

    @property
    def lengths(self):
        return (self.lx, self.ly, self.lz)[: self.dim]


WALL_MODELS = ("default", "stickslip", "noslip")


@dataclass(frozen=True)
class ForcingParams:
    """Scenario knobs; ``None`` means the scenario's own default."""

    scenario: str = "decay"
    seed: int = 0
    wall: str = "default"
    body_force: Optional[float] = None
    p_s: Optional[float] = None
    p0: Optional[float] = None
    velocity_scale: Optional[float] = None
    source_amplitude: Optional[float] = None
    source_radius: Optional[float] = None

    def __post_init__(self):
        if self.wall not in WALL_MODELS:
            raise ValueError(f"invalid forcing setting wall = {self.wall!r} (choose from {', '.join(WALL_MODELS)})")
        if self.seed < 0:
            raise ValueError(f"invalid forcing setting seed = {self.seed!r}")
        if self.source_radius is not None and not self.source_radius > 0:
            raise ValueError(f"invalid forcing setting source_radius = {self.source_radius!r}")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise ValueError(f"invalid forcing setting {f.name} = {v!r}")


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "output"
    snapshot_every: int = 0
    plug_threshold: Optional[float] = None

    def __post_init__(self):
        if self.snapshot_every < 0:
            raise ValueError(f"invalid output setting snapshot_every = {self.snapshot_every!r}")
        if self.plug_threshold is not None and not self.plug_threshold > 0:
            raise ValueError(f"invalid output setting plug_threshold = {self.plug_threshold!r}")


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    material: MaterialParams = field(default_factory=MaterialParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    forcing: ForcingParams = field(default_factory=ForcingParams)
    output: OutputSpec = field(default_factory=OutputSpec)
    darcy: Optional[DarcyParams] = None

    @property
    def scenario(self):
        return self.forcing.scenario

    def with_overrides(self, **sections):
        """Replace individual keys: ``cfg.with_overrides(material={"epsilon": 1e-3})``."""
        out = self
        for name, values in sections.items():
            current = getattr(out, name)
            if current is None and name == "darcy":
                current = DarcyParams()
            try:
                out = replace(out, **{name: replace(current, **values)})
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from exc
        return out


_SECTIONS = {
    "grid": GridSpec,
    "material": MaterialParams,
    "solver": SolverConfig,
    "forcing": ForcingParams,
    "output": OutputSpec,
    "darcy": DarcyParams,
}
# keys not exposed in the file format
_HIDDEN = {("solver", "max_dt_halvings")}
# optional floats that also accept a keyword meaning "unset"
_NONE_WORDS = {("solver", "convection_truncation_n"): "off"}
_AUTO = "auto"


def _field_types(cls):
    out = {}
    defaults = cls()
    for f in fields(cls):
        if (cls_name(cls), f.name) in _HIDDEN:
            continue
        out[f.name] = type(getattr(defaults, f.name)) if getattr(defaults, f.name) is not None else float
    return out


def cls_name(cls):
    for name, c in _SECTIONS.items():
        if c is cls:
            return name
    raise KeyError(cls)


def _convert(section, key, text, typ, lineno):
    where = f"line {lineno}: {section}.{key}"
    none_word = _NONE_WORDS.get((section, key), _AUTO)
    default = getattr(_SECTIONS[section](), key)
    optional = default is None or (section, key) in _NONE_WORDS
    if optional and text.lower() == none_word:
        return None
    try:
        if typ is bool:
            if text.lower() not in ("true", "false"):
                raise ValueError
            return text.lower() == "true"
        if typ is int:
            return int(text)
        if typ is float:
            v = float(text)
            if not math.isfinite(v):
                raise ValueError
            return v
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {typ.__name__}") from None


def parse_config(text: str) -> RunConfig:
    """Parse configuration text; missing keys take their defaults."""
    values = {name: {} for name in _SECTIONS}
    seen_at = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if "." in key:
            sec, key = key.split(".", 1)
        else:
            sec = section
        if sec is None:
            raise ConfigError(f"line {lineno}: key {key!r} outside any section")
        if sec not in _SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section {sec!r}")
        types = _field_types(_SECTIONS[sec])
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {sec}.{key}")
        if not val:
            raise ConfigError(f"line {lineno}: empty value for {sec}.{key}")
        if (sec, key) in seen_at:
            raise ConfigError(f"line {lineno}: duplicate key {sec}.{key} (first set on line {seen_at[sec, key]})")
        seen_at[sec, key] = lineno
        values[sec][key] = _convert(sec, key, val, types[key], lineno)

    built = {}
    for name, cls in _SECTIONS.items():
        if name == "darcy" and not values[name]:
            built[name] = None
            continue
        try:
            built[name] = cls(**values[name])
        except ValueError as exc:
            msg = str(exc)
            # point at the offending line when the message names a key we read
            for key, lineno in sorted(seen_at.items(), key=lambda kv: kv[1]):
                if key[0] == name and key[1] in msg:
                    msg = f"line {lineno}: {msg}"
                    break
            raise ConfigError(msg) from None
    return RunConfig(**built)


def _format(v, section, key):
    if v is None:
        return _NONE_WORDS.get((section, key), _AUTO)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_config(cfg: RunConfig) -> str:
    """Serialise every key, so the text fully determines the run."""
    lines = []
    for name, cls in _SECTIONS.items():
        obj = getattr(cfg, name)
        if obj is None:
            continue
        lines.append(f"[{name}]")
        for key in _field_types(cls):
            lines.append(f"{key} = {_format(getattr(obj, key), name, key)}")
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
