"""Run configuration files and named presets.

A run config is a YAML mapping with the sections ``layout``, ``rates``,
``optics``, ``sensor``, ``traffic`` and ``decode`` plus a top-level
``seed`` and an optional ``preset`` name. Unknown keys are errors.
"""
from __future__ import annotations

import copy
import dataclasses
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .core import ChannelLayout, build_layout, classify_rates
from .evaluation import Scenario
from .optics import OpticalConfig, ProjectionModel
from .receiver import DecodeMode
from .sensor import SensorConfig

SEED_ENV = "SELENE_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LayoutSpec:
    mirror_cols: int = 912
    mirror_rows: int = 1140
    block_size: int = 8
    guard: int = 1
    grid_cols: int = 57
    grid_rows: int = 35


@dataclass(frozen=True)
class RatesSpec:
    f_c: float = 588.0
    f_p: float | None = None
    d: float = 0.0


@dataclass(frozen=True)
class OpticsSpec:
    ambient_lux: float = 0.0
    channel_on_lux: float = 400.0
    attenuation: float = 1.0
    footprint_margin: float = 0.0
    crosstalk: float = 0.0
    camera_width: int = 346
    camera_height: int = 260
    scale: float = 3.0
    rotation_deg: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)
    affine: tuple[float, ...] | None = None


@dataclass(frozen=True)
class TrafficSpec:
    payload: str = "good"
    packets_per_channel: int = 30
    idle_symbols: int = 0
    stagger: bool = False
    calibration_rate: float = 588.0
    calibration_duration: float = 1.0


@dataclass(frozen=True)
class DecodeSpec:
    mode: str = "relative"
    binarize_frac: float = 0.2
    morph_radius: int = 1
    connectivity: int = 4


_SECTIONS = {
    "layout": LayoutSpec, "rates": RatesSpec, "optics": OpticsSpec,
    "sensor": SensorConfig, "traffic": TrafficSpec, "decode": DecodeSpec,
}


@dataclass(frozen=True)
class RunConfig:
    layout_spec: LayoutSpec = field(default_factory=LayoutSpec)
    rates: RatesSpec = field(default_factory=RatesSpec)
    optics_spec: OpticsSpec = field(default_factory=OpticsSpec)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    traffic: TrafficSpec = field(default_factory=TrafficSpec)
    decode: DecodeSpec = field(default_factory=DecodeSpec)
    seed: int = 0

    def __post_init__(self):
        # build the domain objects once so invalid values fail at load time
        if self.traffic.packets_per_channel < 0 or self.traffic.idle_symbols < 0:
            raise ConfigError("[traffic] packet and idle counts must be >= 0")
        if self.traffic.calibration_rate <= 0 or self.traffic.calibration_duration <= 0:
            raise ConfigError("[traffic] calibration rate and duration must be positive")
        self.layout()
        self.optics()
        self.projection()

    def layout(self) -> ChannelLayout:
        ls, r = self.layout_spec, self.rates
        base = build_layout(ls.mirror_cols, ls.mirror_rows, ls.block_size, ls.guard,
                            ls.grid_cols, ls.grid_rows, r.f_c)
        f_p = r.f_c if r.f_p is None else r.f_p
        if r.d == 0 and f_p == r.f_c:
            return base
        return classify_rates(base, r.d, r.f_c, f_p)

    def optics(self) -> OpticalConfig:
        o = self.optics_spec
        return OpticalConfig(o.ambient_lux, o.channel_on_lux, o.attenuation,
                             o.footprint_margin, o.crosstalk)

    def projection(self) -> ProjectionModel:
        o = self.optics_spec
        if o.affine is not None:
            return ProjectionModel(tuple(o.affine), o.camera_width, o.camera_height)
        return ProjectionModel.centered(self.layout(), o.camera_width, o.camera_height,
                                        o.scale, o.rotation_deg, tuple(o.translation))

    def payload(self) -> bytes:
        return self.traffic.payload.encode("latin-1")

    def scenario(self, mode: str | None = None) -> Scenario:
        t, dc = self.traffic, self.decode
        return Scenario(
            layout=self.layout(), optics=self.optics(), sensor=self.sensor,
            mode=DecodeMode(mode or dc.mode), packets_per_channel=t.packets_per_channel,
            payload=self.payload(), idle_symbols=t.idle_symbols, stagger=t.stagger,
            camera_width=self.optics_spec.camera_width,
            camera_height=self.optics_spec.camera_height,
            affine=self.projection().coeffs, calibration_rate=t.calibration_rate,
            calibration_duration=t.calibration_duration, binarize_frac=dc.binarize_frac,
            morph_radius=dc.morph_radius, connectivity=dc.connectivity)


def load_presets() -> dict[str, dict]:
    text = resources.files(__package__).joinpath("presets.yaml").read_text()
    return yaml.safe_load(text)


def _coerce(cls, name: str, values: dict) -> Any:
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {', '.join(unknown)}")
    out = {}
    for k, v in values.items():
        if isinstance(v, list):
            v = tuple(v)
        if isinstance(v, str) and v.lower() in ("inf", "infinity"):
            v = math.inf
        default = fields[k].default
        numeric = isinstance(default, (int, float)) and not isinstance(default, bool)
        if numeric and (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise ConfigError(f"[{name}] {k} must be a number, got {v!r}")
        if isinstance(default, bool) and not isinstance(v, bool):
            raise ConfigError(f"[{name}] {k} must be true or false, got {v!r}")
        out[k] = v
    try:
        return cls(**out)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def config_from_dict(raw: dict | None, env: dict | None = None) -> RunConfig:
    """Validate a parsed config mapping, resolving presets and the seed override."""
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    raw = dict(raw or {})
    preset = raw.pop("preset", None)
    if preset is not None:
        presets = load_presets()
        if preset not in presets:
            raise ConfigError(f"unknown preset {preset!r}; available: {', '.join(sorted(presets))}")
        raw = _merge(presets[preset], raw)
    unknown = sorted(set(raw) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(unknown)}")
    parts = {}
    for name, cls in _SECTIONS.items():
        section = raw.get(name) or {}
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a mapping")
        parts[name] = _coerce(cls, name, section)
    seed = raw.get("seed", 0)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        seed = env[SEED_ENV]
    try:
        seed = int(seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed must be an integer, got {seed!r}") from exc
    dc = parts["decode"]
    if dc.mode not in {m.value for m in DecodeMode}:
        raise ConfigError(f"[decode] mode must be absolute or relative, got {dc.mode!r}")
    if not 0 < dc.binarize_frac < 1 or dc.morph_radius < 0 or dc.connectivity not in (4, 8):
        raise ConfigError("[decode] need 0 < binarize_frac < 1, morph_radius >= 0, connectivity 4 or 8")
    try:
        return RunConfig(parts["layout"], parts["rates"], parts["optics"], parts["sensor"],
                         parts["traffic"], parts["decode"], seed)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | os.PathLike | None, env: dict | None = None) -> RunConfig:
    """Read a YAML run config; ``None`` gives the built-in defaults."""
    if path is None:
        return config_from_dict({}, env)
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return config_from_dict(raw, env)
