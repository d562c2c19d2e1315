"""Scenario parameters, node roles and derived quantities.

Everything inside :class:`ScenarioConfig` is stored in SI units (meters,
seconds, bytes, bits/second). Config files may write quantities with a unit
suffix (``"3 km/h"``, ``"6 mi"``, ``"300 KB"``); they are converted once, when
the file is parsed.
"""
from __future__ import annotations

import dataclasses
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

MILE = 1609.344
KMH = 1000.0 / 3600.0

PERSON, VEHICLE, GATEWAY = "person", "vehicle", "gateway"
ROLES = (PERSON, VEHICLE, GATEWAY)


class ConfigError(ValueError):
    """Raised when a configuration cannot be parsed or fails validation."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class MessageRecord:
    msg_id: int
    cluster_id: int
    owner: int
    created_at: float
    size: int = 300_000


@dataclass(frozen=True)
class NodeSpec:
    node_id: int
    role: str
    radio_range: float
    link_rate: float
    buffer_capacity: float


@dataclass(frozen=True)
class ScenarioConfig:
    duration_T: float = 18_000.0
    gen_interval_G: float = 30.0
    target_redundancy_Rsim: float = 0.3
    window_W: float = 20.0
    n_people: int = 50
    pr_disaster: float = 0.03125
    pedestrian_speed: tuple[float, float] = (3 * KMH, 7 * KMH)
    pedestrian_pause: float = 300.0
    vehicle_speed: tuple[float, float] = (25 * KMH, 54 * KMH)
    vehicle_wait: tuple[float, float] = (300.0, 600.0)
    gateway_dwell: float = 60.0
    detector: str = "oracle"
    detector_fp: float = 0.0
    detector_fn: float = 0.0
    detector_scope: str = "message"
    buffer_mode: str = "formula"
    people_buffer: float = 0.0
    rescue_buffer: float = 1e9
    message_size: int = 300_000
    owner_mode: str = "random"
    person_range: float = 20.0
    person_rate: float = 10e6
    vehicle_range: float = 20.0
    vehicle_rate: float = 100e6
    gateway_range: float = 20.0
    gateway_rate: float = 100e6
    dt: float = 1.0
    rng_seed: int = 1
    map_source: str = "grid"
    map_spacing: float = 1000.0
    poi_count: int = 6
    disaster_region: tuple[float, float, float, float] = (0.0, 0.0, 16_000.0, 13_000.0)
    gateway_position: tuple[float, float] = (25_600.0, 6_500.0)

    @property
    def n_messages(self) -> int:
        return int(math.floor(self.duration_T / self.gen_interval_G + 1e-9))

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def canonical(self) -> str:
        """Byte-stable serialization: sorted keys, SI numbers only."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def node_specs(self) -> list[NodeSpec]:
        """People are 0..n_people-1, then the vehicle, then the gateway."""
        people_buf = derive_people_buffer(self) if self.buffer_mode == "formula" else self.people_buffer
        specs = [NodeSpec(i, PERSON, self.person_range, self.person_rate, people_buf)
                 for i in range(self.n_people)]
        specs.append(NodeSpec(self.n_people, VEHICLE, self.vehicle_range,
                              self.vehicle_rate, self.rescue_buffer))
        specs.append(NodeSpec(self.n_people + 1, GATEWAY, self.gateway_range,
                              self.gateway_rate, math.inf))
        return specs


def derive_people_buffer(cfg: ScenarioConfig) -> int:
    """Per-person buffer that holds exactly the unique messages of a run."""
    n = cfg.n_messages
    if n <= 0:
        raise ConfigError("duration_T / gen_interval_G must be >= 1 (no messages generated)")
    if not 0.0 <= cfg.target_redundancy_Rsim < 1.0:
        raise ConfigError("target_redundancy_Rsim must lie in [0, 1)")
    return int(round(cfg.message_size * (1.0 - cfg.target_redundancy_Rsim) * n))


def _check_range(errors, name, rng, lo=0.0):
    a, b = rng
    if not (math.isfinite(a) and math.isfinite(b)):
        errors.append(f"{name}: bounds must be finite")
    elif a > b:
        errors.append(f"{name}: empty range [{a}, {b}]")
    elif a < lo:
        errors.append(f"{name}: lower bound {a} < {lo}")


def validate_config(cfg: ScenarioConfig) -> list[str]:
    """Return every violated invariant as ``"field: message"``; empty if valid."""
    errors: list[str] = []
    for name in ("pr_disaster", "detector_fp", "detector_fn"):
        v = getattr(cfg, name)
        if not 0.0 <= v <= 1.0:
            errors.append(f"{name}: probability {v} outside [0, 1]")
    if not 0.0 <= cfg.target_redundancy_Rsim < 1.0:
        errors.append(f"target_redundancy_Rsim: {cfg.target_redundancy_Rsim} outside [0, 1)")
    if cfg.duration_T <= 0:
        errors.append(f"duration_T: must be > 0, got {cfg.duration_T}")
    if cfg.gen_interval_G <= 0:
        errors.append(f"gen_interval_G: must be > 0, got {cfg.gen_interval_G}")
    elif cfg.duration_T > 0 and cfg.n_messages < 1:
        errors.append("gen_interval_G: does not fit into duration_T at least once")
    _check_range(errors, "pedestrian_speed", cfg.pedestrian_speed)
    _check_range(errors, "vehicle_speed", cfg.vehicle_speed)
    _check_range(errors, "vehicle_wait", cfg.vehicle_wait)
    if cfg.pedestrian_speed[1] <= 0:
        errors.append("pedestrian_speed: upper bound must be > 0")
    if cfg.vehicle_speed[1] <= 0:
        errors.append("vehicle_speed: upper bound must be > 0")
    if cfg.poi_count < 0:
        errors.append("poi_count: must be >= 0 (0 means every region vertex)")
    if cfg.n_people < 1:
        errors.append("n_people: need at least one person")
    for name in ("window_W", "pedestrian_pause", "gateway_dwell"):
        if getattr(cfg, name) < 0:
            errors.append(f"{name}: must be >= 0")
    for name in ("dt", "map_spacing", "person_range", "vehicle_range", "gateway_range",
                 "person_rate", "vehicle_rate", "gateway_rate", "rescue_buffer", "message_size"):
        if not getattr(cfg, name) > 0:
            errors.append(f"{name}: must be > 0")
    if cfg.buffer_mode not in ("formula", "explicit"):
        errors.append(f"buffer_mode: unknown mode {cfg.buffer_mode!r}")
    elif cfg.buffer_mode == "explicit" and cfg.people_buffer <= 0:
        errors.append("people_buffer: explicit buffer_mode needs a positive people_buffer")
    if cfg.detector not in ("oracle", "never"):
        errors.append(f"detector: unknown detector {cfg.detector!r}")
    if cfg.detector_scope not in ("message", "pair"):
        errors.append(f"detector_scope: unknown scope {cfg.detector_scope!r}")
    if cfg.owner_mode not in ("random", "same_as_seed"):
        errors.append(f"owner_mode: unknown mode {cfg.owner_mode!r}")
    x0, y0, x1, y1 = cfg.disaster_region
    if not (x1 > x0 and y1 > y0):
        errors.append("disaster_region: must be [x0, y0, x1, y1] with x1 > x0, y1 > y0")
    if not 0 <= cfg.rng_seed < 2**64:
        errors.append("rng_seed: must be an unsigned 64-bit integer")
    return errors


def check_config(cfg: ScenarioConfig) -> ScenarioConfig:
    errors = validate_config(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


# -- parsing -----------------------------------------------------------------

_UNITS = {
    "m": 1.0, "km": 1000.0, "mi": MILE, "mile": MILE, "miles": MILE,
    "s": 1.0, "sec": 1.0, "min": 60.0, "h": 3600.0, "hr": 3600.0,
    "m/s": 1.0, "km/h": KMH, "kmh": KMH, "mph": MILE / 3600.0,
    "b": 1.0, "kb": 1e3, "mb": 1e6, "gb": 1e9,
    "bps": 1.0, "kbps": 1e3, "mbps": 1e6, "gbps": 1e9,
}
_QTY = re.compile(r"^\s*([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([A-Za-z/]*)\s*$")


def parse_quantity(value):
    """Convert ``"3 km/h"``-style strings to SI floats; numbers pass through."""
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return value
    if not isinstance(value, str):
        raise ConfigError(f"cannot parse quantity {value!r}")
    m = _QTY.match(value)
    if not m:
        raise ConfigError(f"cannot parse quantity {value!r}")
    num, unit = float(m.group(1)), m.group(2).lower()
    if not unit:
        return num
    if unit not in _UNITS:
        raise ConfigError(f"unknown unit {unit!r} in {value!r}")
    return num * _UNITS[unit]


_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
_DEFAULTS = ScenarioConfig()


def _coerce(name: str, raw):
    default = getattr(_DEFAULTS, name)
    if isinstance(default, tuple):
        if isinstance(raw, str):
            raw = yaml.safe_load(raw)
        if not isinstance(raw, (list, tuple)) or len(raw) != len(default):
            raise ConfigError(f"{name}: expected a list of {len(default)} values")
        return tuple(float(parse_quantity(v)) for v in raw)
    if isinstance(default, bool):
        return bool(raw)
    if isinstance(default, int):
        v = parse_quantity(raw)
        if float(v) != int(v):
            raise ConfigError(f"{name}: expected an integer, got {raw!r}")
        return int(v)
    if isinstance(default, float):
        return float(parse_quantity(raw))
    return str(raw)


def config_from_dict(data: dict[str, Any], base: ScenarioConfig | None = None) -> ScenarioConfig:
    base = base or ScenarioConfig()
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise ConfigError([f"{k}: unknown field" for k in unknown])
    changes = {}
    errors = []
    for k, v in data.items():
        try:
            changes[k] = _coerce(k, v)
        except (ConfigError, ValueError, TypeError) as exc:
            errors.append(f"{k}: {exc}")
    if errors:
        raise ConfigError(errors)
    return dataclasses.replace(base, **changes)


def apply_overrides(cfg: ScenarioConfig, overrides: list[str]) -> ScenarioConfig:
    """Apply ``path=value`` strings (values parsed as YAML scalars/lists)."""
    data = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        data[key.strip()] = yaml.safe_load(value)
    return config_from_dict(data, base=cfg)


def load_config(path: str | Path | None, overrides: list[str] = ()) -> ScenarioConfig:
    cfg = ScenarioConfig()
    if path is not None:
        text = Path(path).read_text()
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = config_from_dict(data)
    if overrides:
        cfg = apply_overrides(cfg, list(overrides))
    return cfg


def dump_config(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
