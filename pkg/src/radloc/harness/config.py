"""Scenario configuration: flat key-value text with section headers.

Physical quantities carry units (``20 m``, ``0.96 MHz, 1.92 MHz``,
``-174 dBm/Hz``). Parsing is strict: unknown sections or keys, missing
units and values of the wrong dimension are errors. See ``SCHEMA`` for the
accepted keys and README.md for a worked example.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geometry import LOS_STATE_NAMES, AnchorState, Rotation

CASE_STUDY_BANDWIDTHS = (0.96e6, 1.92e6, 3.84e6, 7.68e6, 15.36e6, 30.72e6, 61.44e6, 122.88e6)


class ConfigError(ValueError):
    pass


# unit -> (dimension, factor to SI); logarithmic units handled separately
_UNITS = {
    "m": ("length", 1.0), "km": ("length", 1e3), "cm": ("length", 1e-2),
    "mm": ("length", 1e-3),
    "Hz": ("frequency", 1.0), "kHz": ("frequency", 1e3), "MHz": ("frequency", 1e6),
    "GHz": ("frequency", 1e9),
    "s": ("time", 1.0), "ms": ("time", 1e-3), "us": ("time", 1e-6), "ns": ("time", 1e-9),
    "W": ("power", 1.0), "mW": ("power", 1e-3),
    "W/Hz": ("psd", 1.0), "mW/Hz": ("psd", 1e-3),
    "m/s": ("velocity", 1.0), "km/h": ("velocity", 1 / 3.6),
    "deg": ("angle", np.pi / 180), "rad": ("angle", 1.0),
    "m^2": ("area", 1.0),
}
_LOG_UNITS = {"dB": ("ratio", 0.0), "dBm": ("power", -30.0), "dBW": ("power", 0.0),
              "dBm/Hz": ("psd", -30.0), "dBW/Hz": ("psd", 0.0)}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z/^\d]+)?\s*$")


def parse_quantity(text: str, dimension: str) -> float:
    """Parse ``'<number> <unit>'`` into SI units of the given dimension."""
    m = _QUANTITY.match(text)
    if not m:
        raise ConfigError(f"cannot parse quantity {text!r}")
    value, unit = float(m.group(1)), m.group(2)
    if dimension == "count":
        if unit:
            raise ConfigError(f"{text!r}: expected a plain number")
        return value
    if unit is None:
        raise ConfigError(f"{text!r}: missing unit (expected {dimension})")
    if unit in _LOG_UNITS:
        dim, offset = _LOG_UNITS[unit]
        if dim != dimension:
            raise ConfigError(f"{text!r}: unit {unit} is not a {dimension}")
        return 10.0 ** ((value + offset) / 10.0)
    if unit not in _UNITS or _UNITS[unit][0] != dimension:
        raise ConfigError(f"{text!r}: unit {unit!r} is not a {dimension}")
    return value * _UNITS[unit][1]


def parse_list(text: str, dimension: str) -> list[float]:
    return [parse_quantity(t, dimension) for t in text.split(",") if t.strip()]


# section -> key -> (kind, default); kind is a dimension, "int", "str", "list:<dim>", ...
SCHEMA = {
    "scenario": {
        "type": ("choice:case_study,localization", "case_study"),
        "name": ("str", ""),
    },
    "grid": {
        "subcarrier_spacing": ("frequency", 120e3),
        "bandwidths": ("list:frequency", list(CASE_STUDY_BANDWIDTHS)),
        "n_subcarriers": ("int", 64),
        "n_symbols": ("int", 1),
        "symbol_duration": ("time", None),
        "carrier": ("frequency", 28e9),
    },
    "snr": {
        "mode": ("choice:calibrate,integrated,link_budget", "calibrate"),
        "target_crb": ("length", 0.0851),
        "reference_bandwidth": ("frequency", 122.88e6),
        "integrated": ("ratio", None),
        "tx_power": ("power", 1.0),
        "noise_psd": ("psd", None),
    },
    "case_study": {
        "paths": ("int", 5),
        "first_path_length": ("length", 150.0),
        "spacing": ("length", 20.0),
        "baseline": ("length", 100.0),
        "phase_policy": ("choice:zero,uniform", "zero"),
        "propagation_speed": ("velocity", 3e8),
    },
    "estimator": {
        "oversampling": ("int", 4),
        "p_fa": ("count", 1e-3),
        "max_paths": ("int", 10),
        "refine_rounds": ("int", 3),
        "min_separation": ("count", 1.0),
        "gamma": ("optional_count", None),
    },
    "run": {
        "trials": ("int", 200),
        "seed": ("int", 0),
        "workers": ("int", 1),
    },
    "scene": {
        "link": ("choice:downlink,uplink", "downlink"),
        "ue": ("vec:length", None),
        "clock_bias": ("time", 0.0),
        "estimate": ("names", ("x", "y", "z", "B")),
        "anchor_array": ("array", "single"),
        "ue_array": ("array", "single"),
        "bounds_min": ("vec:length", None),
        "bounds_max": ("vec:length", None),
    },
    "map": {
        "x_range": ("list:length", None),
        "y_range": ("list:length", None),
        "step": ("length", None),
        "z": ("length", 0.0),
    },
}
_ANCHOR_KEY = re.compile(r"^anchor_(\d+)$")
_ANCHOR_YAW_KEY = re.compile(r"^anchor_(\d+)_yaw$")


def _convert(kind: str, text: str, where: str):
    try:
        if kind == "str":
            return text.strip()
        if kind == "int":
            v = text.strip()
            if not re.fullmatch(r"[-+]?\d+", v):
                raise ConfigError(f"expected an integer, got {v!r}")
            return int(v)
        if kind.startswith("choice:"):
            options = kind.split(":", 1)[1].split(",")
            v = text.strip()
            if v not in options:
                raise ConfigError(f"expected one of {options}, got {v!r}")
            return v
        if kind == "optional_count":
            return None if text.strip().lower() == "none" else parse_quantity(text, "count")
        if kind.startswith("list:"):
            return parse_list(text, kind.split(":", 1)[1])
        if kind.startswith("vec:"):
            v = parse_list(text, kind.split(":", 1)[1])
            if len(v) != 3:
                raise ConfigError(f"expected 3 components, got {len(v)}")
            return np.array(v)
        if kind == "names":
            return tuple(t.strip() for t in text.split(",") if t.strip())
        if kind == "array":
            return _parse_array(text)
        return parse_quantity(text, kind)
    except ConfigError as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def _parse_array(text: str) -> str:
    v = text.strip().lower()
    if v == "single" or re.fullmatch(r"ula \d+", v) or re.fullmatch(r"upa \d+x\d+", v):
        return v
    raise ConfigError(f"array must be 'single', 'ula <n>' or 'upa <n>x<m>', got {text!r}")


@dataclass
class ScenarioConfig:
    """Parsed configuration with SI values and defaults filled in."""

    values: dict = field(default_factory=dict)
    anchors: list = field(default_factory=list)
    source: str = "<defaults>"

    def __getitem__(self, key):
        section, name = key
        return self.values[section][name]

    def get(self, section: str, name: str):
        return self.values[section][name]

    def set(self, section: str, name: str, value) -> None:
        if name not in SCHEMA.get(section, {}):
            raise ConfigError(f"unknown key [{section}] {name}")
        self.values[section][name] = value

    @property
    def kind(self) -> str:
        return self.values["scenario"]["type"]

    def as_metadata(self) -> dict:
        """JSON-friendly snapshot of all effective settings."""
        def clean(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, tuple):
                return list(v)
            return v
        out = {s: {k: clean(v) for k, v in d.items()} for s, d in self.values.items()}
        out["anchors"] = [{"id": a.id, "position": a.position.tolist(),
                           "quaternion": a.orientation.quaternion.tolist()}
                          for a in self.anchors]
        return out


def default_config() -> ScenarioConfig:
    values = {s: {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in keys.items()}
              for s, keys in SCHEMA.items()}
    return ScenarioConfig(values)


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True,
                                       inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = default_config()
    cfg.source = source
    anchors: dict[int, np.ndarray] = {}
    yaws: dict[int, float] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if section == "scene" and _ANCHOR_KEY.match(key):
                anchors[int(_ANCHOR_KEY.match(key).group(1))] = _convert(
                    "vec:length", raw, f"scene] [{key}")
                continue
            if section == "scene" and _ANCHOR_YAW_KEY.match(key):
                yaws[int(_ANCHOR_YAW_KEY.match(key).group(1))] = _convert(
                    "angle", raw, f"scene] [{key}")
                continue
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            kind, _ = SCHEMA[section][key]
            cfg.values[section][key] = _convert(kind, raw, section)
    for i in yaws:
        if i not in anchors:
            raise ConfigError(f"{source}: anchor_{i}_yaw given without anchor_{i}")
    cfg.anchors = [AnchorState(i, anchors[i], Rotation.from_euler(yaws.get(i, 0.0)))
                   for i in sorted(anchors)]
    validate(cfg)
    return cfg


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config(text, str(p))


def validate(cfg: ScenarioConfig) -> None:
    v = cfg.values
    g = v["grid"]
    if g["subcarrier_spacing"] <= 0 or g["n_symbols"] < 1 or g["n_subcarriers"] < 1:
        raise ConfigError("grid sizes and spacing must be positive")
    if cfg.kind == "case_study":
        for w in g["bandwidths"]:
            n = w / g["subcarrier_spacing"]
            if abs(n - round(n)) > 1e-6 * max(n, 1.0) or round(n) < 1:
                raise ConfigError(f"bandwidth {w} Hz is not a multiple of the subcarrier "
                                  "spacing")
        if v["case_study"]["paths"] < 1:
            raise ConfigError("[case_study] paths must be >= 1")
        if v["case_study"]["propagation_speed"] <= 0:
            raise ConfigError("[case_study] propagation_speed must be positive")
        if v["case_study"]["first_path_length"] <= v["case_study"]["baseline"]:
            raise ConfigError("[case_study] path lengths must exceed the baseline")
    if cfg.kind == "localization":
        if v["scene"]["ue"] is None:
            raise ConfigError("[scene] ue position is required for localization")
        if not cfg.anchors:
            raise ConfigError("[scene] needs at least one anchor_<id>")
        bad = [n for n in v["scene"]["estimate"] if n not in LOS_STATE_NAMES]
        if bad:
            raise ConfigError(f"[scene] estimate has unknown components {bad}")
        if v["snr"]["mode"] == "calibrate":
            raise ConfigError("[snr] mode = calibrate applies to the case study only")
    s = v["snr"]
    if s["mode"] == "integrated" and s["integrated"] is None:
        raise ConfigError("[snr] mode = integrated requires 'integrated = <x> dB'")
    if s["mode"] == "link_budget" and s["noise_psd"] is None:
        raise ConfigError("[snr] mode = link_budget requires noise_psd")
    e = v["estimator"]
    if not 0 < e["p_fa"] < 1:
        raise ConfigError("[estimator] p_fa must lie in (0, 1)")
    if e["oversampling"] < 1 or e["max_paths"] < 1 or e["refine_rounds"] < 0:
        raise ConfigError("[estimator] oversampling/max_paths must be >= 1, "
                          "refine_rounds >= 0")
    r = v["run"]
    if r["trials"] < 1 or r["workers"] < 1 or r["seed"] < 0:
        raise ConfigError("[run] trials/workers must be >= 1 and seed >= 0")
    m = v["map"]
    if m["x_range"] is not None or m["y_range"] is not None:
        if m["x_range"] is None or m["y_range"] is None or m["step"] is None:
            raise ConfigError("[map] needs x_range, y_range and step together")
        if len(m["x_range"]) != 2 or len(m["y_range"]) != 2 or m["step"] <= 0:
            raise ConfigError("[map] ranges take two values and step must be positive")
