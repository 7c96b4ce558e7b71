"""Run configuration: per-mode defaults, JSON config files and the effective-config echo."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from multires import PyramidConfig
from patchmatch3d import MatchConfig
from postprocessing import DlfConfig
from zernike import MODE_2D, MODE_3D_FI, FeatureConfig

MODES = ("basic2d", "basic3d", "fast2d", "fast3d")
DEFAULT_MODE = "basic2d"

MODE_DEFAULTS = {
    "basic2d": {"features": {"mode": MODE_2D}},
    "basic3d": {"features": {"mode": MODE_3D_FI}},
    "fast2d": {"features": {"mode": MODE_2D}},
    "fast3d": {"features": {"mode": MODE_3D_FI}},
}

TOP_LEVEL_KEYS = ("mode", "threads", "seed")


class ConfigError(ValueError):
    """Unknown key, wrong type or out-of-range value in a run configuration."""


@dataclass
class DumpConfig:
    nnf: bool = False
    features: bool = False


SECTIONS = {
    "features": FeatureConfig,
    "matching": MatchConfig,
    "postprocessing": DlfConfig,
    "pyramid": PyramidConfig,
    "dump": DumpConfig,
}


@dataclass
class RunConfig:
    mode: str = DEFAULT_MODE
    threads: int = 1
    seed: int = 0
    features: FeatureConfig = field(default_factory=FeatureConfig)
    matching: MatchConfig = field(default_factory=MatchConfig)
    postprocessing: DlfConfig = field(default_factory=DlfConfig)
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    dump: DumpConfig = field(default_factory=DumpConfig)

    @property
    def multires(self) -> bool:
        return self.mode.startswith("fast")


def _check_type(key: str, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(isinstance(v, list) and len(v) == 2 for v in value)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(tuple(v) for v in value)
    return value


def _build_section(name: str, values: dict):
    cls = SECTIONS[name]
    defaults = cls()
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown key")
        kwargs[key] = _check_type(f"{name}.{key}", value, getattr(defaults, key))
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{name}: {e}") from e


def _merge(base: dict, extra: dict) -> dict:
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key].update(value)
        else:
            out[key] = value
    return out


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path.name}: not valid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path.name}: top level must be an object")
    return data


def build_config(file_values: dict | None = None, mode: str | None = None, threads: int | None = None, seed: int | None = None) -> RunConfig:
    """Mode defaults, then config file values, then explicit arguments."""
    file_values = dict(file_values or {})
    for key in file_values:
        if key not in SECTIONS and key not in TOP_LEVEL_KEYS:
            raise ConfigError(f"{key}: unknown key")
        if key in SECTIONS and not isinstance(file_values[key], dict):
            raise ConfigError(f"{key}: expected an object")

    mode = mode or file_values.get("mode", DEFAULT_MODE)
    if mode not in MODES:
        raise ConfigError(f"mode: must be one of {MODES}, got {mode!r}")
    top = {"threads": 1, "seed": None}
    for key in ("threads", "seed"):
        if key in file_values:
            top[key] = _check_type(key, file_values[key], 0)
    if threads is not None:
        top["threads"] = threads
    if seed is not None:
        top["seed"] = seed
    if top["threads"] < 1:
        raise ConfigError(f"threads: must be >= 1, got {top['threads']}")

    merged = _merge(MODE_DEFAULTS[mode], {k: v for k, v in file_values.items() if k in SECTIONS})
    sections = {name: _build_section(name, merged.get(name, {})) for name in SECTIONS}
    if top["seed"] is None:
        top["seed"] = sections["matching"].seed
    sections["matching"].seed = top["seed"]
    return RunConfig(mode=mode, threads=top["threads"], seed=top["seed"], **sections)


def load_config(path=None, mode: str | None = None, threads: int | None = None, seed: int | None = None) -> RunConfig:
    file_values = read_config_file(path) if path else {}
    return build_config(file_values, mode=mode, threads=threads, seed=seed)


def config_echo(cfg: RunConfig) -> dict:
    """Effective configuration as an ordered, JSON-ready dict."""
    out = {"mode": cfg.mode, "threads": cfg.threads, "seed": cfg.seed}
    for name in SECTIONS:
        section = asdict(getattr(cfg, name))
        out[name] = {k: [list(v) for v in val] if isinstance(val, tuple) else val for k, val in section.items()}
    return out
