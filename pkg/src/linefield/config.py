"""Toolkit configuration: one dataclass per subsystem, flat text round trip.

The config file is plain `section.key = value` lines ('#' comments, blank
lines allowed). Values parse by the target field type; tuples are
comma-separated. Any key can also be overridden from the CLI with
--set section.key=value.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields

from .classic_lsd import LsdParams
from .geometry import HomographySampleParams
from .hatfield import DecodeParams
from .pseudolabel import AdaptParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    decode: DecodeParams = field(default_factory=DecodeParams)
    lsd: LsdParams = field(default_factory=LsdParams)
    adapt: AdaptParams = field(default_factory=AdaptParams)
    sample: HomographySampleParams = field(default_factory=HomographySampleParams)
    fg_halfwidth: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.fg_halfwidth <= 0:
            raise ConfigError("fg_halfwidth must be > 0")
        # adapt always warps with the shared sampling parameters
        object.__setattr__(
            self, "adapt", dataclasses.replace(self.adapt, sample_params=self.sample)
        )


_SECTIONS = ("decode", "lsd", "adapt", "sample")
_ADAPT_KEYS = ("n_iters", "score_threshold")  # sample_params comes from [sample]


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    return str(v)


def config_to_text(cfg: Config) -> str:
    lines = ["# linefield configuration"]
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            if section == "adapt" and f.name not in _ADAPT_KEYS:
                continue
            lines.append(f"{section}.{f.name} = {_format_value(getattr(obj, f.name))}")
    lines.append(f"fg_halfwidth = {_format_value(cfg.fg_halfwidth)}")
    lines.append(f"seed = {cfg.seed}")
    return "\n".join(lines) + "\n"


def _parse_scalar(text: str, typ) -> object:
    text = text.strip()
    if typ is int:
        return int(text)
    if typ is float:
        v = float(text)
        if not math.isfinite(v):
            raise ConfigError(f"non-finite value {text!r}")
        return v
    if typ is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean {text!r}")
    return text


def _parse_for_field(text: str, f) -> object:
    t = f.type if not isinstance(f.type, str) else f.type
    name = str(t)
    text = text.strip()
    if text.lower() == "none" and "None" in name:
        return None
    if "tuple" in name:
        elem = float if "float" in name else int
        parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
        return tuple(_parse_scalar(p, elem) for p in parts)
    if "int" in name:
        return _parse_scalar(text, int)
    if "float" in name:
        return _parse_scalar(text, float)
    if "bool" in name:
        return _parse_scalar(text, bool)
    return text


def apply_overrides(cfg: Config, overrides: dict[str, str]) -> Config:
    """Apply dotted-path string overrides onto a Config."""
    staged: dict[str, dict[str, object]] = {s: {} for s in _SECTIONS}
    top: dict[str, object] = {}
    for key, raw in overrides.items():
        key = key.strip()
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            obj = getattr(cfg, section)
            match = [f for f in fields(obj) if f.name == name]
            if not match:
                raise ConfigError(f"unknown config key {key!r}")
            staged[section][name] = _parse_for_field(raw, match[0])
        elif key == "fg_halfwidth":
            top[key] = _parse_scalar(raw, float)
        elif key == "seed":
            top[key] = _parse_scalar(raw, int)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        new_sections = {
            s: dataclasses.replace(getattr(cfg, s), **staged[s]) if staged[s] else getattr(cfg, s)
            for s in _SECTIONS
        }
        return Config(
            decode=new_sections["decode"],
            lsd=new_sections["lsd"],
            adapt=new_sections["adapt"],
            sample=new_sections["sample"],
            fg_halfwidth=top.get("fg_halfwidth", cfg.fg_halfwidth),
            seed=top.get("seed", cfg.seed),
        )
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e


def config_from_text(text: str, base: Config | None = None) -> Config:
    cfg = base or Config()
    overrides: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        overrides[key.strip()] = value.strip()
    return apply_overrides(cfg, overrides)


def load_config(path, base: Config | None = None) -> Config:
    with open(path, "r", encoding="utf-8") as f:
        return config_from_text(f.read(), base)
