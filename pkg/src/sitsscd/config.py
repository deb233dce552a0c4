"""INI experiment configuration with typed sections.

Sections mirror the module configs: ``[data]`` (synthetic world fields
plus dataset and split options), ``[model]``, ``[train]``, ``[infer]``
and ``[eval]``. Unknown keys are rejected; keys left out fall back to
the module defaults and are reported through logging.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import logging
import typing
from typing import Any, Optional

from .data.synth import SyntheticWorldConfig
from .errors import ConfigError
from .model.config import ModelConfig
from .training import TrainConfig

log = logging.getLogger("sitsscd")

SECTIONS = ("data", "model", "train", "infer", "eval")

_EXTRA = {
    "data": {"setting": (str, "no_shift"), "split_day": (int, 365), "plan_seed": (int, 0)},
    "infer": {"scheme": (str, "full"), "group_len": (Optional[int], None), "tile": (Optional[int], None)},
    "eval": {"anchor": (str, "later"), "aggregation": (str, "global"), "baseline": (Optional[str], None),
             "per_class": (bool, False), "sweep": (bool, False)},
}
_OWNERS = {"data": SyntheticWorldConfig, "model": ModelConfig, "train": TrainConfig}


def _dataclass_schema(cls) -> dict:
    hints = typing.get_type_hints(cls)
    out = {}
    for f in dataclasses.fields(cls):
        if not f.init:
            continue
        default = f.default if f.default is not dataclasses.MISSING else None
        out[f.name] = (hints[f.name], default)
    return out


def schema(section: str) -> dict:
    """``{key: (type, default)}`` for a section."""
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]; expected one of {SECTIONS}")
    out = _dataclass_schema(_OWNERS[section]) if section in _OWNERS else {}
    out.update(_EXTRA.get(section, {}))
    return out


def _base(tp):
    args = [a for a in typing.get_args(tp) if a is not type(None)]
    optional = type(None) in typing.get_args(tp)
    if typing.get_origin(tp) is typing.Union and len(args) == 1:
        return args[0], optional
    return tp, optional


def parse_value(text: str, tp) -> Any:
    base, optional = _base(tp)
    s = text.strip()
    if optional and s.lower() in ("none", ""):
        return None
    try:
        if base is bool:
            low = s.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if base is int:
            return int(s)
        if base is float:
            return float(s)
        if typing.get_origin(base) is list:
            return [int(v) for v in s.replace(" ", "").split(",") if v]
        return s
    except ValueError as exc:
        raise ConfigError(f"cannot read {text!r} as {getattr(base, '__name__', base)}") from exc


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


class ExperimentConfig:
    """Explicitly set values per section; defaults are filled in on access."""

    def __init__(self, values: Optional[dict] = None):
        self.values = {s: {} for s in SECTIONS}
        for section, kv in (values or {}).items():
            for key, value in kv.items():
                self.set(section, key, value)

    def set(self, section: str, key: str, value) -> None:
        sch = schema(section)
        if key not in sch:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        if isinstance(value, str):
            value = parse_value(value, sch[key][0])
        self.values[section][key] = value

    def get(self, section: str, key: str):
        sch = schema(section)
        if key not in sch:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        return self.values[section].get(key, sch[key][1])

    def section(self, section: str, notify: bool = True) -> dict:
        sch = schema(section)
        out = {}
        for key, (_, default) in sch.items():
            if key in self.values[section]:
                out[key] = self.values[section][key]
            else:
                out[key] = default
                if notify:
                    log.info("[%s] %s not set, using default %s", section, key, format_value(default))
        return out

    @classmethod
    def from_string(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        cfg = cls()
        for section in parser.sections():
            for key, value in parser.items(section):
                cfg.set(section, key, value)
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_string(fh.read())

    def to_string(self) -> str:
        buf = io.StringIO()
        for section in SECTIONS:
            kv = self.values[section]
            if not kv:
                continue
            buf.write(f"[{section}]\n")
            for key in sorted(kv):
                buf.write(f"{key} = {format_value(kv[key])}\n")
            buf.write("\n")
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_string().encode()).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self.values == other.values

    # typed views ---------------------------------------------------------
    def synth_config(self) -> SyntheticWorldConfig:
        kv = self.section("data")
        return SyntheticWorldConfig(**{k: kv[k] for k in _dataclass_schema(SyntheticWorldConfig)})

    def model_config(self, **overrides) -> ModelConfig:
        kv = {k: v for k, v in self.section("model").items()}
        kv.update(overrides)
        return ModelConfig(**kv)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.section("train"))
