"""Run configuration files.

Configs are INI-style text: ``[section]`` headers followed by
``key = value`` lines.  Every key can be overridden from the environment
as ``KSCROSS_<SECTION>_<KEY>`` (e.g. ``KSCROSS_MODEL_DELTA=0.01``).
"""
from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from typing import Mapping

from .expr import Expression, ExpressionError
from .grid import Ball, Box, GridError, RegionSpec
from .model import ModelError, ModelParams
from .solver import StepperConfig

ENV_PREFIX = "KSCROSS_"

# key -> help text, per section; also drives `--help` of the CLI
KEYS: dict[str, dict[str, str]] = {
    "model": {
        "m": "cell diffusion exponent, m > 0 (fractions like 1/2 accepted)",
        "n": "cross-diffusion exponent, n > 1",
        "delta": "cross-diffusion strength, >= 0",
        "alpha": "1 = fully parabolic, 0 = parabolic-elliptic",
    },
    "domain": {
        "shape": "box or ball",
        "lower": "box lower corner, comma separated",
        "upper": "box upper corner, comma separated",
        "center": "ball centre, comma separated",
        "radius": "ball radius",
        "resolution": "cells per axis (one value or one per axis)",
    },
    "initial": {
        "rho": "initial density expression in x, y, z",
        "c": "initial concentration expression in x, y, z",
    },
    "stepper": {f.name: f"StepperConfig.{f.name} (default {f.default})" for f in fields(StepperConfig)},
    "run": {
        "t_end": "final time, > 0",
        "snapshot_times": "comma separated times in [0, t_end] for field snapshots",
        "output_dir": "directory for output files",
        "seed": "integer seed for randomised extras",
        "record_every": "record diagnostics every k-th accepted step",
    },
    "decay": {
        "poincare_const": "Poincare constant C_P of the domain",
        "window": "fit window start, end",
    },
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams
    region: RegionSpec
    resolution: tuple[int, ...]
    stepper: StepperConfig = field(default_factory=StepperConfig)
    t_end: float = 1.0
    initial_rho: str = "1"
    initial_c: str = "0"
    snapshot_times: tuple[float, ...] = ()
    output_dir: str = "out"
    seed: int = 0
    record_every: int = 1
    poincare_const: float | None = None
    decay_window: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.t_end > 0:
            raise ConfigError(f"t_end must be positive, got {self.t_end}")
        for t in self.snapshot_times:
            if not 0 <= t <= self.t_end:
                raise ConfigError(f"snapshot time {t} outside [0, {self.t_end}]")
        for name, text in (("rho", self.initial_rho), ("c", self.initial_c)):
            try:
                Expression(text)
            except ExpressionError as exc:
                raise ConfigError(f"initial {name}: {exc}") from exc
        if self.model.dim != self.region.dim:
            raise ConfigError(f"model dim {self.model.dim} does not match {self.region.dim}-D region")
        if self.record_every < 1:
            raise ConfigError("record_every must be at least 1")


# -- value parsing -------------------------------------------------------------

def _number(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        return float(Fraction(text))


def _numbers(text: str) -> tuple[float, ...]:
    return tuple(_number(t) for t in text.split(",") if t.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    """Line number of ``key`` in ``section`` (of the section header if ``key`` is None)."""
    current = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"\[(.+)\]$", stripped)
        if header:
            current = header.group(1).strip().lower()
            if key is None and current == section:
                return number
        elif key is not None and current == section and re.match(rf"{re.escape(key)}\s*[=:]", stripped, re.I):
            return number
    return None


def _stepper_from(values: Mapping[str, str]) -> StepperConfig:
    kwargs = {}
    for f in fields(StepperConfig):
        if f.name not in values:
            continue
        raw = values[f.name]
        if isinstance(f.default, bool):
            kwargs[f.name] = _bool(raw)
        elif isinstance(f.default, int):
            kwargs[f.name] = int(raw)
        elif isinstance(f.default, float):
            kwargs[f.name] = _number(raw)
        else:
            kwargs[f.name] = raw.strip()
    return StepperConfig(**kwargs)


def _apply_env(parser: configparser.ConfigParser, env: Mapping[str, str]) -> None:
    for name, value in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if section not in KEYS or key not in KEYS[section]:
            raise ConfigError(f"environment override {name} names no config key")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)


def parse_config(text: str, env: Mapping[str, str] | None = None) -> RunConfig:
    """Parse config text; ``env`` defaults to ``os.environ``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ConfigError(f"cannot parse config: {exc.message.splitlines()[0]}", line) from exc
    except configparser.Error as exc:
        raise ConfigError(str(exc), getattr(exc, "lineno", None)) from exc
    _apply_env(parser, os.environ if env is None else env)

    for section in parser.sections():
        if section not in KEYS:
            raise ConfigError(f"unknown section [{section}]", _line_of(text, section))
        for key in parser[section]:
            if key not in KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", _line_of(text, section, key))

    def get(section, key, default=None):
        if parser.has_option(section, key):
            return parser.get(section, key)
        return default

    def convert(section, key, func, default=None):
        raw = get(section, key)
        if raw is None:
            return default
        try:
            return func(raw)
        except (ValueError, ZeroDivisionError, ModelError, GridError) as exc:
            raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}", _line_of(text, section, key)) from exc

    shape = (get("domain", "shape", "box") or "box").strip().lower()
    if shape == "box":
        lower = convert("domain", "lower", _numbers, (0.0,))
        upper = convert("domain", "upper", _numbers, (1.0,) * len(lower))
        try:
            region: RegionSpec = Box(lower, upper)
        except GridError as exc:
            raise ConfigError(str(exc), _line_of(text, "domain", "upper")) from exc
    elif shape == "ball":
        center = convert("domain", "center", _numbers, (0.0, 0.0))
        radius = convert("domain", "radius", _number, 1.0)
        try:
            region = Ball(center, radius)
        except GridError as exc:
            raise ConfigError(str(exc), _line_of(text, "domain", "radius")) from exc
    else:
        raise ConfigError(f"unknown domain shape {shape!r}", _line_of(text, "domain", "shape"))

    resolution = convert("domain", "resolution", lambda s: tuple(int(v) for v in s.split(",")), (64,))
    if len(resolution) == 1:
        resolution = resolution * region.dim

    m = convert("model", "m", _number, 1.0)
    n = convert("model", "n", _number, 2.0)
    delta = convert("model", "delta", _number, 0.0)
    alpha = convert("model", "alpha", int, 1)
    try:
        model = ModelParams(m=m, n=n, delta=delta, alpha=alpha, dim=region.dim)
    except ModelError as exc:
        raise ConfigError(str(exc), _line_of(text, "model")) from exc
    stepper = _stepper_section(parser, text)
    window = convert("decay", "window", _numbers)
    if window is not None and len(window) != 2:
        raise ConfigError("decay window needs two numbers", _line_of(text, "decay", "window"))

    t_end = convert("run", "t_end", _number, 1.0)
    if not t_end > 0:
        raise ConfigError(f"t_end must be positive, got {t_end}", _line_of(text, "run", "t_end"))
    snapshots = convert("run", "snapshot_times", _numbers, ())
    if any(not 0 <= t <= t_end for t in snapshots):
        raise ConfigError(f"snapshot times must lie in [0, {t_end}]",
                          _line_of(text, "run", "snapshot_times"))
    initial = {}
    for key, default in (("rho", "1"), ("c", "0")):
        initial[key] = get("initial", key, default).strip()
        try:
            Expression(initial[key])
        except ExpressionError as exc:
            raise ConfigError(f"initial {key}: {exc}", _line_of(text, "initial", key)) from exc

    try:
        return RunConfig(
            model=model,
            region=region,
            resolution=resolution,
            stepper=stepper,
            t_end=t_end,
            initial_rho=initial["rho"],
            initial_c=initial["c"],
            snapshot_times=snapshots,
            output_dir=get("run", "output_dir", "out").strip(),
            seed=convert("run", "seed", int, 0),
            record_every=convert("run", "record_every", int, 1),
            poincare_const=convert("decay", "poincare_const", _number),
            decay_window=window,
        )
    except ConfigError as exc:
        raise ConfigError(str(exc), _line_of(text, "run")) from exc


def _stepper_section(parser: configparser.ConfigParser, text: str) -> StepperConfig:
    values = dict(parser["stepper"]) if parser.has_section("stepper") else {}
    try:
        return _stepper_from(values)
    except ValueError as exc:
        line = None
        for key in values:
            if key in str(exc):
                line = _line_of(text, "stepper", key)
                break
        if line is None and values:
            line = _line_of(text, "stepper", next(iter(values)))
        raise ConfigError(f"[stepper] {exc}", line) from exc


def load_config(path, env: Mapping[str, str] | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), env)


def format_config(cfg: RunConfig) -> str:
    """Serialise ``cfg``; ``parse_config(format_config(cfg), env={}) == cfg``."""
    out = ["[model]"]
    out += [f"m = {_fmt(float(cfg.model.m))}", f"n = {_fmt(float(cfg.model.n))}",
            f"delta = {_fmt(float(cfg.model.delta))}", f"alpha = {cfg.model.alpha}", ""]
    out.append("[domain]")
    if isinstance(cfg.region, Box):
        out += ["shape = box", f"lower = {_fmt(tuple(map(float, cfg.region.lower)))}",
                f"upper = {_fmt(tuple(map(float, cfg.region.upper)))}"]
    else:
        out += ["shape = ball", f"center = {_fmt(tuple(map(float, cfg.region.center)))}",
                f"radius = {_fmt(float(cfg.region.radius))}"]
    out += [f"resolution = {_fmt(cfg.resolution)}", ""]
    out += ["[initial]", f"rho = {cfg.initial_rho}", f"c = {cfg.initial_c}", ""]
    out.append("[stepper]")
    out += [f"{f.name} = {_fmt(getattr(cfg.stepper, f.name))}" for f in fields(StepperConfig)]
    out += ["", "[run]", f"t_end = {_fmt(float(cfg.t_end))}"]
    out.append(f"snapshot_times = {_fmt(tuple(map(float, cfg.snapshot_times)))}")
    out += [f"output_dir = {cfg.output_dir}", f"seed = {cfg.seed}", f"record_every = {cfg.record_every}"]
    if cfg.poincare_const is not None or cfg.decay_window is not None:
        out += ["", "[decay]"]
        if cfg.poincare_const is not None:
            out.append(f"poincare_const = {_fmt(float(cfg.poincare_const))}")
        if cfg.decay_window is not None:
            out.append(f"window = {_fmt(tuple(map(float, cfg.decay_window)))}")
    return "\n".join(out) + "\n"


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    """Copy of ``cfg`` with model fields (m, n, delta, alpha) or top-level fields replaced."""
    model_keys = {k: changes.pop(k) for k in ("m", "n", "delta", "alpha") if k in changes}
    model = replace(cfg.model, **model_keys) if model_keys else cfg.model
    return replace(cfg, model=model, **changes)


def keys_help() -> str:
    lines = []
    for section, keys in KEYS.items():
        lines.append(f"[{section}]")
        lines += [f"  {k:<16} {v}" for k, v in keys.items()]
    lines.append(f"Any key can be overridden with {ENV_PREFIX}<SECTION>_<KEY>.")
    return "\n".join(lines)
