"""TOML run configs: defaults, preset merge, dotted overrides, validation.

Schema: one table per section in :data:`gfmsim.harness.presets.SECTIONS`,
each holding the fields of the matching dataclass, plus a top-level
``name`` and a ``[sweep.axes]`` table mapping dotted keys to value lists.
Unknown sections or keys are rejected with the offending line number.
"""

import copy
import dataclasses
import math
import re

import tomli
import tomli_w

from gfmsim.harness.presets import HIDDEN, PRESETS, SECTIONS, build_scenario


class ConfigError(ValueError):
    pass


def default_config():
    cfg = {"name": "custom"}
    for sec, cls in SECTIONS.items():
        hidden = HIDDEN.get(sec, ())
        cfg[sec] = {k: v for k, v in dataclasses.asdict(cls()).items() if k not in hidden}
    cfg["sweep"]["axes"] = {}
    return cfg


def _line_of(text, key):
    if text is None:
        return None
    leaf = re.escape(key.split(".")[-1])
    pat = re.compile(rf'^\s*(\[+\s*{leaf}\s*\]+|"?{leaf}"?\s*=)')
    for i, line in enumerate(text.splitlines(), 1):
        if pat.search(line):
            return i
    return None


def _err(key, msg, text=None):
    line = _line_of(text, key)
    where = f" (line {line})" if line is not None else ""
    return ConfigError(f"{key}{where}: {msg}")


def _check_value(key, default, value, text):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise _err(key, f"expected a boolean, got {value!r}", text)
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise _err(key, f"expected an integer, got {value!r}", text)
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _err(key, f"expected a number, got {value!r}", text)
        return float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise _err(key, f"expected a string, got {value!r}", text)
    elif isinstance(default, list):
        if not isinstance(value, list) or len(value) != len(default) or \
                any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            raise _err(key, f"expected a list of {len(default)} numbers, got {value!r}", text)
        return [float(v) for v in value]
    return value


def _check_axis(key, values, text):
    sec, _, field = key.partition(".")
    defaults = default_config()
    if sec not in SECTIONS or sec == "sweep" or field not in defaults[sec]:
        raise _err(key, "sweep axis names an unknown key", text)
    if not isinstance(values, list) or len(values) == 0:
        raise _err(key, "sweep axis must be a non-empty list", text)
    return [_check_value(key, defaults[sec][field], v, text) for v in values]


def merge(base, update, text=None):
    """Validated deep merge of ``update`` into a copy of ``base``."""
    out = copy.deepcopy(base)
    for sec, body in update.items():
        if sec == "name":
            if not isinstance(body, str):
                raise _err("name", "expected a string", text)
            out["name"] = body
            continue
        if sec not in out or not isinstance(body, dict):
            raise _err(sec, "unknown section", text)
        for key, value in body.items():
            full = f"{sec}.{key}"
            if sec == "sweep" and key == "axes":
                if not isinstance(value, dict):
                    raise _err(full, "expected a table of axis lists", text)
                out["sweep"]["axes"] = {k: _check_axis(k, v, text) for k, v in value.items()}
                continue
            if key not in out[sec]:
                raise _err(full, "unknown key", text)
            out[sec][key] = _check_value(full, out[sec][key], value, text)
    return out


def parse_value(raw):
    """TOML literal if it parses, bare string otherwise."""
    try:
        return tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        return raw


def apply_overrides(cfg, overrides):
    """Apply ``section.key=value`` strings; axes are ``sweep.axes.<section.key>=[...]``."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{item}: override must look like section.key=value")
        value = parse_value(raw.strip())
        if key.startswith("sweep.axes."):
            axis = key[len("sweep.axes."):]
            if not isinstance(value, list):
                value = [value]
            axes = dict(cfg["sweep"]["axes"])
            axes[axis] = value
            cfg = merge(cfg, {"sweep": {"axes": axes}})
            continue
        sec, dot, field = key.partition(".")
        if key == "name":
            cfg = merge(cfg, {"name": value})
        elif not dot or sec not in cfg or sec == "name":
            raise ConfigError(f"{key}: unknown key")
        else:
            cfg = merge(cfg, {sec: {field: value}})
    return cfg


def preset_config(name):
    if name not in PRESETS:
        raise ConfigError(f"{name}: unknown preset (choose from {', '.join(PRESETS)})")
    return merge(default_config(), PRESETS[name])


def load_config(path):
    """Read a TOML file on top of the defaults."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    text = raw.decode("utf-8", errors="replace")
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return merge(default_config(), data, text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def resolve(source, overrides=(), seed=None, decimation=None):
    """Preset name or config path + overrides -> validated config dict."""
    if source in PRESETS:
        cfg = preset_config(source)
    elif source.endswith(".toml"):
        cfg = load_config(source)
    else:
        raise ConfigError(f"{source}: unknown preset (choose from {', '.join(PRESETS)}) and not a .toml file")
    cfg = apply_overrides(cfg, overrides)
    if seed is not None:
        cfg = merge(cfg, {"run": {"seed": seed}})
    if decimation is not None:
        cfg = merge(cfg, {"run": {"decimation": decimation}})
    check(cfg)
    return cfg


def check(cfg):
    """Build the scenario once so parameter errors surface as ConfigError."""
    try:
        build_scenario(cfg).validate()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg["sweep"]["replicates"] < 1:
        raise ConfigError("sweep.replicates: must be >= 1")
    for name in ("t_end", "noise_std", "sync_timeout", "divergence_bound"):
        if not math.isfinite(cfg["run"][name]):
            raise ConfigError(f"run.{name}: must be finite")


def dumps(cfg):
    return tomli_w.dumps(cfg)


def dump(cfg, path):
    with open(path, "wb") as fh:
        tomli_w.dump(cfg, fh)
