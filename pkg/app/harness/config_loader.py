"""
Experiment config loading.

Config files are YAML with one level of section headers:

    model:      name, params, declared, T, w, epsilon, n, index_convention
    sweep:      n, eps, pin_eps, pin_n, pin_steps_per_interval, drift_gap_w, euler_n
    run:        replicates, seed, steps_per_interval, margin, suites, output_dir, threads
    thresholds: <threshold name>: <value>

Sections are flattened onto `HarnessConfig`; top-level field names are accepted
too. `--set key=value` overrides (key plain or `section.key`) are parsed as
YAML scalars and win over the file.
"""

import logging
from pathlib import Path
from typing import Any, Iterable

import yaml
from pydantic import ValidationError

from app.core.errors import ConfigurationError
from app.schemas.config import HarnessConfig

logger = logging.getLogger(__name__)

# (section, key) -> HarnessConfig field
_SECTION_KEYS: dict[tuple[str, str], str] = {
    ("model", "name"): "model_name",
    ("model", "params"): "model_params",
    ("model", "declared"): "declared",
    ("model", "T"): "T",
    ("model", "w"): "w",
    ("model", "epsilon"): "epsilon",
    ("model", "n"): "n",
    ("model", "index_convention"): "index_convention",
    ("sweep", "n"): "sweep_n",
    ("sweep", "eps"): "sweep_eps",
    ("sweep", "pin_eps"): "pin_eps",
    ("sweep", "pin_n"): "pin_n",
    ("sweep", "pin_steps_per_interval"): "pin_steps_per_interval",
    ("sweep", "drift_gap_w"): "drift_gap_w",
    ("sweep", "euler_n"): "euler_n",
}
_SECTIONS = ("model", "sweep", "run", "thresholds")


def _field_for(section: str, key: str) -> str:
    if section == "run":
        return key
    try:
        return _SECTION_KEYS[(section, key)]
    except KeyError:
        raise ConfigurationError(f"unknown key '{key}' in section [{section}]") from None


def _key_lines(text: str) -> dict[str, int]:
    """1-based line of every flattened field, for diagnostics."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    lines: dict[str, int] = {}
    if not isinstance(root, yaml.MappingNode):
        return lines
    for key_node, value_node in root.value:
        top = key_node.value
        if top in _SECTIONS and isinstance(value_node, yaml.MappingNode):
            for sub_key, _ in value_node.value:
                field = f"thresholds.{sub_key.value}" if top == "thresholds" else _SECTION_KEYS.get(
                    (top, sub_key.value), sub_key.value
                )
                lines[field] = sub_key.start_mark.line + 1
        else:
            lines[top] = key_node.start_mark.line + 1
    return lines


def flatten(raw: dict[str, Any]) -> dict[str, Any]:
    """Section mapping -> flat HarnessConfig keyword dict."""
    flat: dict[str, Any] = {}
    for top, value in raw.items():
        if top == "thresholds":
            if not isinstance(value, dict):
                raise ConfigurationError("section [thresholds] must be a mapping")
            flat.setdefault("thresholds", {}).update(value)
        elif top in _SECTIONS:
            if value is None:
                continue
            if not isinstance(value, dict):
                raise ConfigurationError(f"section [{top}] must be a mapping")
            for key, item in value.items():
                flat[_field_for(top, str(key))] = item
        else:
            flat[str(top)] = value
    return flat


def parse_overrides(overrides: Iterable[str]) -> dict[str, Any]:
    """["run.seed=7", "sweep_n=8,16"] -> flat keyword dict."""
    flat: dict[str, Any] = {}
    for item in overrides:
        key, sep, text = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"override '{item}' is not of the form key=value")
        try:
            value = yaml.safe_load(text) if text.strip() else ""
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"override '{item}' does not parse: {exc}") from None
        section, dot, sub = key.partition(".")
        if not dot:
            flat[key] = value
        elif section == "thresholds":
            flat.setdefault("thresholds", {})[sub] = value
        elif section in ("model", "sweep", "run"):
            if section == "model" and sub in ("params", "declared"):
                raise ConfigurationError(f"override '{key}' needs a subkey, e.g. {key}.L=2")
            if section == "model" and sub.split(".")[0] in ("params", "declared"):
                group, _, name = sub.partition(".")
                flat.setdefault(_SECTION_KEYS[("model", group)], {})[name] = value
            else:
                flat[_field_for(section, sub)] = value
        else:
            raise ConfigurationError(f"unknown section '{section}' in override '{key}'")
    return flat


def _merge(base: dict[str, Any], extra: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in extra.items():
        if key in ("thresholds", "model_params", "declared") and isinstance(value, dict):
            out[key] = {**(out.get(key) or {}), **value}
        else:
            out[key] = value
    return out


def load_config(path: str | Path, overrides: Iterable[str] = ()) -> HarnessConfig:
    """
    Read, flatten, override and validate a config file.

    Raises:
        ConfigurationError: missing file, YAML syntax error, unknown section or
            key, or a field that fails validation (with its line when known).
    """
    path = Path(path)
    overrides = list(overrides)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror or exc}") from None

    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark is not None else str(path)
        raise ConfigurationError(f"{where}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping of sections")

    flat = _merge(flatten(raw), parse_overrides(overrides))
    try:
        config = HarnessConfig(**flat)
    except ValidationError as exc:
        lines = _key_lines(text)
        problems = []
        for err in exc.errors():
            loc = err.get("loc") or ()
            field = str(loc[0]) if loc else "?"
            key = f"{field}.{loc[1]}" if field == "thresholds" and len(loc) > 1 else field
            line = lines.get(key) or lines.get(field)
            where = f"{path}:{line}" if line else str(path)
            problems.append(f"{where}: {'.'.join(str(p) for p in loc) or field}: {err['msg']}")
        raise ConfigurationError("invalid config\n" + "\n".join(problems)) from None

    logger.debug("loaded config %s with %d override(s)", path, len(overrides))
    return config
