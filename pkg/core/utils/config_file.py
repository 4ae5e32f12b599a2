"""
Flat `key = value` configuration files

    # comment
    ckan.chunk_pixels = 1024
    train.loss.lambda_adv = 0.001
    ckan.grid_range = -2, 2

Values become int, float, bool or str; comma-separated values become tuples.
Dotted keys address nested settings sections.
"""
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional

import config
from core.exceptions import ConfigurationError

_BOOLEANS = {"true": True, "false": False, "yes": True, "no": False, "on": True, "off": False}


def parse_value(text: str) -> Any:
    text = text.strip()
    if "," in text:
        return tuple(parse_value(part) for part in text.split(",") if part.strip())
    lowered = text.lower()
    if lowered in _BOOLEANS:
        return _BOOLEANS[lowered]
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def _split_assignment(line: str, where: str):
    key, sep, value = line.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigurationError(f"{where}: expected `key = value`, got {line!r}")
    if any(not part.isidentifier() for part in key.split(".")):
        raise ConfigurationError(f"{where}: invalid key {key!r}")
    return key, parse_value(value)


def read_config_file(path) -> Dict[str, Any]:
    """Flat dotted-key mapping of a config file; duplicate keys are an error"""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}")
    values: Dict[str, Any] = {}
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, value = _split_assignment(line, f"{path}:{number}")
        if key in values:
            raise ConfigurationError(f"{path}:{number}: duplicate key {key!r}")
        values[key] = value
    return values


def parse_overrides(items: Optional[Iterable[str]]) -> Dict[str, Any]:
    """`--set key=value` arguments, later ones winning"""
    values: Dict[str, Any] = {}
    for item in items or ():
        key, value = _split_assignment(item, "--set")
        values[key] = value
    return values


def nest(flat: Mapping[str, Any]) -> Dict[str, Any]:
    """{"a.b": 1} -> {"a": {"b": 1}}"""
    tree: Dict[str, Any] = {}
    for key, value in flat.items():
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"Key {key!r} conflicts with the value of {part!r}")
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigurationError(f"Key {key!r} names a section, not a value")
        node[parts[-1]] = value
    return tree


def flatten(tree: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def merge_sources(path=None, overrides: Optional[Iterable[str]] = None,
                  environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """
    File values, then `--set` overrides, then the seed environment variable

    Returns:
        Flat dotted-key mapping of every explicitly given value
    """
    flat: Dict[str, Any] = read_config_file(path) if path else {}
    flat.update(parse_overrides(overrides))
    environ = os.environ if environ is None else environ
    seed = environ.get(config.SEED_ENV_VAR)
    if seed is not None and seed.strip():
        try:
            flat["train.seed"] = int(seed)
        except ValueError as e:
            raise ConfigurationError(f"{config.SEED_ENV_VAR} must be an integer, got {seed!r}") from e
    return flat
