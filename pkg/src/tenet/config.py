"""Flat ``key = value`` config files grouped in ``[section]`` blocks.

Values are Python literals (numbers, quoted strings, tuples, dicts); bare words
such as ``hanning`` or ``true`` are accepted too.  Unknown sections and keys
are errors, so a typo in an ablation switch cannot pass silently.
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
from pathlib import Path

from .errors import ConfigurationError


def parse_value(raw: str):
    text = raw.strip()
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if lowered in ("none", "null"):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def read_config(path) -> dict[str, dict]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return {name: {k: parse_value(v) for k, v in parser[name].items()}
            for name in parser.sections()}


def check_sections(sections: dict, allowed, source="config"):
    unknown = set(sections) - set(allowed)
    if unknown:
        raise ConfigurationError(f"{source}: unknown section(s) {sorted(unknown)}; "
                                 f"expected {sorted(allowed)}")


def fill_dataclass(cls, values: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigurationError(f"[{section}]: unknown key(s) {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"[{section}]: {exc}") from exc


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return repr(value)
    return repr(value)


def write_config(path, sections: dict[str, dict]):
    lines = []
    for name, values in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {format_value(v)}" for k, v in values.items())
        lines.append("")
    Path(path).write_text("\n".join(lines))
