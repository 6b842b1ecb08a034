"""Plain-text run configuration.

Configs are INI files.  Every file has a ``[run]`` section whose ``kind``
names the command; other sections describe the domain, the boundary
datum, the solver, and so on.  Lists are comma separated; a union of
shapes is written ``shapes = ball 0.5 0 0.5; cube -0.5 0 0.2`` (shape
name, centre coordinates, size).  Errors carry the file, section, field
and line number.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from .capacity import CapacitySettings
from .pde import SolverSettings

RUN_KINDS = ("capacity", "delta-profile", "qo", "wiener", "solve", "verify",
             "harnack-check", "extinction-check")


class ConfigError(ValueError):
    pass


class Config:
    """Typed accessors over a parsed INI file with located diagnostics."""

    def __init__(self, parser: configparser.ConfigParser, path: Optional[Path], text: str):
        self.parser = parser
        self.path = path
        self.text = text

    # ---- construction
    @classmethod
    def from_text(cls, text: str, path: Optional[Path] = None) -> "Config":
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
        parser.optionxform = str  # keys are case sensitive (r and R differ)
        try:
            parser.read_string(text, source=str(path or "<string>"))
        except configparser.Error as exc:
            raise ConfigError(f"{path or '<string>'}: {exc}") from exc
        cfg = cls(parser, path, text)
        kind = cfg.get("run", "kind", str)
        if kind not in RUN_KINDS:
            raise cfg.error("run", "kind", f"unknown run kind {kind!r}; expected one of {', '.join(RUN_KINDS)}")
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, path)

    # ---- diagnostics
    def _line(self, section: str, key: Optional[str]) -> Optional[int]:
        current = None
        for no, line in enumerate(self.text.splitlines(), 1):
            m = re.match(r"\s*\[([^\]]+)\]", line)
            if m:
                current = m.group(1).strip()
                if key is None and current == section:
                    return no
                continue
            if current == section and key is not None:
                m = re.match(r"\s*([^=:#;\s]+)\s*[=:]", line)
                if m and m.group(1).strip() == key:
                    return no
        return None

    def error(self, section: str, key: Optional[str], message: str) -> ConfigError:
        where = f"{self.path or '<string>'}"
        line = self._line(section, key)
        if line is not None:
            where += f":{line}"
        field_name = f"[{section}]" + (f" {key}" if key else "")
        return ConfigError(f"{where}: {field_name}: {message}")

    # ---- accessors
    def has(self, section: str, key: Optional[str] = None) -> bool:
        if not self.parser.has_section(section):
            return False
        return key is None or (self.parser.has_option(section, key)
                               and self.parser.get(section, key).strip() != "")

    _MISSING = object()

    def get(self, section: str, key: str, conv: Callable[[str], Any] = str, default: Any = _MISSING) -> Any:
        if not self.has(section, key):
            if default is not self._MISSING:
                return default
            if not self.parser.has_section(section):
                raise self.error(section, None, "missing section")
            raise self.error(section, key, "missing required field")
        raw = self.parser.get(section, key).strip()
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise self.error(section, key, f"cannot parse {raw!r}: {exc}") from exc

    def floats(self, section: str, key: str, default: Any = _MISSING) -> Any:
        return self.get(section, key, parse_floats, default)

    def section(self, name: str) -> Dict[str, str]:
        if not self.parser.has_section(name):
            raise self.error(name, None, "missing section")
        return {k: v.strip() for k, v in self.parser.items(name)}

    def snapshot(self) -> Dict[str, Dict[str, str]]:
        return {s: dict(self.parser.items(s)) for s in self.parser.sections()}

    @property
    def kind(self) -> str:
        return self.get("run", "kind")

    # ---- structured pieces
    def domain(self, section: str = "domain") -> Dict[str, Any]:
        raw = self.section(section)
        out: Dict[str, Any] = {}
        for key, value in raw.items():
            try:
                out[key] = _descriptor_value(key, value)
            except ValueError as exc:
                raise self.error(section, key, str(exc)) from exc
        if "kind" not in out:
            raise self.error(section, "kind", "missing required field")
        return out

    def datum(self) -> Optional[Dict[str, Any]]:
        if not self.has("datum"):
            return None
        return self.domain("datum")

    def solver(self, base: SolverSettings = SolverSettings()) -> SolverSettings:
        return self._settings("solver", base)

    def capacity(self, base: CapacitySettings = CapacitySettings()) -> CapacitySettings:
        return self._settings("capacity", base, skip=("annulus_ratio",))

    def _settings(self, section: str, base, skip: Tuple[str, ...] = ()):
        if not self.has(section):
            return base
        known = {f.name: f for f in fields(base)}
        kw = {}
        for key, raw in self.section(section).items():
            if key in skip:
                continue
            if key not in known:
                raise self.error(section, key, f"unknown field; expected one of {', '.join(known)}")
            current = getattr(base, key)
            try:
                if isinstance(current, bool):
                    kw[key] = parse_bool(raw)
                elif isinstance(current, int):
                    kw[key] = int(raw)
                elif isinstance(current, str):
                    kw[key] = raw
                else:
                    kw[key] = None if raw.lower() == "none" else float(raw)
            except ValueError as exc:
                raise self.error(section, key, f"cannot parse {raw!r}: {exc}") from exc
        try:
            return replace(base, **kw)
        except ValueError as exc:
            raise self.error(section, None, str(exc)) from exc


def parse_floats(raw: str) -> List[float]:
    return [float(v) for v in re.split(r"[,\s]+", raw.strip()) if v]


def parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_optional_float(raw: str) -> Optional[float]:
    return None if raw.strip().lower() in ("", "none", "auto") else float(raw)


_VECTOR_KEYS = {"center", "normal", "point", "tip", "axis", "direction", "gradient"}
_INT_KEYS = {"dim", "grid_n", "levels"}


def _descriptor_value(key: str, raw: str) -> Any:
    if key == "kind":
        return raw
    if key in _INT_KEYS:
        return int(raw)
    if key == "invert":
        return parse_bool(raw)
    if key == "shapes":
        shapes = []
        for part in raw.split(";"):
            tokens = part.split()
            if not tokens:
                continue
            if len(tokens) < 3:
                raise ValueError(f"shape entry {part.strip()!r} needs a name, a centre and a size")
            shapes.append({"shape": tokens[0], "center": [float(v) for v in tokens[1:-1]],
                           "size": float(tokens[-1])})
        return shapes
    if key in _VECTOR_KEYS:
        vals = parse_floats(raw)
        return vals if len(vals) > 1 else vals[0]
    return float(raw)
