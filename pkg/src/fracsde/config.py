"""Run configuration: a small INI dialect with per-command defaults.

Grammar
-------
* ``[section]`` headers; ``key = value`` lines; ``#`` or ``;`` start comments.
* Reals accept fractions (``1/80``) and exponents (``1e-8``).
* Lists are comma separated (``dt_list = 1/80, 1/160``).
* Keys in ``[run]`` apply to every command; a key set in the command's own
  section (``[table1]``, ...) wins over ``[run]``; unset keys take the
  command default.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass
from fractions import Fraction

from .errors import ConfigError

COMMANDS = ("simulate", "table1", "table2", "compare", "homogenize")

# key -> value kind (str, real, int, bool or reals)
COMMON_KEYS = {
    "model": "str",
    "alpha": "real",
    "epsilon": "real",
    "horizon_T": "real",
    "n_paths": "int",
    "seed": "int",
    "threads": "int",
    "output_dir": "str",
}

COMMAND_KEYS = {
    "simulate": {"n_steps": "int"},
    "table1": {"alpha_list": "reals", "dt_list": "reals"},
    "table2": {"alpha_list": "reals", "dt": "real", "eps_list": "reals"},
    "compare": {"eps_list": "reals", "dt_coarse": "real", "dt_ref": "real", "homogenized": "str"},
    "homogenize": {
        "T1_start": "real", "tol": "real", "n_quad": "int", "probe_lower": "real",
        "probe_upper": "real", "probe_points": "int", "max_doublings": "int",
        "t1_grid": "reals", "profile_n_quad": "real", "use_closed_form": "bool",
    },
}

DEFAULTS = {
    "simulate": {"model": "example1", "alpha": 0.9, "epsilon": 1.0, "horizon_T": 0.1, "n_steps": 80,
                 "n_paths": 4},
    "table1": {"model": "example1", "alpha_list": [0.9, 0.7], "epsilon": 1.0, "horizon_T": 0.1,
               "dt_list": [1 / 80, 1 / 160, 1 / 320, 1 / 640]},
    "table2": {"model": "example1", "alpha_list": [0.9, 0.7], "horizon_T": 1e-6, "dt": 1e-8,
               "eps_list": [4e-8, 8e-8, 1.6e-7, 3.2e-7]},
    "compare": {"model": "example2", "alpha": 0.9, "horizon_T": 1.0, "eps_list": [1e-1, 1e-4],
                "dt_coarse": 1 / 256, "dt_ref": 1 / 1024, "homogenized": "auto"},
    "homogenize": {"model": "example42", "alpha": 0.9, "epsilon": 1e-4, "T1_start": 10.0,
                   "tol": 4e-7, "n_quad": 32, "probe_lower": -2.0, "probe_upper": 2.0,
                   "probe_points": 21, "max_doublings": 20,
                   "t1_grid": [10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0],
                   "profile_n_quad": 32.0, "use_closed_form": True},
}
SHARED_DEFAULTS = {"n_paths": 2000, "seed": 1, "threads": 1, "output_dir": "fracsde_out"}

# keys that do not change results and are left out of the hash
UNHASHED = ("output_dir", "threads")


@dataclass(frozen=True)
class RunConfig:
    command: str
    values: dict
    source: str = "<defaults>"

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def hash(self) -> str:
        return config_hash(self.command, self.values)


def config_hash(command: str, values: dict) -> str:
    payload = {k: v for k, v in values.items() if k not in UNHASHED}
    blob = json.dumps({"command": command, **payload}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _line_of(text: str, section: str, key: str):
    current = None
    for n, line in enumerate(text.splitlines(), start=1):
        head = re.match(r"\s*\[([^\]]+)\]", line)
        if head:
            current = head.group(1).strip()
            continue
        if current == section and re.match(rf"\s*{re.escape(key)}\s*[=:]", line, flags=re.IGNORECASE):
            return n
    return None


def _section_line(text: str, section: str):
    for n, line in enumerate(text.splitlines(), start=1):
        if re.match(rf"\s*\[{re.escape(section)}\]", line):
            return n
    return None


def _real(raw: str) -> float:
    raw = raw.strip()
    if "/" in raw:
        return float(Fraction(raw.replace(" ", "")))
    return float(raw)


def _parse(kind: str, raw: str):
    raw = raw.strip()
    if kind == "str":
        if not raw:
            raise ValueError("empty value")
        return raw
    if kind == "real":
        return _real(raw)
    if kind == "int":
        f = _real(raw)
        if f != int(f):
            raise ValueError(f"{raw!r} is not an integer")
        return int(f)
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{raw!r} is not a boolean")
    if kind == "reals":
        items = [p for p in raw.split(",") if p.strip()]
        if not items:
            raise ValueError("empty list")
        return [_real(p) for p in items]
    raise AssertionError(kind)


def load_config(command: str, path=None, text: str | None = None) -> RunConfig:
    """Resolve the configuration for ``command`` from a file (or defaults)."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    source = "<defaults>"
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    if path is not None:
        source = str(path)
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    if text is not None:
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from None

    allowed = {k.lower(): k for k in list(COMMON_KEYS) + [k for ks in COMMAND_KEYS.values() for k in ks]}
    for section in parser.sections():
        if section != "run" and section not in COMMANDS:
            line = _section_line(text, section)
            raise ConfigError(f"{source}:{line}: unknown section [{section}]", line=line)
        for key in parser[section]:
            if key.lower() not in allowed:
                line = _line_of(text, section, key)
                raise ConfigError(f"{source}:{line}: unknown key {key!r} in [{section}]", line=line, field=key)

    kinds = {**COMMON_KEYS, **COMMAND_KEYS[command]}
    values = dict(SHARED_DEFAULTS)
    values.update(DEFAULTS[command])
    for section in ("run", command):
        if not parser.has_section(section):
            continue
        for key, raw in parser[section].items():
            canonical = allowed[key.lower()]
            if canonical not in kinds:
                continue  # belongs to another command
            try:
                values[canonical] = _parse(kinds[canonical], raw)
            except (ValueError, ZeroDivisionError) as exc:
                line = _line_of(text, section, key)
                raise ConfigError(f"{source}:{line}: field {canonical!r}: {exc}", line=line,
                                  field=canonical) from None
    # a scalar alpha given explicitly narrows the table commands to that order
    if command in ("table1", "table2") and "alpha_list" not in _explicit(parser, command) \
            and "alpha" in _explicit(parser, command):
        values["alpha_list"] = [values["alpha"]]
    if command in ("table1", "table2"):
        values.pop("alpha", None)
    return RunConfig(command, values, source)


def _explicit(parser, command) -> set:
    keys = set()
    for section in ("run", command):
        if parser.has_section(section):
            keys.update(k.lower() for k in parser[section])
    return {k for k in COMMON_KEYS.keys() | COMMAND_KEYS[command].keys() if k.lower() in keys}


def locate(cfg: RunConfig, key: str):
    """Best-effort 'path:line' for a key, for diagnostics."""
    if cfg.source == "<defaults>":
        return f"{cfg.source} ({key})"
    try:
        with open(cfg.source, encoding="utf-8") as fh:
            text = fh.read()
    except OSError:
        return cfg.source
    for section in (cfg.command, "run"):
        line = _line_of(text, section, key)
        if line:
            return f"{cfg.source}:{line}"
    return f"{cfg.source} (default {key})"
