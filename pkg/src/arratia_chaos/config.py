"""Run configuration: TOML (or JSON) files merged with command-line flags.

A config file holds flat keys, optionally overridden per subcommand in a
table named after it, e.g. ``[verify]``.  Suite overrides live in
``[verify.suite.<name>]`` with keys N, M, params, seed, z, ks_floor, budget.  Unknown keys are
errors that name the key and its line.
"""
from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SUBCOMMANDS = ("simulate", "alpha", "integrate", "project", "verify")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str = ""
    domain: str = "weyl"          # weyl (S^n) or halfline
    drift: str = "zero"           # zero, const:c1,c2,..., aleph:theta
    n: int | None = None
    u: list | None = None
    t: float = 1.0
    T: float = 1.0
    M: int = 1024
    N: int = 10000
    seed: int = 2024
    backends: list = field(default_factory=lambda: ["closed", "km", "mc"])
    kernel: str = "box:0-1"
    index: str = "1"
    kind: str = "stopped"         # ito, stopped, naive, levels
    functional: str = "survival:1"
    family: str = "legendre"
    truncation: int = 2
    degree: int = 2
    out: str | None = None
    stats: str | None = None
    report: str | None = None
    csv: str | None = None
    cache_dir: str | None = None
    threads: int | None = None
    suites: list | None = None
    scale: float = 1.0
    overrides: dict = field(default_factory=dict)
    explicit: list = field(default_factory=list)   # keys set by the file or the command line

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def start(self) -> list:
        if self.u is not None:
            return list(self.u)
        if self.n is None:
            return [0.0, 1.0]
        return [float(k) for k in range(self.n)]


FIELDS = {f.name: f for f in fields(RunConfig)}
SUITE_KEYS = {"N", "M", "params", "seed", "z", "ks_floor", "budget"}
DOMAINS = ("weyl", "halfline")


def _line_of(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith(key) and s[len(key):].lstrip().startswith("="):
            return i
        if s.startswith("[") and key in s:
            return i
    return None


def _unknown(key: str, text: str, where: str = ""):
    ln = _line_of(text, key.split(".")[-1])
    at = f" (line {ln})" if ln else ""
    raise ConfigError(f"unknown config key '{where}{key}'{at}")


def _coerce(name: str, value):
    if name in ("u",) and isinstance(value, str):
        return [float(x) for x in value.split(",") if x.strip()]
    if name in ("backends", "suites") and isinstance(value, str):
        return [x.strip() for x in value.split(",") if x.strip()]
    return value


def load_config(path=None, text: str | None = None) -> dict:
    """Parse a config file into a dict of RunConfig keys (plus per-subcommand tables)."""
    if text is None:
        if path is None:
            return {}
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} does not exist")
        text = p.read_text()
        is_json = p.suffix == ".json"
    else:
        is_json = text.lstrip().startswith("{")
    try:
        raw = json.loads(text) if is_json else tomllib.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse config: {e}") from None
    out: dict = {}
    for k, v in raw.items():
        if k in SUBCOMMANDS and isinstance(v, dict):
            sec = {}
            for kk, vv in v.items():
                if k == "verify" and kk == "suite" and isinstance(vv, dict):
                    sec["overrides"] = _suite_overrides(vv, text)
                elif kk in FIELDS and kk not in ("subcommand", "overrides", "explicit"):
                    sec[kk] = _coerce(kk, vv)
                else:
                    _unknown(kk, text, f"{k}.")
            out[k] = sec
        elif k in FIELDS and k not in ("subcommand", "overrides", "explicit"):
            out[k] = _coerce(k, v)
        else:
            _unknown(k, text)
    return out


def _suite_overrides(tab: dict, text: str) -> dict:
    from .verify import SUITES
    out = {}
    for name, ov in tab.items():
        if name not in SUITES:
            _unknown(name, text, "verify.suite.")
        for k in ov:
            if k not in SUITE_KEYS:
                _unknown(k, text, f"verify.suite.{name}.")
        out[name] = dict(ov)
    return out


def resolve(subcommand: str, file_cfg: dict, cli: dict) -> RunConfig:
    """Defaults < file top level < file [subcommand] table < command line."""
    merged = {k: v for k, v in file_cfg.items() if k not in SUBCOMMANDS}
    merged.update(file_cfg.get(subcommand, {}))
    merged.update({k: _coerce(k, v) for k, v in cli.items() if v is not None})
    merged["explicit"] = sorted(k for k in merged if k != "overrides")
    merged["subcommand"] = subcommand
    for k, v in merged.items():
        _check_type(k, v)
    cfg = RunConfig(**merged)
    validate(cfg)
    return cfg


_INTS = ("n", "M", "N", "seed", "truncation", "degree", "threads")
_FLOATS = ("t", "T", "scale")
_STRS = ("domain", "drift", "kernel", "index", "kind", "functional", "family", "out", "stats", "report",
         "csv", "cache_dir")


def _check_type(k, v):
    if v is None:
        return
    ok = True
    if k in _INTS:
        ok = isinstance(v, int) and not isinstance(v, bool)
    elif k in _FLOATS:
        ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    elif k in _STRS:
        ok = isinstance(v, str)
    elif k in ("u", "backends", "suites"):
        ok = isinstance(v, list)
    if not ok:
        raise ConfigError(f"config key '{k}' has the wrong type ({type(v).__name__})")


def validate(cfg: RunConfig) -> None:
    if cfg.subcommand and cfg.subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand '{cfg.subcommand}'")
    if cfg.domain not in DOMAINS:
        raise ConfigError(f"domain must be one of {', '.join(DOMAINS)}, got '{cfg.domain}'")
    if cfg.u is not None:
        u = [float(x) for x in cfg.u]
        if cfg.domain == "weyl" and any(b <= a for a, b in zip(u[:-1], u[1:])):
            raise ConfigError(f"u = {u} is not strictly increasing: starting points must lie in the "
                              "open Weyl chamber S^n = {u_1 < ... < u_n}")
        if cfg.n is not None and cfg.n != len(u):
            raise ConfigError(f"n = {cfg.n} but u has {len(u)} entries")
        cfg.u = u
    if cfg.n is not None and cfg.n < 1:
        raise ConfigError("n must be >= 1")
    for name in ("T", "t"):
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"{name} must be positive")
    for name in ("M", "N", "truncation"):
        if int(getattr(cfg, name)) < 1:
            raise ConfigError(f"{name} must be >= 1")
    if cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    if cfg.scale <= 0:
        raise ConfigError("scale must be positive")
    bad = [b for b in cfg.backends if b not in ("closed", "km", "mc", "pde")]
    if bad:
        raise ConfigError(f"unknown alpha backends {bad} (known: closed, km, mc, pde)")
    if cfg.kind not in ("ito", "stopped", "naive", "levels"):
        raise ConfigError(f"kind must be ito, stopped, naive or levels, got '{cfg.kind}'")
    if cfg.suites is not None:
        from .verify import SUITES
        bad = [s for s in cfg.suites if s not in SUITES]
        if bad:
            raise ConfigError(f"unknown suites {bad} (known: {', '.join(SUITES)})")
